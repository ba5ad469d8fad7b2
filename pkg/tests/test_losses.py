import numpy as np
import pytest
import torch
from torch import nn

from obegan.basis import BasisMatrix, ChannelCombiner, CoefficientAssignment, ObeInference
from obegan.errors import ConfigError
from obegan.losses import (
    LossWeights,
    ObjectiveReport,
    critic_loss,
    generator_side_loss,
    gradient_penalty,
    infer_info_loss,
    interpolate_batch,
    total_objective_report,
)
from obegan.networks import (
    DiscriminatorSpec,
    EncoderSpec,
    GeneratorSpec,
    build_critic,
    build_encoder,
    build_generator,
    sample_latent,
)

SIDE, D_LAT, K_LAT = 8, 3, 2


def tiny_models(double=True, seed=0):
    g = build_generator(GeneratorSpec(side=SIDE, channels=1, width=4, d=D_LAT, k=K_LAT, seed=seed))
    d = build_critic(DiscriminatorSpec(side=SIDE, channels=1, width=4, seed=seed + 1))
    q = build_encoder(
        EncoderSpec(side=SIDE, channels=1, width=4, k=K_LAT, hidden=8, seed=seed + 2), trunk=d
    )
    basis = BasisMatrix.learned(SIDE, seed=seed + 3)
    obe = ObeInference(basis, CoefficientAssignment.diagonal(SIDE, K_LAT), ChannelCombiner(1))
    if double:
        for m in (g, d, q, obe):
            m.double()
    for m in (g, d, q, obe):
        m.eval()
    return g, d, q, obe


class LinearCritic(nn.Module):
    """D(X) = <w, X>; its input gradient is w for every sample."""

    def __init__(self, numel, seed=0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.w = nn.Parameter(torch.randn(numel, generator=gen, dtype=torch.float64))

    def forward(self, x):
        return x.flatten(1).to(self.w.dtype) @ self.w


def directional_fd(loss_fn, params, h=1e-4, seed=0):
    """(analytic directional derivative, central-difference estimate)."""
    loss = loss_fn()
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    gen = torch.Generator().manual_seed(seed)
    dirs = [torch.randn(p.shape, generator=gen, dtype=p.dtype) for p in params]
    norm = torch.sqrt(sum((v * v).sum() for v in dirs))
    dirs = [v / norm for v in dirs]
    analytic = sum(
        (g * v).sum().item() for g, v in zip(grads, dirs) if g is not None
    )
    with torch.no_grad():
        for p, v in zip(params, dirs):
            p += h * v
    plus = loss_fn().item()
    with torch.no_grad():
        for p, v in zip(params, dirs):
            p -= 2 * h * v
    minus = loss_fn().item()
    with torch.no_grad():
        for p, v in zip(params, dirs):
            p += h * v
    return analytic, (plus - minus) / (2 * h)


# --- critic loss -------------------------------------------------------------


def test_constant_critic_gives_zero_loss():
    _, d, _, _ = tiny_models()
    with torch.no_grad():
        for p in d.parameters():
            p.zero_()
    gen = torch.Generator().manual_seed(0)
    x_real = torch.randn(4, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    x_fake = torch.randn(4, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    mu = torch.rand(4, generator=gen, dtype=torch.float64)
    interp = interpolate_batch(x_real, x_fake, mu)
    assert critic_loss(d, x_real, x_fake, interp).item() == 0.0


def test_linear_critic_penalty_is_weight_norm():
    d = LinearCritic(SIDE * SIDE, seed=1)
    gen = torch.Generator().manual_seed(2)
    x_real = torch.randn(6, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    x_fake = torch.randn(6, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    interp = interpolate_batch(x_real, x_fake, torch.rand(6, generator=gen, dtype=torch.float64))
    w_norm = d.w.detach().norm().item()
    for p_gp in (1.0, 6.0):
        penalty = gradient_penalty(d, interp, p_gp=p_gp).item()
        assert penalty == pytest.approx(w_norm**p_gp, rel=1e-9)
    expected = (
        d(x_real).mean() - d(x_fake).mean()
    ).item() - 2.0 * w_norm  # k_gp = 2, p_gp = 1
    assert critic_loss(d, x_real, x_fake, interp).item() == pytest.approx(expected, rel=1e-9)


def test_interpolated_batch_is_exact_mix():
    gen = torch.Generator().manual_seed(3)
    x_real = torch.randn(5, 1, 4, 4, generator=gen)
    x_fake = torch.randn(5, 1, 4, 4, generator=gen)
    mu = torch.rand(5, generator=gen)
    interp = interpolate_batch(x_real, x_fake, mu)
    expected = mu.view(-1, 1, 1, 1) * x_real + (1 - mu.view(-1, 1, 1, 1)) * x_fake
    assert torch.allclose(interp.x_hat, expected)
    assert interp.x_hat.requires_grad


def test_critic_loss_gradient_matches_finite_differences():
    _, d, _, _ = tiny_models(seed=4)
    gen = torch.Generator().manual_seed(5)
    x_real = torch.randn(8, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    x_fake = torch.randn(8, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    mu = torch.rand(8, generator=gen, dtype=torch.float64)

    def loss_fn():
        interp = interpolate_batch(x_real, x_fake, mu)
        return critic_loss(d, x_real, x_fake, interp, k_gp=2.0, p_gp=1.0)

    analytic, fd = directional_fd(loss_fn, list(d.parameters()))
    assert analytic == pytest.approx(fd, rel=1e-3)


def test_critic_loss_gradient_matches_fd_power_six():
    _, d, _, _ = tiny_models(seed=6)
    gen = torch.Generator().manual_seed(7)
    x_real = torch.randn(6, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    x_fake = torch.randn(6, 1, SIDE, SIDE, generator=gen, dtype=torch.float64)
    mu = torch.rand(6, generator=gen, dtype=torch.float64)

    def loss_fn():
        interp = interpolate_batch(x_real, x_fake, mu)
        return critic_loss(d, x_real, x_fake, interp, k_gp=2.0, p_gp=6.0)

    analytic, fd = directional_fd(loss_fn, list(d.parameters()), seed=1)
    assert analytic == pytest.approx(fd, rel=1e-3)


# --- mixed information loss ---------------------------------------------------


class _Returns(nn.Module):
    def __init__(self, value):
        super().__init__()
        self.value = value

    def forward(self, x):
        return self.value


def test_perfect_heads_give_zero_loss():
    gen = torch.Generator().manual_seed(8)
    c = torch.rand(6, K_LAT, generator=gen) * 2 - 1
    x_fake = torch.randn(6, 1, SIDE, SIDE, generator=gen)
    loss = infer_info_loss(c, x_fake, _Returns(c), _Returns(c), lam=0.9)
    assert loss.item() == 0.0


def test_lambda_half_weights_terms_equally():
    gen = torch.Generator().manual_seed(9)
    c = torch.rand(5, K_LAT, generator=gen) * 2 - 1
    x_fake = torch.randn(5, 1, SIDE, SIDE, generator=gen)
    est_a = torch.randn(5, K_LAT, generator=gen)
    est_b = torch.randn(5, K_LAT, generator=gen)
    forward = infer_info_loss(c, x_fake, _Returns(est_b), _Returns(est_a), lam=0.5)
    swapped = infer_info_loss(c, x_fake, _Returns(est_a), _Returns(est_b), lam=0.5)
    assert forward.item() == pytest.approx(swapped.item(), abs=1e-7)


def test_infer_info_term_by_term_consistency():
    g, d, q, obe = tiny_models(seed=10)
    s = sample_latent(8, D_LAT, K_LAT, seed=11)
    x_fake = g(s.z.double(), s.c.double()).detach()
    lam = 0.7
    assembled = infer_info_loss(s.c.double(), x_fake, q, obe, lam).item()
    # independent term-by-term recomputation in numpy
    est = obe(x_fake).detach().numpy()
    enc = q(x_fake).detach().numpy()
    c = s.c.double().numpy()
    obe_term = (-0.5 * ((c - est) ** 2).sum(axis=1)).mean()
    enc_term = (-0.5 * ((c - enc) ** 2).sum(axis=1)).mean()
    assert assembled == pytest.approx(lam * obe_term + (1 - lam) * enc_term, abs=1e-6)


def test_infer_info_batch_permutation_invariance():
    g, d, q, obe = tiny_models(seed=12)
    s = sample_latent(8, D_LAT, K_LAT, seed=13)
    x_fake = g(s.z.double(), s.c.double()).detach()
    perm = torch.randperm(8, generator=torch.Generator().manual_seed(14))
    a = infer_info_loss(s.c.double(), x_fake, q, obe, 0.9).item()
    b = infer_info_loss(s.c.double()[perm], x_fake[perm], q, obe, 0.9).item()
    assert a == pytest.approx(b, abs=1e-9)


def test_infer_info_rejects_bad_lambda():
    gen = torch.Generator().manual_seed(15)
    c = torch.rand(2, K_LAT, generator=gen)
    x = torch.randn(2, 1, SIDE, SIDE, generator=gen)
    for lam in (0.0, 1.0, 1.5):
        with pytest.raises(ConfigError):
            infer_info_loss(c, x, _Returns(c), _Returns(c), lam=lam)


def test_infer_info_gradient_matches_finite_differences():
    g, d, q, obe = tiny_models(seed=16)
    s = sample_latent(6, D_LAT, K_LAT, seed=17)
    x_fake = g(s.z.double(), s.c.double()).detach()
    c = s.c.double()
    params = list(q.own_parameters()) + list(obe.parameters())

    def loss_fn():
        return infer_info_loss(c, x_fake, q, obe, lam=0.9)

    analytic, fd = directional_fd(loss_fn, params)
    assert analytic == pytest.approx(fd, rel=1e-3)


# --- generator-side loss --------------------------------------------------------


def test_gamma_zero_is_pure_adversarial():
    g, d, q, obe = tiny_models(seed=18)
    s = sample_latent(4, D_LAT, K_LAT, seed=19)
    s = type(s)(z=s.z.double(), c=s.c.double())
    weights = LossWeights(gamma=0.0)
    loss, parts = generator_side_loss(g, d, s, weights, q=q, obe=obe)
    assert loss.item() == pytest.approx(-d(g(s.z, s.c)).mean().item(), abs=1e-9)
    assert loss.item() == pytest.approx(parts["adversarial"], abs=1e-9)


def test_perfect_heads_reduce_to_adversarial():
    g, d, _, _ = tiny_models(seed=20)
    s = sample_latent(4, D_LAT, K_LAT, seed=21)
    s = type(s)(z=s.z.double(), c=s.c.double())
    perfect = _Returns(s.c)
    loss, parts = generator_side_loss(g, d, s, LossWeights(), q=perfect, obe=perfect)
    assert parts["infer_info"] == 0.0
    assert loss.item() == pytest.approx(parts["adversarial"], abs=1e-9)


def test_basis_gradient_only_through_coefficient_term():
    g, d, q, obe = tiny_models(seed=22)
    s = sample_latent(4, D_LAT, K_LAT, seed=23)
    x_fake = g(s.z.double(), s.c.double()).detach()
    enc_term = (-0.5 * (s.c.double() - q(x_fake)).pow(2).sum(dim=1)).mean()
    grad = torch.autograd.grad(enc_term, obe.basis.matrix, allow_unused=True)[0]
    assert grad is None  # encoder branch has no path to the basis
    obe_term = (-0.5 * (s.c.double() - obe(x_fake)).pow(2).sum(dim=1)).mean()
    grad = torch.autograd.grad(obe_term, obe.basis.matrix, allow_unused=True)[0]
    assert grad is not None and grad.abs().sum().item() > 0


def test_generator_side_gradient_matches_finite_differences():
    g, d, q, obe = tiny_models(seed=24)
    s = sample_latent(4, D_LAT, K_LAT, seed=25)
    s = type(s)(z=s.z.double(), c=s.c.double())
    params = list(g.parameters()) + list(q.own_parameters()) + list(obe.parameters())

    def loss_fn():
        return generator_side_loss(g, d, s, LossWeights(), q=q, obe=obe)[0]

    analytic, fd = directional_fd(loss_fn, params)
    assert analytic == pytest.approx(fd, rel=1e-3)


def test_generator_side_one_step_mode_includes_orthogonality():
    g, d, q, obe = tiny_models(seed=26)
    s = sample_latent(4, D_LAT, K_LAT, seed=27)
    s = type(s)(z=s.z.double(), c=s.c.double())
    base, parts0 = generator_side_loss(g, d, s, LossWeights(alpha=2.0), q=q, obe=obe)
    with_or, parts1 = generator_side_loss(
        g, d, s, LossWeights(alpha=2.0), q=q, obe=obe, include_orthogonality=True
    )
    assert parts1["orthogonality"] is not None and parts0["orthogonality"] is None
    assert with_or.item() == pytest.approx(
        base.item() + 2.0 * parts1["orthogonality"], rel=1e-6
    )


def test_ablation_term_selection():
    g, d, q, obe = tiny_models(seed=28)
    s = sample_latent(4, D_LAT, K_LAT, seed=29)
    s = type(s)(z=s.z.double(), c=s.c.double())
    weights = LossWeights(lam=0.9, gamma=1.0)
    x_fake = g(s.z, s.c).detach()
    obe_term = (-0.5 * (s.c - obe(x_fake)).pow(2).sum(dim=1)).mean().item()
    enc_term = (-0.5 * (s.c - q(x_fake)).pow(2).sum(dim=1)).mean().item()

    _, parts_full = generator_side_loss(g, d, s, weights, q=q, obe=obe)
    assert parts_full["infer_info"] == pytest.approx(0.9 * obe_term + 0.1 * enc_term, abs=1e-9)

    _, parts_no_obe = generator_side_loss(g, d, s, weights, q=q, obe=None)
    assert parts_no_obe["infer_info"] == pytest.approx(enc_term, abs=1e-9)

    _, parts_no_enc = generator_side_loss(
        g, d, s, weights, q=q, obe=obe, infogan_term_on=False
    )
    assert parts_no_enc["infer_info"] == pytest.approx(0.9 * obe_term, abs=1e-9)


# --- weights and reports -----------------------------------------------------------


def test_loss_weights_validation():
    with pytest.raises(ConfigError):
        LossWeights(lam=1.0)
    with pytest.raises(ConfigError):
        LossWeights(lam=0.0)
    with pytest.raises(ConfigError):
        LossWeights(gamma=-0.1)


def test_total_objective_report_zeroes():
    report = total_objective_report(0.0, 0.0, 0.0, LossWeights())
    assert report.total == 0.0


def test_total_objective_report_linear_combination():
    w = LossWeights(gamma=1.1, alpha=0.5)
    report = total_objective_report(1.25, -0.5, 2.0, w)
    assert report.total == pytest.approx(1.25 - 1.1 * (-0.5) + 0.5 * 2.0)


def test_objective_report_json_round_trip():
    report = total_objective_report(0.125, -3.5, 0.0625, LossWeights(gamma=1.1, alpha=1.0))
    again = ObjectiveReport.from_json(report.to_json())
    assert again == report
