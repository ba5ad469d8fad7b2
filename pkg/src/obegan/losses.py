"""Training objectives.

Critic side: Wasserstein difference with a gradient penalty on interpolated
samples (norm raised to a configurable power, coefficient k_gp). Generator
side: the negated critic score on fresh fakes minus gamma times the
mixed-information objective, which couples the code to (a) the matched basis
coefficients of the generated image (weight lambda) and (b) the encoder's
Gaussian mean (weight 1-lambda). Both Gaussian heads have unit variance, so
the log-likelihoods reduce to squared errors; additive constants are dropped.

Sign conventions are fixed so every optimizer descends: the critic optimizer
descends -critic_loss, the generator-side optimizer descends
generator_side_loss.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import torch

from .basis import ObeInference, orthogonality_loss
from .errors import ConfigError, TrainingError
from .networks import Critic, Encoder, Generator, LatentSample


@dataclass(frozen=True)
class LossWeights:
    """Objective weights; lambda must lie strictly inside (0, 1)."""

    lam: float = 0.9
    gamma: float = 1.1
    alpha: float = 1.0
    k_gp: float = 2.0
    p_gp: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.lam < 1.0):
            raise ConfigError(f"lambda must be in (0, 1) strictly, got {self.lam}")
        if self.gamma < 0 or self.alpha < 0:
            raise ConfigError("gamma and alpha must be non-negative")
        if self.k_gp < 0:
            raise ConfigError("gradient-penalty coefficient must be non-negative")


@dataclass
class InterpolatedBatch:
    """Per-sample linear mixes of real and fake images, tracked for autograd."""

    x_hat: torch.Tensor
    mu: torch.Tensor


def interpolate_batch(
    x_real: torch.Tensor, x_fake: torch.Tensor, mu: torch.Tensor
) -> InterpolatedBatch:
    """x_hat_j = mu_j * x_real_j + (1 - mu_j) * x_fake_j, grad-enabled."""
    if x_real.shape != x_fake.shape:
        raise ValueError(
            f"real/fake shapes differ: {tuple(x_real.shape)} vs {tuple(x_fake.shape)}"
        )
    if mu.shape[0] != x_real.shape[0]:
        raise ValueError("one mixing scalar per sample required")
    m = mu.view(-1, *([1] * (x_real.ndim - 1)))
    x_hat = m * x_real.detach() + (1.0 - m) * x_fake.detach()
    x_hat.requires_grad_(True)
    return InterpolatedBatch(x_hat=x_hat, mu=mu)


def gradient_penalty(
    d: Critic, interp: InterpolatedBatch, p_gp: float = 1.0
) -> torch.Tensor:
    """Mean ||grad_x D(x_hat)||^p over the batch, differentiable through D."""
    scores = d(interp.x_hat)
    (grads,) = torch.autograd.grad(
        scores.sum(), interp.x_hat, create_graph=True, allow_unused=True
    )
    if grads is None:
        grads = torch.zeros_like(interp.x_hat)
    norms = grads.flatten(1).pow(2).sum(dim=1).sqrt()
    if p_gp == 1.0:
        return norms.mean()
    return norms.pow(p_gp).mean()


def critic_loss(
    d: Critic,
    x_real: torch.Tensor,
    x_fake: torch.Tensor,
    interp: InterpolatedBatch,
    k_gp: float = 2.0,
    p_gp: float = 1.0,
) -> torch.Tensor:
    """E[D(real)] - E[D(fake)] - k_gp * E[||grad D(x_hat)||^p]; maximized in D."""
    if x_real.shape[0] != x_fake.shape[0]:
        raise ValueError("real and fake batches must align")
    value = d(x_real).mean() - d(x_fake).mean() - k_gp * gradient_penalty(d, interp, p_gp)
    if not torch.isfinite(value):
        raise TrainingError(
            f"non-finite critic objective: real mean {d(x_real).mean().item()!r}, "
            f"fake mean {d(x_fake).mean().item()!r}"
        )
    return value


def _squared_error_terms(
    c: torch.Tensor,
    x_fake: torch.Tensor,
    q: Encoder | None,
    obe: ObeInference | None,
) -> tuple[torch.Tensor | None, torch.Tensor | None]:
    """Per-branch log-likelihood terms (constants dropped): -(1/2) sum_i err_i^2."""
    obe_term = None
    enc_term = None
    if obe is not None:
        est = obe(x_fake)
        obe_term = (-0.5 * (c - est).pow(2).sum(dim=1)).mean()
    if q is not None:
        mean = q(x_fake)
        enc_term = (-0.5 * (c - mean).pow(2).sum(dim=1)).mean()
    return obe_term, enc_term


def infer_info_loss(
    c: torch.Tensor,
    x_fake: torch.Tensor,
    q: Encoder,
    obe: ObeInference,
    lam: float,
) -> torch.Tensor:
    """Monte-Carlo value of the mixed information objective (to maximize):

    E[ lam * log q'(c_i | c'_i) + (1 - lam) * log q(c | X) ], Gaussian heads,
    additive constants dropped.
    """
    if not (0.0 < lam < 1.0):
        raise ConfigError(f"lambda must be in (0, 1) strictly, got {lam}")
    obe_term, enc_term = _squared_error_terms(c, x_fake, q, obe)
    return lam * obe_term + (1.0 - lam) * enc_term


def generator_side_loss(
    g: Generator,
    d: Critic,
    latents: LatentSample,
    weights: LossWeights,
    q: Encoder | None = None,
    obe: ObeInference | None = None,
    infogan_term_on: bool = True,
    include_orthogonality: bool = False,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Quantity descended by the G/Q/P optimizer on a fresh fake batch.

    -E[D(G(z, c))] - gamma * info_term, where info_term follows the active
    ablation: the full lam/(1-lam) mix, encoder-only (basis expansion off),
    or lam-weighted coefficient consistency only (encoder term off). With
    ``include_orthogonality`` (one-step mode) alpha * L_or joins the loss
    instead of being handled by the inner loop.

    Returns the loss tensor and a report dict of detached component values.
    """
    x_fake = g(latents.z, latents.c)
    adv = -d(x_fake).mean()
    obe_term, enc_term = _squared_error_terms(
        latents.c, x_fake, q if infogan_term_on else None, obe
    )
    if obe is not None and infogan_term_on:
        info = weights.lam * obe_term + (1.0 - weights.lam) * enc_term
    elif obe is not None:
        info = weights.lam * obe_term
    elif infogan_term_on and enc_term is not None:
        info = enc_term  # plain InfoGAN likelihood at full weight
    else:
        info = None

    loss = adv if info is None else adv - weights.gamma * info
    l_or = None
    if include_orthogonality and obe is not None:
        l_or = orthogonality_loss(obe.basis)
        loss = loss + weights.alpha * l_or

    if not torch.isfinite(loss):
        raise TrainingError(f"non-finite generator-side loss: {loss.item()!r}")
    parts = {
        "adversarial": adv.item(),
        "infer_info": None if info is None else info.item(),
        "orthogonality": None if l_or is None else l_or.item(),
    }
    return loss, parts


@dataclass
class ObjectiveReport:
    """Assembled objective components for logging; carries no gradients."""

    l_adv: float
    l_infer_info: float
    l_or: float
    gamma: float
    alpha: float
    total: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @staticmethod
    def from_json(text: str) -> "ObjectiveReport":
        return ObjectiveReport(**json.loads(text))


def total_objective_report(
    l_adv: float, l_infer_info: float, l_or: float, weights: LossWeights
) -> ObjectiveReport:
    """Linear combination l_adv - gamma * l_infer_info + alpha * l_or."""
    total = l_adv - weights.gamma * l_infer_info + weights.alpha * l_or
    return ObjectiveReport(
        l_adv=l_adv,
        l_infer_info=l_infer_info,
        l_or=l_or,
        gamma=weights.gamma,
        alpha=weights.alpha,
        total=total,
    )
