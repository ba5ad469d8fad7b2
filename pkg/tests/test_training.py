import copy
from dataclasses import replace

import numpy as np
import pytest
import torch

from obegan.data import toy_dataset
from obegan.errors import ConfigError, TrainingError
from obegan.losses import LossWeights
from obegan.training import (
    StepReport,
    TrainConfig,
    TrainLog,
    ablation_variants,
    init_state,
    train,
    train_step,
)

DATA = toy_dataset()


def toy_config(**kw) -> TrainConfig:
    base = dict(side=32, channels=1, width=8, d=8, k=5, batch=64, iters=5, seed=0)
    base.update(kw)
    return TrainConfig(**base)


def first_batch(config):
    from obegan.data import _batch_indices

    idx = next(_batch_indices(len(DATA), config.batch, config.seed, cyclic=True))
    return torch.from_numpy(DATA.pixels(idx))


# --- single step ---------------------------------------------------------------


def test_step_losses_finite_and_reported():
    config = toy_config()
    state = init_state(config)
    report = train_step(state, first_batch(config), config)
    assert np.isfinite(report.loss_adversarial)
    assert np.isfinite(report.loss_generator_side)
    assert np.isfinite(report.loss_infer_info)
    assert report.iteration == 1
    assert report.wall_time_s > 0


def test_step_enforces_orthogonality_threshold():
    config = toy_config(iters=8)
    _, log = train(config, DATA)
    for report in log.reports:
        if not report.inner_budget_exhausted:
            assert report.loss_orthogonality < config.epsilon


def test_step_rejects_wrong_batch_size():
    config = toy_config()
    state = init_state(config)
    with pytest.raises(ValueError):
        train_step(state, torch.zeros(8, 1, 32, 32), config)


def test_inner_loop_changes_only_the_basis():
    # identical twin states; one runs the inner loop, the other has a zero
    # budget -- the only parameter allowed to differ afterwards is the basis
    config_a = toy_config()
    config_b = replace(config_a, inner_max_iters=0)
    state_a = init_state(config_a)
    state_b = init_state(config_b)
    batch = first_batch(config_a)
    train_step(state_a, batch.clone(), config_a)
    train_step(state_b, batch.clone(), config_b)

    params_a = dict(state_a.generator.named_parameters())
    params_b = dict(state_b.generator.named_parameters())
    for name in params_a:
        assert torch.equal(params_a[name], params_b[name])
    for pa, pb in zip(state_a.critic.parameters(), state_b.critic.parameters()):
        assert torch.equal(pa, pb)
    for pa, pb in zip(state_a.encoder.own_parameters(), state_b.encoder.own_parameters()):
        assert torch.equal(pa, pb)
    assert torch.equal(state_a.obe.combiner.weights, state_b.obe.combiner.weights)
    assert torch.equal(state_a.obe.heads.scale, state_b.obe.heads.scale)
    assert not torch.equal(state_a.obe.basis.matrix, state_b.obe.basis.matrix)


def test_non_finite_loss_aborts_step():
    config = toy_config()
    state = init_state(config)
    with torch.no_grad():
        state.generator.fc.weight[0, 0] = float("nan")
    with pytest.raises(TrainingError):
        train_step(state, first_batch(config), config)


# --- determinism -----------------------------------------------------------------


def test_hundred_steps_seed_deterministic():
    config = toy_config(iters=100)
    _, log_a = train(config, DATA)
    _, log_b = train(config, DATA)
    trace_a = log_a.losses("loss_adversarial")
    trace_b = log_b.losses("loss_adversarial")
    assert len(trace_a) == 100
    assert trace_a == trace_b  # bitwise on the same platform
    assert log_a.losses("loss_generator_side") == log_b.losses("loss_generator_side")


def test_different_seeds_diverge():
    _, log_a = train(toy_config(iters=3, seed=0), DATA)
    _, log_b = train(toy_config(iters=3, seed=1), DATA)
    assert log_a.losses("loss_adversarial") != log_b.losses("loss_adversarial")


# --- train loop --------------------------------------------------------------------


def test_zero_iters_returns_initial_state_unchanged():
    config = toy_config(iters=0)
    state = init_state(config)
    before = copy.deepcopy(state.generator.state_dict())
    out_state, log = train(config, DATA, state=state)
    assert out_state is state and not log.reports
    after = state.generator.state_dict()
    assert all(torch.equal(before[k], after[k]) for k in before)


def test_train_checks_dataset_geometry():
    config = toy_config(side=64)
    with pytest.raises(ConfigError):
        train(config, DATA)


def test_step_and_checkpoint_hooks_fire():
    config = toy_config(iters=6)
    steps, checkpoints = [], []
    train(
        config,
        DATA,
        on_step=lambda s, r: steps.append(r.iteration),
        on_checkpoint=lambda s: checkpoints.append(s.iteration),
        checkpoint_every=2,
    )
    assert steps == [1, 2, 3, 4, 5, 6]
    assert checkpoints == [2, 4, 6, 6]  # cadence plus the final dump


def test_train_log_jsonl_round_trip():
    config = toy_config(iters=3)
    _, log = train(config, DATA)
    again = TrainLog.from_jsonl(log.to_jsonl())
    assert again.reports == log.reports


# --- ablation variants ----------------------------------------------------------------


def test_variant_set_has_four_members_same_seed():
    variants = ablation_variants(toy_config(seed=11))
    assert set(variants) == {"full", "obe_off", "infogan_term_off", "alternating_off"}
    assert all(v.seed == 11 for v in variants.values())


def test_obe_off_removes_basis_from_the_graph():
    config = toy_config(obe_off=True, iters=2)
    state = init_state(config)
    assert state.obe is None
    _, log = train(config, DATA)
    assert all(r.loss_orthogonality is None for r in log.reports)
    assert all(r.inner_iters == 0 for r in log.reports)
    # the information term is the plain encoder likelihood, still active
    assert all(np.isfinite(r.loss_infer_info) for r in log.reports)


def test_one_step_mode_folds_penalty_into_joint_loss():
    config = toy_config(alternating_off=True, iters=3)
    _, log = train(config, DATA)
    for r in log.reports:
        assert r.inner_iters == 0
        assert r.loss_orthogonality is not None  # reported from the joint loss


def test_infogan_term_off_drops_encoder_term():
    config = toy_config(infogan_term_off=True, iters=2)
    state = init_state(config)
    batch = first_batch(config)
    report = train_step(state, batch, config)
    assert np.isfinite(report.loss_infer_info)
    # encoder head must receive no gradient from the generator-side loss
    assert all(
        p.grad is None or p.grad.abs().sum() == 0 for p in state.encoder.own_parameters()
    )


def test_cannot_disable_both_information_terms():
    with pytest.raises(ConfigError):
        toy_config(obe_off=True, infogan_term_off=True)


def test_dct_mode_has_fixed_orthonormal_basis():
    config = toy_config(basis_mode="dct", iters=2)
    state = init_state(config)
    before = state.obe.basis.entries.clone()
    _, log = train(config, DATA, state=state)
    assert torch.equal(state.obe.basis.entries, before)  # buffer, not trained
    assert all(r.loss_orthogonality < 1e-4 for r in log.reports)
    assert all(r.inner_iters == 0 for r in log.reports)


# --- config validation -------------------------------------------------------------------


def test_config_rejects_bad_values():
    with pytest.raises(ConfigError):
        toy_config(epsilon=0.0)
    with pytest.raises(ConfigError):
        toy_config(basis_mode="fourier")
    with pytest.raises(ConfigError):
        toy_config(assignment="explicit")  # no indices given
    with pytest.raises(ConfigError):
        TrainConfig(weights=LossWeights(lam=0.5), batch=0)


def test_step_report_json_round_trip():
    report = StepReport(
        iteration=3,
        loss_adversarial=1.5,
        loss_infer_info=-0.25,
        loss_orthogonality=0.125,
        loss_generator_side=-2.0,
        inner_iters=4,
        inner_budget_exhausted=False,
        wall_time_s=0.01,
    )
    assert StepReport.from_json(report.to_json()) == report
