"""Alternating-optimization training loop.

Each step: sample mixing scalars, noise and codes; update the critic on the
Wasserstein objective with gradient penalty; update generator, encoder head,
basis, combiner and coefficient heads on the generator-side loss; then (unless
one-step mode is on) refine the basis alone by plain gradient descent on its
orthogonality penalty until it drops below epsilon or the inner budget runs
out. Everything is driven by one torch.Generator held in the state, so runs
are bit-reproducible under a fixed seed on the same platform.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch

from .basis import (
    BasisMatrix,
    ChannelCombiner,
    CoefficientAssignment,
    ObeInference,
    _orthogonalize_inplace,
    dct_basis,
    orthogonality_loss,
)
from .data import FactorDataset, _batch_indices
from .errors import ConfigError, TrainingError
from .losses import LossWeights, critic_loss, generator_side_loss, interpolate_batch
from .networks import (
    Critic,
    DiscriminatorSpec,
    Encoder,
    EncoderSpec,
    Generator,
    GeneratorSpec,
    build_critic,
    build_encoder,
    build_generator,
    sample_latent,
)


@dataclass(frozen=True)
class TrainConfig:
    """All training hyperparameters, defaulting to the published settings
    (batch 64, Adam lr 9e-4 with betas (0.5, 0.999), lambda 0.9, gamma 1.1,
    epsilon 0.2)."""

    weights: LossWeights = field(default_factory=LossWeights)
    epsilon: float = 0.2
    lr: float = 9e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch: int = 64
    iters: int = 1000
    d: int = 60
    k: int = 5
    side: int = 64
    channels: int = 1
    width: int = 32
    encoder_hidden: int = 64
    basis_mode: str = "learned"  # learned | dct
    assignment: str = "diagonal"  # diagonal | zigzag_high_frequency | explicit
    explicit_indices: tuple[tuple[int, int], ...] | None = None
    basis_init_noise: float = 1e-2
    inner_max_iters: int = 500
    inner_lr: float | None = None  # default: 10x the outer lr
    seed: int = 0
    obe_off: bool = False
    alternating_off: bool = False
    infogan_term_off: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")
        if self.basis_mode not in ("learned", "dct"):
            raise ConfigError(f"unknown basis mode {self.basis_mode!r}")
        if self.assignment not in ("diagonal", "zigzag_high_frequency", "explicit"):
            raise ConfigError(f"unknown assignment ordering {self.assignment!r}")
        if self.assignment == "explicit" and not self.explicit_indices:
            raise ConfigError("explicit assignment requires explicit_indices")
        if self.batch < 1 or self.iters < 0:
            raise ConfigError("batch must be >= 1 and iters >= 0")
        if self.obe_off and self.infogan_term_off:
            raise ConfigError("cannot disable both information terms")

    @property
    def effective_inner_lr(self) -> float:
        return self.inner_lr if self.inner_lr is not None else 10.0 * self.lr

    def make_assignment(self) -> CoefficientAssignment:
        if self.assignment == "diagonal":
            return CoefficientAssignment.diagonal(self.side, self.k)
        if self.assignment == "zigzag_high_frequency":
            return CoefficientAssignment.zigzag_high_frequency(self.side, self.k)
        return CoefficientAssignment.explicit(self.side, self.explicit_indices)


@dataclass
class StepReport:
    """One record per training step, JSON-serializable."""

    iteration: int
    loss_adversarial: float
    loss_infer_info: float | None
    loss_orthogonality: float | None
    loss_generator_side: float
    inner_iters: int
    inner_budget_exhausted: bool
    wall_time_s: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "StepReport":
        return StepReport(**json.loads(text))


@dataclass
class TrainState:
    """Everything the loop mutates: modules, optimizers, counters, RNG."""

    config: TrainConfig
    generator: Generator
    critic: Critic
    encoder: Encoder
    obe: ObeInference | None
    opt_d: torch.optim.Adam
    opt_g: torch.optim.Adam
    iteration: int
    rng: torch.Generator

    def modules(self) -> dict[str, torch.nn.Module]:
        mods = {"g": self.generator, "d": self.critic, "q_head": self.encoder.head}
        if not self.encoder.shares_trunk:
            mods["q_trunk"] = self.encoder.trunk
        if self.obe is not None:
            mods["obe"] = self.obe
        return mods

    def generator_side_parameters(self) -> list[torch.nn.Parameter]:
        params = list(self.generator.parameters())
        params += list(self.encoder.own_parameters())
        if self.obe is not None:
            params += list(self.obe.parameters())
        return params

    def zero_all_grads(self) -> None:
        for m in (self.generator, self.critic, self.encoder):
            m.zero_grad(set_to_none=True)
        if self.obe is not None:
            self.obe.zero_grad(set_to_none=True)


def init_state(config: TrainConfig) -> TrainState:
    """Build seeded modules and optimizers for a fresh run."""
    g = build_generator(
        GeneratorSpec(
            side=config.side,
            channels=config.channels,
            width=config.width,
            d=config.d,
            k=config.k,
            seed=config.seed + 1,
        )
    )
    d = build_critic(
        DiscriminatorSpec(
            side=config.side, channels=config.channels, width=config.width, seed=config.seed + 2
        )
    )
    q = build_encoder(
        EncoderSpec(
            side=config.side,
            channels=config.channels,
            width=config.width,
            k=config.k,
            hidden=config.encoder_hidden,
            seed=config.seed + 3,
        ),
        trunk=d,
    )
    obe = None
    if not config.obe_off:
        if config.basis_mode == "dct":
            basis = dct_basis(config.side)
        else:
            basis = BasisMatrix.learned(
                config.side, init_noise=config.basis_init_noise, seed=config.seed + 4
            )
        with torch.random.fork_rng():
            torch.manual_seed(config.seed + 5)
            obe = ObeInference(basis, config.make_assignment(), ChannelCombiner(config.channels))
    gen_side_params = list(g.parameters()) + list(q.own_parameters())
    if obe is not None:
        gen_side_params += list(obe.parameters())
    return TrainState(
        config=config,
        generator=g,
        critic=d,
        encoder=q,
        obe=obe,
        opt_d=torch.optim.Adam(d.parameters(), lr=config.lr, betas=(config.beta1, config.beta2)),
        opt_g=torch.optim.Adam(
            gen_side_params, lr=config.lr, betas=(config.beta1, config.beta2)
        ),
        iteration=0,
        rng=torch.Generator().manual_seed(config.seed),
    )


def _parameter_snapshot(state: TrainState, exclude_basis: bool = True) -> list[torch.Tensor]:
    out = []
    for name, module in state.modules().items():
        for pname, p in module.named_parameters():
            if exclude_basis and name == "obe" and pname == "basis.matrix":
                continue
            out.append(p.detach().clone())
    return out


def train_step(state: TrainState, real_batch: torch.Tensor, config: TrainConfig) -> StepReport:
    """One full step: critic update, generator-side update, inner basis loop."""
    t0 = time.perf_counter()
    if real_batch.shape[0] != config.batch:
        raise ValueError(
            f"real batch size {real_batch.shape[0]} does not match config batch {config.batch}"
        )
    b = real_batch.shape[0]
    mu = torch.rand(b, generator=state.rng)
    latents = sample_latent(b, config.d, config.k, state.rng)

    # critic update (descends the negated Wasserstein objective)
    with torch.no_grad():
        x_fake = state.generator(latents.z, latents.c)
    interp = interpolate_batch(real_batch, x_fake, mu)
    adv = critic_loss(
        state.critic, real_batch, x_fake, interp, config.weights.k_gp, config.weights.p_gp
    )
    state.zero_all_grads()
    (-adv).backward()
    state.opt_d.step()

    # generator-side update on a fresh forward of the same latents
    loss_g, parts = generator_side_loss(
        state.generator,
        state.critic,
        latents,
        config.weights,
        q=state.encoder,
        obe=state.obe,
        infogan_term_on=not config.infogan_term_off,
        include_orthogonality=config.alternating_off and state.obe is not None,
    )
    state.zero_all_grads()
    loss_g.backward()
    state.opt_g.step()

    # inner loop: refine the basis alone until the penalty drops below epsilon
    inner_iters = 0
    exhausted = False
    l_or = parts["orthogonality"]
    if state.obe is not None and not config.alternating_off:
        if state.obe.basis.mode == "learned":
            l_or, inner_iters, converged = _orthogonalize_inplace(
                state.obe.basis.matrix.data,
                eps=config.epsilon,
                max_iters=config.inner_max_iters,
                lr=config.effective_inner_lr,
            )
            exhausted = not converged
        else:
            l_or = orthogonality_loss(state.obe.basis).item()
    elif state.obe is not None and config.alternating_off:
        l_or = orthogonality_loss(state.obe.basis).item()

    state.iteration += 1
    report = StepReport(
        iteration=state.iteration,
        loss_adversarial=adv.item(),
        loss_infer_info=parts["infer_info"],
        loss_orthogonality=l_or,
        loss_generator_side=loss_g.item(),
        inner_iters=inner_iters,
        inner_budget_exhausted=exhausted,
        wall_time_s=time.perf_counter() - t0,
    )
    if not np.isfinite(report.loss_adversarial) or not np.isfinite(report.loss_generator_side):
        raise TrainingError(f"non-finite losses at iteration {state.iteration}: {report}")
    return report


@dataclass
class TrainLog:
    reports: list[StepReport] = field(default_factory=list)

    def append(self, report: StepReport) -> None:
        self.reports.append(report)

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.reports)

    @staticmethod
    def from_jsonl(text: str) -> "TrainLog":
        return TrainLog([StepReport.from_json(ln) for ln in text.splitlines() if ln.strip()])

    def losses(self, name: str) -> list[float]:
        return [getattr(r, name) for r in self.reports]


def train(
    config: TrainConfig,
    dataset: FactorDataset,
    state: TrainState | None = None,
    on_step=None,
    on_checkpoint=None,
    checkpoint_every: int | None = None,
) -> tuple[TrainState, TrainLog]:
    """Run ``config.iters`` steps over a cyclic shuffled stream of the dataset.

    ``on_step(state, report)`` fires after every step; ``on_checkpoint(state)``
    fires every ``checkpoint_every`` steps and once at the end. Resuming from a
    loaded state skips the consumed part of the data stream so the continuation
    sees the batches the uninterrupted run would have seen.
    """
    if dataset.side != config.side or dataset.channels != config.channels:
        raise ConfigError(
            f"dataset geometry ({dataset.channels}, {dataset.side}) does not match config "
            f"({config.channels}, {config.side})"
        )
    if state is None:
        state = init_state(config)
    log = TrainLog()
    if state.iteration >= config.iters:
        return state, log
    stream = _batch_indices(
        len(dataset), config.batch, seed=config.seed, cyclic=True, skip=state.iteration
    )
    try:
        while state.iteration < config.iters:
            idx = next(stream)
            real = torch.from_numpy(dataset.pixels(idx))
            report = train_step(state, real, config)
            log.append(report)
            if on_step is not None:
                on_step(state, report)
            if (
                on_checkpoint is not None
                and checkpoint_every
                and state.iteration % checkpoint_every == 0
            ):
                on_checkpoint(state)
    except TrainingError:
        if on_checkpoint is not None:
            on_checkpoint(state)  # diagnostic dump of the failed state
        raise
    if on_checkpoint is not None:
        on_checkpoint(state)
    return state, log


def ablation_variants(config: TrainConfig) -> dict[str, TrainConfig]:
    """The four study arms, identical seeds: full model, basis expansion off
    (encoder-only baseline), encoder term off, one-step (no inner loop)."""
    return {
        "full": replace(config, obe_off=False, alternating_off=False, infogan_term_off=False),
        "obe_off": replace(config, obe_off=True, alternating_off=False, infogan_term_off=False),
        "infogan_term_off": replace(
            config, obe_off=False, alternating_off=False, infogan_term_off=True
        ),
        "alternating_off": replace(
            config, obe_off=False, alternating_off=True, infogan_term_off=False
        ),
    }


def config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> TrainConfig:
    data = dict(data)
    weights = data.pop("weights")
    if isinstance(weights, dict):
        weights = LossWeights(**weights)
    explicit = data.pop("explicit_indices", None)
    if explicit is not None:
        explicit = tuple(tuple(ij) for ij in explicit)
    return TrainConfig(weights=weights, explicit_indices=explicit, **data)
