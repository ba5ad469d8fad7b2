"""Exhaustive-enumeration oracle for the mixed information objective.

On a fully tabulated joint over a small discrete code c and observation X,
every quantity the variational machinery estimates by sampling can be computed
exactly: the true mutual information, the encoder bound E[log q(c|X)] + H(c),
the lam-mixed objective, and its exact decomposition

    mixed = -lam * E_X[KL(p(c|X) || prod_i q'_i(c_i|X))]
            + (lam - 1) * E_X[KL(p(c|X) || q(c|X))]
            + I(c; X) - H(c)

whose last KL term is dropped (it is non-positive for lam in (0,1)) to give
the upper envelope the training objective can never exceed. All logs are
natural; 0 * log 0 terms contribute 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_ATOL = 1e-12


def _check_rows_normalized(name: str, arr: np.ndarray) -> None:
    if (arr < -_ATOL).any():
        raise ValueError(f"{name} has negative entries")
    sums = arr.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-9):
        raise ValueError(f"{name} rows must sum to 1, got sums {sums}")


def _xlogy(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    out = np.zeros(np.broadcast(x, y).shape)
    mask = x > 0
    out[mask] = (x * np.log(np.where(mask, y, 1.0)))[mask]
    return out


@dataclass
class DiscreteToyModel:
    """A fully enumerable joint over a factored code and an observation.

    dims: per-dimension code cardinalities; the flat code state enumerates
        their product in C order (np.unravel_index convention).
    p_c: (n_states,) prior over flat code states.
    p_x_given_c: (n_states, n_x) observation model.
    q: (n_x, n_states) tabular variational posterior q(c|X).
    q_marginals: per dim i, (n_x, dims[i]) tabular per-dimension variational
        conditionals q'_i(c_i|X).
    lam: mixing weight in (0, 1).
    """

    dims: tuple[int, ...]
    p_c: np.ndarray
    p_x_given_c: np.ndarray
    q: np.ndarray
    q_marginals: list[np.ndarray]
    lam: float

    def __post_init__(self):
        self.p_c = np.asarray(self.p_c, dtype=np.float64)
        self.p_x_given_c = np.asarray(self.p_x_given_c, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        self.q_marginals = [np.asarray(m, dtype=np.float64) for m in self.q_marginals]
        n_states = int(np.prod(self.dims))
        n_x = self.p_x_given_c.shape[1]
        if self.p_c.shape != (n_states,):
            raise ValueError(f"p_c must have shape ({n_states},)")
        if self.p_x_given_c.shape != (n_states, n_x):
            raise ValueError("p_x_given_c must be (n_states, n_x)")
        if self.q.shape != (n_x, n_states):
            raise ValueError("q must be (n_x, n_states)")
        if len(self.q_marginals) != len(self.dims):
            raise ValueError("one q' table per code dimension required")
        for i, (m, card) in enumerate(zip(self.q_marginals, self.dims)):
            if m.shape != (n_x, card):
                raise ValueError(f"q_marginals[{i}] must be ({n_x}, {card})")
        if not (0.0 < self.lam < 1.0):
            raise ValueError(f"lam must be in (0, 1), got {self.lam}")
        _check_rows_normalized("p_c", self.p_c[None, :])
        _check_rows_normalized("p_x_given_c", self.p_x_given_c)
        _check_rows_normalized("q", self.q)
        for i, m in enumerate(self.q_marginals):
            _check_rows_normalized(f"q_marginals[{i}]", m)

    @property
    def n_states(self) -> int:
        return int(np.prod(self.dims))

    @property
    def n_x(self) -> int:
        return self.p_x_given_c.shape[1]

    def state_tuples(self) -> np.ndarray:
        """(n_states, n_dims) array mapping flat state -> per-dim values."""
        idx = np.arange(self.n_states)
        return np.stack(np.unravel_index(idx, self.dims), axis=1)

    def factored_q(self) -> np.ndarray:
        """(n_x, n_states) product distribution prod_i q'_i(c_i|X)."""
        tuples = self.state_tuples()
        out = np.ones((self.n_x, self.n_states))
        for i, m in enumerate(self.q_marginals):
            out *= m[:, tuples[:, i]]
        return out


@dataclass
class BoundReport:
    true_mi: float
    code_entropy: float
    encoder_bound: float  # E[log q(c|X)] + H(c)
    infer_info: float  # E[lam log prod q' + (1-lam) log q]
    kl_encoder: float  # E_X[KL(p(c|X) || q(c|X))]
    kl_factored: float  # E_X[KL(p(c|X) || prod_i q'_i)]
    upper_bound: float  # -lam * kl_factored + true_mi - code_entropy
    decomposition_residual: float


def bound_oracle(toy: DiscreteToyModel) -> BoundReport:
    """Enumerate every (c, X) outcome and evaluate bound and decomposition."""
    joint = toy.p_c[:, None] * toy.p_x_given_c  # (n_states, n_x)
    p_x = joint.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        posterior = np.where(p_x[None, :] > 0, joint / np.where(p_x > 0, p_x, 1.0), 0.0)

    h_c = -_xlogy(toy.p_c, toy.p_c).sum()
    mi = _xlogy(joint, joint / np.maximum(toy.p_c[:, None] * p_x[None, :], 1e-300)).sum()

    q_cx = toy.q.T  # (n_states, n_x)
    factored = toy.factored_q().T

    e_log_q = _xlogy(joint, q_cx).sum()
    e_log_factored = _xlogy(joint, factored).sum()
    encoder_bound = e_log_q + h_c
    infer_info = toy.lam * e_log_factored + (1.0 - toy.lam) * e_log_q

    # E_X[KL(p(c|X) || .)] = sum_x p(x) sum_c p(c|x) log(p(c|x)/.)
    post_t = posterior  # (n_states, n_x)
    kl_encoder = (
        _xlogy(joint, post_t).sum() - e_log_q
    )  # sum p(c,x) log p(c|x) - sum p(c,x) log q
    kl_factored = _xlogy(joint, post_t).sum() - e_log_factored

    upper = -toy.lam * kl_factored + mi - h_c
    residual = infer_info - (
        -toy.lam * kl_factored + (toy.lam - 1.0) * kl_encoder + mi - h_c
    )
    return BoundReport(
        true_mi=float(mi),
        code_entropy=float(h_c),
        encoder_bound=float(encoder_bound),
        infer_info=float(infer_info),
        kl_encoder=float(kl_encoder),
        kl_factored=float(kl_factored),
        upper_bound=float(upper),
        decomposition_residual=float(residual),
    )


def random_toy(
    rng: np.random.Generator,
    dims: tuple[int, ...] = (2, 2),
    n_x: int = 8,
    lam: float = 0.7,
) -> DiscreteToyModel:
    """A randomized, strictly positive toy (Dirichlet-ish draws)."""
    n_states = int(np.prod(dims))
    p_c = rng.gamma(1.0, size=n_states) + 0.05
    p_c /= p_c.sum()
    p_x_given_c = rng.gamma(1.0, size=(n_states, n_x)) + 0.05
    p_x_given_c /= p_x_given_c.sum(axis=1, keepdims=True)
    q = rng.gamma(1.0, size=(n_x, n_states)) + 0.05
    q /= q.sum(axis=1, keepdims=True)
    q_marginals = []
    for card in dims:
        m = rng.gamma(1.0, size=(n_x, card)) + 0.05
        m /= m.sum(axis=1, keepdims=True)
        q_marginals.append(m)
    return DiscreteToyModel(
        dims=dims, p_c=p_c, p_x_given_c=p_x_given_c, q=q, q_marginals=q_marginals, lam=lam
    )


def posterior_tables(toy: DiscreteToyModel) -> tuple[np.ndarray, list[np.ndarray]]:
    """True posterior q(c|X) and per-dim posteriors q'_i(c_i|X) of the toy."""
    joint = toy.p_c[:, None] * toy.p_x_given_c
    p_x = joint.sum(axis=0)
    posterior = (joint / np.where(p_x > 0, p_x, 1.0)[None, :]).T  # (n_x, n_states)
    tuples = toy.state_tuples()
    marginals = []
    for i, card in enumerate(toy.dims):
        m = np.zeros((toy.n_x, card))
        for v in range(card):
            m[:, v] = posterior[:, tuples[:, i] == v].sum(axis=1)
        marginals.append(m)
    return posterior, marginals
