"""Orthogonal basis expansion of images.

A square orthogonal matrix ``P`` induces the rank-one basis ``{p_i p_j^T}``
(``p_i`` = i-th column of ``P``). Any image ``X`` expands as
``X = P C' P^T`` with coefficient grid ``C' = P^T X P``; selected entries of
``C'`` act as an inference channel for the controllable latent code. ``P`` is
either trained (kept near the orthogonal manifold by a dedicated penalty and
inner loop) or fixed to the orthonormal DCT-II basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import torch
from torch import nn


class ConvergenceWarning(UserWarning):
    """Orthogonalization stopped at max_iters before reaching its threshold."""


def _entries(p) -> torch.Tensor:
    """Accept either a raw square tensor or a BasisMatrix-like object."""
    if isinstance(p, torch.Tensor):
        mat = p
    else:
        mat = p.entries
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"basis matrix must be square 2-D, got shape {tuple(mat.shape)}")
    return mat


def expand(x: torch.Tensor, p) -> torch.Tensor:
    """Coefficient grid C' = P^T X P of an image (or batch) on the basis.

    ``x`` may be (n, n), (C, n, n) or (B, C, n, n); the transform applies to
    the trailing two axes. Differentiable in both ``x`` and ``p``.
    """
    mat = _entries(p)
    n = mat.shape[0]
    if x.ndim < 2 or x.shape[-1] != n or x.shape[-2] != n:
        raise ValueError(
            f"image side must match basis side {n}, got image shape {tuple(x.shape)}"
        )
    return mat.transpose(0, 1) @ x @ mat


def reconstruct(coeffs: torch.Tensor, p) -> torch.Tensor:
    """Inverse of :func:`expand` for orthonormal P: X = P C' P^T."""
    mat = _entries(p)
    n = mat.shape[0]
    if coeffs.ndim < 2 or coeffs.shape[-1] != n or coeffs.shape[-2] != n:
        raise ValueError(
            f"coefficient side must match basis side {n}, got shape {tuple(coeffs.shape)}"
        )
    return mat @ coeffs @ mat.transpose(0, 1)


def orthogonality_loss(p) -> torch.Tensor:
    """Sum of |P P^T - I|; zero exactly when P is orthogonal.

    Subgradient of |.| at zero is taken as 0, so exactly-orthogonal points
    are stationary.
    """
    mat = _entries(p)
    eye = torch.eye(mat.shape[0], dtype=mat.dtype, device=mat.device)
    return (mat @ mat.transpose(0, 1) - eye).abs().sum()


def dct_basis(n: int, dtype: torch.dtype = torch.float32) -> "BasisMatrix":
    """Orthonormal DCT-II basis matrix of side ``n``.

    Column ``u`` holds s(u)*cos[(x+0.5)*pi*u/n] over spatial index x, with
    s(0)=sqrt(1/n) and s(u)=sqrt(2/n) otherwise, so that expand() yields the
    standard 2-D DCT coefficients indexed by frequency and P P^T = I holds to
    machine precision.
    """
    if n < 1:
        raise ValueError(f"basis side must be >= 1, got {n}")
    x = torch.arange(n, dtype=torch.float64)
    u = torch.arange(n, dtype=torch.float64)
    scale = torch.full((n,), math.sqrt(2.0 / n), dtype=torch.float64)
    scale[0] = math.sqrt(1.0 / n)
    # rows of `table` are the basis functions; we store them as columns
    table = scale[:, None] * torch.cos((x[None, :] + 0.5) * math.pi * u[:, None] / n)
    return BasisMatrix(table.transpose(0, 1).to(dtype), mode="dct")


def zigzag_order(n: int) -> list[tuple[int, int]]:
    """All (u, v) grid positions sorted low to high frequency.

    Order is by anti-diagonal u+v, ties broken by ascending u; (0, 0) comes
    first and (n-1, n-1) last.
    """
    if n < 1:
        raise ValueError(f"side must be >= 1, got {n}")
    return sorted(
        ((u, v) for u in range(n) for v in range(n)),
        key=lambda uv: (uv[0] + uv[1], uv[0]),
    )


@dataclass(frozen=True)
class CoefficientAssignment:
    """Which k coefficient-grid positions pair with the k latent dims.

    ``indices[i]`` is the (row, col) position of the coefficient matched to
    latent dimension i.
    """

    indices: tuple[tuple[int, int], ...]
    ordering: str  # {diagonal, zigzag_high_frequency, explicit}
    side: int

    def __post_init__(self):
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("assignment positions must be distinct")
        for (r, c) in self.indices:
            if not (0 <= r < self.side and 0 <= c < self.side):
                raise ValueError(
                    f"assignment position ({r}, {c}) out of bounds for side {self.side}"
                )

    @property
    def k(self) -> int:
        return len(self.indices)

    @staticmethod
    def diagonal(side: int, k: int) -> "CoefficientAssignment":
        """Positions (1,1)..(k,k); skips (0,0), which carries mean intensity."""
        if k > side - 1:
            raise ValueError(f"diagonal assignment needs side > k, got side={side} k={k}")
        return CoefficientAssignment(
            tuple((i, i) for i in range(1, k + 1)), "diagonal", side
        )

    @staticmethod
    def zigzag_high_frequency(side: int, k: int) -> "CoefficientAssignment":
        """The k highest-frequency positions of the zigzag order."""
        order = zigzag_order(side)
        if k > len(order):
            raise ValueError(f"k={k} exceeds {len(order)} grid positions")
        return CoefficientAssignment(tuple(order[-k:]), "zigzag_high_frequency", side)

    @staticmethod
    def explicit(side: int, indices) -> "CoefficientAssignment":
        return CoefficientAssignment(tuple(tuple(ij) for ij in indices), "explicit", side)


def select_coefficients(coeffs: torch.Tensor, assignment: CoefficientAssignment) -> torch.Tensor:
    """Gather the assigned entries of a coefficient grid, (..., n, n) -> (..., k)."""
    if coeffs.shape[-1] != assignment.side or coeffs.shape[-2] != assignment.side:
        raise ValueError(
            f"grid side {tuple(coeffs.shape[-2:])} does not match assignment side "
            f"{assignment.side}"
        )
    rows = torch.tensor([r for r, _ in assignment.indices], device=coeffs.device)
    cols = torch.tensor([c for _, c in assignment.indices], device=coeffs.device)
    return coeffs[..., rows, cols]


class ChannelCombiner(nn.Module):
    """Per-position weighted sum over image channels plus bias (a 1x1 conv).

    Collapses a multi-channel coefficient grid to a single channel. Initialized
    to the channel mean with zero bias.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.weights = nn.Parameter(torch.full((channels,), 1.0 / channels))
        self.bias = nn.Parameter(torch.zeros(()))

    def forward(self, grids: torch.Tensor) -> torch.Tensor:
        if grids.ndim < 3 or grids.shape[-3] != self.channels:
            raise ValueError(
                f"expected {self.channels} channels on axis -3, got shape {tuple(grids.shape)}"
            )
        combined = torch.einsum("...cij,c->...ij", grids, self.weights) + self.bias
        return combined.unsqueeze(-3)


def combine_channels(grids: torch.Tensor, combiner: ChannelCombiner) -> torch.Tensor:
    """Functional wrapper around :class:`ChannelCombiner`."""
    return combiner(grids)


class BasisMatrix(nn.Module):
    """The matrix P inducing the expansion basis.

    mode="learned": entries are a trainable parameter, started near the
    orthogonal manifold (identity + small noise); orthogonality is a training
    target, not an invariant. mode="dct": entries are a fixed buffer,
    orthonormal by construction.
    """

    def __init__(self, entries: torch.Tensor, mode: str):
        super().__init__()
        if mode not in ("learned", "dct"):
            raise ValueError(f"unknown basis mode {mode!r}")
        if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
            raise ValueError(f"basis matrix must be square, got {tuple(entries.shape)}")
        if not torch.isfinite(entries).all():
            raise ValueError("basis matrix entries must be finite")
        self.mode = mode
        if mode == "learned":
            self.matrix = nn.Parameter(entries.clone())
        else:
            self.register_buffer("matrix", entries.clone())

    @staticmethod
    def learned(
        side: int,
        init_noise: float = 1e-2,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ) -> "BasisMatrix":
        """Identity plus Gaussian noise of scale ``init_noise``."""
        gen = torch.Generator().manual_seed(seed)
        entries = torch.eye(side, dtype=dtype)
        entries = entries + init_noise * torch.randn(side, side, generator=gen, dtype=dtype)
        return BasisMatrix(entries, mode="learned")

    @property
    def entries(self) -> torch.Tensor:
        return self.matrix

    @property
    def side(self) -> int:
        return self.matrix.shape[0]

    def extra_repr(self) -> str:
        return f"side={self.side}, mode={self.mode}"


@dataclass
class OrthogonalizeResult:
    basis: "BasisMatrix"
    final_loss: float
    steps: int
    converged: bool


def _orthogonalize_inplace(
    mat: torch.Tensor, eps: float, max_iters: int, lr: float
) -> tuple[float, int, bool]:
    """Descend sum|PP^T - I| on ``mat`` in place until < eps.

    First-order descent on the exact penalty (the loop condition and the
    returned loss are always sum|PP^T - I|). Two refinements keep the raw
    sign subgradient (S + S^T) P usable:

    - the step targets the known optimal value 0 (Polyak rule loss/||g||^2,
      capped at ``lr``, halved on non-improvement) -- a fixed step stalls at
      a loss floor of order lr * n^2 because the sign subgradient keeps O(1)
      magnitude at the optimum;
    - the sign is Huberized (linear ramp inside |dev| < delta, delta scaled
      to eps/n^2) -- at near-orthogonal points many entries of PP^T - I sit
      on the |.| kink and the pure sign direction ceases to descend.

    Every trial step counts against ``max_iters``. Returns (final loss,
    steps taken, converged).
    """
    n = mat.shape[0]
    eye = torch.eye(n, dtype=mat.dtype, device=mat.device)
    delta = max(5.0 * eps / (n * n), 1e-9)
    with torch.no_grad():
        dev = mat @ mat.transpose(0, 1) - eye
        loss = dev.abs().sum().item()
        steps = 0
        scale = 1.0
        while loss >= eps and steps < max_iters and scale > 1e-12:
            sign = torch.clamp(dev / delta, -1.0, 1.0)
            grad = (sign + sign.transpose(0, 1)) @ mat
            grad_norm2 = (grad * grad).sum().item()
            if grad_norm2 == 0.0:
                break  # exactly stationary (e.g. already orthogonal)
            step = min(scale * loss / grad_norm2, lr)
            candidate = mat - step * grad
            cand_dev = candidate @ candidate.transpose(0, 1) - eye
            cand_loss = cand_dev.abs().sum().item()
            if cand_loss < loss:
                mat.copy_(candidate)
                dev = cand_dev
                loss = cand_loss
                scale = min(scale * 1.25, 1.0)
            else:
                scale *= 0.5
            steps += 1
    return loss, steps, loss < eps


def orthogonalize(
    p, eps: float, max_iters: int = 500, lr: float = 9e-3
) -> OrthogonalizeResult:
    """Refine a learned basis by descent on its orthogonality penalty.

    Works on a copy; the input is left untouched. Zero steps are taken when
    the penalty already sits below ``eps``. Hitting ``max_iters`` first is
    non-fatal: a ConvergenceWarning carrying the final loss is emitted and the
    partially refined basis is still returned.
    """
    if eps <= 0 and max_iters > 0:
        warnings.warn(
            ConvergenceWarning(
                f"eps={eps} is not reachable in floating point; loop will run to max_iters"
            )
        )
    if not isinstance(p, torch.Tensor) and getattr(p, "mode", "learned") == "dct":
        raise ValueError("orthogonalize applies to learned bases only")
    mat = _entries(p).detach().clone()
    loss, steps, converged = _orthogonalize_inplace(mat, eps, max_iters, lr)
    if not converged:
        warnings.warn(
            ConvergenceWarning(
                f"orthogonality penalty {loss:.6g} still >= {eps} after {steps} steps"
            )
        )
    return OrthogonalizeResult(BasisMatrix(mat, mode="learned"), loss, steps, converged)


class CoefficientHead(nn.Module):
    """Per-dimension affine map a_i * c'_i + b_i giving the code estimate.

    The matched-coefficient likelihood is a unit-variance Gaussian around this
    mean, so its contribution to the objective reduces to a squared error.
    """

    def __init__(self, k: int):
        super().__init__()
        self.scale = nn.Parameter(torch.ones(k))
        self.shift = nn.Parameter(torch.zeros(k))

    def forward(self, selected: torch.Tensor) -> torch.Tensor:
        return self.scale * selected + self.shift


class ObeInference(nn.Module):
    """Full basis-expansion inference path: image -> code estimate.

    Chains expand -> combine channels -> select assigned coefficients ->
    per-dim affine heads. ``raw_coefficients`` stops before the heads and is
    what correlation curves record.
    """

    def __init__(
        self,
        basis: BasisMatrix,
        assignment: CoefficientAssignment,
        combiner: ChannelCombiner,
        heads: CoefficientHead | None = None,
    ):
        super().__init__()
        if assignment.side != basis.side:
            raise ValueError("assignment side does not match basis side")
        self.basis = basis
        self.assignment = assignment
        self.combiner = combiner
        self.heads = heads if heads is not None else CoefficientHead(assignment.k)

    @property
    def k(self) -> int:
        return self.assignment.k

    def raw_coefficients(self, x: torch.Tensor) -> torch.Tensor:
        """Selected coefficients c' of a (B, C, n, n) image batch, (B, k)."""
        grids = expand(x, self.basis)
        combined = self.combiner(grids).squeeze(-3)
        return select_coefficients(combined, self.assignment)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.heads(self.raw_coefficients(x))
