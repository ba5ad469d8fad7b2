# %% [markdown]
# # Expanding images on an orthogonal basis
#
# A square orthogonal matrix $P$ turns any image $X$ into a coefficient grid
# $C' = P^T X P$ and back via $X = P C' P^T$. The rank-one products of $P$'s
# columns form an orthonormal basis of image space, so the expansion is exact
# whenever $P^T P = I$. This script walks the two basis modes (fixed cosine
# basis, trainable matrix) and the penalty that keeps the trainable one
# orthogonal.

# %%
import torch

from obegan import (
    BasisMatrix,
    CoefficientAssignment,
    dct_basis,
    expand,
    orthogonality_loss,
    orthogonalize,
    reconstruct,
    select_coefficients,
    zigzag_order,
)

torch.manual_seed(0)

# %% [markdown]
# ## Fixed cosine basis
#
# The DCT-II matrix is orthonormal by construction; a constant image has all
# its energy in the (0, 0) coefficient.

# %%
n = 8
basis = dct_basis(n)
print("Gram deviation:", (basis.entries @ basis.entries.T - torch.eye(n)).abs().max().item())

flat = torch.full((n, n), 0.5)
coeffs = expand(flat, basis)
print("DC coefficient:", coeffs[0, 0].item(), "(value * n =", 0.5 * n, ")")
print("off-DC energy:", (coeffs.abs().sum() - coeffs[0, 0].abs()).item())

# %% [markdown]
# ## Round trip and energy preservation

# %%
x = torch.randn(n, n)
back = reconstruct(expand(x, basis), basis)
print("round-trip max error:", (back - x).abs().max().item())
print("Parseval gap:", abs(expand(x, basis).norm().item() - x.norm().item()))

# %% [markdown]
# ## Picking coefficients for the latent code
#
# Each latent dimension pairs with one coefficient. The default pairing walks
# the diagonal (skipping the mean-intensity cell); a frequency-ordered variant
# takes the high-frequency tail of the zigzag order.

# %%
print("zigzag order, n=4:", zigzag_order(4))
diag = CoefficientAssignment.diagonal(n, k=3)
high = CoefficientAssignment.zigzag_high_frequency(n, k=3)
print("diagonal pairing:   ", diag.indices)
print("high-frequency tail:", high.indices)
print("selected from identity grid:", select_coefficients(torch.eye(n), diag))

# %% [markdown]
# ## Keeping a trainable basis orthogonal
#
# The trainable matrix starts near the identity and drifts during training;
# descending $\sum |PP^T - I|$ pulls it back below a threshold $\epsilon$.

# %%
drifted = BasisMatrix.learned(16, init_noise=5e-2, seed=3)
print("penalty before:", orthogonality_loss(drifted).item())
result = orthogonalize(drifted, eps=0.2, max_iters=500)
print(f"penalty after: {result.final_loss:.4f} in {result.steps} steps "
      f"(converged={result.converged})")
