"""Dealiased evaluation of the advection trilinear form b(f,g,h).

b(f,g,h) = sum_{i,j} int f^i (d_i g^j) h^j dx.  Derivatives are exact in
Fourier space; the quadratic (f.grad)g is formed pointwise in physical
space and re-banded.  Because retained wavenumbers satisfy 3*kmax < N, the
grid quadrature of the resulting cubic is exact, so the antisymmetry
identities hold to roundoff whenever f is divergence-free.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _fft
from .spectral import (
    SpectralVectorField,
    gradient_norm_sq,
    l2_inner,
    l2_norm,
    leray_project,
)

__all__ = [
    "TrilinearResult",
    "advective_product",
    "projected_advection",
    "b_form",
    "b_against_multiplier",
]

# symmetric 3x3 index -> packed position
_SYM = ((0, 1, 2), (1, 3, 4), (2, 4, 5))
_SYM_PAIRS = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


@dataclass(frozen=True)
class TrilinearResult:
    value: float
    antisymmetry_residual: float
    # divergence defect of the first argument; identities are void when
    # this is large, which is reported rather than raised
    transporter_div_residual: float


def advective_product(f: SpectralVectorField, g: SpectralVectorField) -> SpectralVectorField:
    """(f.grad)g as a dealiased field on the common grid."""
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    n3 = grid.points_per_axis**3
    f_phys = f.to_physical()
    dcoef = np.empty((3,) + g.coeffs.shape, dtype=np.complex128)
    for axis, xi in enumerate(grid.xi):
        dcoef[axis] = (1j * n3) * xi * g.coeffs
    dg_phys = _fft.ifftn(dcoef).real  # [i, j] = d_i g^j on the grid
    prod = np.einsum("iabc,ijabc->jabc", f_phys, dg_phys)
    return SpectralVectorField.from_physical(grid, prod)


def projected_advection(
    w: SpectralVectorField, V: SpectralVectorField | None = None
) -> SpectralVectorField:
    """P div(w@w) or, with a background V, P div(w@w + w@V + V@w).

    Divergence form: the symmetric product tensor is formed pointwise,
    re-banded, and differentiated in Fourier space.  For divergence-free
    arguments this equals the projected advective products to roundoff,
    and it needs only six product transforms.
    """
    grid = w.grid
    if V is not None and V.grid != grid:
        raise ValueError("fields live on different grids")
    N = grid.points_per_axis
    wp = w.to_physical()
    tensor = np.empty((6, N, N, N), dtype=np.float64)
    if V is None:
        for m, (i, j) in enumerate(_SYM_PAIRS):
            tensor[m] = wp[i] * wp[j]
    else:
        vp = V.to_physical()
        for m, (i, j) in enumerate(_SYM_PAIRS):
            tensor[m] = wp[i] * wp[j] + wp[i] * vp[j] + vp[i] * wp[j]
    that = _fft.fftn(tensor) * (grid.dealias_mask / N**3)
    xi = grid.xi
    div = np.empty_like(w.coeffs)
    for j in range(3):
        div[j] = 1j * (
            xi[0] * that[_SYM[0][j]]
            + xi[1] * that[_SYM[1][j]]
            + xi[2] * that[_SYM[2][j]]
        )
    div[:, 0, 0, 0] = 0.0
    return leray_project(SpectralVectorField(grid, div))


def b_form(
    f: SpectralVectorField, g: SpectralVectorField, h: SpectralVectorField
) -> TrilinearResult:
    """Evaluate b(f,g,h) along with its antisymmetry defect.

    The defect |b(f,g,h) + b(f,h,g)| is normalized by
    2 ||f||_2 ||grad g||_2 ||grad h||_2 and vanishes to roundoff for
    divergence-free f.
    """
    if not (f.grid == g.grid == h.grid):
        raise ValueError("fields live on different grids")
    value = l2_inner(advective_product(f, g), h)
    swapped = l2_inner(advective_product(f, h), g)
    scale = (
        l2_norm(f)
        * np.sqrt(gradient_norm_sq(g))
        * np.sqrt(gradient_norm_sq(h))
        * 2.0
    )
    residual = abs(value + swapped) / scale if scale > 0 else 0.0
    return TrilinearResult(
        value=value,
        antisymmetry_residual=residual,
        transporter_div_residual=f.divergence_residual(),
    )


def b_against_multiplier(
    g: SpectralVectorField,
    h: SpectralVectorField,
    W: SpectralVectorField,
    space,
) -> float:
    """|b(g,h,W)| / (norm(W, space) * ||grad g||_2 * ||grad h||_2).

    The Hardy-constant trials maximize this ratio over random draws.
    """
    from .spaces import norm as space_norm

    denom = (
        space_norm(W, space)
        * np.sqrt(gradient_norm_sq(g))
        * np.sqrt(gradient_norm_sq(h))
    )
    if not denom > 0:
        raise ValueError("zero denominator: degenerate g, h, or multiplier")
    return float(abs(b_form(g, h, W).value) / denom)
