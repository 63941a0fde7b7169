"""Scale-invariant norm catalogue and empirical Hardy-constant estimation.

Six norms share one entry point, :func:`norm`.  Frequency-side norms use
the continuum transform value ``(2 pi)^{-3/2} L^3 c(k)`` so that Plancherel
holds with constant one; physical-side norms quadrate grid samples in the
box-centered chart.

The trilinear-against-multiplier ratio that defines the empirical Hardy
constant lives in :mod:`nslab.trilinear`; this module drives the randomized
trials and aggregates them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _fft
from .spectral import (
    GridSpec,
    SpectralVectorField,
    gradient_norm_sq,
    random_divfree_field,
    random_field,
)

__all__ = [
    "SpaceNorm",
    "VALID_TAGS",
    "norm",
    "HardyEstimate",
    "estimate_hardy_constant",
    "classical_hardy_ratio",
    "write_hardy_csv",
]

VALID_TAGS = (
    "SobolevHalf",
    "Lebesgue3",
    "WeightedLinfty",
    "LeJanSznitman",
    "Marcinkiewicz3",
    "Morrey3p",
)

# continuum transform value at xi(k) is FOURIER_SCALE * L^3 * c(k)
FOURIER_SCALE = (2.0 * np.pi) ** -1.5


@dataclass(frozen=True)
class SpaceNorm:
    """One of the six admissible multiplier spaces.

    ``p`` is meaningful only for the Morrey family (2 < p <= 3) and must be
    omitted everywhere else.
    """

    tag: str
    p: float | None = None

    def __post_init__(self):
        if self.tag not in VALID_TAGS:
            raise ValueError(
                f"unknown space tag {self.tag!r}; expected one of {VALID_TAGS}"
            )
        if self.tag == "Morrey3p":
            if self.p is None or not 2.0 < self.p <= 3.0:
                raise ValueError(
                    f"Morrey3p requires an exponent p in (2, 3], got {self.p}"
                )
        elif self.p is not None:
            raise ValueError(f"space {self.tag} does not take a p parameter")

    def label(self) -> str:
        if self.tag == "Morrey3p":
            return f"Morrey3p(p={self.p:g})"
        return self.tag


def _physical_magnitude(f: SpectralVectorField) -> np.ndarray:
    phys = f.to_physical()
    return np.sqrt(phys[0] ** 2 + phys[1] ** 2 + phys[2] ** 2)


def _coeff_magnitude(f: SpectralVectorField) -> np.ndarray:
    c = f.coeffs
    return np.sqrt(
        c[0].real**2 + c[0].imag**2
        + c[1].real**2 + c[1].imag**2
        + c[2].real**2 + c[2].imag**2
    )


def _sobolev_half(f: SpectralVectorField) -> float:
    g = f.grid
    xi_mag = np.sqrt(g.xi_sq)
    s = np.sum(xi_mag * (f.coeffs.real**2 + f.coeffs.imag**2))
    return float(np.sqrt(g.volume * s))


def _lebesgue3(f: SpectralVectorField) -> float:
    mag = _physical_magnitude(f)
    return float((f.grid.cell_volume * np.sum(mag**3)) ** (1.0 / 3.0))


def _weighted_linfty(f: SpectralVectorField) -> float:
    mag = _physical_magnitude(f)
    return float(np.max(f.grid.radius * mag))


def _lejan_sznitman(f: SpectralVectorField) -> float:
    g = f.grid
    hat_mag = FOURIER_SCALE * g.volume * _coeff_magnitude(f)
    return float(np.max(g.xi_sq * hat_mag))


def _weak_l3_sorted(samples: np.ndarray, cell_volume: float) -> float:
    """Exact sup_l l*|{|f|>l}|^{1/3} for a step distribution function.

    For sorted descending samples the sup over levels in each step interval
    is attained at its top, so the norm is max_n sample_(n)*(n*vol)^{1/3}.
    """
    desc = np.sort(samples, axis=None)[::-1]
    n = np.arange(1, desc.size + 1, dtype=np.float64)
    return float(np.max(desc * (n * cell_volume) ** (1.0 / 3.0)))


def _marcinkiewicz3(f: SpectralVectorField) -> float:
    return _weak_l3_sorted(_physical_magnitude(f), f.grid.cell_volume)


MORREY_CENTER_STRIDE = 4


def _morrey_radii(grid: GridSpec) -> list[float]:
    radii = []
    r = grid.spacing
    while r <= grid.box_length / 2:
        radii.append(r)
        r *= 2.0
    return radii


def _morrey3p(f: SpectralVectorField, p: float) -> float:
    """Sampled sup over ball centers and dyadic radii of the local L^p mass.

    Ball sums over every center at once come from one circular correlation
    with the ball indicator; the sup is then restricted to a stride-4 center
    lattice, so the value is a lower bound of the full discrete sup.
    """
    g = f.grid
    magp = _physical_magnitude(f) ** p
    magp_hat = _fft.fftn(magp)
    stride = MORREY_CENTER_STRIDE
    best = 0.0
    for r in _morrey_radii(g):
        ball = (g.radius <= r).astype(np.float64)
        sums = _fft.ifftn(np.conj(_fft.fftn(ball)) * magp_hat).real
        local = np.maximum(sums[::stride, ::stride, ::stride], 0.0)
        mass = (g.cell_volume * np.max(local)) ** (1.0 / p)
        best = max(best, r ** (1.0 - 3.0 / p) * mass)
    return float(best)


def norm(f: SpectralVectorField, space: SpaceNorm) -> float:
    """Evaluate the named scale-invariant norm of a grid field."""
    if space.tag == "SobolevHalf":
        return _sobolev_half(f)
    if space.tag == "Lebesgue3":
        return _lebesgue3(f)
    if space.tag == "WeightedLinfty":
        return _weighted_linfty(f)
    if space.tag == "LeJanSznitman":
        return _lejan_sznitman(f)
    if space.tag == "Marcinkiewicz3":
        return _marcinkiewicz3(f)
    if space.tag == "Morrey3p":
        return _morrey3p(f, space.p)
    raise ValueError(f"unknown space tag {space.tag!r}")


# -- Hardy-constant estimation ------------------------------------------------


@dataclass(frozen=True)
class HardyTrial:
    trial_index: int
    ratio: float
    norm_W: float
    grad_g: float
    grad_h: float


@dataclass(frozen=True)
class HardyEstimate:
    space: SpaceNorm
    trials: int
    K_hat: float
    samples: tuple[HardyTrial, ...]
    redraws: int = 0
    seed: int = 0
    grid: GridSpec | None = None

    @property
    def ratio_samples(self) -> list[float]:
        return [t.ratio for t in self.samples]

    def __post_init__(self):
        ratios = self.ratio_samples
        if ratios and not np.isclose(self.K_hat, max(ratios)):
            raise ValueError("K_hat must be the largest observed ratio")
        if any(not np.isfinite(r) or r < 0 for r in ratios):
            raise ValueError("ratios must be finite and nonnegative")


# spectra steep enough that every trial field has all six norms finite
TRIAL_SPECTRUM_EXPONENT = 2.5
_DEGENERATE = 1e-300


def estimate_hardy_constant(
    space: SpaceNorm, grid: GridSpec, trials: int, seed: int
) -> HardyEstimate:
    """Randomized lower-bound estimate of the Hardy constant of a space.

    Each trial draws divergence-free g, h and a generic multiplier W, then
    records |b(g,h,W)| / (norm(W)*||grad g||*||grad h||).  The estimate is
    the max over trials.  Degenerate draws (any factor of the denominator
    vanishing) are redrawn with fresh seeds and counted.

    Random draws alone miss multipliers concentrated like 1/|x|, which are
    the near-extremal shapes for the unweighted norms, so a small fixed
    family of singular-profile trials is always appended after the random
    ones: the profile in the multiplier slot against random g, h, once
    against itself, and once against the near-origin remainder that a
    magnitude clamp at half the profile's peak splits off (the sharpest
    advected shape the laboratory actually evolves).  The appended trials
    share the caller's seed stream, so the whole estimate stays
    deterministic in (space, grid, trials, seed).
    """
    from .mild import calderon_split, homogeneous_minus_one_data
    from .trilinear import b_against_multiplier

    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    rng = np.random.default_rng(seed)
    samples = []
    redraws = 0
    k_hat = 0.0

    def record(index, g, h, w, norm_w):
        nonlocal k_hat
        ratio = b_against_multiplier(g, h, w, space)
        samples.append(
            HardyTrial(
                trial_index=index,
                ratio=ratio,
                norm_W=norm_w,
                grad_g=float(np.sqrt(gradient_norm_sq(g))),
                grad_h=float(np.sqrt(gradient_norm_sq(h))),
            )
        )
        k_hat = max(k_hat, ratio)

    for index in range(trials):
        while True:
            sg, sh, sw = (int(s) for s in rng.integers(0, 2**63 - 1, size=3))
            g = random_divfree_field(grid, TRIAL_SPECTRUM_EXPONENT, seed=sg)
            h = random_divfree_field(grid, TRIAL_SPECTRUM_EXPONENT, seed=sh)
            w = random_field(grid, TRIAL_SPECTRUM_EXPONENT, seed=sw)
            grad_g = np.sqrt(gradient_norm_sq(g))
            grad_h = np.sqrt(gradient_norm_sq(h))
            norm_w = norm(w, space)
            if min(grad_g, grad_h, norm_w) <= _DEGENERATE:
                redraws += 1
                continue
            break
        record(index, g, h, w, norm_w)

    profiles = [
        homogeneous_minus_one_data(grid, 1.0, profile_seed)
        for profile_seed in (seed, seed + 1)
    ]
    index = trials
    for prof in profiles:
        sg, sh = (int(s) for s in rng.integers(0, 2**63 - 1, size=2))
        g = random_divfree_field(grid, TRIAL_SPECTRUM_EXPONENT, seed=sg)
        h = random_divfree_field(grid, TRIAL_SPECTRUM_EXPONENT, seed=sh)
        record(index, g, h, prof, norm(prof, space))
        index += 1
    record(index, profiles[1], profiles[1], profiles[0], norm(profiles[0], space))
    index += 1
    peak = float(np.max(np.sqrt(np.sum(profiles[0].to_physical() ** 2, axis=0))))
    remainder = calderon_split(profiles[0], 0.5 * peak).w0
    record(index, remainder, remainder, profiles[0], norm(profiles[0], space))

    return HardyEstimate(
        space=space,
        trials=trials,
        K_hat=k_hat,
        samples=tuple(samples),
        redraws=redraws,
        seed=seed,
        grid=grid,
    )


def classical_hardy_ratio(g: SpectralVectorField) -> float:
    """Quadrature ratio (int |g|^2/|x|^2) / ||grad g||^2, origin cell excluded.

    The continuum inequality bounds this by 4; grid fields concentrated away
    from the box boundary reproduce that within a few percent.
    """
    grad_sq = gradient_norm_sq(g)
    if grad_sq <= _DEGENERATE:
        raise ValueError("classical Hardy ratio needs a field with nonzero gradient")
    grid = g.grid
    weight = np.zeros_like(grid.radius)
    nonzero = grid.radius > 0
    weight[nonzero] = grid.radius[nonzero] ** -2.0  # origin cell carries weight 0
    mag = _physical_magnitude(g)
    weighted = grid.cell_volume * float(np.sum(mag**2 * weight))
    return weighted / grad_sq


def write_hardy_csv(estimate: HardyEstimate, path) -> None:
    """Per-trial rows plus a trailing summary row carrying K_hat."""
    lines = ["trial_index,ratio,norm_W,grad_g,grad_h"]
    for t in estimate.samples:
        lines.append(
            f"{t.trial_index},{t.ratio!r},{t.norm_W!r},{t.grad_g!r},{t.grad_h!r}"
        )
    lines.append(f"K_hat,{estimate.K_hat!r},,,")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
