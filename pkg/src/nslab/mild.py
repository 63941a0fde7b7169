"""Small global-in-time background flows via Picard iteration.

The background V solves the integral (Duhamel) formulation

    V(t) = e^{t lap} V0  -  int_0^t e^{(t-s) lap} P div(V (x) V)(s) ds

on a fixed time grid, with the integral by trapezoid over the stored
slices.  Small data contract: the fixed-point map is a contraction and the
iteration certificate (contraction history) is kept with the trajectory.

Also here: admissible initial-data constructors (a seeded profile that is
homogeneous of degree -1 away from the origin cell, and the magnitude
clamp splitting a large field into a small part plus a finite-energy
remainder) and the standing-assumption verifier.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .spaces import SpaceNorm, norm as space_norm
from .spectral import (
    CheckpointError,
    GridSpec,
    SpectralVectorField,
    _pack_coeffs,
    heat_semigroup,
    l2_inner,
    l2_norm,
    leray_project,
    load_field,
    random_divfree_field,
    save_field,
)
from .trilinear import projected_advection

__all__ = [
    "PicardError",
    "MildTrajectory",
    "CalderonSplit",
    "AssumptionReport",
    "geometric_times",
    "picard_iterate",
    "homogeneous_minus_one_data",
    "calderon_split",
    "verify_standing_assumptions",
    "save_mild_trajectory",
    "load_mild_trajectory",
]

MILD_FORMAT_VERSION = "nslab-mild-1"


class PicardError(RuntimeError):
    """Fixed-point iteration failed to contract; carries the factor history."""

    def __init__(self, message: str, history):
        super().__init__(message)
        self.history = tuple(history)


def geometric_times(t_max: float, n_intervals: int) -> tuple[float, ...]:
    """Quadratically spaced grid 0 = t_0 < ... < t_n = t_max.

    Clusters points near t = 0 where the heat semigroup acts fastest.
    Nested under doubling of n_intervals, which the quadrature-order tests
    rely on.
    """
    if n_intervals < 1:
        raise ValueError("need at least one interval")
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    frac = np.arange(n_intervals + 1) / n_intervals
    return tuple(float(t_max) * float(f) ** 2 for f in frac)


@dataclass(frozen=True)
class MildTrajectory:
    """Background flow on a stored time grid with its smallness certificate.

    K_used is the Hardy constant the admissibility product was certified
    against; it is NaN until with_constant() stamps one, and NaN never
    certifies (the trajectory stays marked non-admissible).
    """

    grid: GridSpec
    times: tuple[float, ...]
    slices: tuple[SpectralVectorField, ...]
    space: SpaceNorm
    sup_norm: float
    K_used: float
    contraction_history: tuple[float, ...]
    max_iters: int
    tol: float

    def __post_init__(self):
        if len(self.times) != len(self.slices):
            raise ValueError("one slice per time point required")
        if len(self.times) < 2:
            raise ValueError("a trajectory needs at least two time points")
        if self.times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        for s in self.slices:
            if s.grid != self.grid:
                raise ValueError("slice grid mismatch")
            if s.divergence_residual() > 1e-10:
                raise ValueError("trajectory slice is not divergence-free")

    @property
    def admissible(self) -> bool:
        return bool(self.K_used * self.sup_norm < 1.0)

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def sup_l2(self) -> float:
        return max(l2_norm(s) for s in self.slices)

    def with_constant(self, K: float) -> "MildTrajectory":
        """Stamp the Hardy constant used for the admissibility product."""
        return dataclasses.replace(self, K_used=float(K))

    def at(self, t: float) -> SpectralVectorField:
        """Linear interpolation between stored slices."""
        eps = 1e-9 * max(1.0, self.t_end)
        if t < -eps or t > self.t_end + eps:
            raise ValueError(
                f"time {t} outside stored range [0, {self.t_end}]"
            )
        t = min(max(t, 0.0), self.t_end)
        hi = int(np.searchsorted(self.times, t, side="left"))
        if hi < len(self.times) and self.times[hi] == t:
            return self.slices[hi]
        lo = hi - 1
        t0, t1 = self.times[lo], self.times[hi]
        theta = (t - t0) / (t1 - t0)
        coeffs = (1.0 - theta) * self.slices[lo].coeffs + theta * self.slices[
            hi
        ].coeffs
        return SpectralVectorField(self.grid, coeffs)

    @classmethod
    def zero(
        cls, grid: GridSpec, space: SpaceNorm, t_max: float
    ) -> "MildTrajectory":
        z = SpectralVectorField.zeros(grid)
        return cls(
            grid=grid,
            times=(0.0, float(t_max)),
            slices=(z, z),
            space=space,
            sup_norm=0.0,
            K_used=0.0,
            contraction_history=(0.0,),
            max_iters=1,
            tol=1e-10,
        )


def _duhamel_sweep(
    V0: SpectralVectorField,
    times: tuple[float, ...],
    nonlin: list[SpectralVectorField],
) -> list[SpectralVectorField]:
    """One fixed-point application: heat flow minus the Duhamel trapezoid."""
    grid = V0.grid
    xi_sq = grid.xi_sq
    out = [V0]
    for i in range(1, len(times)):
        t_i = times[i]
        acc = V0.coeffs * np.exp(-t_i * xi_sq)
        for j in range(i + 1):
            left = times[j - 1] if j > 0 else times[0]
            right = times[j + 1] if j < i else times[i]
            weight = 0.5 * (right - left)
            acc = acc - weight * (
                np.exp(-(t_i - times[j]) * xi_sq) * nonlin[j].coeffs
            )
        out.append(SpectralVectorField(grid, acc))
    return out


def picard_iterate(
    V0: SpectralVectorField,
    times,
    max_iters: int,
    tol: float,
    space: SpaceNorm,
) -> MildTrajectory:
    """Iterate the Duhamel map to a fixed point on the given time grid.

    Starts from the pure heat flow (the first iterate).  The relative
    update sizes form the contraction history; they must fall below 1 and
    eventually below tol, otherwise the data is too large for the small-
    solution regime and a PicardError carrying the history is raised.
    """
    times = tuple(float(t) for t in times)
    if len(times) < 2 or times[0] != 0.0 or any(
        b <= a for a, b in zip(times, times[1:])
    ):
        raise ValueError("times must increase strictly from 0")
    if not tol > 0:
        raise ValueError(f"tol must be positive, got {tol}")
    if max_iters < 1:
        raise ValueError(f"max_iters must be >= 1, got {max_iters}")
    if V0.divergence_residual() > 1e-10:
        raise ValueError("initial datum must be divergence-free")

    current = [heat_semigroup(V0, t) for t in times]
    history: list[float] = []
    converged = False
    for _ in range(max_iters):
        nonlin = [projected_advection(v) for v in current]
        updated = _duhamel_sweep(V0, times, nonlin)
        diff = max(l2_norm(a - b) for a, b in zip(updated, current))
        base = max(l2_norm(v) for v in current)
        if diff == 0.0:
            factor = 0.0
        elif base == 0.0:
            factor = float("inf")
        else:
            factor = diff / base
        history.append(float(factor))
        current = updated
        if factor < tol:
            converged = True
            break
        if factor >= 1.0:
            raise PicardError(
                f"fixed-point map expanded (factor {factor:.3g}); "
                "initial datum too large for the small-solution regime",
                history,
            )
    if not converged:
        raise PicardError(
            f"no contraction below tol={tol:g} within {max_iters} iterations",
            history,
        )

    slices = tuple(current)
    sup = max(space_norm(s, space) for s in slices)
    return MildTrajectory(
        grid=V0.grid,
        times=times,
        slices=slices,
        space=space,
        sup_norm=float(sup),
        K_used=float("nan"),
        contraction_history=tuple(history),
        max_iters=max_iters,
        tol=tol,
    )


def homogeneous_minus_one_data(
    grid: GridSpec, amplitude: float, profile_seed: int
) -> SpectralVectorField:
    """Initial datum that scales like 1/|x| away from the origin cell.

    Sum of a rotlet a x x / (|x|^2 + h^2) and 0.3 grad((c.x)/r_moll) x b,
    with r_moll = sqrt(|x|^2 + h^2) the cell-mollified radius.  Both pieces
    are exactly solenoidal before periodization, so the projection only
    strips wrap-around artifacts; linearity in amplitude makes every norm
    scale exactly with it.
    """
    if not amplitude > 0:
        raise ValueError(f"amplitude must be positive, got {amplitude}")
    rng = np.random.default_rng(profile_seed)
    a, b, c = (v / np.linalg.norm(v) for v in rng.standard_normal((3, 3)))
    h = grid.spacing
    x = grid.coords
    shape = (grid.points_per_axis,) * 3
    xg = np.stack(
        [
            np.broadcast_to(x[:, None, None], shape),
            np.broadcast_to(x[None, :, None], shape),
            np.broadcast_to(x[None, None, :], shape),
        ]
    )
    r_moll = np.sqrt(xg[0] ** 2 + xg[1] ** 2 + xg[2] ** 2 + h**2)

    def cross(u, v):
        return np.stack(
            [
                u[1] * v[2] - u[2] * v[1],
                u[2] * v[0] - u[0] * v[2],
                u[0] * v[1] - u[1] * v[0],
            ]
        )

    ones = np.ones(shape)
    avec = np.stack([a[0] * ones, a[1] * ones, a[2] * ones])
    bvec = np.stack([b[0] * ones, b[1] * ones, b[2] * ones])
    c_dot = c[0] * xg[0] + c[1] * xg[1] + c[2] * xg[2]
    # grad((c.x)/r_moll) = c/r_moll - (c.x) x/r_moll^3
    grad_pot = np.stack(
        [c[i] / r_moll - c_dot * xg[i] / r_moll**3 for i in range(3)]
    )
    phys = amplitude * (cross(avec, xg) / r_moll**2 + 0.3 * cross(grad_pot, bvec))
    return leray_project(SpectralVectorField.from_physical(grid, phys))


@dataclass(frozen=True)
class CalderonSplit:
    """Magnitude-clamp decomposition u0 = V0 + w0 (projected parts)."""

    R: float
    V0: SpectralVectorField
    w0: SpectralVectorField
    l3_of_smooth: float
    l2_of_rough: float


def calderon_split(u0: SpectralVectorField, R: float) -> CalderonSplit:
    """Clamp |u0| at height R keeping the direction; project both parts.

    The small part P(u0 * min(1, R/|u0|)) seeds the mild construction, the
    remainder is a finite-energy perturbation.  Their sum is P(u0) exactly
    (linearity of the transform and of the projection).
    """
    if not R > 0:
        raise ValueError(f"clamp height must be positive, got {R}")
    phys = u0.to_physical()
    mag = np.sqrt(phys[0] ** 2 + phys[1] ** 2 + phys[2] ** 2)
    scale = np.ones_like(mag)
    over = mag > R
    scale[over] = R / mag[over]
    smooth = phys * scale
    rough = phys - smooth
    V0 = leray_project(SpectralVectorField.from_physical(u0.grid, smooth))
    w0 = leray_project(SpectralVectorField.from_physical(u0.grid, rough))
    return CalderonSplit(
        R=float(R),
        V0=V0,
        w0=w0,
        l3_of_smooth=space_norm(V0, SpaceNorm("Lebesgue3")),
        l2_of_rough=l2_norm(w0),
    )


@dataclass(frozen=True)
class AssumptionReport:
    space_label: str
    sup_norm: float
    K_product: float
    admissible: bool
    continuity_proxy: float
    slice_norms: tuple[float, ...]


# battery of smooth test fields for the weak-continuity proxy
_CONTINUITY_BATTERY_SEEDS = tuple(range(1000, 1008))
_CONTINUITY_SPECTRUM_EXPONENT = 3.0


def verify_standing_assumptions(
    traj: MildTrajectory, K_hat: float
) -> AssumptionReport:
    """Certify sup-norm smallness and a weak-continuity proxy.

    The proxy is the largest jump of <V(t_{i+1}) - V(t_i), phi> over
    adjacent stored times and a fixed battery of eight smooth
    divergence-free test fields; it must shrink as the time grid refines.
    """
    slice_norms = tuple(space_norm(s, traj.space) for s in traj.slices)
    sup = max(slice_norms)
    battery = [
        random_divfree_field(traj.grid, _CONTINUITY_SPECTRUM_EXPONENT, seed=s)
        for s in _CONTINUITY_BATTERY_SEEDS
    ]
    proxy = 0.0
    for prev, nxt in zip(traj.slices, traj.slices[1:]):
        jump = nxt - prev
        for phi in battery:
            proxy = max(proxy, abs(l2_inner(jump, phi)))
    product = float(K_hat) * sup
    return AssumptionReport(
        space_label=traj.space.label(),
        sup_norm=float(sup),
        K_product=product,
        admissible=bool(product < 1.0),
        continuity_proxy=float(proxy),
        slice_norms=slice_norms,
    )


# -- trajectory persistence ---------------------------------------------------
#
# Only the initial datum is stored as a field; the remaining slices are
# re-derived by re-running the (deterministic) iteration and verified
# against per-slice digests, so a manifest plus one field file certify the
# whole trajectory.


def _slice_digest(f: SpectralVectorField) -> str:
    return hashlib.sha256(_pack_coeffs(f).tobytes()).hexdigest()


def save_mild_trajectory(traj: MildTrajectory, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_field(traj.slices[0], directory / "initial.npz", seed_meta="mild-V0")
    manifest = {
        "format_version": MILD_FORMAT_VERSION,
        "times": [repr(t) for t in traj.times],
        "space_tag": traj.space.tag,
        "space_p": None if traj.space.p is None else repr(traj.space.p),
        "sup_norm": repr(traj.sup_norm),
        "K_used": repr(traj.K_used),
        "contraction_history": [repr(c) for c in traj.contraction_history],
        "max_iters": traj.max_iters,
        "tol": repr(traj.tol),
        "slice_sha256": [_slice_digest(s) for s in traj.slices],
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_mild_trajectory(directory) -> MildTrajectory:
    """Re-derive the trajectory from its stored initial datum and verify it."""
    directory = Path(directory)
    try:
        manifest = json.loads((directory / "manifest.json").read_text())
    except Exception as exc:
        raise CheckpointError(f"unreadable trajectory manifest: {exc}") from exc
    if manifest.get("format_version") != MILD_FORMAT_VERSION:
        raise CheckpointError(
            f"trajectory format version mismatch: "
            f"{manifest.get('format_version')!r}"
        )
    V0, _ = load_field(directory / "initial.npz")
    space = SpaceNorm(
        manifest["space_tag"],
        p=None if manifest["space_p"] is None else float(manifest["space_p"]),
    )
    times = tuple(float(t) for t in manifest["times"])
    traj = picard_iterate(
        V0,
        times,
        max_iters=int(manifest["max_iters"]),
        tol=float(manifest["tol"]),
        space=space,
    ).with_constant(float(manifest["K_used"]))
    digests = [_slice_digest(s) for s in traj.slices]
    if digests != manifest["slice_sha256"]:
        raise CheckpointError(
            "re-derived trajectory does not match stored slice digests"
        )
    return traj
