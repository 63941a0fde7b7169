"""Time stepping for the perturbation about a mild background flow.

The perturbation w obeys a heat equation driven by minus the projected
advection terms w.grad w + w.grad V + V.grad w; the pressure gradient is
annihilated by the Leray projection and the viscous part is integrated
exactly through e^{t Laplacian} factors.  An EnergyLedger accumulates the
per-step scalars needed to audit the strong energy inequality afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .mild import MildTrajectory
from .spectral import (
    GridSpec,
    SpectralVectorField,
    gradient_inner,
    gradient_norm_sq,
    heat_semigroup,
    l2_inner,
    l2_norm,
)
from .trilinear import advective_product, projected_advection

# dt at which the ledger tolerance equals ENERGY_TOL_COEFF * ||w0||_2^2
DT_REFERENCE = 5e-3
ENERGY_TOL_COEFF = 1e-6
CFL_SAFETY = 0.5


class CFLViolation(RuntimeError):
    """Advective stability bound failed; carries the largest admissible dt."""

    def __init__(self, message: str, dt_admissible: float):
        super().__init__(message)
        self.dt_admissible = dt_admissible


@dataclass(frozen=True)
class GalerkinTruncation:
    """Sharp Fourier-ball projector onto modes with |k| <= m."""

    m: int

    def __post_init__(self):
        if not (isinstance(self.m, int) and self.m >= 1):
            raise ValueError(f"truncation radius must be a positive int, got {self.m}")

    def validate_for(self, grid: GridSpec) -> None:
        if self.m > grid.kmax:
            raise ValueError(
                f"truncation radius {self.m} exceeds dealias radius {grid.kmax}"
            )

    def apply(self, f: SpectralVectorField) -> SpectralVectorField:
        self.validate_for(f.grid)
        keep = f.grid.k_int_sq <= self.m * self.m
        return SpectralVectorField.from_coeffs(f.grid, f.coeffs * keep)


@dataclass
class EnergyLedger:
    """Per-step energy bookkeeping for the strong energy inequality.

    The audited quantity is A(t) = ||w(t)||_2^2 + (1 - K_sup_V) * D(t) with
    D(t) = 2 int_0^t ||grad w||_2^2 (trapezoid); the inequality says A is
    non-increasing, so slack(s,t) = A(s) - A(t) >= -tol_energy for s <= t.
    """

    K_sup_V: float
    tol_energy: float
    times: list = field(default_factory=list)
    l2_sq: list = field(default_factory=list)
    grad_l2_sq: list = field(default_factory=list)
    dissipation_cum: list = field(default_factory=list)

    def append(
        self, t: float, l2s: float, grads: float, grads_mid: float | None = None
    ) -> None:
        """Add a row; the dissipation integral grows by Simpson's rule when
        the midpoint gradient is supplied, by the trapezoid otherwise."""
        if self.times:
            if t <= self.times[-1]:
                raise ValueError("ledger times must increase")
            gap = t - self.times[-1]
            if grads_mid is None:
                d = self.dissipation_cum[-1] + gap * (self.grad_l2_sq[-1] + grads)
            else:
                d = self.dissipation_cum[-1] + gap * (
                    self.grad_l2_sq[-1] + 4.0 * grads_mid + grads
                ) / 3.0
        else:
            d = 0.0
        self.times.append(float(t))
        self.l2_sq.append(float(l2s))
        self.grad_l2_sq.append(float(grads))
        self.dissipation_cum.append(float(d))

    def _audited(self) -> np.ndarray:
        damping = 1.0 - self.K_sup_V
        return np.asarray(self.l2_sq) + damping * np.asarray(self.dissipation_cum)

    def slack(self, s_index: int, t_index: int) -> float:
        if not 0 <= s_index <= t_index < len(self.times):
            raise IndexError("need 0 <= s_index <= t_index < len(times)")
        a = self._audited()
        return float(a[s_index] - a[t_index])

    def worst_slack(self) -> float:
        """Minimum of slack(s,t) over all stored pairs s < t (0.0 if < 2 rows)."""
        a = self._audited()
        if len(a) < 2:
            return 0.0
        running_min = np.minimum.accumulate(a[:-1])
        return float(np.min(running_min - a[1:]))

    def slack_ok(self) -> bool:
        return self.worst_slack() >= -self.tol_energy

    def dissipation_within_budget(self) -> bool:
        """Running check of D(t) <= ||w0||_2^2 / (1 - K_sup_V)."""
        if not self.times:
            return True
        damping = 1.0 - self.K_sup_V
        if damping <= 0:
            return False
        bound = self.l2_sq[0] / damping
        return self.dissipation_cum[-1] <= bound + self.tol_energy

    def to_csv(self, path) -> None:
        a = self._audited()
        with open(path, "w") as out:
            out.write("t,l2_sq,grad_l2_sq,dissipation_cum,slack_vs_t0,K_sup_V\n")
            for i in range(len(self.times)):
                row = (
                    self.times[i],
                    self.l2_sq[i],
                    self.grad_l2_sq[i],
                    self.dissipation_cum[i],
                    float(a[0] - a[i]),
                    self.K_sup_V,
                )
                out.write(",".join(repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path, tol_energy: float) -> "EnergyLedger":
        with open(path) as src:
            header = src.readline().strip()
            if header != "t,l2_sq,grad_l2_sq,dissipation_cum,slack_vs_t0,K_sup_V":
                raise ValueError(f"unrecognized ledger header: {header!r}")
            rows = [line.strip().split(",") for line in src if line.strip()]
        if not rows:
            raise ValueError("ledger file has no rows")
        ledger = cls(K_sup_V=float(rows[0][5]), tol_energy=tol_energy)
        for row in rows:
            ledger.times.append(float(row[0]))
            ledger.l2_sq.append(float(row[1]))
            ledger.grad_l2_sq.append(float(row[2]))
            ledger.dissipation_cum.append(float(row[3]))
        return ledger


@dataclass(frozen=True)
class PerturbationTrajectory:
    """Stored subsequence of an evolved perturbation; ledger rows cover all steps."""

    grid: GridSpec
    times: tuple
    slices: tuple
    error_mark: str | None = None

    def __post_init__(self):
        if len(self.times) != len(self.slices) or not self.times:
            raise ValueError("times and slices must align and be non-empty")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("times must be strictly increasing")
        for s in self.slices:
            if s.grid != self.grid:
                raise ValueError("slice grid mismatch")

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def at(self, t: float) -> SpectralVectorField:
        eps = 1e-9 * max(1.0, self.t_end)
        if t < self.times[0] - eps or t > self.t_end + eps:
            raise ValueError(
                f"time {t} outside stored range [{self.times[0]}, {self.t_end}]"
            )
        t = min(max(t, self.times[0]), self.t_end)
        hi = int(np.searchsorted(self.times, t, side="left"))
        if hi < len(self.times) and self.times[hi] == t:
            return self.slices[hi]
        lo = hi - 1
        span = self.times[hi] - self.times[lo]
        lam = (t - self.times[lo]) / span
        coeffs = (1.0 - lam) * self.slices[lo].coeffs + lam * self.slices[hi].coeffs
        return SpectralVectorField(self.grid, coeffs)


def rhs(w: SpectralVectorField, V: SpectralVectorField | None = None) -> SpectralVectorField:
    """Minus the projected advection terms; the heat part is handled elsewhere."""
    return -1.0 * projected_advection(w, V)


def cfl_limit(w: SpectralVectorField, V: SpectralVectorField | None = None) -> float:
    """Largest admissible dt: CFL_SAFETY * spacing / max(|w| + |V|)."""
    speed = np.sqrt(np.sum(w.to_physical() ** 2, axis=0))
    if V is not None:
        speed = speed + np.sqrt(np.sum(V.to_physical() ** 2, axis=0))
    top = float(speed.max())
    if top == 0.0:
        return float("inf")
    return CFL_SAFETY * w.grid.spacing / top


def step_with_stage(
    w: SpectralVectorField,
    V_t: SpectralVectorField | None,
    V_t_half: SpectralVectorField | None,
    dt: float,
    trunc: "GalerkinTruncation | None" = None,
) -> tuple:
    """One integrating-factor midpoint step of length dt.

    Returns (w_next, grad_sq_mid) where grad_sq_mid is ||grad w||_2^2 at the
    midpoint stage.  The stage is exact for the heat part, so a Simpson rule
    built on it integrates the dissipation of the fast modes without the
    trapezoid's convexity bias.  A truncated run measures the stage gradient
    inside the retained mode ball, matching the trajectory it audits.
    """
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    admissible = cfl_limit(w, V_t)
    if dt > admissible:
        raise CFLViolation(
            f"dt = {dt} exceeds the advective stability bound {admissible}",
            dt_admissible=admissible,
        )
    k1 = rhs(w, V_t)
    w_half = heat_semigroup(w + (0.5 * dt) * k1, 0.5 * dt)
    k2 = rhs(w_half, V_t_half)
    w_next = heat_semigroup(w, dt) + dt * heat_semigroup(k2, 0.5 * dt)
    stage = w_half if trunc is None else trunc.apply(w_half)
    return w_next, gradient_norm_sq(stage)


def step(
    w: SpectralVectorField,
    V_t: SpectralVectorField | None,
    V_t_half: SpectralVectorField | None,
    dt: float,
) -> SpectralVectorField:
    """One integrating-factor midpoint step of length dt."""
    w_next, _ = step_with_stage(w, V_t, V_t_half, dt)
    return w_next


def fresh_ledger(
    w0: SpectralVectorField, V: MildTrajectory, dt: float
) -> EnergyLedger:
    """Empty ledger sized for an evolve() run of this datum and background."""
    return EnergyLedger(
        K_sup_V=V.K_used * V.sup_norm,
        tol_energy=ENERGY_TOL_COEFF * l2_norm(w0) ** 2 * (dt / DT_REFERENCE),
    )


def evolve(
    w0: SpectralVectorField,
    V: MildTrajectory,
    t_max: float,
    dt: float,
    trunc: GalerkinTruncation | None = None,
    store_every: int = 1,
    recorder=None,
    start_index: int = 0,
    ledger: EnergyLedger | None = None,
):
    """March w from 0 to t_max; returns (PerturbationTrajectory, EnergyLedger).

    The background V is interpolated linearly between its stored slices and
    must be certified admissible (the zero trajectory qualifies).  Ledger
    rows are appended at every step even when only each store_every-th slice
    is kept.  A mid-run CFL failure returns the part computed so far with
    error_mark set instead of raising.

    A checkpointed run resumes by passing the saved state as w0 together
    with its absolute step index and the ledger continuing the original
    rows; step times stay exact products i*dt of the global index, so a
    resumed march reproduces an uninterrupted one bitwise.
    """
    grid = w0.grid
    if V.grid != grid:
        raise ValueError("background trajectory grid differs from datum grid")
    if not V.admissible:
        raise ValueError(
            "background trajectory is not certified admissible; "
            "stamp it via with_constant() or use MildTrajectory.zero()"
        )
    if not (t_max > 0 and dt > 0):
        raise ValueError("t_max and dt must be positive")
    n_steps = int(round(t_max / dt))
    if n_steps < 1 or abs(n_steps * dt - t_max) > 1e-9 * max(1.0, t_max):
        raise ValueError(f"t_max = {t_max} is not an integer multiple of dt = {dt}")
    if V.t_end < t_max - 1e-9 * max(1.0, t_max):
        raise ValueError("background trajectory ends before t_max")
    if not isinstance(store_every, int) or store_every < 1:
        raise ValueError(f"store_every must be a positive int, got {store_every}")
    if not isinstance(start_index, int) or not 0 <= start_index <= n_steps:
        raise ValueError(f"start_index must lie in [0, {n_steps}], got {start_index}")
    if start_index > 0 and (ledger is None or not ledger.times):
        raise ValueError("resumed runs need the continued ledger")
    if start_index == 0 and ledger is not None and ledger.times:
        raise ValueError("starting from 0 needs an empty ledger")
    if w0.divergence_residual() > 1e-8:
        raise ValueError("initial perturbation is not divergence-free")

    if trunc is not None:
        trunc.validate_for(grid)
        w0 = trunc.apply(w0)

    background_is_zero = V.sup_norm == 0.0

    def background(t: float):
        if background_is_zero:
            return None
        return V.at(min(t, V.t_end))

    t0 = start_index * dt
    if ledger is None:
        ledger = fresh_ledger(w0, V, dt)
    if start_index == 0:
        ledger.append(0.0, l2_norm(w0) ** 2, gradient_norm_sq(w0))
        if recorder is not None:
            recorder.record(0.0, w0, background(0.0))

    kept_times = [t0]
    kept = [w0]
    w = w0
    error_mark = None
    for i in range(start_index + 1, n_steps + 1):
        t_prev = (i - 1) * dt
        try:
            w, grad_sq_mid = step_with_stage(
                w, background(t_prev), background(t_prev + 0.5 * dt), dt,
                trunc=trunc,
            )
        except CFLViolation as err:
            error_mark = f"cfl: {err} at t = {t_prev}"
            break
        if trunc is not None:
            w = trunc.apply(w)
        t = i * dt
        ledger.append(t, l2_norm(w) ** 2, gradient_norm_sq(w), grad_sq_mid)
        if recorder is not None:
            recorder.record(t, w, background(t))
        if i % store_every == 0 or i == n_steps:
            kept_times.append(t)
            kept.append(w)

    traj = PerturbationTrajectory(
        grid=grid, times=tuple(kept_times), slices=tuple(kept), error_mark=error_mark
    )
    return traj, ledger


def weak_residual(
    w_traj: PerturbationTrajectory,
    V: MildTrajectory,
    test_field: SpectralVectorField,
    s: float,
    t: float,
) -> float:
    """|LHS - RHS| of the weak formulation against phi(x,tau) = e^{-tau} test_field.

    Both sides are quadratured with the trapezoid rule on the stored times
    inside [s, t] (with s and t inserted), evaluating the form term by term
    exactly as stated: <grad w, grad phi> + <w.grad w, phi> - <(w.grad)phi, V>
    + <(V.grad)w, phi> on the left, <w, phi_tau> on the right.
    """
    eps = 1e-9 * max(1.0, w_traj.t_end)
    if not (w_traj.times[0] - eps <= s < t <= w_traj.t_end + eps):
        raise ValueError(f"need times[0] <= s < t <= t_end, got s = {s}, t = {t}")
    if test_field.grid != w_traj.grid:
        raise ValueError("test field grid mismatch")
    if test_field.divergence_residual() > 1e-8:
        raise ValueError("test field must be divergence-free")

    inner_times = [u for u in w_traj.times if s + eps < u < t - eps]
    nodes = [s] + inner_times + [t]
    background_is_zero = V.sup_norm == 0.0

    lhs_integrand = []
    rhs_integrand = []
    for tau in nodes:
        w = w_traj.at(tau)
        phi = float(np.exp(-tau)) * test_field
        value = gradient_inner(w, phi) + l2_inner(advective_product(w, w), phi)
        if not background_is_zero:
            V_tau = V.at(min(tau, V.t_end))
            value -= l2_inner(advective_product(w, phi), V_tau)
            value += l2_inner(advective_product(V_tau, w), phi)
        lhs_integrand.append(value)
        rhs_integrand.append(-l2_inner(w, phi))  # phi_tau = -phi

    nodes_arr = np.asarray(nodes)
    lhs = l2_inner(w_traj.at(t), float(np.exp(-t)) * test_field)
    lhs += float(np.trapezoid(np.asarray(lhs_integrand), nodes_arr))
    rhs_side = l2_inner(w_traj.at(s), float(np.exp(-s)) * test_field)
    rhs_side += float(np.trapezoid(np.asarray(rhs_integrand), nodes_arr))
    return abs(lhs - rhs_side)
