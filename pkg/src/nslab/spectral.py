"""Periodic pseudo-spectral representation of divergence-free vector fields.

Conventions (used consistently by every module):

* The domain is the cube [0, L)^3 sampled on an N^3 grid.  A field is stored
  as coefficients ``c[k]`` of the exponential basis, ``f(x) = sum_k c[k]
  exp(i xi(k).x)`` with ``xi(k) = 2 pi k / L``, in numpy FFT index order.
* Plancherel: ``int |f|^2 dx = L^3 sum_k |c[k]|^2``.  All L2 quantities carry
  the ``L^3`` volume factor so they equal physical-space quadrature.
* The continuum-normalized transform value at ``xi(k)`` (the one norm
  evaluators for frequency-space norms use) is ``(2 pi)^{-3/2} L^3 c[k]``;
  with the frequency cell volume ``(2 pi / L)^3`` this makes
  ``||f||_2 = ||f_hat||_2`` exact.
* Dealiasing: coefficients vanish outside the retained set
  ``{k : |k_i| <= floor(dealias_fraction * N/2)}`` (Nyquist planes always
  excluded).  Products are formed in physical space and re-masked, which
  keeps quadratic products alias-free under the default 2/3 rule.
* All fields are real in physical space (Hermitian coefficients) and carry
  the zero-mean convention ``c[0] = 0`` (the box proxy of a velocity field
  decaying at infinity).
* Physical-space coordinates are wrapped to the box-centered chart
  ``x in [-L/2, L/2)^3``; the origin sits at grid index (0,0,0).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import _fft

__all__ = [
    "GridSpec",
    "SpectralVectorField",
    "ScalarField",
    "leray_project",
    "heat_semigroup",
    "apply_multiplier",
    "gradient_norm_sq",
    "l2_inner",
    "l2_norm",
    "random_divfree_field",
    "random_field",
    "save_field",
    "load_field",
    "CheckpointError",
    "FIELD_FORMAT_VERSION",
]

FIELD_FORMAT_VERSION = "nslab-field-1"


class CheckpointError(Exception):
    """Raised when a stored field or run checkpoint fails validation."""


@dataclass(frozen=True)
class GridSpec:
    """Periodic cube [0, L)^3 with N points per axis and a dealias rule."""

    box_length: float
    points_per_axis: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        L, N, frac = self.box_length, self.points_per_axis, self.dealias_fraction
        if not L > 0:
            raise ValueError(f"box_length must be positive, got {L}")
        if N < 8 or N % 2 != 0:
            raise ValueError(f"points_per_axis must be even and >= 8, got {N}")
        if not 0 < frac <= 1:
            raise ValueError(f"dealias_fraction must lie in (0, 1], got {frac}")

    # -- derived geometry ------------------------------------------------

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_axis

    @property
    def volume(self) -> float:
        return self.box_length**3

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    @property
    def kmax(self) -> int:
        """Largest retained integer wavenumber per axis (Nyquist excluded)."""
        N = self.points_per_axis
        return min(int(np.floor(self.dealias_fraction * N / 2)), N // 2 - 1)

    @cached_property
    def k1d(self) -> np.ndarray:
        """Integer wavenumbers along one axis, FFT index order."""
        N = self.points_per_axis
        return np.fft.fftfreq(N, d=1.0 / N).astype(np.int64)

    @cached_property
    def xi(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Physical wavenumber components, broadcastable to (N, N, N)."""
        s = 2.0 * np.pi / self.box_length
        k = self.k1d.astype(np.float64) * s
        return (k[:, None, None], k[None, :, None], k[None, None, :])

    @cached_property
    def xi_sq(self) -> np.ndarray:
        x1, x2, x3 = self.xi
        return x1**2 + x2**2 + x3**2

    @cached_property
    def k_int_sq(self) -> np.ndarray:
        k = self.k1d
        return (
            k[:, None, None] ** 2 + k[None, :, None] ** 2 + k[None, None, :] ** 2
        )

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        k = np.abs(self.k1d)
        keep = k <= self.kmax
        return (
            keep[:, None, None] & keep[None, :, None] & keep[None, None, :]
        )

    @cached_property
    def coords(self) -> np.ndarray:
        """Box-centered coordinate along one axis, wrapped to [-L/2, L/2)."""
        N, L = self.points_per_axis, self.box_length
        x = np.arange(N) * self.spacing
        x[x >= L / 2] -= L
        return x

    @cached_property
    def radius(self) -> np.ndarray:
        """Distance to the origin in the box-centered chart, shape (N,N,N)."""
        x = self.coords
        return np.sqrt(
            x[:, None, None] ** 2 + x[None, :, None] ** 2 + x[None, None, :] ** 2
        )

    def compatible_with(self, other: "GridSpec") -> bool:
        return self == other


def _require_same_grid(a, b):
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")


def _conj_reflect(c: np.ndarray) -> np.ndarray:
    """conj(c(-k)) in FFT index layout; equals c(k) for real fields."""
    flipped = c[..., ::-1, ::-1, ::-1]
    return np.conj(np.roll(flipped, 1, axis=(-3, -2, -1)))


@dataclass(frozen=True)
class SpectralVectorField:
    """Three-component velocity field; coefficients shape (3, N, N, N).

    Instances are value-like: the coefficient array is frozen at
    construction and every operation returns a new field.
    """

    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        N = self.grid.points_per_axis
        if self.coeffs.shape != (3, N, N, N):
            raise ValueError(
                f"coefficient array must have shape (3, {N}, {N}, {N}), "
                f"got {self.coeffs.shape}"
            )
        if self.coeffs.dtype != np.complex128:
            raise ValueError("coefficients must be complex128")
        self.coeffs.setflags(write=False)

    # -- constructors ----------------------------------------------------

    @classmethod
    def zeros(cls, grid: GridSpec) -> "SpectralVectorField":
        N = grid.points_per_axis
        return cls(grid, np.zeros((3, N, N, N), dtype=np.complex128))

    @classmethod
    def from_coeffs(cls, grid: GridSpec, coeffs: np.ndarray) -> "SpectralVectorField":
        """Build from raw coefficients, enforcing dealiasing and zero mean."""
        c = np.array(coeffs, dtype=np.complex128)
        c *= grid.dealias_mask
        c[:, 0, 0, 0] = 0.0
        return cls(grid, c)

    @classmethod
    def from_physical(cls, grid: GridSpec, values: np.ndarray) -> "SpectralVectorField":
        """Transform real grid samples (3, N, N, N) to coefficients."""
        v = np.asarray(values, dtype=np.float64)
        c = _fft.fftn(v) / grid.points_per_axis**3
        return cls.from_coeffs(grid, c)

    # -- basic queries ---------------------------------------------------

    def to_physical(self) -> np.ndarray:
        """Real grid samples, shape (3, N, N, N)."""
        N3 = self.grid.points_per_axis**3
        return _fft.ifftn(self.coeffs * N3).real

    def hermitian_residual(self) -> float:
        """Max |c(k) - conj(c(-k))| relative to max |c|; 0 for real fields."""
        scale = float(np.max(np.abs(self.coeffs)))
        if scale == 0.0:
            return 0.0
        dev = float(np.max(np.abs(self.coeffs - _conj_reflect(self.coeffs))))
        return dev / scale

    def divergence_residual(self) -> float:
        """Max over modes of |xi . c| / |c|, the divergence-free defect."""
        x1, x2, x3 = self.grid.xi
        div = x1 * self.coeffs[0] + x2 * self.coeffs[1] + x3 * self.coeffs[2]
        mag = np.abs(self.coeffs).max(axis=0)
        scale = float(mag.max())
        if scale == 0.0:
            return 0.0
        return float(np.max(np.abs(div))) / (
            float(np.sqrt(self.grid.xi_sq.max())) * scale
        )

    def is_divergence_free(self, tol: float = 1e-12) -> bool:
        return self.divergence_residual() <= tol

    # -- value-like arithmetic --------------------------------------------

    def __add__(self, other: "SpectralVectorField") -> "SpectralVectorField":
        _require_same_grid(self, other)
        return SpectralVectorField(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other: "SpectralVectorField") -> "SpectralVectorField":
        _require_same_grid(self, other)
        return SpectralVectorField(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, scalar) -> "SpectralVectorField":
        return SpectralVectorField(self.grid, self.coeffs * float(scalar))

    __rmul__ = __mul__


@dataclass(frozen=True)
class ScalarField:
    """Scalar counterpart of SpectralVectorField (mollifiers, test scalars)."""

    grid: GridSpec
    coeffs: np.ndarray

    def __post_init__(self):
        N = self.grid.points_per_axis
        if self.coeffs.shape != (N, N, N):
            raise ValueError(f"scalar coefficients must have shape ({N},{N},{N})")
        if self.coeffs.dtype != np.complex128:
            raise ValueError("coefficients must be complex128")
        self.coeffs.setflags(write=False)

    @classmethod
    def from_physical(cls, grid: GridSpec, values: np.ndarray) -> "ScalarField":
        v = np.asarray(values, dtype=np.float64)
        c = _fft.fftn(v) / grid.points_per_axis**3
        c *= grid.dealias_mask
        return cls(grid, c)

    def to_physical(self) -> np.ndarray:
        N3 = self.grid.points_per_axis**3
        return _fft.ifftn(self.coeffs * N3).real

    def hermitian_residual(self) -> float:
        scale = float(np.max(np.abs(self.coeffs)))
        if scale == 0.0:
            return 0.0
        dev = float(np.max(np.abs(self.coeffs - _conj_reflect(self.coeffs))))
        return dev / scale


# -- operators ------------------------------------------------------------


def leray_project(f: SpectralVectorField) -> SpectralVectorField:
    """Remove the gradient part: per mode c -> c - xi (xi.c)/|xi|^2.

    Mode 0 is set to zero, which makes the projection total and keeps the
    zero-mean convention.
    """
    g = f.grid
    x1, x2, x3 = g.xi
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(g.xi_sq > 0, 1.0 / np.where(g.xi_sq > 0, g.xi_sq, 1.0), 0.0)
    dot = x1 * f.coeffs[0] + x2 * f.coeffs[1] + x3 * f.coeffs[2]
    dot *= inv
    out = np.empty_like(f.coeffs)
    out[0] = f.coeffs[0] - x1 * dot
    out[1] = f.coeffs[1] - x2 * dot
    out[2] = f.coeffs[2] - x3 * dot
    out[:, 0, 0, 0] = 0.0
    return SpectralVectorField(g, out)


def heat_semigroup(f: SpectralVectorField, t: float) -> SpectralVectorField:
    """Diffuse for time t >= 0: multiply each mode by exp(-t |xi|^2)."""
    if t < 0:
        raise ValueError(f"heat semigroup requires t >= 0, got {t}")
    mult = np.exp(-t * f.grid.xi_sq)
    return SpectralVectorField(f.grid, f.coeffs * mult)


def apply_multiplier(f: SpectralVectorField, mult: np.ndarray) -> SpectralVectorField:
    """Apply a real, even Fourier multiplier (N,N,N) to every component."""
    return SpectralVectorField(f.grid, f.coeffs * mult)


def gradient_norm_sq(f: SpectralVectorField) -> float:
    """||grad f||_2^2 of the physical field (Plancherel-weighted)."""
    s = np.sum(f.grid.xi_sq * (f.coeffs.real**2 + f.coeffs.imag**2))
    return float(f.grid.volume * s)


def gradient_inner(f: SpectralVectorField, g: SpectralVectorField) -> float:
    """<grad f, grad g> summed over components."""
    _require_same_grid(f, g)
    s = np.sum(f.grid.xi_sq * (f.coeffs * np.conj(g.coeffs)).real)
    return float(f.grid.volume * s)


def l2_inner(f: SpectralVectorField, g: SpectralVectorField) -> float:
    """L2 inner product; real for Hermitian fields."""
    _require_same_grid(f, g)
    s = np.sum(f.coeffs * np.conj(g.coeffs)).real
    return float(f.grid.volume * s)


def l2_norm(f: SpectralVectorField) -> float:
    return float(np.sqrt(max(l2_inner(f, f), 0.0)))


# -- seeded field generators ------------------------------------------------


def _spectrum_coeffs(grid: GridSpec, spectrum_exponent: float, seed: int) -> np.ndarray:
    """White noise shaped by (1+|k|)^{-exponent} on the retained modes."""
    rng = np.random.default_rng(seed)
    white = rng.standard_normal((3,) + (grid.points_per_axis,) * 3)
    c = _fft.fftn(white) / grid.points_per_axis**3
    envelope = (1.0 + np.sqrt(grid.k_int_sq.astype(np.float64))) ** (
        -spectrum_exponent
    )
    c *= envelope * grid.dealias_mask
    c[:, 0, 0, 0] = 0.0
    return c


def random_field(
    grid: GridSpec, spectrum_exponent: float, seed: int
) -> SpectralVectorField:
    """Seeded random field with decaying spectrum, unit L2 norm.

    Not divergence-free; used as a generic multiplier in Hardy-ratio
    estimation.  Deterministic given (grid, exponent, seed).
    """
    if not spectrum_exponent > 1.5:
        raise ValueError(
            f"spectrum_exponent must exceed 3/2, got {spectrum_exponent}"
        )
    c = _spectrum_coeffs(grid, spectrum_exponent, seed)
    f = SpectralVectorField(grid, c)
    n = l2_norm(f)
    return f if n == 0 else f * (1.0 / n)


def random_divfree_field(
    grid: GridSpec, spectrum_exponent: float, seed: int
) -> SpectralVectorField:
    """Seeded divergence-free random field with unit L2 norm.

    Coefficient magnitudes scale like (1+|k|)^{-spectrum_exponent}; each
    mode is projected onto its divergence-free complement, so the
    divergence residual is at roundoff.
    """
    if not spectrum_exponent > 1.5:
        raise ValueError(
            f"spectrum_exponent must exceed 3/2, got {spectrum_exponent}"
        )
    c = _spectrum_coeffs(grid, spectrum_exponent, seed)
    f = leray_project(SpectralVectorField(grid, c))
    n = l2_norm(f)
    return f if n == 0 else f * (1.0 / n)


# -- checkpoint format -------------------------------------------------------
#
# A stored field is an .npz archive with two entries:
#   meta    -- UTF-8 JSON: format version, grid parameters, seed metadata,
#              and the SHA-256 of the payload bytes.
#   payload -- complex128 array of retained coefficients with shape
#              (2*kmax+1, 2*kmax+1, 2*kmax+1, 3), indexed lexicographically
#              by (k1, k2, k3, component) with each k ascending from -kmax
#              to +kmax.


def _packed_index(grid: GridSpec) -> np.ndarray:
    k = np.arange(-grid.kmax, grid.kmax + 1)
    return np.mod(k, grid.points_per_axis)


def _pack_coeffs(f: SpectralVectorField) -> np.ndarray:
    idx = _packed_index(f.grid)
    sub = f.coeffs[:, idx][:, :, idx][:, :, :, idx]
    return np.ascontiguousarray(np.moveaxis(sub, 0, -1))


def _unpack_coeffs(grid: GridSpec, packed: np.ndarray) -> np.ndarray:
    N = grid.points_per_axis
    coeffs = np.zeros((3, N, N, N), dtype=np.complex128)
    idx = _packed_index(grid)
    arr = np.moveaxis(packed, -1, 0)
    coeffs[np.ix_(range(3), idx, idx, idx)] = arr
    return coeffs


def save_field(f: SpectralVectorField, path, seed_meta: str = "") -> None:
    """Write a field checkpoint (versioned, checksummed)."""
    payload = _pack_coeffs(f)
    meta = {
        "format_version": FIELD_FORMAT_VERSION,
        "box_length": repr(f.grid.box_length),
        "points_per_axis": f.grid.points_per_axis,
        "dealias_fraction": repr(f.grid.dealias_fraction),
        "kmax": f.grid.kmax,
        "order": "(k1,k2,k3,component) lexicographic, k ascending -kmax..kmax",
        "seed_meta": seed_meta,
        "sha256": hashlib.sha256(payload.tobytes()).hexdigest(),
    }
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8),
                 payload=payload)


def load_field(path) -> tuple[SpectralVectorField, dict]:
    """Read a field checkpoint; validates version and checksum first."""
    try:
        with np.load(path) as archive:
            meta = json.loads(bytes(archive["meta"]).decode())
            payload = archive["payload"]
    except CheckpointError:
        raise
    except Exception as exc:
        raise CheckpointError(f"unreadable field checkpoint {path}: {exc}") from exc
    if meta.get("format_version") != FIELD_FORMAT_VERSION:
        raise CheckpointError(
            f"field format version mismatch: {meta.get('format_version')!r}"
        )
    digest = hashlib.sha256(payload.tobytes()).hexdigest()
    if digest != meta["sha256"]:
        raise CheckpointError("field checkpoint checksum mismatch")
    grid = GridSpec(
        box_length=float(meta["box_length"]),
        points_per_axis=int(meta["points_per_axis"]),
        dealias_fraction=float(meta["dealias_fraction"]),
    )
    side = 2 * grid.kmax + 1
    if payload.shape != (side, side, side, 3):
        raise CheckpointError(f"payload shape {payload.shape} does not match grid")
    field = SpectralVectorField(grid, _unpack_coeffs(grid, payload))
    if field.hermitian_residual() > 1e-10:
        raise CheckpointError("stored coefficients are not Hermitian")
    return field, meta
