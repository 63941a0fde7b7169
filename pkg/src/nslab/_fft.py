"""FFT backend with a process-wide worker-count switch.

All transforms in the package go through these wrappers so that the
``--threads``/``--serial`` CLI flags have one place to act.  pocketfft is
run-to-run deterministic for a fixed worker count; serial mode (workers=1)
is the bitwise-reproducibility baseline.
"""

from __future__ import annotations

import scipy.fft as _sfft

_AXES = (-3, -2, -1)
_workers = 1


def set_workers(n: int) -> None:
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    global _workers
    _workers = int(n)


def get_workers() -> int:
    return _workers


def fftn(a):
    return _sfft.fftn(a, axes=_AXES, workers=_workers)


def ifftn(a):
    return _sfft.ifftn(a, axes=_AXES, workers=_workers)
