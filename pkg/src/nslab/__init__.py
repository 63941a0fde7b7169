"""Desk-scale numerical laboratory for 3D incompressible flow on a periodic box.

Subpackages split by concern:

* ``spectral``   -- grids, fields, projection, heat semigroup, checkpoints
* ``spaces``     -- the admissible-norm catalogue and Hardy-constant estimation
* ``trilinear``  -- the advection trilinear form and multiplier-weighted variants
* ``mild``       -- Picard iteration for background mild solutions
* ``dynamics``   -- perturbation integrator, energy ledger, Galerkin truncation
* ``splitting``  -- Fourier-splitting diagnostics and generalized energy checks
* ``experiment`` -- scenario configs, artifact writing, run/replay drivers
* ``cli``        -- the ``nslab`` command-line entry point
"""

__version__ = "0.1.0"
