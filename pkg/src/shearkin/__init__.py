"""Kinetic models of homoenergetic shear flow in two velocity dimensions.

Submodules:

- ``tensor_core``: 2x2 symmetric tensors, shear frames, objectivity checks
- ``moment_dynamics``: stress ODE, coefficient frames, 4th/6th moment systems
- ``fp_shape_solver``: finite-volume solver for the rescaled Fokker-Planck shape
- ``hypocoercivity``: discrete operators for the autonomous linearised flow
- ``boltzmann_dsmc``: hard-sphere particle solver with rescaling diagnostics
- ``diagnostics``: asymptotics tables, verdicts, manifests, CSV output
- ``cli``: command-line entry point
"""

__version__ = "0.1.0"

from .tensor_core import ShearFrame, SymTensor2  # noqa: E402

__all__ = ["ShearFrame", "SymTensor2", "__version__"]
