"""Hot loops with numba and numpy implementations; see ``shearkin._backend``."""
