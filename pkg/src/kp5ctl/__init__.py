"""Pseudospectral simulation and feedback control of the fifth-order KP equation.

The domain is periodic in x and approximated by a periodic box in y.
Submodules: ``spectral``, ``operators``, ``norms``, ``linear_flow``,
``nonlinear_flow``, ``stability``, ``ucp``, ``control``, ``oracles``,
``acceptance`` and ``cli``.
"""

__version__ = "0.1.0"
