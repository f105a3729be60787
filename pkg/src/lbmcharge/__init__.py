"""Fully resolved charged spheres in lattice Boltzmann flow.

Modules: ``grid`` (blocks, fields, ghost exchange), ``lbm`` (D3Q19 TRT),
``boundaries``, ``particles`` (mapping, momentum exchange, motion),
``lubrication``, ``electrostatics`` (finite-volume potential system),
``multigrid`` and the ``driver`` package with the time loop and CLI.
"""

__version__ = "0.1.0"
