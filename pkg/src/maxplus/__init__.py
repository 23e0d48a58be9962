"""Max-Plus decomposition of supermartingales: closed forms, simulation,
exact lattice verification and the Azéma-Yor construction."""

__version__ = "0.1.0"
