"""Inverse problems with finitely many measurements, at desk scale.

Subpackages are imported lazily so the CLI can cap BLAS threads before
numpy loads; import the modules you need directly, e.g.::

    from finmeas.qpat import QpatModel
    from finmeas.stability import defect_curve, select_level
    from finmeas.reconstruct import global_reconstruct
"""

__version__ = "0.1.0"

__all__ = [
    "errors",
    "types",
    "projections",
    "rkhs",
    "qpat",
    "eit",
    "stability",
    "reconstruct",
    "experiments",
    "io",
    "cli",
]
