"""Spectral experiments on doubled polygons: flat surfaces with conical points.

Modules: ``geometry`` (polygons and doubling), ``mesh`` (triangulation and
P1 operators), ``spectral`` (eigenbases and functional calculus),
``littlewood_paley`` (dyadic multipliers and squarefunctions), ``evolution``
(Schrodinger flow and Strichartz norms), ``cone_kernel`` (flat-cone heat
kernel) and ``cli``.
"""

__version__ = "0.1.0"
