"""Constructive nonexpansive retractions onto common fixed-point sets.

Submodules: ``geometry`` (norms, bodies, projections), ``mappings`` (map
algebra and certificates), ``contraction`` (Banach solver and resolvents),
``retraction`` (stage-wise retraction builds and their certificates),
``tchebyshev`` (centers of finite sets), ``finite`` (exact checks on finite
metric spaces) and ``cli``.
"""

__version__ = "0.1.0"
