"""Fiber-architecture analysis toolkit for polarized light imaging.

Submodules mirror the pipeline stages: ``signal`` (measurement physics),
``augment`` (physical augmentations), ``classical`` (baseline descriptors),
``sampling`` (context pair sampling), ``engine`` (contrastive training),
``features`` (feature-map post-processing), ``analysis`` (clustering, probes,
retrieval), ``phantoms`` (synthetic ground truth), ``containers`` (file
formats), ``cli`` and ``service`` (command line and HTTP front ends).
"""

from . import (analysis, augment, classical, containers, engine, features,
               phantoms, sampling, signal)

__version__ = "0.1.0"

__all__ = ["analysis", "augment", "classical", "containers", "engine",
           "features", "phantoms", "sampling", "signal", "__version__"]
