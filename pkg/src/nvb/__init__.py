"""Magnetic-field vector estimation from NV-center ODMR spectra.

Modules: ``physics`` (Zeeman model, synthetic spectra), ``dataset``
(generation, resampling, binary files), ``raster`` (Lorentzian fitting
baseline), ``mlp`` (numpy network and Adam), ``search`` (random search with
successive halving), ``harness`` (experiment sweeps) and ``cli``.
"""

__version__ = "0.1.0"
