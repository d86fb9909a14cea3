"""hp finite elements for Helmholtz problems truncated by a perfectly matched layer.

Subpackages by topic:

* :mod:`pmlhp.pml`: scaling functions and the complex layer coefficients;
* :mod:`pmlhp.mesh`, :mod:`pmlhp.space`: curved triangular meshes and
  hierarchical elements;
* :mod:`pmlhp.fem`: assembly, solves, norms and quasi-optimality reports;
* :mod:`pmlhp.oracles`, :mod:`pmlhp.radial`: Bessel-function and radial
  spectral-element reference solutions;
* :mod:`pmlhp.torus`: FFT functional calculus on the torus;
* :mod:`pmlhp.experiments`, :mod:`pmlhp.cli`: studies and the command line.
"""

from .experiments import VERSION as __version__

__all__ = ["__version__"]
