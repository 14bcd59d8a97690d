"""Kernel backend selection.

The compiled extension is preferred when importable; set WCEMIX_PURE_PYTHON=1
to force the numpy fallback (used by the backend-agreement tests and the
benchmark). Both backends expose the same two functions.
"""

import os

from . import numpy_backend

if os.environ.get("WCEMIX_PURE_PYTHON"):
    _impl = numpy_backend
else:
    try:
        from . import _gausskern as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = numpy_backend

BACKEND_NAME = _impl.NAME
mvn_logpdf_matrix = _impl.mvn_logpdf_matrix
weighted_scatter = _impl.weighted_scatter


def get_backend(name):
    """Return a backend module by name ("compiled" or "numpy")."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        from . import _gausskern
        return _gausskern
    raise ValueError(f"unknown backend {name!r}")
