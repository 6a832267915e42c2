"""Kernel backend selection.

Two interchangeable implementations of the hot numeric kernels exist:

* ``_core`` — compiled Cython extension (BLAS-backed matmuls, fused loops),
* ``numpy_backend`` — pure-numpy twin, always available.

The active backend is chosen once at import.  Set ``IMBARB_BACKEND`` to
``python`` to force the fallback or to ``cython`` to insist on the compiled
core (raises if it was not built).  Results of the two backends agree to
floating-point reduction order; per-backend runs are bit-reproducible.
"""

import os

from . import numpy_backend

try:
    from . import _core as _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("IMBARB_BACKEND", "auto").lower()

if _requested in ("auto", ""):
    active = _compiled if _compiled is not None else numpy_backend
elif _requested in ("c", "cython"):
    if _compiled is None:
        raise ImportError(
            "IMBARB_BACKEND=cython but the compiled kernel core is not importable; "
            "reinstall the package with build tools available"
        )
    active = _compiled
elif _requested in ("py", "python"):
    active = numpy_backend
else:
    raise ValueError(f"unrecognized IMBARB_BACKEND value: {_requested!r}")

BACKEND_NAME = active.NAME


def available_backends():
    """All importable backends, keyed by name."""
    out = {numpy_backend.NAME: numpy_backend}
    if _compiled is not None:
        out[_compiled.NAME] = _compiled
    return out
