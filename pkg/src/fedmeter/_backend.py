"""Select the compiled kernel core, falling back to numpy.

Set ``FEDMETER_PURE_PYTHON=1`` to force the fallback even when the
extension is built.
"""
import os

from . import _fallback

fallback = _fallback

if os.environ.get("FEDMETER_PURE_PYTHON", "") not in ("", "0"):
    kernels = _fallback
else:
    try:
        from . import _kernels as kernels
    except ImportError:  # extension not built
        kernels = _fallback

compiled = kernels is not _fallback
name = "cython" if compiled else "numpy"
