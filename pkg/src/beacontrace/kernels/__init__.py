"""Hot loops, compiled when the Cython extension is available.

Set ``BEACONTRACE_KERNEL=python`` to force the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("BEACONTRACE_KERNEL", "").lower() != "python":
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels
else:
    _impl = _pykernels

run_batch = _impl.run_batch
mad_rows = _impl.mad_rows

__all__ = ["BACKEND", "run_batch", "mad_rows", "_pykernels"]
