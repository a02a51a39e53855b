"""Backend selection for the sampler's hot loops.

The compiled extension is used when it is importable; setting
``CFACAR_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from . import _pykernels

BACKEND = "python"
theta_sweep = _pykernels.theta_sweep
lambda_rows = _pykernels.lambda_rows

if not os.environ.get("CFACAR_PURE_PYTHON"):
    try:
        from . import _kernels
    except ImportError:
        _kernels = None
    else:
        BACKEND = "cython"
        theta_sweep = _kernels.theta_sweep
        lambda_rows = _kernels.lambda_rows
else:
    _kernels = None


def compiled_available() -> bool:
    try:
        from . import _kernels as _k  # noqa: F401
    except ImportError:
        return False
    return True
