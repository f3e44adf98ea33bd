"""Pick the kernel implementation at import time.

The compiled extension is used when it was built; ``DRKF_PURE_PYTHON=1`` in the
environment forces the fallback (handy for benchmarks and parity tests).
"""

import os

from . import _pykernels

BACKEND = "python"
gamma_eigs = _pykernels.gamma_eigs
bisect_theta_eigs = _pykernels.bisect_theta_eigs

if os.environ.get("DRKF_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        gamma_eigs = _ckernels.gamma_eigs
        bisect_theta_eigs = _ckernels.bisect_theta_eigs
