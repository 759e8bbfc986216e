"""Select the compiled kernels when available, else the numpy fallback.

Set ``BARK_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _kernels_py

COMPILED = False

if not os.environ.get("BARK_PURE_PYTHON"):
    try:
        from . import _kernels as _impl

        COMPILED = True
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

route = _impl.route
lowrank_delta = _impl.lowrank_delta
bnb_probe = _impl.bnb_probe
changed_groups = _impl.changed_groups
update_columns = _kernels_py.update_columns

BACKEND = "cython" if COMPILED else "numpy"
