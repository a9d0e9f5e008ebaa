"""Training-kernel backend selection.

The compiled extension is used when it imports; otherwise, or when the
``KGEBENCH_PURE_PYTHON`` environment variable is set to a non-empty value
other than ``0``, the numpy implementation is used. Both expose
``train_batch`` with identical semantics.
"""

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)


def _load():
    if os.environ.get("KGEBENCH_PURE_PYTHON", "") not in ("", "0"):
        return _pykernels
    try:
        from . import _ckernels
    except ImportError:
        logger.info("compiled kernels unavailable; using the numpy fallback")
        return _pykernels
    return _ckernels


backend = _load()
BACKEND = backend.BACKEND


def get_backend(name=None):
    """Return the kernel module for ``name`` ('cython' or 'python'), or the active one."""
    if name is None:
        return backend
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels

        return _ckernels
    raise ValueError(f"unknown backend {name!r}")
