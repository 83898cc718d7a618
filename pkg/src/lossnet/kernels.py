"""Backend selection for the hot loops (KDR recursions, event simulation).

The compiled ``_kernels`` extension is used when it imports; otherwise, or
when ``LOSSNET_BACKEND=python`` is set, the pure-Python mirror is used.
"""
from __future__ import annotations

import os

import numpy as np

from . import _pykernels

INF_CAP = _pykernels.INF_CAP

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _pykernels}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled


def available() -> list[str]:
    return sorted(_BACKENDS)


def get(name: str | None = None):
    """Kernel module by name; ``None`` picks the default backend."""
    if name is None:
        return _BACKENDS[BACKEND]
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable (have {available()})") from None


_requested = os.environ.get("LOSSNET_BACKEND", "").strip().lower()
if _requested in _BACKENDS:
    BACKEND = _requested
elif _requested:
    raise ImportError(f"LOSSNET_BACKEND={_requested!r} unavailable (have {available()})")
else:
    BACKEND = "cython" if _compiled is not None else "python"


# the compiled kernels take writable typed buffers, hence the copies
def kdr_1d(loads, sizes, capacity, backend=None):
    loads = np.array(loads, dtype=np.float64)
    sizes = np.array(sizes, dtype=np.int64)
    return get(backend).kdr_1d(loads, sizes, int(capacity))


def kdr_nd(kappa, A, caps, backend=None):
    kappa = np.array(kappa, dtype=np.float64)
    A = np.array(A, dtype=np.int64)
    caps = np.array(caps, dtype=np.int64)
    return get(backend).kdr_nd(kappa, A, caps)


def simulate(*args, backend=None):
    return get(backend).simulate(*args)
