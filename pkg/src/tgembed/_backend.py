"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the pure-Python
twin. ``get(name)`` returns a specific backend for tests and benchmarks.
"""

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

AVAILABLE = {"python": _kernels_py}
if _compiled is not None:
    AVAILABLE["cython"] = _compiled

DEFAULT = "cython" if _compiled is not None else "python"
_active = DEFAULT


def get(name: str | None = None):
    name = name or _active
    try:
        return AVAILABLE[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} unavailable (have {sorted(AVAILABLE)})") from None


def use(name: str) -> None:
    """Switch the process-wide default backend."""
    global _active
    get(name)
    _active = name


def active() -> str:
    return _active
