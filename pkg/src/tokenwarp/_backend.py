"""Kernel backend selection.

The compiled ``_core`` extension is used when it imports; otherwise the numpy
fallback. Set ``TOKENWARP_BACKEND=python`` to force the fallback.
"""

import os

from . import _fallback

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = {"python": _fallback}
if _compiled is not None:
    BACKENDS["compiled"] = _compiled

_forced = os.environ.get("TOKENWARP_BACKEND", "").strip().lower()
if _forced and _forced not in BACKENDS:
    raise ImportError(f"TOKENWARP_BACKEND={_forced!r} is not available (have {sorted(BACKENDS)})")
DEFAULT = _forced or ("compiled" if _compiled is not None else "python")


def get(name=None):
    return BACKENDS[name or DEFAULT]


def available():
    return sorted(BACKENDS)
