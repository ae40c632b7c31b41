"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension ``forgelight._kernels`` is used when it was built;
set ``FORGELIGHT_PURE_PYTHON=1`` to force the fallback (useful for
benchmarking and for checking that both backends agree).
"""
import logging
import os

from . import _fallback

log = logging.getLogger(__name__)

_NAMES = ("tet_geometry", "von_mises", "disc_triangle_moments", "filter_grid", "element_energy")


def _load_compiled():
    if os.environ.get("FORGELIGHT_PURE_PYTHON", "").strip() not in ("", "0"):
        return None
    try:
        from . import _kernels
    except ImportError:
        log.debug("compiled kernels unavailable; using pure-Python fallback")
        return None
    return _kernels


_compiled = _load_compiled()
BACKEND = "compiled" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _fallback

tet_geometry = _impl.tet_geometry
von_mises = _impl.von_mises
disc_triangle_moments = _impl.disc_triangle_moments
filter_grid = _impl.filter_grid
element_energy = _impl.element_energy


def backends():
    """Map of available backend name -> module, fallback always included."""
    out = {"python": _fallback}
    if _compiled is not None:
        out["compiled"] = _compiled
    else:
        try:
            from . import _kernels
            out["compiled"] = _kernels
        except ImportError:
            pass
    return out
