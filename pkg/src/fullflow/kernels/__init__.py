"""Kernel backend selection.

The compiled Cython core is used when it was built; otherwise (or when
``FULLFLOW_PURE_PYTHON=1`` is set) the numpy fallback is loaded. Both expose
the same functions, so callers only ever import from this package.
"""
import os
import warnings

from . import _fallback as fallback

core = None
if not os.environ.get("FULLFLOW_PURE_PYTHON"):
    try:
        from . import _core as core
    except ImportError:  # extension not built
        warnings.warn(
            "fullflow compiled core not available; using the numpy fallback",
            RuntimeWarning,
            stacklevel=2,
        )

backend = core if core is not None else fallback
BACKEND = "cython" if core is not None else "numpy"

dt_l1 = backend.dt_l1
dt_quadratic = backend.dt_quadratic
smawk_minconv = backend.smawk_minconv
minconv_1d = backend.minconv_1d
minconv2d = backend.minconv2d
time_message_updates = backend.time_message_updates
trws_pass = backend.trws_pass
chain_minima = backend.chain_minima
decode_greedy = backend.decode_greedy
max_threads = backend.max_threads


def available():
    """Names and modules of every backend that can be imported here."""
    out = {"numpy": fallback}
    if core is not None:
        out["cython"] = core
    return out


def get(name=None):
    if name is None:
        return backend
    mods = available()
    if name not in mods:
        raise ValueError(f"backend {name!r} not available (have {sorted(mods)})")
    return mods[name]
