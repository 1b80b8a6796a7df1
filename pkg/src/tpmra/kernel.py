"""Simulation kernel selected at import: compiled if built, numpy otherwise."""

from __future__ import annotations

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

ATTACK_NONE = _pykernel.ATTACK_NONE
ATTACK_NAIVE = _pykernel.ATTACK_NAIVE
ATTACK_FLIPPING = _pykernel.ATTACK_FLIPPING
STOP_DETECT = _pykernel.STOP_DETECT
STOP_ORACLE = _pykernel.STOP_ORACLE
STOP_BOTH = _pykernel.STOP_BOTH

_active = _ckernel if _ckernel is not None else _pykernel


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernel is not None else [])


def backend() -> str:
    return _active.BACKEND


def use_backend(name: str) -> None:
    """Force ``"python"`` or ``"cython"`` for subsequent :func:`simulate` calls."""
    global _active
    if name == "python":
        _active = _pykernel
    elif name == "cython":
        if _ckernel is None:
            raise RuntimeError("compiled kernel is not built")
        _active = _ckernel
    else:
        raise ValueError(f"unknown backend {name!r}")


def get_backend(name: str):
    if name == "python":
        return _pykernel
    if name == "cython" and _ckernel is not None:
        return _ckernel
    raise RuntimeError(f"backend {name!r} unavailable")


def simulate(*args, **kwargs):
    return _active.simulate(*args, **kwargs)
