"""Kernel backend selection: compiled extension if importable, pure numpy
otherwise. ``URWKV_FORCE_PURE=1`` forces the fallback (used by the backend
comparison benchmark)."""

import os

from . import _wkv_py as pure

if os.environ.get("URWKV_FORCE_PURE", "") not in ("", "0"):
    active = pure
    BACKEND = "pure"
else:
    try:
        from . import _wkv_ext as active  # type: ignore[no-redef]
        BACKEND = "ext"
    except ImportError:
        active = pure
        BACKEND = "pure"


def get_backend(name="active"):
    """Resolve a backend module by name: active, pure, or ext."""
    if name in ("active", "auto", None):
        return active
    if name == "pure":
        return pure
    if name == "ext":
        try:
            from . import _wkv_ext
        except ImportError as exc:
            raise RuntimeError(
                "compiled kernel extension is not available; "
                "build it with `python setup.py build_ext --inplace`"
            ) from exc
        return _wkv_ext
    raise ValueError(f"unknown kernel backend {name!r}")
