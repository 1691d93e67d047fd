"""Kernel backend selection.

The compiled extension is used when it was built; ``GDFQ_PURE_PYTHON=1``
forces the numpy fallback.
"""
from __future__ import annotations

import os

from gdfq.quant import _pykernels

if os.environ.get("GDFQ_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from gdfq.quant import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

quantize_codes = _impl.quantize_codes
fake_quant = _impl.fake_quant
mse_sweep = _impl.mse_sweep
kl_sweep = _impl.kl_sweep


def backends() -> dict[str, object]:
    """All importable backends keyed by name (the fallback is always present)."""
    found: dict[str, object] = {"python": _pykernels}
    try:
        from gdfq.quant import _ckernels  # type: ignore[attr-defined]

        found["cython"] = _ckernels
    except ImportError:
        pass
    return found
