"""Kernel backend selection.

The hot inner loops (GGM expansion under re-keyed AES-128, selector-driven
XOR scan) live in the compiled ``impir._core`` extension. When the extension
is missing, or when ``IMPIR_BACKEND=python`` is set, the pure-Python twin in
``impir._pykernels`` is used instead. ``IMPIR_BACKEND=compiled`` insists on
the extension and raises if it cannot be imported.
"""

from __future__ import annotations

import os

_requested = os.environ.get("IMPIR_BACKEND", "").strip().lower()

if _requested not in ("", "compiled", "python"):
    raise ImportError(f"IMPIR_BACKEND must be 'compiled' or 'python', got {_requested!r}")

if _requested == "python":
    from impir import _pykernels as _impl
else:
    try:
        from impir import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        if _requested == "compiled":
            raise
        from impir import _pykernels as _impl  # type: ignore[no-redef]

BACKEND = _impl.NAME

aes128_encrypt = _impl.aes128_encrypt
prf_expand = _impl.prf_expand
expand_levels = _impl.expand_levels
expand_subtree_bits = _impl.expand_subtree_bits
xor_scan = _impl.xor_scan
impl_detail = _impl.impl_detail


def backend_name() -> str:
    """Active kernel backend: "compiled" or "python"."""
    return BACKEND
