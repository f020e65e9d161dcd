"""Tiny JSON emitter used by the template/model/cascade file formats.

The on-disk formats fix field order and render every real with 17
significant digits so that serialized float64 values round-trip exactly.
Python's ``json`` module is used for reading; writing goes through
:func:`dumps` because the stdlib encoder cannot be told how to format
floats.
"""

from __future__ import annotations

import math

import numpy as np


def format_real(value: float) -> str:
    """Render one float with 17 significant digits (lossless for float64)."""
    if math.isnan(value) or math.isinf(value):
        raise ValueError(f"cannot serialize non-finite real: {value!r}")
    return format(float(value), ".17g")


def dumps(obj) -> str:
    """Serialize dicts/lists/scalars to JSON text, floats via format_real.

    Dict key order is preserved, which is how the file formats pin their
    field order.
    """
    parts: list[str] = []
    _write(obj, parts)
    return "".join(parts)


def _write(obj, parts: list[str]) -> None:
    if obj is None:
        parts.append("null")
    elif obj is True:
        parts.append("true")
    elif obj is False:
        parts.append("false")
    elif isinstance(obj, str):
        parts.append(_escape(obj))
    elif isinstance(obj, (int, np.integer)):
        parts.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        parts.append(format_real(float(obj)))
    elif isinstance(obj, dict):
        parts.append("{")
        for i, (key, value) in enumerate(obj.items()):
            if i:
                parts.append(", ")
            parts.append(_escape(str(key)))
            parts.append(": ")
            _write(value, parts)
        parts.append("}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        seq = obj.tolist() if isinstance(obj, np.ndarray) else obj
        parts.append("[")
        for i, value in enumerate(seq):
            if i:
                parts.append(", ")
            _write(value, parts)
        parts.append("]")
    else:
        raise TypeError(f"cannot serialize {type(obj).__name__}")


_ESCAPES = {
    "\\": "\\\\",
    '"': '\\"',
    "\n": "\\n",
    "\r": "\\r",
    "\t": "\\t",
    "\b": "\\b",
    "\f": "\\f",
}


def _escape(text: str) -> str:
    out = ['"']
    for ch in text:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04x}")
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)
