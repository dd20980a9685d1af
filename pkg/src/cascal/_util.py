"""Small shared helpers: atomic writes, float formatting, seed derivation."""

import os

import numpy as np


def child_seed(*parts) -> int:
    """Deterministic 63-bit child seed from integer parts (master, index, ...)."""
    ss = np.random.SeedSequence([int(p) & 0x7FFFFFFFFFFFFFFF for p in parts])
    return int(ss.generate_state(1, np.uint64)[0] >> 1)


def fmt_float(x: float) -> str:
    """Format a float for CSV output; deterministic and round-trippable."""
    return format(float(x), ".12g")


def atomic_write_text(path, text: str) -> None:
    """Write text via a temp file + rename so readers never see partial files."""
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
