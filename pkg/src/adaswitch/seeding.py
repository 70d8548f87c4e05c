"""Deterministic seed derivation.

Every random stream in a run is keyed by a hash of its purpose, so results
depend only on (global seed, question id, role) and never on scheduling.
"""

from __future__ import annotations

import hashlib


def derive_seed(*parts: object) -> int:
    digest = hashlib.sha256("\x1f".join(map(str, parts)).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def unit_draw(*parts: object) -> float:
    """Uniform value in [0, 1) fixed by ``parts``."""
    return derive_seed(*parts) / 2.0**64
