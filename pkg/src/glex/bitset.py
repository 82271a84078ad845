"""Feature subsets encoded as integer bitmasks.

Bit ``k`` set means feature ``k`` belongs to the subset. The empty set (0)
stands for the intercept component.
"""
from __future__ import annotations

from typing import Iterable, Iterator, Sequence

MAX_FEATURES = 64


def from_indices(indices: Iterable[int]) -> int:
    mask = 0
    for k in indices:
        k = int(k)
        if not 0 <= k < MAX_FEATURES:
            raise ValueError(f"feature index {k} outside [0, {MAX_FEATURES})")
        mask |= 1 << k
    return mask


def to_indices(mask: int) -> list[int]:
    out = []
    k = 0
    while mask:
        if mask & 1:
            out.append(k)
        mask >>= 1
        k += 1
    return out


def popcount(mask: int) -> int:
    return bin(mask).count("1")


def is_subset(a: int, b: int) -> bool:
    return a & ~b == 0


def submasks(mask: int) -> Iterator[int]:
    """Yield every submask of ``mask`` in descending order, ending with 0."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def mobius_sign(size_s: int, size_v: int) -> int:
    return -1 if (size_s - size_v) & 1 else 1


def compress(mask: int, support: Sequence[int]) -> int:
    """Map a global mask onto local bit positions of ``support`` (sorted indices)."""
    local = 0
    for pos, k in enumerate(support):
        if mask >> k & 1:
            local |= 1 << pos
    return local


def expand(local: int, support: Sequence[int]) -> int:
    mask = 0
    for pos, k in enumerate(support):
        if local >> pos & 1:
            mask |= 1 << k
    return mask


def subset_name(mask: int, feature_names: Sequence[str]) -> str:
    """Sorted feature names joined by ':'; empty string for the intercept."""
    return ":".join(sorted(feature_names[k] for k in to_indices(mask)))


def parse_subset(text: str, feature_names: Sequence[str]) -> int:
    text = text.strip()
    if not text:
        return 0
    lookup = {name: k for k, name in enumerate(feature_names)}
    mask = 0
    for part in text.replace(",", ":").split(":"):
        part = part.strip()
        if part in lookup:
            mask |= 1 << lookup[part]
        elif part.isdigit() and int(part) < len(feature_names):
            mask |= 1 << int(part)
        else:
            raise ValueError(f"unknown feature {part!r}")
    return mask
