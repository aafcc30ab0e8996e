# ccr/params.py
"""Named, transform-aware parameter vectors."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Mapping

import numpy as np

from ccr.errors import DomainError

TRANSFORMS = ("identity", "log", "log1m", "atanh")
BLOCKS = ("frequency", "severity", "copula")


def constrain(tag: str, z):
    """Map an unconstrained value to the parameter domain."""
    z = np.asarray(z, dtype=float)
    if tag == "identity":
        return z
    if tag == "log":
        return np.exp(z)
    if tag == "log1m":
        return 1.0 + np.exp(z)
    if tag == "atanh":
        return np.tanh(z)
    raise DomainError(f"unknown transform '{tag}'")


def unconstrain(tag: str, value):
    value = np.asarray(value, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if tag == "identity":
            return value
        if tag == "log":
            return np.log(value)
        if tag == "log1m":
            return np.log(value - 1.0)
        if tag == "atanh":
            return np.arctanh(value)
    raise DomainError(f"unknown transform '{tag}'")


def jacobian(tag: str, z):
    """d(constrained)/d(unconstrained) at z."""
    z = np.asarray(z, dtype=float)
    if tag == "identity":
        return np.ones_like(z)
    if tag in ("log", "log1m"):
        return np.exp(z)
    if tag == "atanh":
        return 1.0 - np.tanh(z) ** 2
    raise DomainError(f"unknown transform '{tag}'")


@dataclass(frozen=True)
class ParamEntry:
    block: str
    name: str
    value: float
    transform: str = "identity"

    def __post_init__(self):
        if self.block not in BLOCKS:
            raise DomainError(f"unknown parameter block '{self.block}'")
        if self.transform not in TRANSFORMS:
            raise DomainError(f"unknown transform '{self.transform}'")

    @property
    def key(self) -> str:
        return f"{self.block}.{self.name}"


class ParamVector:
    """
    Ordered parameter set theta = (theta^f, theta^s, theta^c).

    Entries are addressed by "block.name" keys, e.g. "frequency.intercept",
    "frequency.zero.deductible", "severity.shape", "copula.theta".
    """

    def __init__(self, entries: Iterable[ParamEntry]):
        self._entries = tuple(entries)
        self._index = {e.key: i for i, e in enumerate(self._entries)}
        if len(self._index) != len(self._entries):
            raise DomainError("duplicate parameter names")

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[ParamEntry]:
        return iter(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __getitem__(self, key: str) -> float:
        try:
            return self._entries[self._index[key]].value
        except KeyError:
            raise KeyError(f"no parameter '{key}'") from None

    def __repr__(self) -> str:
        body = ", ".join(f"{e.key}={e.value:.6g}" for e in self._entries)
        return f"ParamVector({body})"

    @property
    def keys(self) -> list[str]:
        return [e.key for e in self._entries]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self._entries], dtype=float)

    @property
    def transforms(self) -> list[str]:
        return [e.transform for e in self._entries]

    def entry(self, key: str) -> ParamEntry:
        return self._entries[self._index[key]]

    def get(self, key: str, default=None):
        return self[key] if key in self._index else default

    def array(self, block: str, names: Iterable[str]) -> np.ndarray:
        return np.array([self[f"{block}.{name}"] for name in names], dtype=float)

    def mask(self, blocks: Iterable[str]) -> np.ndarray:
        blocks = set(blocks)
        return np.array([e.block in blocks for e in self._entries], dtype=bool)

    def unconstrained(self) -> np.ndarray:
        return np.array([float(unconstrain(e.transform, e.value)) for e in self._entries])

    def with_unconstrained(self, z, mask=None) -> "ParamVector":
        """New vector whose (masked) entries are constrain(z)."""
        z = np.asarray(z, dtype=float)
        positions = np.flatnonzero(mask) if mask is not None else np.arange(len(self._entries))
        if len(positions) != len(z):
            raise DomainError(f"expected {len(positions)} unconstrained values, got {len(z)}")
        entries = list(self._entries)
        for pos, value in zip(positions, z):
            e = entries[pos]
            entries[pos] = replace(e, value=float(constrain(e.transform, value)))
        return ParamVector(entries)

    def replace(self, values: Mapping[str, float]) -> "ParamVector":
        entries = list(self._entries)
        for key, value in values.items():
            if key not in self._index:
                raise KeyError(f"no parameter '{key}'")
            entries[self._index[key]] = replace(entries[self._index[key]], value=float(value))
        return ParamVector(entries)

    def to_dict(self) -> list[dict]:
        return [
            {"block": e.block, "name": e.name, "estimate": e.value, "transform": e.transform}
            for e in self._entries
        ]

    @classmethod
    def from_dict(cls, rows: Iterable[Mapping]) -> "ParamVector":
        return cls(
            ParamEntry(r["block"], r["name"], float(r["estimate"]), r.get("transform", "identity"))
            for r in rows
        )
