"""Logical knob spaces shared by the simulator and live backends.

A ``KnobSpace`` is an ordered list of bounded integer dimensions plus boolean
toggles. Neighbor enumeration walks that order, so it is fully deterministic.
"""

from __future__ import annotations

import itertools
from collections.abc import Mapping
from dataclasses import dataclass, field
from typing import Any


@dataclass(frozen=True)
class KnobDim:
    name: str
    min: int
    max: int
    step: int = 1
    unit: str = ""

    def __post_init__(self) -> None:
        if self.min > self.max:
            raise ValueError(f"knob {self.name!r}: min {self.min} > max {self.max}")
        if self.step < 1:
            raise ValueError(f"knob {self.name!r}: step must be >= 1")

    def clamp(self, value: int) -> int:
        return max(self.min, min(self.max, int(value)))

    def contains(self, value: int) -> bool:
        return self.min <= value <= self.max


@dataclass(frozen=True)
class KnobVector:
    """One point in a knob space. Hashable, so it can key dicts."""

    values: tuple[tuple[str, int], ...]
    toggles: tuple[tuple[str, bool], ...] = ()

    @classmethod
    def of(cls, values: Mapping[str, int], toggles: Mapping[str, bool] | None = None) -> KnobVector:
        return cls(
            values=tuple((k, int(v)) for k, v in values.items()),
            toggles=tuple((k, bool(v)) for k, v in (toggles or {}).items()),
        )

    @classmethod
    def from_dict(cls, d: Mapping[str, int | bool]) -> KnobVector:
        """Inverse of ``to_dict``: boolean entries become toggles."""
        return cls(
            values=tuple((k, int(v)) for k, v in d.items() if not isinstance(v, bool)),
            toggles=tuple((k, v) for k, v in d.items() if isinstance(v, bool)),
        )

    def __getitem__(self, name: str) -> int | bool:
        for k, v in self.values:
            if k == name:
                return v
        for k, v in self.toggles:
            if k == name:
                return v
        raise KeyError(name)

    def get(self, name: str, default: Any = None) -> Any:
        try:
            return self[name]
        except KeyError:
            return default

    def value_map(self) -> dict[str, int]:
        return dict(self.values)

    def toggle_map(self) -> dict[str, bool]:
        return dict(self.toggles)

    def replace(self, **changes: int | bool) -> KnobVector:
        values = self.value_map()
        toggles = self.toggle_map()
        for name, v in changes.items():
            if name in values:
                values[name] = int(v)
            elif name in toggles:
                toggles[name] = bool(v)
            else:
                raise KeyError(name)
        return KnobVector.of(values, toggles)

    def to_dict(self) -> dict[str, int | bool]:
        out: dict[str, int | bool] = dict(self.values)
        out.update(self.toggles)
        return out

    def label(self) -> str:
        parts = [f"{k}={v}" for k, v in self.values]
        parts += [f"{k}={'on' if v else 'off'}" for k, v in self.toggles]
        return " ".join(parts)

    def __str__(self) -> str:
        return self.label()


@dataclass(frozen=True)
class KnobSpace:
    dims: tuple[KnobDim, ...]
    toggles: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        names = [d.name for d in self.dims] + list(self.toggles)
        if len(set(names)) != len(names):
            raise ValueError(f"duplicate knob names in {names}")

    @property
    def names(self) -> list[str]:
        return [d.name for d in self.dims]

    def dim(self, name: str) -> KnobDim:
        for d in self.dims:
            if d.name == name:
                return d
        raise KeyError(name)

    def vector(self, values: Mapping[str, Any]) -> KnobVector:
        """Build a vector in this space's ordering from a ``{name: value}`` map.

        Missing toggles default to True. Unknown or missing dims raise.
        """
        unknown = set(values) - set(self.names) - set(self.toggles)
        if unknown:
            raise KeyError(f"unknown knobs: {sorted(unknown)}")
        missing = [n for n in self.names if n not in values]
        if missing:
            raise KeyError(f"missing knobs: {missing}")
        return KnobVector(
            values=tuple((n, int(values[n])) for n in self.names),
            toggles=tuple((t, bool(values.get(t, True))) for t in self.toggles),
        )

    def contains(self, k: KnobVector) -> bool:
        try:
            return all(d.contains(int(k[d.name])) for d in self.dims)
        except KeyError:
            return False

    def all_points(self) -> list[KnobVector]:
        """Every grid point reachable from ``min`` by whole steps, times all toggle states."""
        axes = [range(d.min, d.max + 1, d.step) for d in self.dims]
        flips = [(True, False)] * len(self.toggles)
        points = []
        for vals in itertools.product(*axes):
            for tv in itertools.product(*flips):
                points.append(
                    KnobVector(
                        values=tuple(zip(self.names, vals)),
                        toggles=tuple(zip(self.toggles, tv)),
                    )
                )
        return points


def live_space() -> KnobSpace:
    return KnobSpace(
        dims=(
            KnobDim("conc", 2, 16, 2, "requests in flight"),
            KnobDim("max_seqs", 4, 16, 3, "sequences"),
            KnobDim("spec_tokens", 0, 16, 4, "tokens"),
        ),
        toggles=("spec_enabled",),
    )


def sim_space() -> KnobSpace:
    return KnobSpace(
        dims=(
            KnobDim("W", 1, 4, 1, "draft tokens"),
            KnobDim("k", 2, 16, 2, "drafted tokens per verification"),
            KnobDim("B", 1, 32, 4, "requests"),
            KnobDim("max_wait_ms", 0, 50, 10, "ms"),
        ),
    )


def live_k0(space: KnobSpace | None = None) -> KnobVector:
    space = space or live_space()
    return space.vector({"conc": 8, "max_seqs": 8, "spec_tokens": 8, "spec_enabled": True})


def sim_k0(space: KnobSpace | None = None) -> KnobVector:
    space = space or sim_space()
    return space.vector({"W": 2, "k": 12, "B": 16, "max_wait_ms": 0})


def clamp(space: KnobSpace, k: KnobVector) -> KnobVector:
    values = k.value_map()
    missing = [n for n in space.names if n not in values]
    if missing:
        raise KeyError(f"knob vector lacks dims {missing}")
    clamped = {d.name: d.clamp(values[d.name]) for d in space.dims}
    toggles = k.toggle_map()
    return KnobVector(
        values=tuple((n, clamped[n]) for n in space.names),
        toggles=tuple((t, toggles.get(t, True)) for t in space.toggles),
    )


def neighbors(space: KnobSpace, k: KnobVector) -> list[KnobVector]:
    """One-hop neighbors: each dim minus then plus its step, then each toggle flipped.

    Candidates are clamped; any that collapse onto ``k`` or repeat an earlier
    candidate are dropped.
    """
    origin = clamp(space, k)
    out: list[KnobVector] = []
    seen = {origin}
    for d in space.dims:
        for sign in (-1, 1):
            cand = clamp(space, origin.replace(**{d.name: int(origin[d.name]) + sign * d.step}))
            if cand not in seen:
                seen.add(cand)
                out.append(cand)
    for t in space.toggles:
        cand = origin.replace(**{t: not origin[t]})
        if cand not in seen:
            seen.add(cand)
            out.append(cand)
    return out
