"""Finite configuration spaces with an explicit measure, and macrostate partitions.

A :class:`ConfigSpace` is a list of distinct atoms (ontic configurations), each
carrying a strictly positive weight. The weights form a measure, not a
probability: they need not sum to one. A :class:`MacroPartition` splits the atom
indices into disjoint macrostates covering the whole space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from ._textio import fmt, parse_id
from .errors import DuplicateLabel, LengthMismatch, NonPositiveWeight, OnticError, UnknownMacrostate

TWO_PI = 2.0 * math.pi

MacrostateId = Hashable


def wrap_angle(theta: float) -> float:
    """Reduce an angle to [0, 2*pi)."""
    t = math.fmod(float(theta), TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod of a tiny negative number can round up to exactly 2*pi
    return 0.0 if t >= TWO_PI else t


@dataclass(frozen=True)
class ConfigLabel:
    """An ontic configuration: either an opaque integer id or a tuple of per-site field values.

    ``gauge`` is the U(1) angle attached to the configuration once an amplitude
    phase has been absorbed into it; ``None`` means the reference gauge.
    """

    id: int | None = None
    field: tuple[float, ...] | None = None
    gauge: float | None = None

    def __post_init__(self):
        if (self.id is None) == (self.field is None):
            raise ValueError("a ConfigLabel is either an opaque id or a field configuration")
        if self.field is not None:
            object.__setattr__(self, "field", tuple(float(v) for v in self.field))
        if self.gauge is not None:
            g = float(self.gauge)
            if not (0.0 <= g < TWO_PI):
                raise ValueError(f"gauge angle {g!r} outside [0, 2*pi)")
            object.__setattr__(self, "gauge", g)

    @classmethod
    def opaque(cls, i: int) -> "ConfigLabel":
        return cls(id=int(i))

    @classmethod
    def of_field(cls, values: Iterable[float]) -> "ConfigLabel":
        return cls(field=tuple(values))

    @property
    def is_field(self) -> bool:
        return self.field is not None

    def with_gauge(self, theta: float | None) -> "ConfigLabel":
        return ConfigLabel(id=self.id, field=self.field, gauge=None if theta is None else wrap_angle(theta))

    def encode(self) -> str:
        if self.field is None:
            core = f"#{self.id}"
        else:
            core = "f:" + ",".join(fmt(v) for v in self.field)
        return core if self.gauge is None else f"{core}@{fmt(self.gauge)}"

    @classmethod
    def decode(cls, token: str) -> "ConfigLabel":
        core, _, gauge = token.partition("@")
        g = float(gauge) if gauge else None
        if core.startswith("#"):
            return cls(id=int(core[1:]), gauge=g)
        if core.startswith("f:"):
            body = core[2:]
            values = tuple(float(v) for v in body.split(",")) if body else ()
            return cls(field=values, gauge=g)
        raise ValueError(f"cannot decode label {token!r}")

    def __str__(self) -> str:
        return self.encode()


def _as_label(x) -> ConfigLabel:
    if isinstance(x, ConfigLabel):
        return x
    if isinstance(x, (int, np.integer)):
        return ConfigLabel.opaque(int(x))
    return ConfigLabel.of_field(x)


@dataclass(frozen=True, eq=False)
class ConfigSpace:
    labels: tuple[ConfigLabel, ...]
    weights: np.ndarray
    total_weight: float
    field_length: int | None = None

    @property
    def size(self) -> int:
        return len(self.labels)

    def __len__(self) -> int:
        return len(self.labels)

    def same_as(self, other: "ConfigSpace") -> bool:
        return self is other or (
            self.labels == other.labels and np.array_equal(self.weights, other.weights)
        )

    def index_of(self, label: ConfigLabel) -> int:
        return self.labels.index(label)


def new_config_space(labels: Sequence, weights: Sequence[float]) -> ConfigSpace:
    """Validate labels and weights and build a :class:`ConfigSpace`.

    Integers are accepted as opaque labels and float sequences as field configurations.
    """
    labels = tuple(_as_label(x) for x in labels)
    w = np.asarray(weights, dtype=float).reshape(-1)
    if len(labels) != w.size or not labels:
        raise LengthMismatch(f"{len(labels)} labels vs {w.size} weights (both must be equal and nonzero)")
    bad = np.flatnonzero(~np.isfinite(w) | (w <= 0.0))
    if bad.size:
        raise NonPositiveWeight(f"atom {int(bad[0])} has weight {w[bad[0]]!r}")
    if len(set(labels)) != len(labels):
        raise DuplicateLabel("atom labels must be pairwise distinct")
    lengths = {len(lab.field) for lab in labels if lab.is_field}
    if len(lengths) > 1:
        raise LengthMismatch(f"field configurations of differing lengths {sorted(lengths)}")
    w = w.copy()
    w.setflags(write=False)
    return ConfigSpace(labels, w, math.fsum(w), lengths.pop() if lengths else None)


def uniform_space(n: int, weight: float = 1.0) -> ConfigSpace:
    """``n`` opaque atoms of equal weight."""
    return new_config_space(range(n), [weight] * n)


def _id_key(a):
    # deterministic order for mixed int/str ids
    return (0, a, "") if isinstance(a, (int, np.integer)) else (1, 0, str(a))


@dataclass(frozen=True, eq=False)
class MacroPartition:
    assignment: tuple
    macrostates: Mapping[MacrostateId, tuple[int, ...]] = field(repr=False)
    size: int = 0

    @property
    def ids(self) -> tuple:
        return tuple(self.macrostates)

    def members(self, alpha) -> tuple[int, ...]:
        try:
            return self.macrostates[alpha]
        except KeyError:
            raise UnknownMacrostate(f"unknown macrostate {alpha!r}") from None

    def mask(self, alpha) -> np.ndarray:
        m = np.zeros(self.size, dtype=bool)
        m[list(self.members(alpha))] = True
        return m

    def __eq__(self, other) -> bool:
        if not isinstance(other, MacroPartition):
            return NotImplemented
        return self.assignment == other.assignment and dict(self.macrostates) == dict(other.macrostates)

    def __hash__(self):
        return hash(self.assignment)


def define_macropartition(space: ConfigSpace, assignment: Sequence) -> MacroPartition:
    """Group atom indices by their macrostate id. Macrostates are ordered by id."""
    assignment = tuple(a.item() if isinstance(a, np.generic) else a for a in assignment)
    if len(assignment) != space.size:
        raise LengthMismatch(f"assignment has {len(assignment)} entries for {space.size} atoms")
    groups: dict = {}
    for i, a in enumerate(assignment):
        groups.setdefault(a, []).append(i)
    ordered = {a: tuple(groups[a]) for a in sorted(groups, key=_id_key)}
    return MacroPartition(assignment, ordered, space.size)


def macro_measure(space: ConfigSpace, partition: MacroPartition, alpha) -> float:
    idx = partition.members(alpha)
    return math.fsum(space.weights[list(idx)])


# -- text serialization ------------------------------------------------------

_HEADER = "ontic-config-space 1"


def dumps_space(space: ConfigSpace, partition: MacroPartition | None = None) -> str:
    lines = [_HEADER, f"atoms {space.size}"]
    if space.field_length is not None:
        lines.append(f"field_length {space.field_length}")
    lines.append("# index label weight" + (" macrostate" if partition is not None else ""))
    for i, (lab, w) in enumerate(zip(space.labels, space.weights)):
        row = f"{i} {lab.encode()} {fmt(w)}"
        if partition is not None:
            row += f" {partition.assignment[i]}"
        lines.append(row)
    return "\n".join(lines) + "\n"


def loads_space(text: str) -> tuple[ConfigSpace, MacroPartition | None]:
    """Inverse of :func:`dumps_space`; returns the partition when one was written."""
    rows = [ln.strip() for ln in text.splitlines()]
    rows = [ln for ln in rows if ln and not ln.startswith("#")]
    if not rows or rows[0] != _HEADER:
        raise OnticError("missing config-space header")
    count = None
    labels, weights, assignment = [], [], []
    for ln in rows[1:]:
        parts = ln.split()
        if parts[0] == "atoms":
            count = int(parts[1])
        elif parts[0] == "field_length":
            continue
        else:
            if int(parts[0]) != len(labels):
                raise OnticError(f"atom rows out of order at {ln!r}")
            labels.append(ConfigLabel.decode(parts[1]))
            weights.append(float(parts[2]))
            if len(parts) > 3:
                assignment.append(parse_id(parts[3]))
    if count != len(labels):
        raise LengthMismatch(f"header declares {count} atoms, found {len(labels)}")
    space = new_config_space(labels, weights)
    if assignment:
        return space, define_macropartition(space, assignment)
    return space, None
