"""Wavefunctionals over a finite configuration space.

Amplitudes live in the measure-weighted L2 space: the squared norm of a state is
``sum(mu_i * |psi_i|**2)`` and the probability weight of atom ``i`` is
``mu_i * |psi_i|**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ._textio import fmt
from .configspace import TWO_PI, ConfigLabel, ConfigSpace, MacroPartition, new_config_space, wrap_angle
from .errors import LabelKindMismatch, LengthMismatch, NotNormalized, OnticError, SpaceMismatch

INPUT_NORM_TOL = 1e-8
INTERNAL_NORM_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class StateVector:
    space: ConfigSpace
    amplitudes: np.ndarray

    def __len__(self) -> int:
        return self.amplitudes.size

    @property
    def probability_weights(self) -> np.ndarray:
        return self.space.weights * np.abs(self.amplitudes) ** 2

    def norm_squared(self) -> float:
        return math.fsum(self.probability_weights)

    def phased(self, theta: float) -> "StateVector":
        """Global phase exp(i*theta) applied to every amplitude."""
        return _make(self.space, self.amplitudes * np.exp(1j * theta))


def _make(space: ConfigSpace, amps) -> StateVector:
    """Wrap amplitudes without a norm check, re-normalizing only drift beyond 1e-10."""
    a = np.array(amps, dtype=complex).reshape(-1)
    n2 = math.fsum(space.weights * np.abs(a) ** 2)
    if n2 > 0.0 and abs(n2 - 1.0) > INTERNAL_NORM_TOL:
        a = a / math.sqrt(n2)
    a.setflags(write=False)
    return StateVector(space, a)


def from_amplitudes(space: ConfigSpace, amplitudes: Sequence[complex]) -> StateVector:
    a = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if a.size != space.size:
        raise LengthMismatch(f"{a.size} amplitudes for {space.size} atoms")
    n2 = math.fsum(space.weights * np.abs(a) ** 2)
    if not abs(n2 - 1.0) <= INPUT_NORM_TOL:
        raise NotNormalized(n2)
    return _make(space, a)


def normalized(space: ConfigSpace, amplitudes: Sequence[complex]) -> StateVector:
    """Scale arbitrary nonzero amplitudes to unit norm."""
    a = np.asarray(amplitudes, dtype=complex).reshape(-1)
    if a.size != space.size:
        raise LengthMismatch(f"{a.size} amplitudes for {space.size} atoms")
    n2 = math.fsum(space.weights * np.abs(a) ** 2)
    if n2 == 0.0:
        raise NotNormalized(n2)
    return from_amplitudes(space, a / math.sqrt(n2))


def basis_state(space: ConfigSpace, i: int) -> StateVector:
    """The i-th ontic basis vector, scaled to unit norm."""
    a = np.zeros(space.size, dtype=complex)
    a[i] = 1.0 / math.sqrt(space.weights[i])
    return _make(space, a)


def _check_same(a: ConfigSpace, b: ConfigSpace) -> None:
    if not a.same_as(b):
        raise SpaceMismatch("operands live on different configuration spaces")


def inner_product(a: StateVector, b: StateVector) -> complex:
    _check_same(a.space, b.space)
    terms = a.space.weights * np.conj(a.amplitudes) * b.amplitudes
    return complex(math.fsum(terms.real), math.fsum(terms.imag))


def born_probability(psi: StateVector, partition: MacroPartition) -> dict:
    """Squared norm of each macroprojection of ``psi``."""
    if partition.size != psi.space.size:
        raise SpaceMismatch("partition does not cover the state's configuration space")
    p = psi.probability_weights
    return {alpha: math.fsum(p[list(idx)]) for alpha, idx in partition.macrostates.items()}


def polar_decompose(psi: StateVector) -> tuple[np.ndarray, np.ndarray]:
    """Radial parts ``r >= 0`` and angles in [0, 2*pi); a zero amplitude gets angle 0."""
    a = psi.amplitudes
    r = np.abs(a)
    theta = np.angle(a)
    theta = np.where(theta < 0.0, theta + TWO_PI, theta)
    theta[theta >= TWO_PI] = 0.0
    theta[r == 0.0] = 0.0
    return r, theta


@dataclass(frozen=True, eq=False)
class GaugeState:
    """A state rewritten as a real, nonnegative functional on gauge-relabelled configurations."""

    space_tilde: ConfigSpace
    origin_space: ConfigSpace
    radial: np.ndarray
    angles: np.ndarray
    densitized_weights: np.ndarray
    probability_weights: np.ndarray


def absorb_phases(psi: StateVector) -> GaugeState:
    r, theta = polar_decompose(psi)
    space = psi.space
    # an angle already carried by a label composes with the absorbed phase
    tilde = [
        lab.with_gauge(t + (lab.gauge or 0.0)) for lab, t in zip(space.labels, theta)
    ]
    tilde_space = new_config_space(tilde, space.weights)
    mu = space.weights
    arrays = [r, theta, r * mu, r * r * mu]
    for arr in arrays:
        arr.setflags(write=False)
    return GaugeState(tilde_space, space, *arrays)


def reconstruct(g: GaugeState) -> StateVector:
    return _make(g.origin_space, g.radial * np.exp(1j * g.angles))


def gauge_angles(g: GaugeState) -> np.ndarray:
    """The angles read back from the relabelled configurations, relative to the origin labels."""
    out = np.empty(g.space_tilde.size)
    for i, (lt, lo) in enumerate(zip(g.space_tilde.labels, g.origin_space.labels)):
        out[i] = wrap_angle((lt.gauge or 0.0) - (lo.gauge or 0.0))
    return out


def circular_distance(a, b) -> np.ndarray:
    d = np.mod(np.asarray(a) - np.asarray(b), TWO_PI)
    return np.minimum(d, TWO_PI - d)


@dataclass(frozen=True, eq=False)
class FieldRep:
    """The state as a collection of (classical field, constant coefficient) pairs."""

    entries: tuple[tuple[tuple[float, ...], complex], ...]
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.entries)


def to_field_rep(psi: StateVector) -> FieldRep:
    labels = psi.space.labels
    if not all(lab.is_field for lab in labels):
        raise LabelKindMismatch("opaque atom ids carry no field configuration")
    entries = tuple((lab.field, complex(c)) for lab, c in zip(labels, psi.amplitudes))
    return FieldRep(entries, psi.space.weights)


def from_field_rep(rep: FieldRep) -> StateVector:
    space = new_config_space([ConfigLabel.of_field(f) for f, _ in rep.entries], rep.weights)
    return _make(space, [c for _, c in rep.entries])


# -- text export -------------------------------------------------------------

_STATE_HEADER = "label,re,im"
_GAUGE_HEADER = "label,re,im,radial,angle,probability_weight"


def dumps_state(psi: StateVector) -> str:
    lines = [_STATE_HEADER]
    for lab, c in zip(psi.space.labels, psi.amplitudes):
        lines.append(f"{lab.encode()},{fmt(c.real)},{fmt(c.imag)}")
    return "\n".join(lines) + "\n"


def loads_state(text: str, space: ConfigSpace) -> StateVector:
    """Read amplitudes written by :func:`dumps_state` onto a matching space."""
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows or rows[0] != _STATE_HEADER:
        raise OnticError("missing state header")
    labels, amps = [], []
    for ln in rows[1:]:
        lab, re_, im_ = ln.rsplit(",", 2)
        labels.append(ConfigLabel.decode(lab))
        amps.append(complex(float(re_), float(im_)))
    if tuple(labels) != space.labels:
        raise SpaceMismatch("state labels do not match the configuration space")
    return from_amplitudes(space, amps)


def dumps_gauge(g: GaugeState) -> str:
    psi = reconstruct(g)
    lines = [_GAUGE_HEADER]
    for i, lab in enumerate(g.space_tilde.labels):
        c = psi.amplitudes[i]
        lines.append(
            ",".join(
                [lab.encode(), fmt(c.real), fmt(c.imag), fmt(g.radial[i]), fmt(g.angles[i]),
                 fmt(g.probability_weights[i])]
            )
        )
    return "\n".join(lines) + "\n"
