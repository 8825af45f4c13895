"""Sequential pointer measurements, branch trees and self-location sampling.

The universe is a tensor over registers: the measured systems first, then a
pointer and an environment register appended by every measurement step. A
branch is identified by its path of pointer readings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import stats

from .configspace import ConfigSpace, new_config_space
from .counting import SUPPORT_THRESHOLD, generator
from .dynamics import MeasurementSetup, build_measurement_unitary
from .errors import DimensionMismatch, ZeroState
from .state import StateVector, _make


def sample_microstate(psi: StateVector, rng: np.random.Generator) -> int:
    """One atom index drawn with probability ``mu_i * |psi_i|**2``."""
    return int(sample_microstates(psi, rng, 1)[0])


def sample_microstates(psi: StateVector, rng: np.random.Generator, size: int) -> np.ndarray:
    return _sample_weights(psi.probability_weights, rng.random(size))


def _sample_weights(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    cdf = np.cumsum(p)
    total = cdf[-1]
    if not total > 0.0:
        raise ZeroState("all probability weights vanish")
    idx = np.searchsorted(cdf, u * total, side="right")
    return np.minimum(idx, p.size - 1)


@dataclass(frozen=True)
class MeasurementStep:
    target: int
    setup: MeasurementSetup


@dataclass(frozen=True)
class Protocol:
    register_dims: tuple[int, ...]
    steps: tuple[MeasurementStep, ...]

    def __post_init__(self):
        if not self.steps:
            raise DimensionMismatch("a protocol needs at least one measurement step")
        for k, st in enumerate(self.steps):
            if not 0 <= st.target < len(self.register_dims):
                raise DimensionMismatch(f"step {k} targets unknown register {st.target}")
            if st.setup.system_dim != self.register_dims[st.target]:
                raise DimensionMismatch(
                    f"step {k}: setup dimension {st.setup.system_dim} != register dimension "
                    f"{self.register_dims[st.target]}"
                )

    @classmethod
    def computational(cls, register_dims: Sequence[int], targets: Sequence[int], environment_dim: int = 1):
        dims = tuple(register_dims)
        bad = [t for t in targets if not 0 <= t < len(dims)]
        if bad:
            raise DimensionMismatch(f"targets {bad} name no register of {dims}")
        return cls(
            dims, tuple(MeasurementStep(t, MeasurementSetup.computational(dims[t], environment_dim)) for t in targets)
        )

    @property
    def system_size(self) -> int:
        return math.prod(self.register_dims)

    def outcomes(self, k: int) -> range:
        """Pointer readings (macrostate ids) a step can produce."""
        return range(1, self.steps[k].setup.pointer_dim)

    def shape_after(self, k: int) -> tuple[int, ...]:
        """Tensor shape after ``k`` steps."""
        shape = list(self.register_dims)
        for st in self.steps[:k]:
            shape += [st.setup.pointer_dim, st.setup.environment_dim]
        return tuple(shape)


def _initial_tensor(initial: StateVector, protocol: Protocol) -> np.ndarray:
    if initial.space.size != protocol.system_size:
        raise DimensionMismatch(
            f"state has {initial.space.size} atoms, registers span {protocol.system_size}"
        )
    flat = np.sqrt(initial.space.weights) * initial.amplitudes
    return flat.reshape(protocol.register_dims)


def apply_step(tensor: np.ndarray, step: MeasurementStep, unitary: np.ndarray | None = None) -> np.ndarray:
    """Append ready pointer and environment registers, then couple them to the target."""
    s = step.setup
    U = build_measurement_unitary(s) if unitary is None else unitary
    grown = np.zeros(tensor.shape + (s.pointer_dim, s.environment_dim), dtype=complex)
    grown[..., 0, 0] = tensor
    nd = grown.ndim
    U6 = U.reshape((s.system_dim, s.pointer_dim, s.environment_dim) * 2)
    out = np.tensordot(U6, grown, axes=([3, 4, 5], [step.target, nd - 2, nd - 1]))
    return np.moveaxis(out, [0, 1, 2], [step.target, nd - 2, nd - 1])


def project_pointer(tensor: np.ndarray, outcome: int) -> np.ndarray:
    """Macroprojector onto the newest pointer reading ``outcome``."""
    out = np.zeros_like(tensor)
    out[..., outcome, :] = tensor[..., outcome, :]
    return out


@dataclass
class BranchNode:
    path: tuple[int, ...]
    macrostate: int | None
    weight: float
    component: np.ndarray = field(repr=False)
    children: list["BranchNode"] = field(default_factory=list)

    @property
    def name(self) -> str:
        return path_name(self.path)


def path_name(path: tuple[int, ...]) -> str:
    return "/".join(str(j) for j in path) if path else "root"


@dataclass
class BranchTree:
    root: BranchNode
    protocol: Protocol
    final_weights: np.ndarray = field(repr=False)

    def nodes(self) -> Iterator[BranchNode]:
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            stack.extend(reversed(node.children))

    def leaves(self) -> list[BranchNode]:
        return [n for n in self.nodes() if not n.children]

    def leaf_weights(self) -> dict:
        return {n.path: n.weight for n in self.leaves()}

    def final_state(self) -> StateVector:
        """Sum of the leaf components: the unsplit evolved universe."""
        total = sum(leaf.component for leaf in self.leaves())
        space = _final_space(self.protocol, self.final_weights)
        return _make(space, total.reshape(-1) / np.sqrt(space.weights))

    def to_text(self) -> str:
        lines = []

        def walk(node, depth):
            label = "root" if node.macrostate is None else f"[{node.macrostate}]"
            lines.append(f"{'  ' * depth}{label} weight={node.weight:.17g}")
            for c in node.children:
                walk(c, depth + 1)

        walk(self.root, 0)
        return "\n".join(lines) + "\n"

    def edges(self):
        for node in self.nodes():
            for c in node.children:
                yield (node.name, c.name, c.macrostate, float(c.weight))


TREE_CSV_HEADER = ("parent", "child", "macrostate", "weight")


def _final_space(protocol: Protocol, system_weights: np.ndarray) -> ConfigSpace:
    rest = math.prod(protocol.shape_after(len(protocol.steps))[len(protocol.register_dims):])
    w = np.repeat(system_weights, rest)
    return new_config_space(range(w.size), w)


def build_branch_tree(initial: StateVector, protocol: Protocol, threshold: float = SUPPORT_THRESHOLD) -> BranchTree:
    """Apply each measurement to every live branch and split it by pointer reading.

    Children with component norm at or below ``threshold`` are dropped.
    """
    psi0 = _initial_tensor(initial, protocol)
    unitaries = [build_measurement_unitary(st.setup) for st in protocol.steps]
    root = BranchNode((), None, float(np.vdot(psi0, psi0).real), psi0)
    frontier = [root]
    for k, step in enumerate(protocol.steps):
        nxt = []
        for node in frontier:
            evolved = apply_step(node.component, step, unitaries[k])
            for j in protocol.outcomes(k):
                comp = project_pointer(evolved, j)
                w = float(np.vdot(comp, comp).real)
                if math.sqrt(w) > threshold:
                    child = BranchNode(node.path + (j,), j, w, comp)
                    node.children.append(child)
                    nxt.append(child)
        frontier = nxt
    return BranchTree(root, protocol, initial.space.weights)


def evolve_unsplit(initial: StateVector, protocol: Protocol) -> np.ndarray:
    """The full universe after all steps, with no branch bookkeeping."""
    psi = _initial_tensor(initial, protocol)
    for step in protocol.steps:
        psi = apply_step(psi, step)
    return psi


def decode_paths(protocol: Protocol, atoms: np.ndarray) -> np.ndarray:
    """Pointer readings (one column per step) of final-space atom indices."""
    shape = protocol.shape_after(len(protocol.steps))
    digits = np.unravel_index(atoms, shape)
    base = len(protocol.register_dims)
    return np.stack([digits[base + 2 * k] for k in range(len(protocol.steps))], axis=1)


def self_location_paths(final: StateVector, protocol: Protocol, trials: int, seed: int, stream: int = 0) -> np.ndarray:
    """Sample ``trials`` ontic microstates of the final universe and read their branch paths."""
    atoms = _sample_weights(final.probability_weights, generator(seed, stream).random(trials))
    return decode_paths(protocol, atoms)


def _tally(paths: np.ndarray) -> dict:
    uniq, counts = np.unique(paths, axis=0, return_counts=True)
    return {tuple(int(x) for x in row): int(c) for row, c in zip(uniq, counts)}


@dataclass(frozen=True)
class FrequencyReport:
    trials: int
    born: dict
    counts: dict
    chi2_pvalue: float

    def frequency(self, path) -> float:
        return self.counts.get(path, 0) / self.trials

    def stderr(self, path) -> float:
        p = self.born[path]
        return math.sqrt(p * (1.0 - p) / self.trials)

    def within_sigma(self, k: float = 3.0) -> bool:
        return all(abs(self.frequency(a) - p) <= k * self.stderr(a) for a, p in self.born.items())

    def rows(self):
        for path, p in self.born.items():
            yield (path_name(path), float(p), float(self.frequency(path)), float(self.stderr(path)))


FREQUENCY_CSV_HEADER = ("leaf_path", "born_weight", "frequency", "stderr")


def _chi2(counts: dict, born: dict, trials: int) -> float:
    live = [a for a, p in born.items() if p > 0]
    if len(live) < 2:
        return 1.0
    obs = np.array([counts.get(a, 0) for a in live], dtype=float)
    exp = np.array([born[a] for a in live]) * trials
    exp *= obs.sum() / exp.sum()
    return float(stats.chisquare(obs, exp).pvalue)


def run_branch_experiment(
    initial: StateVector, protocol: Protocol, trials: int, seed: int
) -> tuple[BranchTree, FrequencyReport]:
    tree = build_branch_tree(initial, protocol)
    final = tree.final_state()
    counts = _tally(self_location_paths(final, protocol, trials, seed))
    born = dict(sorted(tree.leaf_weights().items()))
    stray = set(counts) - set(born)
    if stray:
        # a sampled microstate outside every recorded branch would mean leaked weight
        raise ZeroState(f"sampled paths {sorted(stray)} carry no branch weight")
    return tree, FrequencyReport(trials, born, counts, _chi2(counts, born, trials))


# -- single-world collapse ----------------------------------------------------

def collapse_paths(initial: StateVector, protocol: Protocol, trials: int, seed: int, stream: int = 1) -> np.ndarray:
    """Single-world trajectories: measure, pick one reading by the Born rule, renormalize, go on.

    Conditional outcome probabilities are computed once per distinct history and
    reused across trials.
    """
    psi0 = _initial_tensor(initial, protocol)
    psi0 = psi0 / math.sqrt(np.vdot(psi0, psi0).real)
    unitaries = [build_measurement_unitary(st.setup) for st in protocol.steps]
    u = generator(seed, stream).random((trials, len(protocol.steps)))
    paths = np.zeros((trials, len(protocol.steps)), dtype=np.int64)
    states = {(): psi0}
    keys = np.zeros(trials, dtype=np.int64)  # index into `histories`
    histories = [()]
    for k, step in enumerate(protocol.steps):
        new_hist: dict = {}
        new_keys = np.empty(trials, dtype=np.int64)
        for h_idx, hist in enumerate(histories):
            sel = np.flatnonzero(keys == h_idx)
            if sel.size == 0:
                continue
            evolved = apply_step(states[hist], step, unitaries[k])
            outs = list(protocol.outcomes(k))
            comps = [project_pointer(evolved, j) for j in outs]
            probs = np.array([np.vdot(c, c).real for c in comps])
            pick = _sample_weights(probs, u[sel, k])
            for o in np.unique(pick):
                j = outs[o]
                h = hist + (j,)
                if h not in new_hist:
                    new_hist[h] = len(new_hist)
                    states[h] = comps[o] / math.sqrt(probs[o])
                rows = sel[pick == o]
                new_keys[rows] = new_hist[h]
                paths[rows, k] = j
        histories = list(new_hist)
        keys = new_keys
    return paths


@dataclass(frozen=True)
class ComparisonReport:
    trials: int
    born: dict
    collapse_counts: dict
    many_worlds_counts: dict

    def sigma(self, path) -> float:
        pooled = (self.collapse_counts.get(path, 0) + self.many_worlds_counts.get(path, 0)) / (2 * self.trials)
        return math.sqrt(pooled * (1 - pooled) * 2.0 / self.trials)

    def difference(self, path) -> float:
        return abs(self.collapse_counts.get(path, 0) - self.many_worlds_counts.get(path, 0)) / self.trials

    def agree(self, k: float = 3.0) -> bool:
        paths = set(self.born) | set(self.collapse_counts) | set(self.many_worlds_counts)
        return all(self.difference(p) <= k * self.sigma(p) for p in paths)

    def rows(self):
        for path, p in self.born.items():
            yield (
                path_name(path),
                float(p),
                float(self.collapse_counts.get(path, 0) / self.trials),
                float(self.many_worlds_counts.get(path, 0) / self.trials),
                float(self.sigma(path)),
                int(self.difference(path) <= 3.0 * self.sigma(path)),
            )


COMPARISON_CSV_HEADER = ("leaf_path", "born_weight", "collapse_frequency", "many_worlds_frequency", "sigma", "agree")


def collapse_comparator(initial: StateVector, protocol: Protocol, trials: int, seed: int) -> ComparisonReport:
    tree = build_branch_tree(initial, protocol)
    mw = _tally(self_location_paths(tree.final_state(), protocol, trials, seed, stream=0))
    col = _tally(collapse_paths(initial, protocol, trials, seed, stream=1))
    return ComparisonReport(trials, dict(sorted(tree.leaf_weights().items())), col, mw)
