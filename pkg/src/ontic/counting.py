"""Counting ontic states: nested equal-weight refinements and rival counting schemes.

The refinement at level ``n`` cuts the probability weight ``r^2 mu`` of a state
into ``2**n`` blocks of equal weight. Atoms are laid end to end on the interval
``[0, total)`` in macrostate order, block ``k`` is ``[k*w, (k+1)*w)`` with
``w = total / 2**n``, and an atom straddling a block boundary is split
fractionally between the blocks it overlaps. Since ``w`` is a power-of-two
rescaling of ``total``, every level-n boundary is bit-for-bit a level-(n+1)
boundary, so each block is exactly the union of its two children.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .configspace import MacroPartition
from .errors import DimensionMismatch, InsufficientTrials, LevelTooDeep, SpaceMismatch, ZeroState
from .state import StateVector, born_probability

MAX_LEVEL = 30
SUPPORT_THRESHOLD = 1e-12


@dataclass(frozen=True, eq=False)
class RefinementPartition:
    level: int
    state: StateVector = field(repr=False)
    order: np.ndarray = field(repr=False)
    starts: np.ndarray = field(repr=False)
    ends: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    total: float = 1.0

    @property
    def n_blocks(self) -> int:
        return 1 << self.level

    @property
    def block_weight(self) -> float:
        return self.total / self.n_blocks

    def refine(self) -> "RefinementPartition":
        """The next level: every block cut in two halves of equal weight."""
        if self.level + 1 > MAX_LEVEL:
            raise LevelTooDeep(f"level {self.level + 1} exceeds {MAX_LEVEL}")
        return RefinementPartition(
            self.level + 1, self.state, self.order, self.starts, self.ends, self.weights, self.total
        )

    def block_ranges(self) -> tuple[np.ndarray, np.ndarray]:
        """First and last block touched by each atom, in blocking order."""
        w = self.block_weight
        last = self.n_blocks - 1
        lo = _block_at(self.starts, w, last)
        length = self.ends - self.starts
        hi = lo.copy()
        pos = length > 0
        hi[pos] = np.maximum(_last_block_before(self.ends[pos], w, last), lo[pos])
        return lo, hi

    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flat ``(block, atom, fraction)`` arrays sorted by block, then atom position."""
        w = self.block_weight
        lo, hi = self.block_ranges()
        counts = hi - lo + 1
        pos = np.repeat(np.arange(lo.size), counts)
        offs = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        blocks = lo[pos] + offs
        s, e = self.starts[pos], self.ends[pos]
        length = e - s
        overlap = np.minimum(e, (blocks + 1) * w) - np.maximum(s, blocks * w)
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(length > 0, overlap / length, 1.0)
        return blocks, self.order[pos], frac

    def block(self, k: int) -> list[tuple[int, float]]:
        lo, hi = self.block_ranges()
        w = self.block_weight
        out = []
        for j in np.flatnonzero((lo <= k) & (hi >= k)):
            s, e = self.starts[j], self.ends[j]
            if e > s:
                f = (min(e, (k + 1) * w) - max(s, k * w)) / (e - s)
            else:
                f = 1.0
            out.append((int(self.order[j]), float(f)))
        return out

    def blocks(self) -> list[list[tuple[int, float]]]:
        """Materialized block list; practical for small levels only."""
        b, a, f = self.entries()
        out: list[list[tuple[int, float]]] = [[] for _ in range(self.n_blocks)]
        for k, i, x in zip(b.tolist(), a.tolist(), f.tolist()):
            out[k].append((i, x))
        return out

    def block_probability_weights(self) -> np.ndarray:
        b, a, f = self.entries()
        return np.bincount(b, weights=f * self.weights[a], minlength=self.n_blocks)


def _block_at(x: np.ndarray, w: float, last: int) -> np.ndarray:
    """Index k with k*w <= x < (k+1)*w, clipped to [0, last]."""
    k = np.floor(x / w).astype(np.int64)
    k -= (k * w > x)
    k += ((k + 1) * w <= x)
    return np.clip(k, 0, last)


def _last_block_before(x: np.ndarray, w: float, last: int) -> np.ndarray:
    """Largest k with k*w < x."""
    k = np.ceil(x / w).astype(np.int64) - 1
    k -= (k * w >= x)
    k += ((k + 1) * w < x)
    return np.clip(k, 0, last)


def blocking_order(partition: MacroPartition) -> np.ndarray:
    """Atoms grouped by macrostate (in partition order), then by index."""
    return np.fromiter((i for idx in partition.macrostates.values() for i in idx), dtype=np.int64)


def build_refinement(psi: StateVector, partition: MacroPartition, n: int) -> RefinementPartition:
    if n < 0 or n > MAX_LEVEL:
        raise LevelTooDeep(f"level {n} outside [0, {MAX_LEVEL}]")
    if partition.size != psi.space.size:
        raise SpaceMismatch("partition does not cover the state's configuration space")
    p = psi.probability_weights
    if not np.any(p > 0):
        raise ZeroState("all probability weights vanish")
    order = blocking_order(partition)
    ends = np.cumsum(p[order])
    starts = np.concatenate(([0.0], ends[:-1]))
    for arr in (order, starts, ends):
        arr.setflags(write=False)
    return RefinementPartition(n, psi, order, starts, ends, p, float(ends[-1]))


def refinement_sequence(psi: StateVector, partition: MacroPartition, max_level: int):
    ref = build_refinement(psi, partition, 0)
    yield ref
    for _ in range(max_level):
        ref = ref.refine()
        yield ref


def is_refinement_of(fine: RefinementPartition, coarse: RefinementPartition, tol: float = 1e-10) -> bool:
    """True when every fine block sits inside one coarse block and children's fractions add up."""
    if fine.level != coarse.level + 1 or fine.state is not coarse.state:
        return False
    fb, fa, ff = fine.entries()
    cb, ca, cf = coarse.entries()
    n_atoms = fine.state.space.size
    perm = np.argsort(cb * n_atoms + ca, kind="stable")
    coarse_key = (cb * n_atoms + ca)[perm]
    child_key = (fb // 2) * n_atoms + fa
    idx = np.searchsorted(coarse_key, child_key)
    # every (parent block, atom) pair of a child must exist at the coarse level
    if np.any(idx >= coarse_key.size) or np.any(coarse_key[np.minimum(idx, coarse_key.size - 1)] != child_key):
        return False
    sums = np.bincount(idx, weights=ff, minlength=coarse_key.size)
    return bool(np.all(np.abs(sums - cf[perm]) <= tol))


# -- counting ----------------------------------------------------------------

@dataclass(frozen=True)
class CountReport:
    level: int
    counts: dict
    estimates: dict
    born: dict
    max_deviation: float
    bound: float

    @property
    def within_bound(self) -> bool:
        return self.max_deviation <= self.bound

    def rows(self):
        for alpha in self.counts:
            yield (
                self.level,
                alpha,
                self.counts[alpha],
                float(self.estimates[alpha]),
                float(self.born[alpha]),
                float(abs(self.estimates[alpha] - self.born[alpha])),
            )


COUNT_CSV_HEADER = ("level", "macrostate", "blocks_inside", "estimate", "born", "deviation")


def _merge(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1] + 1:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return out


def _overlap_size(a, b) -> int:
    i = j = total = 0
    while i < len(a) and j < len(b):
        lo = max(a[i][0], b[j][0])
        hi = min(a[i][1], b[j][1])
        if lo <= hi:
            total += hi - lo + 1
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return total


def blocks_inside(ref: RefinementPartition, partition: MacroPartition) -> dict:
    """Number of blocks all of whose member atoms lie in each macrostate."""
    lo, hi = ref.block_ranges()
    atom_macro = [partition.assignment[i] for i in ref.order.tolist()]
    per: dict = {a: [] for a in partition.macrostates}
    for j, a in enumerate(atom_macro):
        per[a].append((int(lo[j]), int(hi[j])))
    merged = {a: _merge(iv) for a, iv in per.items()}
    counts = {}
    for a in partition.macrostates:
        others = _merge([iv for b, ivs in per.items() if b != a for iv in ivs])
        touched = sum(h - l + 1 for l, h in merged[a])
        counts[a] = touched - _overlap_size(merged[a], others)
    return counts


def count_estimate(ref: RefinementPartition, partition: MacroPartition) -> CountReport:
    if partition.size != ref.state.space.size:
        raise SpaceMismatch("partition and refinement are over different spaces")
    counts = blocks_inside(ref, partition)
    scale = 1.0 / ref.n_blocks
    estimates = {a: c * scale for a, c in counts.items()}
    born = born_probability(ref.state, partition)
    dev = max(abs(estimates[a] - born[a]) for a in counts)
    bound = (len(counts) + 1) * scale
    return CountReport(ref.level, counts, estimates, born, dev, bound)


def naive_branch_count(
    psi: StateVector, partition: MacroPartition, threshold: float = SUPPORT_THRESHOLD
) -> dict:
    """Equal probability for every macrostate whose component has norm above ``threshold``."""
    born = born_probability(psi, partition)
    support = [a for a, p in born.items() if math.sqrt(p) > threshold]
    if not support:
        raise ZeroState("no macrostate carries amplitude")
    share = 1.0 / len(support)
    return {a: (share if a in support else 0.0) for a in born}


def eigen_component_count(
    psi: StateVector, partition: MacroPartition, threshold: float = SUPPORT_THRESHOLD
) -> tuple[dict, bool]:
    """Fraction of nonzero-amplitude atoms per macrostate, and whether their weights are uniform.

    Only when the flag is true does this coincide with the Born rule.
    """
    if partition.size != psi.space.size:
        raise SpaceMismatch("partition does not cover the state's configuration space")
    p = psi.probability_weights
    nonzero = np.sqrt(p) > threshold
    n = int(nonzero.sum())
    if n == 0:
        raise ZeroState("no atom carries amplitude")
    counts = {a: int(nonzero[list(idx)].sum()) / n for a, idx in partition.macrostates.items()}
    live = p[nonzero]
    uniform = bool(np.max(live) - np.min(live) <= 1e-10)
    return counts, uniform


# -- unitary-orbit overcounting ----------------------------------------------

@dataclass(frozen=True)
class OvercountReport:
    trials: int
    seed: int
    dimensions: dict
    orbit_weight: dict
    stderr: dict
    born: dict
    mean_overlap: dict

    def rows(self):
        for a in self.orbit_weight:
            yield (a, float(self.orbit_weight[a]), float(self.stderr[a]), float(self.born[a]))

    def orbit_uniform(self, tol: float | None = None) -> bool:
        tol = 3.0 / math.sqrt(self.trials) if tol is None else tol
        target = 1.0 / len(self.orbit_weight)
        return all(abs(w - target) <= tol for w in self.orbit_weight.values())


OVERCOUNT_CSV_HEADER = ("macrostate", "orbit_weight", "stderr", "born")


def generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based Philox generator keyed by ``(seed, stream)``."""
    return np.random.Generator(np.random.Philox(key=[int(seed) & (2**64 - 1), int(stream)]))


def orbit_overcount_demo(
    psi: StateVector, partition: MacroPartition, trials: int, seed: int, chunk: int = 1 << 16
) -> OvercountReport:
    """Count every unit vector of a macrostate subspace as a world and see what weights that gives.

    Each trial draws an independent standard complex Gaussian vector in every
    macrostate subspace H_a. Normalized, it is a uniform sample of the unitary
    orbit of the component direction P_a psi / |P_a psi| (the unit sphere of
    H_a); together the blocks form a Haar-random world over the union of the
    subspaces, which is attributed to the macrostate it lies closest to. The
    resulting weights depend on the subspace dimensions only, never on the
    amplitudes.
    """
    if trials < 100:
        raise InsufficientTrials(f"{trials} trials; at least 100 are required")
    dims = {a: len(idx) for a, idx in partition.macrostates.items()}
    if len(dims) < 2 or len(set(dims.values())) != 1:
        raise DimensionMismatch(f"orbit comparison needs >= 2 macrostates of equal dimension, got {dims}")
    born = born_probability(psi, partition)
    if any(p <= 0.0 for p in born.values()):
        raise ZeroState("every macrostate component must be nonzero")
    flat = np.sqrt(psi.space.weights) * psi.amplitudes
    ids = list(dims)
    units = [flat[list(partition.macrostates[a])] / math.sqrt(born[a]) for a in ids]
    d = dims[ids[0]]
    rng = generator(seed)
    wins = np.zeros(len(ids), dtype=np.int64)
    overlap_sum = np.zeros(len(ids))
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        g = rng.standard_normal((m, len(ids), d, 2)) @ np.array([1.0, 1.0j])
        norms = np.linalg.norm(g, axis=2)
        wins += np.bincount(np.argmax(norms, axis=1), minlength=len(ids))
        v = g / norms[:, :, None]
        for k, u in enumerate(units):
            overlap_sum[k] += np.sum(np.abs(v[:, k, :] @ u.conj()) ** 2)
        done += m
    weight = wins / trials
    return OvercountReport(
        trials,
        seed,
        dims,
        {a: float(weight[k]) for k, a in enumerate(ids)},
        {a: float(math.sqrt(weight[k] * (1 - weight[k]) / trials)) for k, a in enumerate(ids)},
        born,
        {a: float(overlap_sum[k] / trials) for k, a in enumerate(ids)},
    )
