"""Exit criteria. Each test records one PASS/FAIL line in the terminal summary."""

import filecmp
import itertools
import math
import time

import numpy as np
import pytest

from ontic.configspace import define_macropartition, new_config_space, uniform_space
from ontic.counting import (
    build_refinement,
    count_estimate,
    eigen_component_count,
    is_refinement_of,
    naive_branch_count,
    orbit_overcount_demo,
    refinement_sequence,
)
from ontic.dynamics import (
    LatticeModel,
    MeasurementSetup,
    build_lattice_hamiltonian,
    build_measurement_unitary,
    evolve,
    ground_state,
    random_hamiltonian,
)
from ontic.harness import bundled_configs, load_config, run, seeded_state
from ontic.selflocation import Protocol, collapse_comparator, run_branch_experiment
from ontic.state import absorb_phases, born_probability, from_amplitudes, reconstruct

N_STATES = 100


@pytest.fixture(scope="module")
def random_cases():
    """100 seeded states over 64 atoms, each with 4 macrostates of 16 scattered atoms."""
    space = uniform_space(64)
    cases = []
    for s in range(N_STATES):
        psi = seeded_state(space, 1000 + s)
        assignment = np.random.default_rng(s).permutation(np.repeat(np.arange(4), 16))
        cases.append((psi, define_macropartition(space, assignment.tolist())))
    return cases


def test_c01_exact_coincidence_uniform_state(criterion):
    t0 = time.perf_counter()
    devs = []
    for psi in (
        from_amplitudes(uniform_space(8, 0.125), np.ones(8)),
        from_amplitudes(uniform_space(8), np.full(8, 8 ** -0.5)),
    ):
        part = define_macropartition(psi.space, ["j"] * 3 + ["k"] * 5)
        rep = count_estimate(build_refinement(psi, part, 3), part)
        assert rep.estimates["j"] == 3 / 8
        devs.append(abs(rep.estimates["j"] - 3 / 8))
        devs.append(abs(rep.estimates["j"] - born_probability(psi, part)["j"]))
    elapsed = time.perf_counter() - t0
    ok = max(devs) < 1e-15 and elapsed < 1.0
    criterion("C1 exact 3/8 count", ok, f"max_dev={max(devs):.1e} time={elapsed:.3f}s")
    assert ok


def test_c02_convergence_to_born(criterion, random_cases):
    t0 = time.perf_counter()
    worst_ratio, worst24 = 0.0, 0.0
    for psi, part in random_cases:
        for ref in refinement_sequence(psi, part, 24):
            rep = count_estimate(ref, part)
            if ref.level <= 20:
                worst_ratio = max(worst_ratio, rep.max_deviation / rep.bound)
            else:
                assert rep.within_bound
        worst24 = max(worst24, rep.max_deviation)
    elapsed = time.perf_counter() - t0
    ok = worst_ratio <= 1.0 and worst24 <= 1e-6 and elapsed < 60.0
    criterion("C2 convergence to Born weights", ok,
              f"max dev/bound (n<=20)={worst_ratio:.3f} max dev n=24={worst24:.2e} time={elapsed:.1f}s")
    assert ok


def test_c03_refinement_structure(criterion, random_cases):
    worst_w = 0.0
    nested = True
    for psi, part in random_cases:
        prev = None
        for ref in refinement_sequence(psi, part, 20):
            w = ref.block_probability_weights()
            worst_w = max(worst_w, float(np.max(np.abs(w - 2.0 ** -ref.level))))
            if prev is not None:
                nested &= is_refinement_of(ref, prev)
            prev = ref
    ok = worst_w <= 1e-10 and nested
    criterion("C3 refinement structure", ok, f"max |block weight - 2^-n|={worst_w:.1e} nested={nested}")
    assert ok


def test_c04_scheme_discrimination(criterion):
    psi = from_amplitudes(uniform_space(2), [math.sqrt(0.9), math.sqrt(0.1)])
    part = define_macropartition(psi.space, ["A", "B"])
    naive = naive_branch_count(psi, part)
    eigen, _ = eigen_component_count(psi, part)
    rep = count_estimate(build_refinement(psi, part, 20), part)
    target = {"A": 0.9, "B": 0.1}
    dev = max(abs(rep.estimates[a] - target[a]) for a in target)
    ok = naive == {"A": 0.5, "B": 0.5} and eigen == {"A": 0.5, "B": 0.5} and dev <= 4 * 2**-20
    criterion("C4 scheme discrimination", ok, f"naive={naive} eigen={eigen} count dev={dev:.2e}")
    assert ok


def test_c05_orbit_overcount(criterion):
    space = uniform_space(8)
    amps = np.r_[np.full(4, math.sqrt(0.9 / 4)), np.full(4, math.sqrt(0.1 / 4))]
    psi = from_amplitudes(space, amps)
    part = define_macropartition(space, ["A"] * 4 + ["B"] * 4)
    t0 = time.perf_counter()
    rep = orbit_overcount_demo(psi, part, 100_000, seed=2023)
    elapsed = time.perf_counter() - t0
    dev = max(abs(w - 0.5) for w in rep.orbit_weight.values())
    born_ok = abs(rep.born["A"] - 0.9) <= 1e-12 and abs(rep.born["B"] - 0.1) <= 1e-12
    ok = dev <= 0.01 and born_ok and elapsed < 10.0
    criterion("C5 orbit overcounting witness", ok,
              f"orbit={rep.orbit_weight} born={rep.born} time={elapsed:.2f}s")
    assert ok


def test_c06_gauge_round_trip(criterion):
    space = new_config_space(range(16), np.linspace(0.2, 1.8, 16))
    part = define_macropartition(space, [i % 4 for i in range(16)])
    thetas = 2 * math.pi * np.arange(16) / 16 + 0.1
    worst_rt = worst_phase = 0.0
    for s in range(1000):
        psi = seeded_state(space, 77, stream=s)
        worst_rt = max(worst_rt, float(np.max(np.abs(reconstruct(absorb_phases(psi)).amplitudes - psi.amplitudes))))
        base = born_probability(psi, part)
        for t in thetas:
            rot = born_probability(psi.phased(t), part)
            worst_phase = max(worst_phase, max(abs(rot[a] - base[a]) for a in base))
    ok = worst_rt <= 1e-12 and worst_phase <= 1e-12
    criterion("C6 gauge round trip", ok, f"roundtrip={worst_rt:.1e} phase={worst_phase:.1e}")
    assert ok


def _e(d, i):
    v = np.zeros(d, dtype=complex)
    v[i] = 1
    return v


def test_c07_measurement_unitary(criterion):
    worst = 0.0
    for d in (2, 3, 4):
        rng = np.random.default_rng(d)
        q, _ = np.linalg.qr(rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
        U = build_measurement_unitary(MeasurementSetup(d, q))
        worst = max(worst, float(np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0])))))
        for j in range(d):
            out = U @ np.kron(q[:, j], _e(d + 1, 0))
            worst = max(worst, float(np.max(np.abs(out - np.kron(q[:, j], _e(d + 1, j + 1))))))
        psi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        psi /= np.linalg.norm(psi)
        rhs = sum(np.vdot(q[:, j], psi) * np.kron(q[:, j], _e(d + 1, j + 1)) for j in range(d))
        worst = max(worst, float(np.max(np.abs(U @ np.kron(psi, _e(d + 1, 0)) - rhs))))
    ok = worst <= 1e-12
    criterion("C7 measurement unitary", ok, f"max error={worst:.1e}")
    assert ok


def test_c08_self_location_statistics(criterion):
    qubit = from_amplitudes(uniform_space(2), [2 ** -0.5, 2 ** -0.5])
    _, rep = run_branch_experiment(qubit, Protocol.computational([2], [0]), 100_000, seed=99)
    single_ok = all(abs(w - 0.5) <= 1e-12 for w in rep.born.values()) and rep.within_sigma(3.0)
    amps = np.kron([math.sqrt(0.9), math.sqrt(0.1)], [2 ** -0.5, 2 ** -0.5])
    two = from_amplitudes(uniform_space(4), amps)
    cmp = collapse_comparator(two, Protocol.computational([2, 2], [0, 1]), 100_000, seed=100)
    ok = single_ok and cmp.agree(3.0)
    freqs = {k: rep.frequency(k) for k in rep.born}
    criterion("C8 self-location statistics", ok, f"qubit freqs={freqs} collapse-vs-MW agree={cmp.agree(3.0)}")
    assert ok


def test_c09_dynamics(criterion):
    rng = np.random.default_rng(12)
    H = random_hamiltonian(16, rng)
    psi = seeded_state(new_config_space(range(16), rng.random(16) + 0.5), 5)
    cur, drift = psi, 0.0
    for _ in range(100):
        cur = evolve(H, cur, 0.1)
        drift = max(drift, abs(math.sqrt(cur.norm_squared()) - 1.0))
    group = float(np.max(np.abs(evolve(H, evolve(H, psi, 0.6), 1.9).amplitudes - evolve(H, psi, 2.5).amplitudes)))

    model = LatticeModel(1, 33, mass=1.0, spacing=1.0, dphi=0.25)
    _, energy = ground_state(model)
    oracle = float(np.linalg.eigvalsh(build_lattice_hamiltonian(model).dense())[0])
    energy_ok = abs(energy - oracle) <= 1e-9 and abs(oracle - 0.5) <= 0.025

    M = build_lattice_hamiltonian(LatticeModel(2, 3)).dense()
    configs = list(itertools.product(range(3), repeat=2))
    pattern_ok = all(
        (M[i, j] != 0) == (sorted(abs(x - y) for x, y in zip(a, b)) == [0, 1])
        for i, a in enumerate(configs)
        for j, b in enumerate(configs)
        if i != j
    )
    ok = drift <= 1e-10 and group <= 1e-9 and energy_ok and pattern_ok
    criterion("C9 dynamics", ok,
              f"drift={drift:.1e} group={group:.1e} E0={energy:.6f} locality={pattern_ok}")
    assert ok


def test_c10_reproducibility(criterion, tmp_path):
    mismatches = []
    for path in bundled_configs():
        cfg = load_config(path)
        a, _ = run(cfg, tmp_path / "a" / path.stem)
        b, _ = run(cfg, tmp_path / "b" / path.stem)
        files = sorted(p.name for p in a.iterdir() if p.suffix in (".csv", ".txt"))
        _, bad, err = filecmp.cmpfiles(a, b, files, shallow=False)
        mismatches += [f"{path.stem}/{f}" for f in bad + err]
    ok = not mismatches
    criterion("C10 reproducibility", ok, f"{len(bundled_configs())} configs, mismatches={mismatches}")
    assert ok
