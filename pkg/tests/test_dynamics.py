import itertools
import math

import numpy as np
import pytest
import scipy.linalg

from ontic.configspace import define_macropartition, new_config_space, uniform_space
from ontic.dynamics import (
    HamiltonianMatrix,
    LatticeModel,
    MeasurementSetup,
    build_lattice_hamiltonian,
    build_measurement_unitary,
    dumps_hamiltonian,
    evolve,
    ground_state,
    loads_hamiltonian,
    random_hamiltonian,
    rayleigh_quotient,
    schmidt_rank,
)
from ontic.errors import CapExceeded, DimensionMismatch, NonHermitian, NonOrthonormalEigenbasis
from ontic.harness import seeded_state
from ontic.state import from_amplitudes


def _norm(psi):
    return math.sqrt(psi.norm_squared())


def test_evolve_identity_and_diagonal():
    space = uniform_space(3)
    psi = seeded_state(space, 2)
    H = HamiltonianMatrix(np.diag([0.5, -1.0, 2.0]).astype(complex))
    assert evolve(H, psi, 0.0) is psi
    out = evolve(H, psi, 0.7)
    expected = psi.amplitudes * np.exp(-1j * np.array([0.5, -1.0, 2.0]) * 0.7)
    assert np.max(np.abs(out.amplitudes - expected)) <= 1e-14


def test_evolve_against_independent_oracles():
    rng = np.random.default_rng(3)
    H = random_hamiltonian(12, rng)
    space = new_config_space(range(12), rng.random(12) + 0.2)
    psi = seeded_state(space, 5)
    out = evolve(H, psi, 0.37)
    sq = np.sqrt(space.weights)
    # eigendecomposition oracle with numpy's solver, and a Pade matrix exponential
    E, V = np.linalg.eigh(H.matrix)
    eig = V @ np.diag(np.exp(-0.37j * E)) @ V.conj().T @ (sq * psi.amplitudes) / sq
    pade = scipy.linalg.expm(-0.37j * H.matrix) @ (sq * psi.amplitudes) / sq
    assert np.max(np.abs(out.amplitudes - eig)) <= 1e-9
    assert np.max(np.abs(out.amplitudes - pade)) <= 1e-9


def test_norm_and_group_law():
    rng = np.random.default_rng(9)
    H = random_hamiltonian(10, rng)
    psi = seeded_state(uniform_space(10), 1)
    for t in np.linspace(-10, 10, 21):
        assert abs(_norm(evolve(H, psi, float(t))) - 1.0) <= 1e-10
    a = evolve(H, evolve(H, psi, 0.4), 1.3)
    b = evolve(H, psi, 1.7)
    assert np.max(np.abs(a.amplitudes - b.amplitudes)) <= 1e-9


def test_sparse_fallback_matches_dense(monkeypatch):
    import ontic.dynamics as dyn

    model = LatticeModel(2, 7, dphi=0.5)
    H = build_lattice_hamiltonian(model)
    psi = seeded_state(model.config_space(), 4)
    dense = evolve(H, psi, 0.3)
    monkeypatch.setattr(dyn, "DENSE_CAP", 1)
    sparse = evolve(HamiltonianMatrix(H.matrix), psi, 0.3)
    assert np.max(np.abs(dense.amplitudes - sparse.amplitudes)) <= 1e-9
    assert abs(_norm(sparse) - 1.0) <= 1e-10


def test_evolve_errors():
    with pytest.raises(NonHermitian):
        HamiltonianMatrix(np.array([[0, 1], [0, 0]], dtype=complex))
    with pytest.raises(DimensionMismatch):
        evolve(HamiltonianMatrix(np.eye(3)), seeded_state(uniform_space(2), 0), 1.0)


def _ket(*factors):
    out = np.array([1.0 + 0j])
    for f in factors:
        out = np.kron(out, f)
    return out


def _e(d, i):
    v = np.zeros(d, dtype=complex)
    v[i] = 1
    return v


@pytest.mark.parametrize("d", [2, 3, 4])
@pytest.mark.parametrize("env", [1, 2])
def test_measurement_unitary(d, env):
    rng = np.random.default_rng(d * 10 + env)
    q, _ = np.linalg.qr(rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))
    setup = MeasurementSetup(d, q, env)
    U = build_measurement_unitary(setup)
    assert np.max(np.abs(U.conj().T @ U - np.eye(U.shape[0]))) <= 1e-12
    for j in range(d):
        for e in range(env):
            out = U @ _ket(q[:, j], _e(d + 1, 0), _e(env, e))
            assert np.max(np.abs(out - _ket(q[:, j], _e(d + 1, j + 1), _e(env, e)))) <= 1e-12
    psi = rng.standard_normal(d) + 1j * rng.standard_normal(d)
    psi /= np.linalg.norm(psi)
    out = U @ _ket(psi, _e(d + 1, 0), _e(env, 0))
    rhs = sum(np.vdot(q[:, j], psi) * _ket(q[:, j], _e(d + 1, j + 1), _e(env, 0)) for j in range(d))
    assert np.max(np.abs(out - rhs)) <= 1e-12
    # system entangles with pointer (x) environment in exactly as many terms as nonzero components
    assert schmidt_rank(out, (d, (d + 1) * env)) == d


def test_measurement_qubit_examples():
    U = build_measurement_unitary(MeasurementSetup.computational(2))
    assert np.allclose(U @ _ket(_e(2, 0), _e(3, 0)), _ket(_e(2, 0), _e(3, 1)))
    plus = (_e(2, 0) + _e(2, 1)) / math.sqrt(2)
    expect = (_ket(_e(2, 0), _e(3, 1)) + _ket(_e(2, 1), _e(3, 2))) / math.sqrt(2)
    assert np.max(np.abs(U @ _ket(plus, _e(3, 0)) - expect)) <= 1e-15
    # partial support: only one nonzero component, no entanglement
    assert schmidt_rank(U @ _ket(_e(2, 1), _e(3, 0)), (2, 3)) == 1


def test_measurement_setup_rejects_bad_basis():
    with pytest.raises(NonOrthonormalEigenbasis):
        MeasurementSetup(2, np.array([[1, 1], [0, 1]]))
    with pytest.raises(NonOrthonormalEigenbasis):
        MeasurementSetup(3, np.eye(2))


def test_lattice_small_hermitian():
    H = build_lattice_hamiltonian(LatticeModel(2, 3))
    assert H.dimension == 9
    M = H.dense()
    assert np.max(np.abs(M - M.conj().T)) <= 1e-14


def test_lattice_locality_exhaustive():
    model = LatticeModel(2, 3)
    M = build_lattice_hamiltonian(model).dense()
    configs = list(itertools.product(range(3), repeat=2))
    for i, a in enumerate(configs):
        for j, b in enumerate(configs):
            if i == j:
                continue
            diff = [abs(x - y) for x, y in zip(a, b)]
            neighbour = sorted(diff) == [0, 1]
            assert (M[i, j] != 0) == neighbour, (a, b)
    degree = np.count_nonzero(M - np.diag(np.diag(M)), axis=1)
    assert degree.max() <= 2 * model.sites


def test_lattice_harmonic_ground_energy():
    model = LatticeModel(1, 33, mass=1.0, spacing=1.0, dphi=0.25)
    psi, energy = ground_state(model)
    oracle = np.linalg.eigvalsh(build_lattice_hamiltonian(model).dense())[0]
    assert abs(energy - oracle) <= 1e-9
    assert abs(energy - 0.5) <= 0.05 * 0.5
    # parity: the ground state is symmetric under phi -> -phi
    assert np.max(np.abs(psi.amplitudes - psi.amplitudes[::-1])) <= 1e-8
    assert np.all(psi.amplitudes.real > 0)


def test_ground_state_eigenpair():
    model = LatticeModel(2, 5, dphi=0.5)
    H = build_lattice_hamiltonian(model)
    psi, energy = ground_state(model)
    assert abs(_norm(psi) - 1.0) <= 1e-12
    flat = np.sqrt(psi.space.weights) * psi.amplitudes
    assert np.linalg.norm(H.matrix @ flat - energy * flat) <= 1e-8
    assert abs(rayleigh_quotient(H, psi) - energy) <= 1e-8
    assert abs(energy - scipy.linalg.eigvalsh(H.dense())[0]) <= 1e-9


def test_caps():
    with pytest.raises(CapExceeded):
        build_lattice_hamiltonian(LatticeModel(3, 41))
    with pytest.raises(CapExceeded):
        ground_state(LatticeModel(2, 65))


def test_hamiltonian_coo_round_trip():
    H = build_lattice_hamiltonian(LatticeModel(2, 4))
    back = loads_hamiltonian(dumps_hamiltonian(H), H.dimension)
    assert np.array_equal(back.dense(), H.dense())


def test_lattice_space_matches_configs():
    model = LatticeModel(2, 4, dphi=0.5)
    space = model.config_space()
    assert space.size == model.n_configs == 16
    assert space.labels[1].field == (-0.75, -0.25)
