"""Unitary evolution, pointer-measurement unitaries and a lattice scalar field.

Matrices act on the flat frame ``sqrt(mu_i) * psi_i`` so that a unitary matrix
preserves the measure-weighted norm of a :class:`~ontic.state.StateVector`.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._textio import fmt
from .configspace import ConfigSpace, new_config_space
from .errors import CapExceeded, DimensionMismatch, NonHermitian, NonOrthonormalEigenbasis
from .state import StateVector, _make

HERMITIAN_TOL = 1e-12
DENSE_CAP = 4096
LATTICE_CAP = 65536


@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """Hermitian matrix, dense ndarray or scipy sparse, in units with hbar = 1."""

    matrix: np.ndarray | sp.spmatrix

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"Hamiltonian must be square, got shape {m.shape}")
        r = hermiticity_residual(m)
        if r > HERMITIAN_TOL:
            raise NonHermitian(f"max |H_ij - conj(H_ji)| = {r:.3e}")

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else np.asarray(self.matrix)


def hermiticity_residual(m) -> float:
    if sp.issparse(m):
        d = (m - m.conj().T).tocoo()
        return float(np.max(np.abs(d.data), initial=0.0))
    m = np.asarray(m)
    return float(np.max(np.abs(m - m.conj().T), initial=0.0))


def evolve(H: HamiltonianMatrix, psi: StateVector, t: float) -> StateVector:
    """``exp(-i t H) psi``.

    Dense eigendecomposition up to ``DENSE_CAP``; larger sparse matrices use the
    scaled truncated-Taylor action of scipy's ``expm_multiply``.
    """
    if H.dimension != psi.space.size:
        raise DimensionMismatch(f"H has dimension {H.dimension}, state has {psi.space.size} atoms")
    if t == 0.0:
        return psi
    sq = np.sqrt(psi.space.weights)
    flat = sq * psi.amplitudes
    if H.dimension <= DENSE_CAP:
        E, V = _eigh(H)
        out = V @ (np.exp(-1j * t * E) * (V.conj().T @ flat))
    else:
        out = spla.expm_multiply(-1j * t * sp.csr_matrix(H.matrix), flat)
    return _make(psi.space, out / sq)


def _eigh(H: HamiltonianMatrix):
    # cached per matrix object: composed steps reuse one decomposition
    cached = H.__dict__.get("_eig")
    if cached is None:
        cached = scipy.linalg.eigh(H.dense())
        object.__setattr__(H, "_eig", cached)
    return cached


def random_hamiltonian(d: int, rng: np.random.Generator) -> HamiltonianMatrix:
    a = rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))
    return HamiltonianMatrix((a + a.conj().T) / 2.0)


# -- measurement interaction --------------------------------------------------

@dataclass(frozen=True, eq=False)
class MeasurementSetup:
    """System of dimension d measured in ``eigenbasis`` (columns) by a pointer with d+1 states.

    Pointer state 0 is "ready"; eigenvector j (0-based) drives the pointer to state j+1.
    """

    system_dim: int
    eigenbasis: np.ndarray
    environment_dim: int = 1

    def __post_init__(self):
        b = np.asarray(self.eigenbasis, dtype=complex)
        if b.shape != (self.system_dim, self.system_dim):
            raise NonOrthonormalEigenbasis(
                f"eigenbasis shape {b.shape} does not match system_dim {self.system_dim}"
            )
        err = np.max(np.abs(b.conj().T @ b - np.eye(self.system_dim)))
        if err > 1e-10:
            raise NonOrthonormalEigenbasis(f"eigenbasis Gram error {err:.3e}")
        if self.environment_dim < 1:
            raise DimensionMismatch("environment_dim must be >= 1")
        object.__setattr__(self, "eigenbasis", b)

    @property
    def pointer_dim(self) -> int:
        return self.system_dim + 1

    @property
    def pointer_ready_index(self) -> int:
        return 0

    @property
    def dimension(self) -> int:
        return self.system_dim * self.pointer_dim * self.environment_dim

    @classmethod
    def computational(cls, d: int, environment_dim: int = 1) -> "MeasurementSetup":
        return cls(d, np.eye(d), environment_dim)


def pointer_shift(pointer_dim: int, k: int) -> np.ndarray:
    """Cyclic permutation |i> -> |i+k mod pointer_dim>."""
    return np.roll(np.eye(pointer_dim), k, axis=0)


def build_measurement_unitary(setup: MeasurementSetup) -> np.ndarray:
    """U on system (x) pointer (x) environment with U |psi_j, ready, e> = |psi_j, j+1, e>.

    Off the ready sector the pointer is completed by the same cyclic shift, which
    keeps U a permutation within each eigen-sector.
    """
    d, p, e = setup.system_dim, setup.pointer_dim, setup.environment_dim
    B = setup.eigenbasis
    U = np.zeros((d * p * e, d * p * e), dtype=complex)
    eye_e = np.eye(e)
    for j in range(d):
        proj = np.outer(B[:, j], B[:, j].conj())
        U += np.kron(np.kron(proj, pointer_shift(p, j + 1)), eye_e)
    return U


# -- lattice scalar field -----------------------------------------------------

@dataclass(frozen=True)
class LatticeModel:
    """Free scalar field on a periodic 1D lattice of ``sites`` points.

    Each site's field value takes ``bins`` values on a grid symmetric about zero
    with spacing ``dphi``.
    """

    sites: int
    bins: int
    mass: float = 1.0
    spacing: float = 1.0
    dphi: float = 0.25
    cap: int = LATTICE_CAP

    def __post_init__(self):
        if self.sites < 1 or self.bins < 1:
            raise ValueError("sites and bins must be positive")
        if self.mass < 0 or self.spacing <= 0 or self.dphi <= 0:
            raise ValueError("mass must be >= 0; spacing and dphi > 0")

    @property
    def n_configs(self) -> int:
        return self.bins ** self.sites

    def field_values(self) -> np.ndarray:
        return (np.arange(self.bins) - (self.bins - 1) / 2.0) * self.dphi

    def _check(self, cap: int) -> None:
        if self.n_configs > cap:
            raise CapExceeded(f"{self.bins}^{self.sites} = {self.n_configs} configurations exceeds cap {cap}")

    def config_space(self) -> ConfigSpace:
        self._check(self.cap)
        grid = self.field_values()
        labels = [tuple(grid[k] for k in ks) for ks in itertools.product(range(self.bins), repeat=self.sites)]
        return new_config_space(labels, np.full(self.n_configs, self.dphi ** self.sites))


def build_lattice_hamiltonian(model: LatticeModel) -> HamiltonianMatrix:
    """Sparse H = sum_x [pi_x^2/(2a) + a((phi_{x+1}-phi_x)^2/(2a^2) + m^2 phi_x^2/2)].

    ``pi_x^2`` is the three-point second difference in the field value at site x,
    with reflecting ends; configuration indices are row-major over sites.
    """
    model._check(model.cap)
    N, m, a = model.sites, model.bins, model.spacing
    n = model.n_configs
    grid = model.field_values()
    digits = np.array(np.unravel_index(np.arange(n), (m,) * N))  # (N, n)
    phi = grid[digits]

    potential = 0.5 * a * model.mass ** 2 * np.sum(phi ** 2, axis=0)
    if N > 1:
        grad = (np.roll(phi, -1, axis=0) - phi) / a
        potential += 0.5 * a * np.sum(grad ** 2, axis=0)

    kin = 1.0 / (2.0 * a * model.dphi ** 2)
    diag = potential.copy()
    rows, cols, vals = [], [], []
    stride = m ** np.arange(N - 1, -1, -1)
    for x in range(N):
        k = digits[x]
        # reflecting boundary: the missing neighbour mirrors the edge bin
        neighbours = (k > 0).astype(float) + (k < m - 1).astype(float)
        diag += kin * neighbours
        up = np.flatnonzero(k < m - 1)
        rows.append(up)
        cols.append(up + stride[x])
        vals.append(np.full(up.size, -kin))
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    v = np.concatenate(vals)
    off = sp.coo_matrix((v, (r, c)), shape=(n, n))
    H = (off + off.T + sp.diags(diag)).tocsr().astype(complex)
    return HamiltonianMatrix(H)


def ground_state(model: LatticeModel, cap: int = DENSE_CAP) -> tuple[StateVector, float]:
    """Lowest eigenpair of the lattice Hamiltonian, as a normalized state and its energy.

    The sign is fixed so the largest-magnitude amplitude is real and positive.
    """
    model._check(cap)
    H = build_lattice_hamiltonian(model)
    E, V = scipy.linalg.eigh(H.dense().real, subset_by_index=[0, 0])
    v = V[:, 0]
    k = int(np.argmax(np.abs(v)))
    v = v * np.sign(v[k])
    space = model.config_space()
    return _make(space, v / np.sqrt(space.weights)), float(E[0])


def rayleigh_quotient(H: HamiltonianMatrix, psi: StateVector) -> float:
    flat = np.sqrt(psi.space.weights) * psi.amplitudes
    return float(np.real(np.vdot(flat, H.matrix @ flat)) / np.real(np.vdot(flat, flat)))


def dumps_hamiltonian(H: HamiltonianMatrix) -> str:
    """Coordinate list: one ``row,col,re,im`` line per stored nonzero."""
    coo = sp.coo_matrix(H.matrix)
    order = np.lexsort((coo.col, coo.row))
    lines = ["row,col,re,im"]
    for i in order:
        z = complex(coo.data[i])
        if z != 0:
            lines.append(f"{coo.row[i]},{coo.col[i]},{fmt(z.real)},{fmt(z.imag)}")
    return "\n".join(lines) + "\n"


def loads_hamiltonian(text: str, dimension: int) -> HamiltonianMatrix:
    rows = [ln for ln in text.splitlines()[1:] if ln.strip()]
    r, c, v = [], [], []
    for ln in rows:
        i, j, re_, im_ = ln.split(",")
        r.append(int(i))
        c.append(int(j))
        v.append(complex(float(re_), float(im_)))
    return HamiltonianMatrix(sp.coo_matrix((v, (r, c)), shape=(dimension, dimension)).tocsr())


def schmidt_rank(vec: np.ndarray, dims: tuple[int, int], tol: float = 1e-10) -> int:
    """Rank of the reduced density matrix of the first factor of a bipartite vector."""
    s = np.linalg.svd(np.asarray(vec).reshape(dims), compute_uv=False)
    return int(np.sum(s ** 2 > tol))

