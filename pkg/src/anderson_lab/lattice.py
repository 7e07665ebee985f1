"""Finite-box Anderson Hamiltonian: disorder sampling, diagonalization and
localization-center indexing."""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy.linalg import LinAlgError, eigh_tridiagonal

from .errors import ConvergenceFailure

# LAPACK drivers: MRRR (stemr) is O(n^2) for the full spectrum; stev is the
# classic implicit-shift QL/QR with eigenvector accumulation.
SOLVER_DRIVERS = {"mrrr": "stemr", "ql": "stev"}


@dataclass(frozen=True)
class ModelParams:
    box_size: int
    disorder: float
    boundary: Literal["open"] = "open"

    def __post_init__(self):
        if int(self.box_size) != self.box_size or self.box_size < 2:
            raise ValueError(f"box_size must be an integer >= 2, got {self.box_size}")
        if not np.isfinite(self.disorder) or self.disorder < 0:
            raise ValueError(f"disorder half-width must be >= 0, got {self.disorder}")
        if self.boundary != "open":
            raise ValueError(f"unsupported boundary {self.boundary!r}")

    @property
    def spectral_bound(self) -> float:
        """Upper bound on |E| for any realization."""
        return 2.0 + self.disorder


@dataclass(frozen=True, eq=False)
class DisorderRealization:
    params: ModelParams
    seed: int | None
    epsilon: np.ndarray

    def with_epsilon(self, epsilon: np.ndarray) -> "DisorderRealization":
        """Copy with a modified potential (used by sweeps and finite differences)."""
        eps = np.array(epsilon, dtype=float)
        eps.setflags(write=False)
        return DisorderRealization(self.params, None, eps)


def sample_disorder(params: ModelParams, seed: int) -> DisorderRealization:
    """Draw i.i.d. uniform on-site energies on [-W, W].

    The stream is a Philox counter-based generator keyed by ``seed``, so
    distinct seeds give independent streams and a given seed is bit-exact.
    """
    if not 0 <= seed < 2**64:
        raise ValueError("seed must be a 64-bit unsigned integer")
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    w = params.disorder
    eps = gen.uniform(-w, w, params.box_size) if w > 0 else np.zeros(params.box_size)
    eps.setflags(write=False)
    return DisorderRealization(params, int(seed), eps)


@dataclass(frozen=True)
class TridiagonalHamiltonian:
    """H = adjacency of the open chain + diag(epsilon)."""

    diagonal: np.ndarray

    @property
    def size(self) -> int:
        return self.diagonal.shape[0]

    @property
    def off_diagonal(self) -> np.ndarray:
        return np.ones(self.size - 1)

    @property
    def norm_inf(self) -> float:
        n = self.size
        row = np.abs(self.diagonal) + 2.0
        row[0] -= 1.0
        row[n - 1] -= 1.0
        return float(row.max())

    def apply(self, psi: np.ndarray) -> np.ndarray:
        psi = np.asarray(psi, dtype=float)
        out = self.diagonal.reshape((-1,) + (1,) * (psi.ndim - 1)) * psi
        out[:-1] += psi[1:]
        out[1:] += psi[:-1]
        return out

    def to_dense(self) -> np.ndarray:
        return (
            np.diag(self.diagonal)
            + np.diag(self.off_diagonal, 1)
            + np.diag(self.off_diagonal, -1)
        )


def build_hamiltonian(r: DisorderRealization | np.ndarray) -> TridiagonalHamiltonian:
    eps = r.epsilon if isinstance(r, DisorderRealization) else np.asarray(r, dtype=float)
    return TridiagonalHamiltonian(np.array(eps, dtype=float))


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """Full eigensystem; ``vectors[:, n]`` is the state with energy ``energies[n]``.

    ``center_of[x]`` is the spectral index assigned to site x and
    ``site_of[n]`` its inverse. ``collisions`` counts states whose assigned
    center differs from their raw argmax.
    """

    energies: np.ndarray
    vectors: np.ndarray
    center_of: np.ndarray
    site_of: np.ndarray
    residual_tol: float
    max_residual: float
    collisions: int
    epsilon: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.energies.shape[0]

    def index_at(self, site: int) -> int:
        from .errors import MissingCenter

        if not 0 <= site < self.size or self.center_of[site] < 0:
            raise MissingCenter(site)
        return int(self.center_of[site])

    def energy_at(self, site: int) -> float:
        return float(self.energies[self.index_at(site)])

    def vector_at(self, site: int) -> np.ndarray:
        return self.vectors[:, self.index_at(site)]


def localization_center(vector: np.ndarray) -> int:
    """Site of maximal |psi|^2; ties go to the smallest site."""
    return int(np.argmax(np.abs(np.asarray(vector)) ** 2))


def index_by_center(vectors: np.ndarray) -> np.ndarray:
    """Greedy bijection between eigenvectors (columns) and sites.

    Pairs (weight, spectral index, site) are consumed in order of decreasing
    weight |psi_n(x)|^2, then increasing index, then increasing site; a pair is
    accepted when both its state and its site are still free. Returns
    ``site_of`` with ``site_of[n]`` the center of state n.

    Each state only walks down its own sorted weight list when its current
    best site is already taken, which is equivalent to sorting all n^2 pairs.
    """
    weights = np.asarray(vectors, dtype=float) ** 2
    n_sites, n_states = weights.shape
    if n_states > n_sites:
        raise ValueError("more states than sites")
    best = np.argmax(weights, axis=0)
    heap = [(-weights[best[n], n], n, int(best[n])) for n in range(n_states)]
    heapq.heapify(heap)
    taken = np.zeros(n_sites, dtype=bool)
    site_of = np.full(n_states, -1, dtype=np.int64)
    orders: dict[int, np.ndarray] = {}
    rank = np.zeros(n_states, dtype=np.int64)
    while heap:
        _, n, x = heapq.heappop(heap)
        if not taken[x]:
            taken[x] = True
            site_of[n] = x
            continue
        order = orders.get(n)
        if order is None:
            order = np.argsort(-weights[:, n], kind="stable")
            orders[n] = order
        rank[n] += 1
        nxt = int(order[rank[n]])
        heapq.heappush(heap, (-weights[nxt, n], n, nxt))
    return site_of


def default_tolerance(eps: np.ndarray) -> float:
    return 1e-10 * build_hamiltonian(eps).norm_inf


def diagonalize(
    r: DisorderRealization | np.ndarray,
    tol: float | None = None,
    solver: str = "mrrr",
) -> SpectralDecomposition:
    """Complete eigendecomposition with residual check and center indexing.

    Eigenvectors are signed so that their amplitude at the raw argmax site is
    positive. Raises ConvergenceFailure(index) for the first pair whose
    residual max|H psi - E psi| exceeds ``tol`` (default 1e-10 * ||H||_inf).
    """
    eps = r.epsilon if isinstance(r, DisorderRealization) else np.asarray(r, dtype=float)
    eps = np.array(eps, dtype=float)
    if tol is None:
        tol = default_tolerance(eps)
    if tol <= 0:
        raise ValueError("tol must be positive")
    try:
        driver = SOLVER_DRIVERS[solver]
    except KeyError:
        raise ValueError(f"unknown solver {solver!r}") from None

    n = eps.shape[0]
    try:
        energies, vectors = eigh_tridiagonal(eps, np.ones(n - 1), lapack_driver=driver)
    except LinAlgError as exc:
        raise ConvergenceFailure(-1) from exc

    peak = np.argmax(np.abs(vectors), axis=0)
    signs = np.sign(vectors[peak, np.arange(n)])
    signs[signs == 0] = 1.0
    vectors = vectors * signs

    h = build_hamiltonian(eps)
    residuals = np.abs(h.apply(vectors) - vectors * energies).max(axis=0)
    bad = np.flatnonzero(~(residuals <= tol))
    if bad.size:
        raise ConvergenceFailure(int(bad[0]), float(residuals[bad[0]]))

    site_of = index_by_center(vectors)
    center_of = np.empty(n, dtype=np.int64)
    center_of[site_of] = np.arange(n)
    collisions = int(np.count_nonzero(site_of != peak))

    for arr in (energies, vectors, center_of, site_of, eps):
        arr.setflags(write=False)
    return SpectralDecomposition(
        energies=energies,
        vectors=vectors,
        center_of=center_of,
        site_of=site_of,
        residual_tol=float(tol),
        max_residual=float(residuals.max()),
        collisions=collisions,
        epsilon=eps,
    )


def eigenvalues(r: DisorderRealization | np.ndarray) -> np.ndarray:
    """Eigenvalues only (no vectors, no center indexing)."""
    eps = r.epsilon if isinstance(r, DisorderRealization) else np.asarray(r, dtype=float)
    try:
        return eigh_tridiagonal(
            np.asarray(eps, dtype=float), np.ones(len(eps) - 1), eigvals_only=True,
            lapack_driver="stemr",
        )
    except LinAlgError as exc:
        raise ConvergenceFailure(-1) from exc


def sturm_count(diagonal: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Number of eigenvalues strictly below each entry of x (unit hopping)."""
    x = np.asarray(x, dtype=float)
    count = np.zeros(x.shape, dtype=np.int64)
    q = np.ones_like(x)
    tiny = np.finfo(float).tiny * 1e3
    for k, d in enumerate(diagonal):
        q = (d - x) - (0.0 if k == 0 else 1.0 / q)
        q = np.where(q == 0.0, -tiny, q)
        count += q < 0
    return count


def bisection_eigenvalues(diagonal: np.ndarray, xtol: float = 1e-13) -> np.ndarray:
    """Independent eigenvalue oracle: Sturm-sequence bisection, all levels at once."""
    d = np.asarray(diagonal, dtype=float)
    n = d.shape[0]
    bound = np.abs(d).max() + 2.0
    lo = np.full(n, -bound)
    hi = np.full(n, bound)
    k = np.arange(n)
    while np.max(hi - lo) > xtol:
        mid = 0.5 * (lo + hi)
        if np.all((mid == lo) | (mid == hi)):
            break  # interval widths at machine resolution
        below = sturm_count(d, mid) > k
        hi = np.where(below, mid, hi)
        lo = np.where(below, lo, mid)
    return 0.5 * (lo + hi)


def free_chain_energies(n: int) -> np.ndarray:
    """Closed-form open-chain spectrum 2 cos(k pi / (n + 1)), ascending."""
    k = np.arange(n, 0, -1)
    return 2.0 * np.cos(k * np.pi / (n + 1))
