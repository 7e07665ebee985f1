"""Inverse localization length gamma(E): transfer matrices, density of states,
and the Thouless log-integral over the density of states."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal

import numba
import numpy as np

from .errors import DegenerateDirection, EmptyEnsemble
from .lattice import ModelParams, SpectralDecomposition
from .seeding import realization_seed

DEFAULT_RENORM_INTERVAL = 32
DEFAULT_BIN_WIDTH = 0.02
EDGE_MASS = (0.01, 0.99)


@dataclass(frozen=True, eq=False)
class DosEstimate:
    bin_edges: np.ndarray
    density: np.ndarray
    cumulative: np.ndarray
    sup_density: float
    sample_count: int

    @property
    def bin_width(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    @property
    def mass(self) -> np.ndarray:
        return self.density * self.bin_width

    def integrated(self, energy: float | np.ndarray) -> np.ndarray:
        """Integrated DOS N(E), linear inside bins."""
        cum = np.concatenate([[0.0], self.cumulative])
        return np.interp(energy, self.bin_edges, cum)


@dataclass(frozen=True, eq=False)
class LyapunovCurve:
    energies: np.ndarray
    gamma: np.ndarray
    stderr: np.ndarray
    method: Literal["transfer", "thouless"]
    batch_rates: np.ndarray | None = None

    @property
    def gamma_min(self) -> float:
        return float(np.min(self.gamma))

    @property
    def gamma_max(self) -> float:
        return float(np.max(self.gamma))

    def __call__(self, energy):
        """gamma at arbitrary energies by linear interpolation (clamped at the ends)."""
        return np.interp(energy, self.energies, self.gamma)

    def derivative(self) -> np.ndarray:
        """Finite-difference d gamma / dE on the grid (diagnostic only)."""
        return np.gradient(self.gamma, self.energies)


@numba.njit(cache=True)
def _transfer_kernel(energy, eps, u0, u1, warmup, renorm_every, n_batches):
    """Iterate T_x = [[E - eps_x, -1], [1, 0]] over eps.

    The first ``warmup`` steps only align the direction. The remaining steps
    are split into ``n_batches`` equal batches; returns the log-growth of each
    batch. Returns an empty array if the iterate degenerates.
    """
    n = eps.shape[0]
    steps = n - warmup
    per_batch = steps // n_batches
    out = np.zeros(n_batches)
    a = u0
    b = u1
    acc = 0.0
    batch = -1
    since = 0
    for x in range(n):
        if x >= warmup and (x - warmup) % per_batch == 0:
            nb = (x - warmup) // per_batch
            if nb < n_batches:
                # flush before starting a new batch
                norm = math.sqrt(a * a + b * b)
                if not (norm > 0.0) or not math.isfinite(norm):
                    return np.zeros(0)
                if batch >= 0:
                    out[batch] = acc + math.log(norm)
                a /= norm
                b /= norm
                acc = 0.0
                batch = nb
                since = 0
        na = (energy - eps[x]) * a - b
        b = a
        a = na
        since += 1
        if since == renorm_every:
            norm = math.sqrt(a * a + b * b)
            if not (norm > 1e-280) or not math.isfinite(norm):
                return np.zeros(0)
            acc += math.log(norm)
            a /= norm
            b /= norm
            since = 0
    norm = math.sqrt(a * a + b * b)
    if not (norm > 0.0) or not math.isfinite(norm):
        return np.zeros(0)
    out[batch] = acc + math.log(norm)
    return out


def _transfer_batches(params, energy, steps, seed, renorm_every, n_batches, warmup):
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    total = warmup + steps
    w = params.disorder
    eps = gen.uniform(-w, w, total) if w > 0 else np.zeros(total)
    angle = gen.uniform(0.0, 2.0 * np.pi)
    rates = _transfer_kernel(
        float(energy), eps, math.cos(angle), math.sin(angle),
        int(warmup), int(renorm_every), int(n_batches),
    )
    if rates.size == 0:
        raise DegenerateDirection(
            f"transfer iterate underflowed at E={energy}; renormalization interval "
            f"{renorm_every} is too large"
        )
    return rates / (steps // n_batches)


def lyapunov_transfer(
    params: ModelParams,
    energy: float,
    steps: int,
    seed: int,
    renorm_every: int = DEFAULT_RENORM_INTERVAL,
    n_batches: int = 100,
    warmup: int = 1000,
) -> tuple[float, float]:
    """Top Lyapunov exponent of the random transfer-matrix product at ``energy``.

    Returns (gamma, stderr); stderr is from batch means.
    """
    if steps < 10_000:
        raise ValueError("steps must be >= 1e4")
    if steps % n_batches:
        steps -= steps % n_batches
    rates = _transfer_batches(params, energy, steps, seed, renorm_every, n_batches, warmup)
    gamma = float(np.mean(rates))
    stderr = float(np.std(rates, ddof=1) / math.sqrt(n_batches))
    return gamma, stderr


def transfer_curve(
    params: ModelParams,
    energies: Iterable[float],
    steps: int,
    seed: int,
    renorm_every: int = DEFAULT_RENORM_INTERVAL,
    n_batches: int = 100,
) -> LyapunovCurve:
    """gamma(E) on a grid; each energy gets its own derived stream."""
    energies = np.asarray(list(energies), dtype=float)
    if steps % n_batches:
        steps -= steps % n_batches
    batches = np.array([
        _transfer_batches(params, e, steps, realization_seed(seed, k), renorm_every, n_batches, 1000)
        for k, e in enumerate(energies)
    ])
    gamma = batches.mean(axis=1)
    stderr = batches.std(axis=1, ddof=1) / math.sqrt(n_batches)
    return LyapunovCurve(energies, gamma, stderr, "transfer", batches)


def _as_energy_arrays(ensemble) -> list[np.ndarray]:
    out = []
    for item in ensemble:
        if isinstance(item, SpectralDecomposition):
            out.append(np.asarray(item.energies))
        else:
            out.append(np.asarray(item, dtype=float).ravel())
    return out


def dos_edges(half_width: float, bin_width: float) -> np.ndarray:
    """Bin edges covering [-(2+W), 2+W] exactly at the left end."""
    bound = 2.0 + half_width
    n_bins = int(math.ceil(2.0 * bound / bin_width - 1e-9))
    return -bound + bin_width * np.arange(n_bins + 1)


def estimate_dos(
    ensemble,
    bin_width: float = DEFAULT_BIN_WIDTH,
    half_width: float | None = None,
) -> DosEstimate:
    """Normalized eigenvalue histogram pooled over an ensemble.

    ``ensemble`` holds SpectralDecomposition objects or plain energy arrays.
    ``half_width`` is the disorder W fixing the support [-(2+W), 2+W]; when
    omitted it is inferred from the largest |E| seen.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    spectra = _as_energy_arrays(ensemble)
    if not spectra or sum(s.size for s in spectra) == 0:
        raise EmptyEnsemble("no eigenvalues to histogram")
    if half_width is None:
        half_width = max(0.0, max(float(np.abs(s).max()) for s in spectra) - 2.0)
    edges = dos_edges(half_width, bin_width)
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    for s in spectra:
        c, _ = np.histogram(s, edges)
        counts += c
    return dos_from_counts(edges, counts)


def dos_from_counts(edges: np.ndarray, counts: np.ndarray) -> DosEstimate:
    edges = np.asarray(edges, dtype=float)
    counts = np.asarray(counts, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise EmptyEnsemble("histogram is empty")
    density = counts / (total * np.diff(edges))
    cumulative = np.cumsum(counts) / total
    return DosEstimate(edges, density, cumulative, float(density.max()), total)


def free_chain_dos(bin_width: float = DEFAULT_BIN_WIDTH) -> DosEstimate:
    """Exact clean-chain DOS 1/(pi sqrt(4 - E^2)) integrated over each bin."""
    edges = dos_edges(0.0, bin_width)
    clipped = np.clip(edges, -2.0, 2.0)
    integrated = 1.0 - np.arccos(clipped / 2.0) / np.pi
    mass = np.diff(integrated)
    density = mass / np.diff(edges)
    cumulative = np.cumsum(mass)
    cumulative /= cumulative[-1]
    return DosEstimate(edges, density, cumulative, float(density.max()), 0)


def _log_antiderivative(u: np.ndarray) -> np.ndarray:
    """F(u) = u ln|u| - u, with F(0) = 0."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = -u.copy()
    nz = u != 0
    out[nz] += u[nz] * np.log(np.abs(u[nz]))
    return out


def lyapunov_thouless(dos: DosEstimate, energy: float) -> float:
    """gamma(E) = integral of ln|E - E'| against the density of states.

    Bins are treated as point masses at their midpoints, except the bin that
    contains E, whose contribution is integrated in closed form against a
    constant density. Negative results are clamped to zero.
    """
    lo, hi = dos.bin_edges[:-1], dos.bin_edges[1:]
    mass = dos.mass
    inside = (lo <= energy) & (energy < hi)
    mid = 0.5 * (lo + hi)
    far = ~inside & (mass > 0)
    terms = mass[far] * np.log(np.abs(energy - mid[far]))
    for k in np.flatnonzero(inside & (mass > 0)):
        width = hi[k] - lo[k]
        mean_log = (_log_antiderivative(hi[k] - energy) - _log_antiderivative(lo[k] - energy))[0] / width
        terms = np.append(terms, mass[k] * float(mean_log))
    return max(0.0, math.fsum(np.sort(terms)))


def thouless_curve(dos: DosEstimate, energies: Iterable[float]) -> LyapunovCurve:
    energies = np.asarray(list(energies), dtype=float)
    gamma = np.array([lyapunov_thouless(dos, e) for e in energies])
    return LyapunovCurve(energies, gamma, np.zeros_like(gamma), "thouless")


def gamma_extrema(
    curve: LyapunovCurve,
    dos: DosEstimate | None = None,
    mass_window: tuple[float, float] = EDGE_MASS,
) -> tuple[float, float]:
    """(min, max) of gamma over grid points whose integrated DOS lies in
    ``mass_window``; the whole grid when no DOS is given."""
    mask = _interior_mask(curve, dos, mass_window)
    return float(curve.gamma[mask].min()), float(curve.gamma[mask].max())


def _interior_mask(curve, dos, mass_window):
    if dos is None:
        return np.ones(curve.energies.size, dtype=bool)
    n = dos.integrated(curve.energies)
    mask = (n >= mass_window[0]) & (n <= mass_window[1])
    if not mask.any():
        raise ValueError("no grid point lies inside the DOS mass window")
    return mask


def bootstrap_extrema(
    curve: LyapunovCurve,
    dos: DosEstimate | None = None,
    n_boot: int = 1000,
    seed: int = 0,
    mass_window: tuple[float, float] = EDGE_MASS,
) -> np.ndarray:
    """Bootstrap replicates of (gamma_min, gamma_max), resampling batch means."""
    if curve.batch_rates is None:
        raise ValueError("curve carries no batch rates")
    mask = _interior_mask(curve, dos, mass_window)
    rates = curve.batch_rates[mask]
    gen = np.random.default_rng(seed)
    n_b = rates.shape[1]
    out = np.empty((n_boot, 2))
    for b in range(n_boot):
        idx = gen.integers(0, n_b, n_b)
        g = rates[:, idx].mean(axis=1)
        out[b] = g.min(), g.max()
    return out
