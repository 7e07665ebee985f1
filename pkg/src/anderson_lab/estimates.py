"""Eigenvalue combinations f = sum_k c_k E_{i_k} and the statistics built on
them: Feynman-Hellmann gradients, eigenfunction decay profiles, level
statistics, sign-change scans and trimmed fractional moments."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import AllSamplesZero, EmptyEnsemble, GridOutOfRange, MissingCenter
from .lattice import DisorderRealization, SpectralDecomposition, diagonalize
from .lyapunov import LyapunovCurve

SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class CombinationSpec:
    """Integer coefficients c_k attached to localization-center sites i_k."""

    terms: tuple[tuple[int, int], ...]

    def __post_init__(self):
        terms = tuple((int(c), int(i)) for c, i in self.terms)
        object.__setattr__(self, "terms", terms)
        if not terms:
            raise ValueError("a combination needs at least one term")
        sites = [i for _, i in terms]
        if len(set(sites)) != len(sites):
            raise ValueError(f"center sites must be distinct, got {sites}")
        for c, i in terms:
            if c == 0:
                raise ValueError("coefficients must be nonzero integers")
            if i < 0:
                raise ValueError(f"negative site index {i}")

    @classmethod
    def of(cls, *terms: tuple[int, int]) -> "CombinationSpec":
        return cls(tuple(terms))

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([c for c, _ in self.terms], dtype=float)

    @property
    def sites(self) -> list[int]:
        return [i for _, i in self.terms]

    @property
    def rank(self) -> int:
        return len(self.terms)

    @property
    def abs_coefficient_sum(self) -> int:
        return sum(abs(c) for c, _ in self.terms)

    def coefficient_at(self, site: int) -> int:
        for c, i in self.terms:
            if i == site:
                return c
        return 0

    def scaled(self, factor: int) -> "CombinationSpec":
        return CombinationSpec(tuple((c * factor, i) for c, i in self.terms))

    def check_box(self, size: int) -> None:
        for i in self.sites:
            if not 0 <= i < size:
                raise MissingCenter(i)


def _indices(spec: CombinationSpec, d: SpectralDecomposition) -> list[int]:
    return [d.index_at(i) for i in spec.sites]


def eval_combination(spec: CombinationSpec, d: SpectralDecomposition) -> float:
    energies = d.energies[_indices(spec, d)]
    return math.fsum(spec.coefficients * energies)


def fh_gradient(spec: CombinationSpec, d: SpectralDecomposition) -> np.ndarray:
    """df/d eps_j for every site j: sum_k c_k |psi_{i_k}(j)|^2."""
    psi = d.vectors[:, _indices(spec, d)]
    return (psi**2) @ spec.coefficients


def paired_gradient(spec: CombinationSpec, d: SpectralDecomposition, j: int) -> float:
    """df/d eps_j + df/d eps_{j+1}; equals sqrt(2) df/d eps_j^+."""
    if not 0 <= j < d.size - 1:
        raise ValueError(f"site pair ({j}, {j + 1}) is outside the box")
    g = fh_gradient(spec, d)
    return float(g[j] + g[j + 1])


def paired_gradient_profile(spec: CombinationSpec, d: SpectralDecomposition) -> np.ndarray:
    """paired_gradient for every j in 0..L-2."""
    g = fh_gradient(spec, d)
    return g[:-1] + g[1:]


# -- eigenvalue tracking under perturbations of the potential --------------

def track_index(previous: np.ndarray, d: SpectralDecomposition, site: int,
                min_overlap: float = 0.5) -> int:
    """Spectral index in ``d`` continuing the state ``previous``.

    The state centered at ``site`` is used when it still overlaps
    ``previous`` by at least ``min_overlap``; otherwise the state of maximal
    overlap is taken.
    """
    candidate = d.index_at(site)
    if abs(float(d.vectors[:, candidate] @ previous)) >= min_overlap:
        return candidate
    return int(np.argmax(np.abs(d.vectors.T @ previous)))


def finite_difference_gradient(
    spec: CombinationSpec,
    d: SpectralDecomposition,
    h: float = 1e-5,
    sites: Iterable[int] | None = None,
) -> np.ndarray:
    """Central-difference df/d eps_j by re-diagonalizing at eps_j +/- h."""
    base = np.array(d.epsilon)
    refs = [d.vector_at(i) for i in spec.sites]
    sites = range(d.size) if sites is None else list(sites)
    out = []
    for j in sites:
        vals = []
        for sign in (1.0, -1.0):
            eps = base.copy()
            eps[j] += sign * h
            dd = diagonalize(eps)
            e = [dd.energies[track_index(ref, dd, i)] for ref, i in zip(refs, spec.sites)]
            vals.append(math.fsum(spec.coefficients * np.array(e)))
        out.append((vals[0] - vals[1]) / (2.0 * h))
    return np.array(out)


# -- eigenfunction decay ---------------------------------------------------

@dataclass(frozen=True, eq=False)
class DecayProfile:
    center: int
    distances: np.ndarray
    envelope: np.ndarray
    gamma_ref: float
    epsilon_slack: float
    n_star: int | None

    @property
    def bound(self) -> np.ndarray:
        return np.exp(-(self.gamma_ref + self.epsilon_slack) * self.distances)


def _side_envelope(psi: np.ndarray, center: int, step: int) -> np.ndarray:
    """(|psi(c+sn)|^2 + |psi(c+s(n+1))|^2)^(1/2) for n until the box edge."""
    if step > 0:
        ray = psi[center:]
    else:
        ray = psi[center::-1]
    sq = ray**2
    nxt = np.append(sq[1:], 0.0)
    return np.sqrt(sq + nxt)


def envelope_from_vector(psi: np.ndarray, center: int) -> np.ndarray:
    """Two-sided envelope folded by taking the larger side at each distance."""
    right = _side_envelope(psi, center, +1)
    left = _side_envelope(psi, center, -1)
    n = max(right.size, left.size)
    out = np.zeros(n)
    out[: right.size] = right
    out[: left.size] = np.maximum(out[: left.size], left)
    return out


def _n_star(envelope: np.ndarray, rate: float) -> int | None:
    distances = np.arange(envelope.size)
    ok = envelope >= np.exp(-rate * distances)
    bad = np.flatnonzero(~ok)
    if bad.size == 0:
        return 0
    last = int(bad[-1])
    return None if last == envelope.size - 1 else last + 1


def decay_profile_from_vector(psi: np.ndarray, center: int, gamma_ref: float,
                              epsilon_slack: float) -> DecayProfile:
    if epsilon_slack <= 0:
        raise ValueError("epsilon slack must be positive")
    env = envelope_from_vector(np.asarray(psi, dtype=float), center)
    return DecayProfile(
        center=int(center),
        distances=np.arange(env.size),
        envelope=env,
        gamma_ref=float(gamma_ref),
        epsilon_slack=float(epsilon_slack),
        n_star=_n_star(env, gamma_ref + epsilon_slack),
    )


def decay_profile(d: SpectralDecomposition, index: int, gamma_ref: float,
                  epsilon_slack: float = 0.1) -> DecayProfile:
    """Envelope of state ``index`` around its assigned localization center."""
    return decay_profile_from_vector(d.vectors[:, index], int(d.site_of[index]),
                                     gamma_ref, epsilon_slack)


def estimate_n_star(profile: DecayProfile) -> int | None:
    """Least n with envelope(m) >= exp(-(gamma+eps) m) for every sampled m >= n."""
    return _n_star(profile.envelope, profile.gamma_ref + profile.epsilon_slack)


# -- clusters --------------------------------------------------------------

def cluster_threshold(n_star: float, gamma_min: float, eta: float) -> float:
    return gamma_min * n_star / eta


def cluster_decomposition(centers: Sequence[int], n_star: float, gamma_min: float,
                          eta: float = 0.1) -> list[list[int]]:
    """Split sorted centers wherever consecutive ones are at least
    gamma_min * n_star / eta apart."""
    if eta <= 0 or gamma_min <= 0:
        raise ValueError("eta and gamma_min must be positive")
    threshold = cluster_threshold(n_star, gamma_min, eta)
    ordered = sorted(int(c) for c in centers)
    if not ordered:
        return []
    clusters = [[ordered[0]]]
    for c in ordered[1:]:
        if c - clusters[-1][-1] < threshold:
            clusters[-1].append(c)
        else:
            clusters.append([c])
    return clusters


# -- gradient floor ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FloorEstimate:
    offsets: np.ndarray
    sites: np.ndarray
    below: np.ndarray          # realizations with |paired gradient| <= C, per offset
    total: int
    reference_floor: np.ndarray  # mean of exp(-2 (gamma_tilde + eps) j) per offset

    @property
    def probability(self) -> np.ndarray:
        return self.below / self.total


def gamma_tilde(spec: CombinationSpec, d: SpectralDecomposition, curve: LyapunovCurve) -> float:
    """Smallest gamma(E_{i_k}) over the energies of the combination."""
    return float(np.min(curve(d.energies[_indices(spec, d)])))


def reference_floor(gamma_t: float, offset: float, epsilon_slack: float) -> float:
    return math.exp(-2.0 * (gamma_t + epsilon_slack) * offset)


def gradient_floor_probability(
    spec: CombinationSpec,
    ensemble: Sequence[SpectralDecomposition],
    offsets: Sequence[int],
    C: float | Sequence[float] | None = None,
    curve: LyapunovCurve | None = None,
    epsilon_slack: float = 0.1,
) -> FloorEstimate:
    """Fraction of realizations with |paired gradient| <= C at sites j placed
    ``offset`` beyond the rightmost center of the combination.

    With ``C=None`` each realization is tested against its own reference floor
    exp(-2 (gamma_tilde + eps) offset), which needs ``curve``.
    """
    if not ensemble:
        raise EmptyEnsemble("gradient floor needs at least one realization")
    offsets = np.asarray(offsets, dtype=int)
    sites = max(spec.sites) + offsets
    below = np.zeros(offsets.size, dtype=np.int64)
    floors = np.zeros((len(ensemble), offsets.size))
    for r, d in enumerate(ensemble):
        paired = np.abs(paired_gradient_profile(spec, d)[sites])
        if curve is not None:
            gt = gamma_tilde(spec, d, curve)
            floors[r] = [reference_floor(gt, j, epsilon_slack) for j in offsets]
        if C is None:
            if curve is None:
                raise ValueError("either C or curve is required")
            thresh = floors[r]
        else:
            thresh = np.broadcast_to(np.asarray(C, dtype=float), offsets.shape)
        below += paired <= thresh
    ref = np.array([math.fsum(np.sort(col)) / len(ensemble) for col in floors.T])
    return FloorEstimate(offsets, sites, below, len(ensemble), ref)


# -- level statistics --------------------------------------------------------

@dataclass(frozen=True, eq=False)
class LevelStats:
    interval_lengths: np.ndarray
    windows: np.ndarray        # windows examined per I (over all realizations)
    at_least_one: np.ndarray   # windows with n_I >= 1
    at_least_two: np.ndarray   # windows with n_I >= 2
    sup_density: float
    box_size: int

    @property
    def p_one(self) -> np.ndarray:
        return self.at_least_one / self.windows

    @property
    def p_two(self) -> np.ndarray:
        return self.at_least_two / self.windows

    @property
    def wegner_bound(self) -> np.ndarray:
        return math.pi * self.sup_density * self.interval_lengths * self.box_size

    @property
    def minami_bound(self) -> np.ndarray:
        return self.wegner_bound**2


def level_statistics(
    ensemble,
    interval_lengths: Sequence[float],
    L: int,
    sup_density: float,
    energy_range: tuple[float, float] | None = None,
) -> LevelStats:
    """Pr(n_I >= 1) and Pr(n_I >= 2) for windows of length I slid in steps of
    I/4 across ``energy_range`` (default: the spread of the pooled spectra).
    """
    spectra = [np.sort(np.asarray(getattr(s, "energies", s), dtype=float)) for s in ensemble]
    if not spectra:
        raise EmptyEnsemble("level statistics need at least one spectrum")
    if energy_range is None:
        energy_range = (min(s[0] for s in spectra), max(s[-1] for s in spectra))
    lo, hi = map(float, energy_range)
    lengths = np.asarray(interval_lengths, dtype=float)
    if np.any(lengths <= 0):
        raise ValueError("interval lengths must be positive")
    windows = np.zeros(lengths.size, dtype=np.int64)
    one = np.zeros(lengths.size, dtype=np.int64)
    two = np.zeros(lengths.size, dtype=np.int64)
    for k, length in enumerate(lengths):
        span = max(hi - lo - length, 0.0)
        starts = lo + (length / 4.0) * np.arange(int(math.floor(span / (length / 4.0) + 1e-9)) + 1)
        for s in spectra:
            n = np.searchsorted(s, starts + length, side="right") - np.searchsorted(s, starts, side="left")
            windows[k] += starts.size
            one[k] += np.count_nonzero(n >= 1)
            two[k] += np.count_nonzero(n >= 2)
    return LevelStats(lengths, windows, one, two, float(sup_density), int(L))


def mean_level_spacing(ensemble) -> float:
    spreads = [float(np.ptp(getattr(s, "energies", s))) / (len(getattr(s, "energies", s)) - 1)
               for s in ensemble]
    return math.fsum(sorted(spreads)) / len(spreads)


# -- gamma gaps --------------------------------------------------------------

def gamma_gap_probability(
    ensemble: Sequence[SpectralDecomposition],
    spec: CombinationSpec,
    curve: LyapunovCurve,
    thresholds: Sequence[float],
    n_star: float = 0.0,
    eta: float = 0.1,
) -> tuple[np.ndarray, int]:
    """Empirical Pr(|gamma(E_a) - gamma(E_b)| <= t) over pairs of combination
    states lying in the same cluster. Returns (probabilities, pair count)."""
    gmin = max(curve.gamma_min, 1e-12)
    clusters = cluster_decomposition(spec.sites, n_star, gmin, eta) if n_star > 0 else [spec.sites]
    pairs = [(a, b) for cl in clusters for ia, a in enumerate(cl) for b in cl[ia + 1:]]
    if not pairs:
        raise ValueError("no pair of combination states shares a cluster")
    gaps = []
    for d in ensemble:
        for a, b in pairs:
            gaps.append(abs(float(curve(d.energy_at(a))) - float(curve(d.energy_at(b)))))
    gaps = np.sort(np.asarray(gaps))
    thresholds = np.asarray(thresholds, dtype=float)
    counts = np.searchsorted(gaps, thresholds, side="right")
    return counts / gaps.size, int(gaps.size)


# -- sign changes of the paired gradient ------------------------------------

@dataclass(frozen=True)
class SignChange:
    cell: int            # flip between grid[cell] and grid[cell + 1]
    lo: float
    hi: float
    min_gap: float       # smallest adjacent-level gap of tracked states in the cell


@dataclass(frozen=True, eq=False)
class SignScan:
    grid: np.ndarray
    paired: np.ndarray   # paired gradient along the grid
    gaps: np.ndarray     # adjacent-level gap witness along the grid
    events: list[SignChange] = field(default_factory=list)


def admissible_range(r: DisorderRealization | np.ndarray, j: int, half_width: float) -> tuple[float, float]:
    """Range of eps_j^+ = (eps_j + eps_{j+1})/sqrt2 keeping both sites in [-W, W]
    at fixed eps_j^-."""
    eps = r.epsilon if isinstance(r, DisorderRealization) else np.asarray(r)
    minus = abs(eps[j] - eps[j + 1]) / SQRT2
    reach = SQRT2 * half_width - minus
    return -reach, reach


def _rotate(eps: np.ndarray, j: int, plus: float) -> np.ndarray:
    minus = (eps[j] - eps[j + 1]) / SQRT2
    out = eps.copy()
    out[j] = (plus + minus) / SQRT2
    out[j + 1] = (plus - minus) / SQRT2
    return out


def _nearest_gap(energies: np.ndarray, index: int) -> float:
    gaps = []
    if index > 0:
        gaps.append(energies[index] - energies[index - 1])
    if index < energies.size - 1:
        gaps.append(energies[index + 1] - energies[index])
    return min(gaps)


def sign_change_scan(
    spec: CombinationSpec,
    r: DisorderRealization,
    j: int,
    grid: Sequence[float] | None = None,
    n_points: int = 200,
    refine: int = 4,
) -> SignScan:
    """Sweep eps_j^+ with eps_j^- and all other sites fixed, following the
    combination's states by tracking, and report where the paired gradient
    changes sign.

    The gap witness at each grid point is the smallest distance from a tracked
    level to its spectral neighbour. Cells containing a flip are resampled
    ``refine`` times finer to locate the avoided crossing.
    """
    w = r.params.disorder
    lo, hi = admissible_range(r, j, w)
    if grid is None:
        grid = np.linspace(lo, hi, n_points)
    grid = np.asarray(grid, dtype=float)
    slack = 1e-12 * max(1.0, w)
    if grid.min() < lo - slack or grid.max() > hi + slack:
        raise GridOutOfRange(f"eps^+ grid must lie in [{lo:.6g}, {hi:.6g}]")
    base = np.array(r.epsilon, dtype=float)
    coeffs = spec.coefficients

    def evaluate(plus, refs):
        d = diagonalize(_rotate(base, j, plus))
        if refs is None:
            idx = [d.index_at(i) for i in spec.sites]
        else:
            idx = [track_index(ref, d, i) for ref, i in zip(refs, spec.sites)]
        psi = d.vectors[:, idx]
        value = float(coeffs @ (psi[j] ** 2 + psi[j + 1] ** 2))
        gap = min(_nearest_gap(d.energies, n) for n in idx)
        return value, gap, [psi[:, k].copy() for k in range(len(idx))]

    paired = np.empty(grid.size)
    gaps = np.empty(grid.size)
    refs = None
    ref_trace = []
    for k, plus in enumerate(grid):
        paired[k], gaps[k], refs = evaluate(plus, refs)
        ref_trace.append(refs)

    events = []
    for k in np.flatnonzero(np.sign(paired[:-1]) * np.sign(paired[1:]) < 0):
        sub = np.linspace(grid[k], grid[k + 1], refine + 1)[1:-1]
        best = min(gaps[k], gaps[k + 1])
        refs = ref_trace[k]
        for plus in sub:
            _, g, refs = evaluate(plus, refs)
            best = min(best, g)
        events.append(SignChange(int(k), float(grid[k]), float(grid[k + 1]), float(best)))
    return SignScan(grid, paired, gaps, events)


# -- fractional moments ------------------------------------------------------

@dataclass(frozen=True)
class MomentReport:
    s: float
    delta: float
    sample_count: int
    trimmed_mean: float
    untrimmed_mean: float
    trim_count: int
    box_sizes: tuple[int, ...] = ()
    per_size_means: tuple[float, ...] = ()


def trim_count(sample_count: int, delta: float) -> int:
    # guard against 0.05 * 2000 landing a hair above an integer
    return int(math.ceil(delta * sample_count - 1e-9))


def trimmed_mean(values: Sequence[float], delta: float) -> tuple[float, int]:
    """Mean after discarding the ceil(delta M) largest values."""
    v = np.sort(np.asarray(values, dtype=float))
    k = trim_count(v.size, delta)
    if k >= v.size:
        raise ValueError(f"trimming {k} of {v.size} samples leaves nothing")
    kept = v[: v.size - k]
    if np.isinf(kept[-1]):
        return math.inf, k
    return math.fsum(kept) / kept.size, k


def fractional_moment(f_samples: Sequence[float], s: float, delta: float) -> MomentReport:
    """<|f|^{-s}>_delta: mean of |f|^{-s} with the ceil(delta M) largest
    values (the smallest |f|) excluded."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")
    f = np.abs(np.asarray(f_samples, dtype=float))
    if f.size == 0:
        raise ValueError("no samples")
    if np.all(f == 0):
        raise AllSamplesZero("every sample of f is exactly zero")
    with np.errstate(divide="ignore"):
        values = f ** (-s)
    trimmed, k = trimmed_mean(values, delta)
    untrimmed = math.inf if np.isinf(values).any() else math.fsum(np.sort(values)) / values.size
    return MomentReport(float(s), float(delta), int(f.size), trimmed, untrimmed, k)


def combination_bound(spec: CombinationSpec, half_width: float) -> float:
    """Q = (2 + W) sum_k |c_k|, a bound on |f|."""
    return (2.0 + half_width) * spec.abs_coefficient_sum


def theorem_bound(Q: float, s: float, half_width: float, C_delta: float) -> float:
    """D_delta = Q^(1-s) / (C_delta 2W (1-s))."""
    if not 0 < s < 1:
        raise ValueError("s must lie in (0, 1)")
    if C_delta <= 0 or half_width <= 0:
        raise ValueError("C_delta and W must be positive")
    return Q ** (1.0 - s) / (C_delta * 2.0 * half_width * (1.0 - s))


def quantile_floor(values: Sequence[float], delta: float) -> float:
    """Largest floor C with at most ceil(delta M) samples strictly below it."""
    v = np.sort(np.abs(np.asarray(values, dtype=float)))
    return float(v[min(trim_count(v.size, delta), v.size - 1)])
