"""First-order renormalization of one energy by its self-overlap
V = sum_x psi^4(x), and the perturbative derivatives of V."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateLevel
from .estimates import CombinationSpec, eval_combination, fh_gradient
from .lattice import SpectralDecomposition

DEGENERACY_CUTOFF = 1e-12


@dataclass(frozen=True)
class RenormSpec:
    base: CombinationSpec
    beta: float
    renormalized_center: int

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.renormalized_center < 0:
            raise ValueError("renormalized center must be a site index")

    @property
    def center_coefficient(self) -> int:
        return self.base.coefficient_at(self.renormalized_center)


def overlap_v0(d: SpectralDecomposition, center: int) -> float:
    psi = d.vector_at(center)
    return math.fsum(psi**4)


def eval_renormalized(spec: RenormSpec, d: SpectralDecomposition) -> float:
    """f' = f + beta c_0 V, where c_0 is the coefficient of the renormalized state."""
    f = eval_combination(spec.base, d)
    c0 = spec.center_coefficient
    if c0 == 0 or spec.beta == 0:
        return f
    return f + spec.beta * c0 * overlap_v0(d, spec.renormalized_center)


def _reduced_denominators(d: SpectralDecomposition, n: int, cutoff: float) -> np.ndarray:
    diff = d.energies[n] - d.energies
    diff[n] = np.inf
    k = int(np.argmin(np.abs(diff)))
    if abs(diff[k]) < cutoff:
        raise DegenerateLevel(n, k, float(abs(diff[k])))
    return 1.0 / diff


def perturbative_vec_derivative(d: SpectralDecomposition, n: int, j: int,
                                cutoff: float = DEGENERACY_CUTOFF) -> np.ndarray:
    """d psi_n(i) / d eps_j = psi_n(j) sum_{k != n} psi_k(j) psi_k(i) / (E_n - E_k)."""
    inv = _reduced_denominators(d, n, cutoff)
    inv[n] = 0.0
    v = d.vectors
    return v[j, n] * (v @ (v[j, :] * inv))


def v_derivative_profile(d: SpectralDecomposition, center: int,
                         cutoff: float = DEGENERACY_CUTOFF) -> np.ndarray:
    """dV/d eps_j for every site j, with V the self-overlap of the state at ``center``.

    Uses dV/d eps_j = 4 psi(j) sum_k psi_k(j) <psi^3, psi_k> / (E_0 - E_k).
    """
    n = d.index_at(center)
    inv = _reduced_denominators(d, n, cutoff)
    inv[n] = 0.0
    v = d.vectors
    psi = v[:, n]
    a = (v.T @ psi**3) * inv
    return 4.0 * psi * (v @ a)


def v_derivative(d: SpectralDecomposition, center: int, j: int,
                 cutoff: float = DEGENERACY_CUTOFF) -> float:
    return float(v_derivative_profile(d, center, cutoff)[j])


def v_derivative_paired(d: SpectralDecomposition, center: int, j: int,
                        cutoff: float = DEGENERACY_CUTOFF) -> float:
    """dV/d eps_j^+ = (dV/d eps_j + dV/d eps_{j+1}) / sqrt 2."""
    prof = v_derivative_profile(d, center, cutoff)
    return float((prof[j] + prof[j + 1]) / math.sqrt(2.0))


def renormalized_paired_gradient(spec: RenormSpec, d: SpectralDecomposition, j: int,
                                 cutoff: float = DEGENERACY_CUTOFF) -> tuple[float, float]:
    """(df/d eps_j^+, df'/d eps_j^+) at site pair (j, j+1)."""
    g = fh_gradient(spec.base, d)
    plain = (g[j] + g[j + 1]) / math.sqrt(2.0)
    c0 = spec.center_coefficient
    if c0 == 0 or spec.beta == 0:
        return float(plain), float(plain)
    extra = spec.beta * c0 * v_derivative_paired(d, spec.renormalized_center, j, cutoff)
    return float(plain), float(plain + extra)


def beta_threshold(gamma_min: float, gamma_max: float, x_delta: int, const: float = 1.0) -> float:
    """const * exp(-2 (gamma_max - gamma_min) |x_delta|)."""
    if not gamma_max >= gamma_min > 0:
        raise ValueError("need gamma_max >= gamma_min > 0")
    return const * math.exp(-2.0 * (gamma_max - gamma_min) * abs(x_delta))
