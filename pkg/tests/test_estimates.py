from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anderson_lab.errors import AllSamplesZero, EmptyEnsemble, GridOutOfRange, MissingCenter
from anderson_lab.estimates import (
    CombinationSpec,
    cluster_decomposition,
    combination_bound,
    decay_profile_from_vector,
    estimate_n_star,
    eval_combination,
    fh_gradient,
    finite_difference_gradient,
    fractional_moment,
    gamma_gap_probability,
    gradient_floor_probability,
    level_statistics,
    paired_gradient,
    paired_gradient_profile,
    quantile_floor,
    sign_change_scan,
    theorem_bound,
    trim_count,
    trimmed_mean,
)
from anderson_lab.lattice import ModelParams, diagonalize, eigenvalues, sample_disorder
from anderson_lab.lyapunov import LyapunovCurve, estimate_dos, gamma_extrema, transfer_curve
from anderson_lab.seeding import realization_seed

P100 = ModelParams(100, 1.0)
SPEC3 = CombinationSpec.of((1, 30), (-2, 50), (1, 70))


@pytest.fixture(scope="module")
def ensemble100():
    return [diagonalize(sample_disorder(P100, realization_seed(1, k))) for k in range(40)]


@pytest.fixture(scope="module")
def curve100():
    return transfer_curve(P100, np.linspace(-3, 3, 61), 100_000, seed=11)


class TestCombination:
    def test_validation(self):
        with pytest.raises(ValueError):
            CombinationSpec(())
        with pytest.raises(ValueError):
            CombinationSpec.of((1, 3), (2, 3))
        with pytest.raises(ValueError):
            CombinationSpec.of((0, 3))

    def test_identity(self, ensemble100):
        d = ensemble100[0]
        assert eval_combination(CombinationSpec.of((1, 42)), d) == d.energy_at(42)

    def test_cancellation(self):
        d = diagonalize(sample_disorder(P100, 2))
        # synthetic decomposition in which sites 10 and 20 share one state
        center_of = np.array(d.center_of)
        center_of[20] = center_of[10]
        fake = replace(d, center_of=center_of)
        assert eval_combination(CombinationSpec.of((1, 10), (-1, 20)), fake) == 0.0

    def test_bounded(self, ensemble100):
        q = combination_bound(SPEC3, 1.0)
        assert q == 12.0
        assert all(abs(eval_combination(SPEC3, d)) <= q for d in ensemble100)

    def test_missing_center(self, ensemble100):
        with pytest.raises(MissingCenter):
            eval_combination(CombinationSpec.of((1, 500)), ensemble100[0])


class TestGradient:
    def test_feynman_hellmann_vs_finite_differences(self, ensemble100):
        for d in ensemble100[:20]:
            g = fh_gradient(SPEC3, d)
            fd = finite_difference_gradient(SPEC3, d, h=1e-5)
            assert np.abs(g - fd).max() <= 1e-5 * np.abs(g).max()

    def test_gradient_sums_to_coefficients(self, ensemble100):
        # sum_j |psi(j)|^2 = 1 for every state
        assert fh_gradient(SPEC3, ensemble100[0]).sum() == pytest.approx(SPEC3.coefficients.sum())

    def test_paired(self, ensemble100):
        d = ensemble100[0]
        g = fh_gradient(SPEC3, d)
        assert paired_gradient(SPEC3, d, 10) == pytest.approx(g[10] + g[11])
        assert paired_gradient_profile(SPEC3, d)[10] == pytest.approx(g[10] + g[11])
        with pytest.raises(ValueError):
            paired_gradient(SPEC3, d, 99)

    def test_envelope_bounds(self):
        params = ModelParams(200, 1.0)
        spectra = []
        hits = 0
        spec = CombinationSpec.of((1, 100))
        decomps = [diagonalize(sample_disorder(params, realization_seed(12, k))) for k in range(500)]
        spectra = [d.energies for d in decomps]
        curve = transfer_curve(params, np.linspace(-3, 3, 61), 100_000, seed=12)
        gmin, gmax = gamma_extrema(curve, estimate_dos(spectra, half_width=1.0))
        lo = math.exp(-2 * (gmax + 0.1) * 20)
        hi = math.exp(-2 * (gmin - 0.1) * 21)
        for d in decomps:
            hits += lo <= paired_gradient(spec, d, 120) <= hi
        assert hits / len(decomps) >= 0.9


class TestDecay:
    def _two_sided(self, rate=0.5, half=30):
        n = np.arange(-half, half + 1)
        return np.exp(-rate * np.abs(n)), half

    def test_exact_exponential(self):
        psi, c = self._two_sided()
        prof = decay_profile_from_vector(psi, c, 0.5, 0.1)
        assert prof.n_star == 0 == estimate_n_star(prof)

    def test_single_dip(self):
        psi, c = self._two_sided()
        bound7 = math.exp(-0.6 * 7)
        for s in (1, -1):
            psi[c + s * 7] = 0.0
            psi[c + s * 8] = 0.5 * bound7
        assert decay_profile_from_vector(psi, c, 0.5, 0.1).n_star == 8

    def test_violation_at_edge(self):
        psi, c = self._two_sided()
        psi[0] = psi[-1] = 0.0
        psi[1] = psi[-2] = 0.0
        assert decay_profile_from_vector(psi, c, 0.5, 0.1).n_star is None

    def test_bound_property(self):
        psi, c = self._two_sided()
        prof = decay_profile_from_vector(psi, c, 0.5, 0.1)
        assert np.allclose(prof.bound, np.exp(-0.6 * prof.distances))


class TestClusters:
    def test_gap_rule(self):
        # threshold = gamma_min n* / eta = 0.3 * 10 / 0.1 = 30
        assert cluster_decomposition([90, 10, 12], 10, 0.3, 0.1) == [[10, 12], [90]]

    def test_single_cluster(self):
        assert cluster_decomposition([1, 5, 9], 100, 0.3, 0.1) == [[1, 5, 9]]

    def test_singletons(self):
        assert cluster_decomposition([1, 5, 9], 0.1, 0.3, 0.1) == [[1], [5], [9]]


class TestGradientFloor:
    def test_zero_threshold(self, ensemble100):
        est = gradient_floor_probability(CombinationSpec.of((1, 40)), ensemble100, [10, 20], C=0.0)
        assert np.all(est.probability == 0)

    def test_trivial_threshold(self, ensemble100):
        est = gradient_floor_probability(SPEC3, ensemble100, [5, 10], C=2 * SPEC3.abs_coefficient_sum)
        assert np.all(est.probability == 1)

    def test_empty(self):
        with pytest.raises(EmptyEnsemble):
            gradient_floor_probability(SPEC3, [], [10], C=1.0)

    def test_needs_threshold(self, ensemble100):
        with pytest.raises(ValueError):
            gradient_floor_probability(SPEC3, ensemble100[:2], [10])

    def test_monotone(self):
        params = ModelParams(200, 1.0)
        decomps = [diagonalize(sample_disorder(params, realization_seed(13, k))) for k in range(500)]
        curve = transfer_curve(params, np.linspace(-3, 3, 61), 100_000, seed=13)
        est = gradient_floor_probability(CombinationSpec.of((1, 100)), decomps, [10, 20, 30],
                                         curve=curve, epsilon_slack=0.1)
        assert np.all(np.diff(est.probability) <= 0)


class TestLevelStatistics:
    def test_full_width(self, ensemble100):
        st_ = level_statistics(ensemble100, [6.0], 100, 0.5, energy_range=(-3, 3))
        assert st_.p_one[0] == 1.0

    def test_outside_support(self, ensemble100):
        st_ = level_statistics(ensemble100, [0.5], 100, 0.5, energy_range=(3.5, 5.0))
        assert st_.p_one[0] == 0 and st_.p_two[0] == 0

    def test_bounds(self):
        st_ = level_statistics([np.array([0.0])], [0.1], 10, 0.5)
        assert st_.wegner_bound[0] == pytest.approx(math.pi * 0.5 * 0.1 * 10)
        assert st_.minami_bound[0] == pytest.approx(st_.wegner_bound[0] ** 2)

    def test_empty(self):
        with pytest.raises(EmptyEnsemble):
            level_statistics([], [0.1], 10, 0.5)


class TestGammaGaps:
    def test_range_threshold(self, ensemble100, curve100):
        probs, _ = gamma_gap_probability(ensemble100, SPEC3, curve100,
                                         [curve100.gamma_max - curve100.gamma_min])
        assert probs[0] == 1.0

    def test_zero_threshold(self, ensemble100, curve100):
        probs, n = gamma_gap_probability(ensemble100, SPEC3, curve100, [0.0])
        assert probs[0] <= 1.0 / n

    def test_decreasing(self, curve100):
        decomps = [diagonalize(sample_disorder(P100, realization_seed(14, k))) for k in range(500)]
        probs, _ = gamma_gap_probability(decomps, SPEC3, curve100, [0.1, 0.01, 0.001])
        assert probs[0] > probs[1] > probs[2]


class TestSignScan:
    def test_single_term_never_flips(self):
        r = sample_disorder(P100, 5)
        scan = sign_change_scan(CombinationSpec.of((1, 30)), r, 50, n_points=40)
        assert not scan.events and np.all(scan.paired > 0)

    def test_dominant_state(self):
        # psi_30 sits on the scanned pair, psi_80 is 50 sites away
        r = sample_disorder(ModelParams(100, 3.0), 6)
        scan = sign_change_scan(CombinationSpec.of((1, 30), (-1, 80)), r, 30, n_points=40)
        assert not scan.events

    def test_grid_out_of_range(self):
        r = sample_disorder(P100, 5)
        with pytest.raises(GridOutOfRange):
            sign_change_scan(SPEC3, r, 80, grid=[0.0, 10.0])

    @pytest.mark.slow
    def test_flips_are_rare_and_at_avoided_crossings(self):
        spec = CombinationSpec.of((1, 30), (-1, 60))
        scans = [sign_change_scan(spec, sample_disorder(P100, realization_seed(15, k)), 80, n_points=200)
                 for k in range(500)]
        p10 = np.quantile(np.concatenate([s.gaps for s in scans]), 0.1)
        flipped = sum(bool(s.events) for s in scans) / len(scans)
        at_minimum = []
        for s in scans:
            for ev in s.events:
                k = ev.cell
                left = s.gaps[k - 1] if k >= 1 else math.inf
                right = s.gaps[k + 2] if k + 2 < s.gaps.size else math.inf
                at_minimum.append(ev.min_gap <= min(left, right) and ev.min_gap < p10)
        assert flipped <= 0.2, f"fraction with a flip {flipped:.3f}"
        assert all(at_minimum), f"{at_minimum.count(False)} of {len(at_minimum)} flips away from a gap minimum"


class TestMoments:
    def test_untrimmed(self):
        assert fractional_moment([1.0, 0.25], 0.5, 0.0).trimmed_mean == pytest.approx(1.5)

    def test_trim_removes_smallest_f(self):
        rep = fractional_moment([1.0, 0.25, 1e-12], 0.5, 0.3)
        assert rep.trim_count == 1
        assert rep.trimmed_mean == pytest.approx(1.5)
        assert rep.untrimmed_mean > 1e5

    def test_trim_counts(self):
        assert trim_count(3, 0.34) == 2
        assert trim_count(2000, 0.05) == 100
        assert trim_count(10, 0.0) == 0

    def test_all_zero(self):
        with pytest.raises(AllSamplesZero):
            fractional_moment([0.0, 0.0], 0.5, 0.0)

    def test_zero_sample_is_infinite_untrimmed(self):
        rep = fractional_moment([1.0, 0.0], 0.5, 0.5)
        assert math.isinf(rep.untrimmed_mean) and rep.trimmed_mean == 1.0

    def test_parameter_ranges(self):
        with pytest.raises(ValueError):
            fractional_moment([1.0], 1.0, 0.0)
        with pytest.raises(ValueError):
            trimmed_mean([1.0, 2.0], 0.99)

    def test_theorem_bound(self):
        assert theorem_bound(12.0, 0.5, 1.0, math.exp(-2)) == pytest.approx(math.exp(2) * math.sqrt(12), abs=1e-9)
        assert math.exp(2) * math.sqrt(12) == pytest.approx(25.60, abs=0.01)
        assert theorem_bound(1.0, 1e-12, 0.5, 1.0) == pytest.approx(1.0, abs=1e-9)

    def test_quantile_floor(self):
        values = np.arange(1, 101, dtype=float)
        assert quantile_floor(values, 0.05) == 6.0
        assert np.count_nonzero(values < quantile_floor(values, 0.05)) <= trim_count(100, 0.05)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=60), st.floats(0.05, 0.95), st.floats(0.0, 0.4))
def test_trimmed_never_exceeds_untrimmed(samples, s, delta):
    rep = fractional_moment(samples, s, delta)
    assert rep.trimmed_mean <= rep.untrimmed_mean * (1 + 1e-12)
    assert rep.trim_count == trim_count(len(samples), delta)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.lists(st.integers(-3, 3).filter(bool), min_size=1, max_size=4))
def test_gradient_magnitude_bound(seed, coeffs):
    spec = CombinationSpec(tuple((c, 10 + 7 * k) for k, c in enumerate(coeffs)))
    d = diagonalize(sample_disorder(ModelParams(50, 1.0), seed))
    assert np.abs(paired_gradient_profile(spec, d)).max() <= 2 * spec.abs_coefficient_sum + 1e-12
    assert abs(eval_combination(spec, d)) <= combination_bound(spec, 1.0) + 1e-12


def test_constant_curve_gap_pairs(ensemble100):
    flat = LyapunovCurve(np.array([-3.0, 3.0]), np.array([0.2, 0.2]), np.zeros(2), "flat")
    probs, n = gamma_gap_probability(ensemble100, SPEC3, flat, [0.0])
    assert probs[0] == 1.0 and n == 3 * len(ensemble100)


def test_eigenvalues_helper_matches_full():
    r = sample_disorder(P100, 8)
    assert np.abs(eigenvalues(r) - diagonalize(r).energies).max() <= 1e-12
