"""Per-experiment work: ``prepare`` runs once in the parent, ``realize`` once
per disorder realization (possibly in a worker process), ``reduce`` folds the
per-realization outputs, sorted by realization index, into report sections."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..estimates import (
    CombinationSpec,
    combination_bound,
    decay_profile,
    eval_combination,
    fractional_moment,
    gradient_floor_probability,
    level_statistics,
    mean_level_spacing,
    paired_gradient_profile,
    quantile_floor,
    sign_change_scan,
    theorem_bound,
    trimmed_mean,
)
from ..lattice import diagonalize, eigenvalues, sample_disorder
from ..lyapunov import (
    bootstrap_extrema,
    dos_edges,
    dos_from_counts,
    estimate_dos,
    gamma_extrema,
    thouless_curve,
    transfer_curve,
)
from ..renormalization import (
    RenormSpec,
    beta_threshold,
    overlap_v0,
    renormalized_paired_gradient,
    v_derivative_profile,
)
from ..seeding import substream
from .config import ExperimentConfig
from .report import EnsembleReport, fit_exponent


@dataclass(frozen=True)
class WorkItem:
    index: int      # position in the run, 0-based
    size: int
    seed: int


def _fsum_mean(values) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    return math.fsum(v) / v.size if v.size else math.nan


def _is_nonincreasing(values) -> bool:
    v = np.asarray(values, dtype=float)
    return bool(np.all(np.diff(v) <= 0))


def gamma_curve(cfg: ExperimentConfig, size: int | None = None):
    """gamma(E) over the whole support [-(2+W), 2+W] from transfer matrices."""
    params = cfg.model.params(size)
    bound = params.spectral_bound
    n = int(round(2 * bound / cfg.curve.energy_step))
    grid = np.linspace(-bound, bound, n + 1)
    return transfer_curve(params, grid, cfg.curve.steps, substream(cfg.master_seed, "gamma-curve"),
                          renorm_every=cfg.curve.renorm_every)


def _histogram(cfg, spectra, bin_width):
    edges = dos_edges(cfg.model.disorder, bin_width)
    counts = np.zeros(edges.size - 1, dtype=np.int64)
    for s in spectra:
        counts += np.histogram(s, edges)[0]
    return edges, counts


class Experiment:
    name = ""
    csv_header: tuple[str, ...] = ()

    def sizes(self, cfg: ExperimentConfig) -> list[int]:
        return [cfg.model.size]

    def prepare(self, cfg: ExperimentConfig) -> dict:
        return {}

    def realize(self, cfg: ExperimentConfig, ctx: dict, item: WorkItem) -> dict:
        raise NotImplementedError

    def reduce(self, cfg: ExperimentConfig, ctx: dict, outputs: list) -> dict:
        raise NotImplementedError

    def recompute(self, report: EnsembleReport) -> None:
        """Refresh results that are functions of pooled counts only."""

    @staticmethod
    def realization(cfg, item):
        return sample_disorder(cfg.model.params(item.size), item.seed)


class Spectrum(Experiment):
    name = "spectrum"
    csv_header = ("seed", "size", "level", "energy", "center")

    def realize(self, cfg, ctx, item):
        sec = cfg.spectrum
        d = diagonalize(self.realization(cfg, item), tol=sec.tol, solver=sec.solver)
        return {
            "energies": np.array(d.energies),
            "centers": np.array(d.site_of),
            "max_residual": d.max_residual,
            "collisions": d.collisions,
        }

    def reduce(self, cfg, ctx, outputs):
        sec = cfg.spectrum
        spectra = [o["energies"] for _, o in outputs]
        edges, counts = _histogram(cfg, spectra, sec.bin_width)
        max_abs = max(float(np.abs(s).max()) for s in spectra)
        bound = cfg.model.params().spectral_bound
        rows = [
            (item.seed, item.size, n, float(e), int(c))
            for item, o in outputs
            for n, (e, c) in enumerate(zip(o["energies"], o["centers"]))
        ]
        return {
            "results": {
                "energies": [s.tolist() for s in spectra[: sec.list_energies]],
                "max_abs_energy": max_abs,
                "spectral_bound": bound,
                "within_bound": max_abs <= bound,
                "mean_spacing": mean_level_spacing(spectra),
            },
            "counts": {
                "center_collision": {
                    "k": [sum(o["collisions"] for _, o in outputs)],
                    "n": [sum(len(o["energies"]) for _, o in outputs)],
                }
            },
            "histograms": {"energies": {"edges": edges, "counts": counts}},
            "diagnostics": {"max_residual": max(o["max_residual"] for _, o in outputs)},
            "rows": rows,
        }


class Dos(Experiment):
    name = "dos"
    csv_header = ("bin_lo", "bin_hi", "density", "cumulative")

    def realize(self, cfg, ctx, item):
        return {"energies": eigenvalues(self.realization(cfg, item))}

    def reduce(self, cfg, ctx, outputs):
        edges, counts = _histogram(cfg, [o["energies"] for _, o in outputs], cfg.dos.bin_width)
        dos = dos_from_counts(edges, counts)
        rows = [(a, b, d, c) for a, b, d, c in
                zip(edges[:-1], edges[1:], dos.density, dos.cumulative)]
        return {
            "results": {
                "density": dos.density,
                "cumulative": dos.cumulative,
                "sup_density": dos.sup_density,
                "total_mass": math.fsum(dos.mass),
                "sample_count": dos.sample_count,
            },
            "histograms": {"energies": {"edges": edges, "counts": counts}},
            "rows": rows,
        }

    def recompute(self, report):
        h = report.histograms["energies"]
        dos = dos_from_counts(np.array(h["edges"]), np.array(h["counts"]))
        report.results.update(density=dos.density, cumulative=dos.cumulative,
                              sup_density=dos.sup_density, total_mass=math.fsum(dos.mass),
                              sample_count=dos.sample_count)


class Lyapunov(Experiment):
    name = "lyapunov"
    csv_header = ("energy", "gamma_transfer", "stderr_transfer", "gamma_thouless")

    def prepare(self, cfg):
        sec = cfg.lyapunov
        curve = transfer_curve(cfg.model.params(), sec.energies, sec.steps,
                               substream(cfg.master_seed, "lyapunov-transfer"),
                               renorm_every=sec.renorm_every)
        return {"transfer": curve}

    def realize(self, cfg, ctx, item):
        return {"energies": eigenvalues(self.realization(cfg, item))}

    def reduce(self, cfg, ctx, outputs):
        sec = cfg.lyapunov
        edges, counts = _histogram(cfg, [o["energies"] for _, o in outputs], sec.bin_width)
        dos = dos_from_counts(edges, counts)
        transfer = ctx["transfer"]
        thouless = thouless_curve(dos, sec.energies)
        deviation = np.abs(transfer.gamma - thouless.gamma)
        t_min, t_max = gamma_extrema(transfer, dos)
        boot = bootstrap_extrema(transfer, dos, n_boot=500,
                                 seed=substream(cfg.master_seed, "bootstrap") % 2**63)
        rows = list(zip(transfer.energies, transfer.gamma, transfer.stderr, thouless.gamma))
        return {
            "results": {
                "energies": transfer.energies,
                "gamma_transfer": transfer.gamma,
                "stderr_transfer": transfer.stderr,
                "gamma_thouless": thouless.gamma,
                "max_deviation": float(deviation.max()),
                "gamma_max": transfer.gamma_max,
                "relative_deviation": float(deviation.max() / transfer.gamma_max)
                if transfer.gamma_max > 0 else None,
                "gamma_min_interior": t_min,
                "gamma_max_interior": t_max,
                "gamma_min_bootstrap_p05": float(np.quantile(boot[:, 0], 0.05)),
                "sup_density": dos.sup_density,
            },
            "histograms": {"energies": {"edges": edges, "counts": counts}},
            "rows": rows,
        }


class GradientFloor(Experiment):
    name = "gradient_floor"
    csv_header = ("seed", "offset", "abs_paired_gradient", "reference_floor")

    def prepare(self, cfg):
        sec = cfg.gradient_floor
        spec = cfg.spec.combination()
        last = max(spec.sites) + max(sec.offsets) + 1
        if last >= cfg.model.size:
            raise ConfigError(f"offset sites reach {last}, outside a box of {cfg.model.size}")
        return {"curve": gamma_curve(cfg)}

    def realize(self, cfg, ctx, item):
        sec = cfg.gradient_floor
        spec = cfg.spec.combination()
        d = diagonalize(self.realization(cfg, item))
        est = gradient_floor_probability(spec, [d], sec.offsets, sec.C, ctx["curve"], sec.epsilon_slack)
        paired = np.abs(paired_gradient_profile(spec, d)[est.sites])
        return {"below": est.below, "floor": est.reference_floor, "paired": paired}

    def reduce(self, cfg, ctx, outputs):
        sec = cfg.gradient_floor
        below = np.sum([o["below"] for _, o in outputs], axis=0)
        floors = np.array([o["floor"] for _, o in outputs])
        rows = [(item.seed, off, float(p), float(f)) for item, o in outputs
                for off, p, f in zip(sec.offsets, o["paired"], o["floor"])]
        report_counts = {"below_floor": {"k": below, "n": [len(outputs)] * len(sec.offsets),
                                         "x": sec.offsets}}
        return {
            "results": {
                "offsets": sec.offsets,
                "threshold": "reference_floor" if sec.C is None else sec.C,
                "mean_reference_floor": [_fsum_mean(col) for col in floors.T],
                "probability": below / len(outputs),
                "nonincreasing": _is_nonincreasing(below / len(outputs)),
            },
            "counts": report_counts,
            "rows": rows,
        }

    def recompute(self, report):
        c = report.counts["below_floor"]
        p = np.array(c["k"]) / np.array(c["n"])
        report.results.update(probability=p, nonincreasing=_is_nonincreasing(p))


class LevelStats(Experiment):
    name = "level_stats"
    csv_header = ("interval", "p_at_least_one", "p_at_least_two", "wegner_bound", "minami_bound")

    def realize(self, cfg, ctx, item):
        return {"energies": eigenvalues(self.realization(cfg, item))}

    def reduce(self, cfg, ctx, outputs):
        sec = cfg.level_stats
        spectra = [o["energies"] for _, o in outputs]
        spacing = mean_level_spacing(spectra)
        if sec.interval_lengths is None:
            lengths = spacing * np.geomspace(0.1, 1.0, sec.decade_points)
        else:
            lengths = np.asarray(sec.interval_lengths, dtype=float)
        edges, counts = _histogram(cfg, spectra, sec.bin_width)
        dos = dos_from_counts(edges, counts)
        bound = cfg.model.params().spectral_bound
        stats = level_statistics(spectra, lengths, cfg.model.size, dos.sup_density, (-bound, bound))
        report = {
            "results": {"mean_spacing": spacing, "box_size": cfg.model.size},
            "counts": {
                "n_at_least_one": {"k": stats.at_least_one, "n": stats.windows, "x": lengths},
                "n_at_least_two": {"k": stats.at_least_two, "n": stats.windows, "x": lengths},
            },
            "histograms": {"energies": {"edges": edges, "counts": counts}},
        }
        tmp = EnsembleReport(self.name, {}, 0, 0, results=report["results"],
                             counts=report["counts"], histograms=report["histograms"])
        self.recompute(tmp)
        report["results"] = tmp.results
        r = tmp.results
        report["rows"] = list(zip(lengths, r["p_at_least_one"], r["p_at_least_two"],
                                  r["wegner_bound"], r["minami_bound"]))
        return report

    def recompute(self, report):
        h = report.histograms["energies"]
        sup = dos_from_counts(np.array(h["edges"]), np.array(h["counts"])).sup_density
        size = report.config.get("model", {}).get("size") if report.config else None
        if size is None:
            size = report.results.get("box_size")
        two = report.counts["n_at_least_two"]
        one = report.counts["n_at_least_one"]
        lengths = np.array(two["x"], dtype=float)
        p2 = np.array(two["k"]) / np.array(two["n"])
        p1 = np.array(one["k"]) / np.array(one["n"])
        wegner = math.pi * sup * lengths * size
        minami = wegner**2
        positive = p2 > 0
        if positive.sum() >= 2:
            slope, stderr = fit_exponent(lengths[positive], p2[positive])
        else:
            slope, stderr = math.nan, math.nan
        report.results.update(
            box_size=size,
            interval_lengths=lengths,
            p_at_least_one=p1,
            p_at_least_two=p2,
            sup_density=sup,
            wegner_bound=wegner,
            minami_bound=minami,
            minami_holds=bool(np.all(p2 <= minami)),
            exponent=slope,
            exponent_stderr=stderr,
        )


class SignScan(Experiment):
    name = "sign_scan"
    csv_header = ("seed", "cell", "eps_plus_lo", "eps_plus_hi", "min_gap")

    def _site(self, cfg):
        spec = cfg.spec.combination()
        j = cfg.sign_scan.site if cfg.sign_scan.site is not None else max(spec.sites) + 20
        if not 0 <= j < cfg.model.size - 1:
            raise ConfigError(f"sign-scan site pair ({j}, {j + 1}) is outside the box")
        return j

    def prepare(self, cfg):
        return {"site": self._site(cfg)}

    def realize(self, cfg, ctx, item):
        sec = cfg.sign_scan
        scan = sign_change_scan(cfg.spec.combination(), self.realization(cfg, item), ctx["site"],
                                n_points=sec.points, refine=sec.refine)
        gaps = scan.gaps
        events = []
        for ev in scan.events:
            k = ev.cell
            left = gaps[k - 1] if k >= 1 else math.inf
            right = gaps[k + 2] if k + 2 < gaps.size else math.inf
            events.append((ev.cell, ev.lo, ev.hi, ev.min_gap, ev.min_gap <= min(left, right)))
        return {"events": events, "gaps": gaps}

    def reduce(self, cfg, ctx, outputs):
        all_gaps = np.concatenate([o["gaps"] for _, o in outputs])
        p10 = float(np.quantile(all_gaps, 0.1))
        events = [ev for _, o in outputs for ev in o["events"]]
        flips = sum(1 for _, o in outputs if o["events"])
        at_min = sum(1 for ev in events if ev[4] and ev[3] < p10)
        rows = [(item.seed, ev[0], ev[1], ev[2], ev[3]) for item, o in outputs for ev in o["events"]]
        return {
            "results": {
                "site": ctx["site"],
                "gap_p10": p10,
                "events": len(events),
                "fraction_with_flip": flips / len(outputs),
                "all_flips_at_gap_minimum": at_min == len(events),
            },
            "counts": {
                "has_flip": {"k": [flips], "n": [len(outputs)]},
                "flip_at_small_gap_minimum": {"k": [at_min], "n": [len(events)]},
            },
            "rows": rows,
        }


class Moments(Experiment):
    name = "moments"
    csv_header = ("seed", "size", "f", "abs_f_pow_neg_s", "max_abs_df_deps_plus")

    def sizes(self, cfg):
        return list(cfg.moments.sizes or [cfg.model.size])

    def realize(self, cfg, ctx, item):
        spec = cfg.spec.combination()
        d = diagonalize(self.realization(cfg, item))
        f = eval_combination(spec, d)
        plus = np.abs(paired_gradient_profile(spec, d)) / math.sqrt(2.0)
        return {"f": f, "plus": plus}

    def reduce(self, cfg, ctx, outputs):
        sec = cfg.moments
        spec = cfg.spec.combination()
        q = combination_bound(spec, cfg.model.disorder)
        per_size = {}
        rows = []
        for size in self.sizes(cfg):
            chunk = [(item, o) for item, o in outputs if item.size == size]
            fs = np.array([o["f"] for _, o in chunk])
            rep = fractional_moment(fs, sec.s, sec.delta)
            plus = np.array([o["plus"] for _, o in chunk])
            floors = np.array([quantile_floor(col, sec.delta) for col in plus.T])
            j_best = int(np.argmax(floors))
            c_delta = float(floors[j_best])
            if c_delta > 0 and cfg.model.disorder > 0:
                bound = theorem_bound(q, sec.s, cfg.model.disorder, c_delta)
            else:
                bound = math.inf
            per_size[str(size)] = {
                "samples": rep.sample_count,
                "trim_count": rep.trim_count,
                "trimmed_mean": rep.trimmed_mean,
                "untrimmed_mean": rep.untrimmed_mean,
                "C_delta": c_delta,
                "C_delta_site": j_best,
                "theorem_bound": bound,
                "bound_holds": rep.trimmed_mean <= bound,
                "max_abs_f": float(np.abs(fs).max()),
            }
            with np.errstate(divide="ignore"):
                rows += [(item.seed, size, o["f"], abs(o["f"]) ** (-sec.s) if o["f"] else math.inf,
                          float(o["plus"].max())) for item, o in chunk]
        trimmed = [v["trimmed_mean"] for v in per_size.values()]
        untrimmed = [v["untrimmed_mean"] for v in per_size.values()]
        return {
            "results": {
                "s": sec.s,
                "delta": sec.delta,
                "Q": q,
                "per_size": per_size,
                "trimmed_ratio": max(trimmed) / min(trimmed),
                "untrimmed_ratio": max(untrimmed) / min(untrimmed),
                "all_within_Q": all(v["max_abs_f"] <= q for v in per_size.values()),
            },
            "rows": rows,
        }


class Decay(Experiment):
    name = "decay"
    csv_header = ("seed", "level", "energy", "center", "n_star")

    def prepare(self, cfg):
        return {"curve": gamma_curve(cfg)}

    def realize(self, cfg, ctx, item):
        sec = cfg.decay
        d = diagonalize(self.realization(cfg, item))
        size = d.size
        lo = int(math.floor(sec.rank_window[0] * size))
        hi = int(math.ceil(sec.rank_window[1] * size))
        curve = ctx["curve"]
        n_star = []
        for n in range(lo, hi):
            prof = decay_profile(d, n, float(curve(d.energies[n])), sec.epsilon_slack)
            n_star.append(-1 if prof.n_star is None else prof.n_star)
        return {
            "n_star": np.array(n_star),
            "energies": np.array(d.energies[lo:hi]),
            "centers": np.array(d.site_of[lo:hi]),
            "levels": np.arange(lo, hi),
        }

    def reduce(self, cfg, ctx, outputs):
        sec = cfg.decay
        n_star = np.concatenate([o["n_star"] for _, o in outputs])
        k = [int(np.count_nonzero((n_star < 0) | (n_star > t))) for t in sec.thresholds]
        rows = [(item.seed, int(l), float(e), int(c), int(s)) for item, o in outputs
                for l, e, c, s in zip(o["levels"], o["energies"], o["centers"], o["n_star"])]
        report = {
            "results": {"thresholds": sec.thresholds, "states": int(n_star.size),
                        "never_satisfied": int(np.count_nonzero(n_star < 0))},
            "counts": {"violating": {"k": k, "n": [int(n_star.size)] * len(k), "x": sec.thresholds}},
            "rows": rows,
        }
        tmp = EnsembleReport(self.name, {}, 0, 0, results=report["results"], counts=report["counts"])
        self.recompute(tmp)
        return report

    def recompute(self, report):
        c = report.counts["violating"]
        frac = np.array(c["k"]) / np.array(c["n"])
        report.results.update(violating_fraction=frac, nonincreasing=_is_nonincreasing(frac))


class Renorm(Experiment):
    name = "renorm"
    csv_header = ("seed", "distance", "abs_dV_deps_plus", "E0", "V0")

    def _center(self, cfg):
        x0 = cfg.renorm.center if cfg.renorm.center is not None else cfg.model.size // 2
        sec = cfg.renorm_experiment
        far = x0 + max(max(sec.distances), sec.x_delta) + 1
        if not 0 <= x0 < cfg.model.size or far >= cfg.model.size:
            raise ConfigError("renormalization center and distances do not fit in the box")
        return x0

    def prepare(self, cfg):
        x0 = self._center(cfg)
        base = cfg.spec.combination() if cfg.spec is not None else CombinationSpec.of((1, x0))
        return {"center": x0, "base": base, "curve": gamma_curve(cfg)}

    def realize(self, cfg, ctx, item):
        sec = cfg.renorm_experiment
        x0 = ctx["center"]
        d = diagonalize(self.realization(cfg, item))
        prof = v_derivative_profile(d, x0)
        js = x0 + np.asarray(sec.distances)
        dv_plus = np.abs(prof[js] + prof[js + 1]) / math.sqrt(2.0)
        rspec = RenormSpec(ctx["base"], cfg.renorm.beta, x0)
        plain, renormed = renormalized_paired_gradient(rspec, d, x0 + sec.x_delta)
        return {
            "dv_plus": dv_plus,
            "E0": d.energy_at(x0),
            "V0": overlap_v0(d, x0),
            "plain": abs(plain),
            "renormed": abs(renormed),
            "energies": np.array(d.energies),
        }

    def reduce(self, cfg, ctx, outputs):
        sec = cfg.renorm_experiment
        dv = np.array([o["dv_plus"] for _, o in outputs])
        powered = dv**sec.s
        means = [trimmed_mean(col, sec.delta)[0] for col in powered.T]
        slope, stderr = fit_exponent(sec.distances, means, log_x=False)
        rate = -slope
        curve = ctx["curve"]
        dos = estimate_dos([o["energies"] for _, o in outputs], half_width=cfg.model.disorder)
        g_min, g_max = gamma_extrema(curve, dos)
        target = 2.0 * g_min * sec.s
        threshold = beta_threshold(g_min, g_max, sec.x_delta, cfg.renorm.const)
        floor_plain = quantile_floor([o["plain"] for _, o in outputs], sec.floor_delta)
        floor_renorm = quantile_floor([o["renormed"] for _, o in outputs], sec.floor_delta)

        e0 = np.array([o["E0"] for _, o in outputs])
        in_band = np.abs(e0) < 2.0
        band_rate = None
        if in_band.sum() >= 20:
            band_means = [trimmed_mean(col, sec.delta)[0] for col in powered[in_band].T]
            band_rate = -fit_exponent(sec.distances, band_means, log_x=False)[0]

        cheb = []
        for k, _ in enumerate(sec.distances):
            moment = _fsum_mean(powered[:, k])
            for t in sec.chebyshev_thresholds:
                tail = float(np.mean(dv[:, k] >= t))
                cheb.append(tail <= moment / t**sec.s + 1e-15)
        rows = [(item.seed, dist, float(v), o["E0"], o["V0"]) for item, o in outputs
                for dist, v in zip(sec.distances, o["dv_plus"])]
        return {
            "results": {
                "center": ctx["center"],
                "distances": sec.distances,
                "trimmed_moments": means,
                "decay_rate": rate,
                "decay_rate_stderr": stderr,
                "gamma_min": g_min,
                "gamma_max": g_max,
                "target_rate": target,
                "relative_rate_error": abs(rate - target) / target,
                "in_band_decay_rate": band_rate,
                "in_band_states": int(in_band.sum()),
                "mean_V0": _fsum_mean([o["V0"] for _, o in outputs]),
                "beta": cfg.renorm.beta,
                "beta_threshold": threshold,
                "beta_below_threshold": cfg.renorm.beta < threshold,
                "floor_plain": floor_plain,
                "floor_renormalized": floor_renorm,
                "floor_relative_change": abs(floor_renorm - floor_plain) / floor_plain
                if floor_plain > 0 else None,
                "chebyshev_holds": all(cheb),
            },
            "rows": rows,
        }


EXPERIMENT_TYPES = {cls.name: cls() for cls in (
    Spectrum, Dos, Lyapunov, GradientFloor, LevelStats, SignScan, Moments, Decay, Renorm,
)}


def recompute_from_counts(report: EnsembleReport) -> None:
    EXPERIMENT_TYPES[report.experiment].recompute(report)
