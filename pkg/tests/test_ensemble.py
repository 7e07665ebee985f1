from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from anderson_lab.cli import main
from anderson_lab.ensemble import (
    EnsembleReport,
    aggregate,
    fit_exponent,
    load_report,
    parse_config,
    run_experiment,
    wilson_interval,
    work_items,
)
from anderson_lab.ensemble.config import config_schema, load_config
from anderson_lab.errors import ConfigError, DegenerateFit, FailureBudgetExceeded, SchemaMismatch
from anderson_lab.seeding import realization_seed

SMALL = {"model": {"size": 40, "disorder": 1.0}, "realizations": 6, "master_seed": 3}
LEVELS = {**SMALL, "experiment": "level_stats", "model": {"size": 60, "disorder": 1.0},
          "level_stats": {"interval_lengths": [0.01, 0.02, 0.04, 0.08]}}


def run(**cfg):
    return run_experiment(parse_config(cfg), persist=False)


class TestConfig:
    def test_defaults(self):
        cfg = parse_config({"experiment": "dos"})
        assert cfg.realizations == 100 and cfg.model.size == 100

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            parse_config({"experiment": "dos", "model": {"size": 10, "colour": "red"}})

    def test_missing_spec(self):
        with pytest.raises(ConfigError):
            parse_config({"experiment": "moments"})

    def test_spec_outside_box(self):
        with pytest.raises(ConfigError):
            parse_config({"experiment": "moments", "model": {"size": 50}, "spec": {"terms": [[1, 60]]}})

    def test_realizations_positive(self):
        with pytest.raises(ConfigError):
            parse_config({"experiment": "dos", "realizations": 0})

    def test_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: spectrum\nmodel:\n  size: 3\n  disorder: 0.0\nrealizations: 1\n")
        cfg = parse_config(load_config(path))
        assert cfg.model.size == 3

    def test_malformed_yaml(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: [unclosed\n")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_schema(self):
        schema = config_schema()
        assert schema["additionalProperties"] is False
        assert "experiment" in schema["required"]


class TestRunner:
    def test_clean_three_site_spectrum(self):
        rep = run(experiment="spectrum", model={"size": 3, "disorder": 0.0}, realizations=1)
        assert np.allclose(rep.results["energies"][0], [-math.sqrt(2), 0, math.sqrt(2)], atol=1e-12)

    def test_seeds(self):
        cfg = parse_config({**SMALL, "experiment": "dos", "first_index": 10})
        items = work_items(cfg)
        assert [it.seed for it in items] == [realization_seed(3, 10 + k) for k in range(6)]

    def test_per_size_seeds_are_distinct(self):
        cfg = parse_config({**SMALL, "experiment": "moments", "spec": {"terms": [[1, 5]]},
                            "moments": {"sizes": [20, 30]}})
        items = work_items(cfg)
        assert len({it.seed for it in items}) == 12

    def test_rerun_identical(self):
        a = run(**SMALL, experiment="dos")
        b = run(**SMALL, experiment="dos")
        assert a.payload_json() == b.payload_json()

    def test_thread_count_invariant(self):
        payloads = {run(**LEVELS, threads=t).payload_json() for t in (1, 2)}
        assert len(payloads) == 1

    def test_accounting(self):
        rep = run(**SMALL, experiment="spectrum")
        assert rep.included + rep.excluded_total == rep.realizations == 6
        for p in rep.probabilities.values():
            assert all(0 <= x <= 1 for x in p["p"])

    def test_failures_are_exclusions(self):
        with pytest.raises(FailureBudgetExceeded):
            run(**SMALL, experiment="spectrum", spectrum={"tol": 1e-30})

    def test_persist_round_trip(self, tmp_path):
        out, table = tmp_path / "r.json", tmp_path / "r.csv"
        cfg = parse_config({**SMALL, "experiment": "moments", "spec": {"terms": [[1, 10], [-1, 20]]},
                            "output": {"path": str(out), "csv": str(table)}})
        rep = run_experiment(cfg)
        back = load_report(out)
        assert back == rep
        assert json.loads(out.read_text())["schema"] == 1
        rows = list(csv.reader(table.open()))
        assert rows[0] == ["seed", "size", "f", "abs_f_pow_neg_s", "max_abs_df_deps_plus"]
        assert len(rows) == 7

    def test_persist_failure(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("")
        cfg = parse_config({**SMALL, "experiment": "dos", "output": {"path": str(blocker / "r.json")}})
        with pytest.raises(OSError):
            run_experiment(cfg)


class TestReport:
    def test_fit_exact_power_law(self):
        x = np.array([0.1, 0.2, 0.4])
        slope, err = fit_exponent(x, x**2)
        assert slope == pytest.approx(2.0, abs=1e-9) and err <= 1e-9

    def test_semilog_fit(self):
        x = np.array([5.0, 10, 15, 20])
        slope, _ = fit_exponent(x, np.exp(-0.3 * x), log_x=False)
        assert slope == pytest.approx(-0.3, abs=1e-12)

    def test_degenerate_fit(self):
        with pytest.raises(DegenerateFit):
            fit_exponent([1.0, 1.0], [1.0, 2.0])
        with pytest.raises(DegenerateFit):
            fit_exponent([1.0], [1.0])

    def test_wilson(self):
        lo, hi = wilson_interval(0, 100)
        assert lo == 0.0 and 0 < hi < 0.05
        lo, hi = wilson_interval(50, 100)
        assert lo < 0.5 < hi

    def test_self_merge_doubles_counts(self):
        rep = run(**SMALL, experiment="decay", decay={"thresholds": [3, 6]})
        merged = aggregate([rep, rep])
        for name, c in rep.counts.items():
            assert merged.counts[name]["k"] == [2 * k for k in c["k"]]
            assert merged.counts[name]["n"] == [2 * n for n in c["n"]]
        for name, p in rep.probabilities.items():
            assert merged.probabilities[name]["p"] == p["p"]
        assert merged.realizations == 12

    def test_pooled_minami_fit(self):
        batches = [run(**{**LEVELS, "realizations": 25, "first_index": 25 * b}) for b in range(4)]
        union = run(**{**LEVELS, "realizations": 100})
        pooled = aggregate(batches)
        assert pooled.counts == union.counts
        assert pooled.results["exponent"] == pytest.approx(union.results["exponent"], abs=1e-12)
        assert pooled.results["sup_density"] == pytest.approx(union.results["sup_density"], abs=1e-12)

    def test_schema_mismatch(self):
        a = run(**SMALL, experiment="dos")
        b = run(**SMALL, experiment="spectrum")
        with pytest.raises(SchemaMismatch):
            aggregate([a, b])
        data = a.to_dict()
        data["schema"] = 2
        with pytest.raises(SchemaMismatch):
            EnsembleReport.from_dict(data)

    def test_mismatched_grids(self):
        a = run(**LEVELS)
        b = run(**{**LEVELS, "level_stats": {"interval_lengths": [0.01, 0.02, 0.04, 0.1]}})
        with pytest.raises(SchemaMismatch):
            aggregate([a, b])

    def test_payload_excludes_timing(self):
        rep = run(**SMALL, experiment="dos")
        assert "timing" not in rep.payload() and "timing" in rep.to_dict()


class TestCli:
    def test_success(self, tmp_path):
        out = tmp_path / "dos.json"
        code = main(["dos", "--size", "30", "--realizations", "4", "--seed", "5", "--out", str(out)])
        assert code == 0
        rep = load_report(out)
        assert rep.config["master_seed"] == 5 and rep.included == 4

    def test_config_error(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: dos\nunknown: 1\n")
        assert main(["dos", "--config", str(path)]) == 2

    def test_experiment_mismatch(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: spectrum\n")
        assert main(["dos", "--config", str(path)]) == 2

    def test_missing_config_file(self, tmp_path):
        assert main(["dos", "--config", str(tmp_path / "nope.yaml")]) == 2

    def test_budget_exceeded(self, tmp_path):
        path = tmp_path / "c.yaml"
        path.write_text("experiment: spectrum\nmodel: {size: 20}\nrealizations: 3\nspectrum: {tol: 1.0e-30}\n")
        assert main(["spectrum", "--config", str(path)]) == 3

    def test_aggregate(self, tmp_path):
        paths = []
        for b in range(2):
            p = tmp_path / f"b{b}.json"
            main(["dos", "--size", "30", "--realizations", "3", "--out", str(p)])
            paths.append(str(p))
        out = tmp_path / "all.json"
        assert main(["aggregate", *paths, "--out", str(out)]) == 0
        assert load_report(out).realizations == 6

    def test_schema(self, capsys):
        assert main(["schema"]) == 0
        assert "properties" in json.loads(capsys.readouterr().out)
