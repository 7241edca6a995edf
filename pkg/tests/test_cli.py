"""Exit-code contract and machine-readable output of every subcommand."""

import csv
import io
import json
import math

import numpy as np
import pytest

from snrforge.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def parse_csv(text):
    rows = list(csv.reader(io.StringIO(text)))
    return rows[0], rows[1:]


BASE_CONFIG = {
    "schedule": {"family": "laplace", "mu": 0.0, "b": 0.5},
    "weighting": {"kind": "constant"},
    "target": "v",
    "dataset": {"kind": "gaussian_mixture_8", "n": 256, "seed": 3},
    "iterations": 10,
    "batch": 16,
    "hidden": 8,
    "freq_pairs": 2,
    "log_every": 5,
}


class TestSchedulePlot:
    def test_cosine_symmetric(self, capsys):
        code, out, _ = run_cli(
            capsys, "schedule-plot", "--spec", '{"family": "cosine"}',
            "--lambda-min", "-10", "--lambda-max", "10", "--points", "5",
        )
        assert code == 0
        header, rows = parse_csv(out)
        assert header == ["lambda", "pdf", "survival", "alpha", "sigma"]
        assert len(rows) == 5
        pdf = [float(r[1]) for r in rows]
        assert pdf[0] == pytest.approx(pdf[-1], rel=1e-12)
        assert pdf[1] == pytest.approx(pdf[-2], rel=1e-12)

    def test_laplace_peak_row(self, capsys):
        code, out, _ = run_cli(
            capsys, "schedule-plot", "--preset", "laplace_best",
            "--lambda-min", "-2", "--lambda-max", "2", "--points", "5",
        )
        assert code == 0
        _, rows = parse_csv(out)
        mid = rows[2]
        assert float(mid[0]) == 0.0
        assert float(mid[1]) == pytest.approx(1.0, abs=1e-12)

    def test_fm_logit_normal_matches_gaussian(self, capsys):
        code, out, _ = run_cli(
            capsys, "schedule-plot",
            "--spec", '{"family": "fm_logit_normal", "mu": 0.0, "sigma": 1.0}',
            "--lambda-min", "-8", "--lambda-max", "8", "--points", "41",
        )
        assert code == 0
        _, rows = parse_csv(out)
        for r in rows:
            lam, pdf = float(r[0]), float(r[1])
            expected = math.exp(-lam * lam / 8.0) / (2.0 * math.sqrt(2.0 * math.pi))
            assert pdf == pytest.approx(expected, abs=1e-9)

    def test_bad_spec_exits_2(self, capsys):
        code, _, err = run_cli(capsys, "schedule-plot", "--spec", '{"family": "nope"}')
        assert code == 2
        assert "family" in err


class TestValidate:
    def test_cosine_passes(self, capsys):
        code, out, _ = run_cli(capsys, "validate", "--spec", '{"family": "cosine"}')
        assert code == 0
        payload = json.loads(out)
        assert payload["failing"] == []
        assert payload["normalization_error"] < 1e-6

    def test_invalid_scale_exits_2(self, capsys):
        code, _, err = run_cli(
            capsys, "validate", "--spec", '{"family": "laplace", "mu": 0, "b": -1}'
        )
        assert code == 2
        assert "b" in err

    def test_cauchy_passes_with_analytic_mass(self, capsys):
        code, out, _ = run_cli(
            capsys, "validate", "--spec", '{"family": "cauchy", "mu": 0, "gamma": 1}'
        )
        assert code == 0
        assert json.loads(out)["failing"] == []


class TestSampleLambda:
    def test_draws_concentrate_at_location(self, capsys, tmp_path):
        out_path = tmp_path / "lam.csv"
        code, _, _ = run_cli(
            capsys, "sample-lambda", "--preset", "laplace_best",
            "--n", "20000", "--seed", "1", "--out", str(out_path),
        )
        assert code == 0
        header, rows = parse_csv(out_path.read_text())
        assert header == ["lambda"]
        lam = np.array([float(r[0]) for r in rows])
        assert lam.size == 20000
        assert abs(np.median(lam)) < 0.05  # Laplace(0, 0.5) median is 0


class TestTrain:
    def test_minimal_run_writes_artifacts(self, capsys, tmp_path):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(BASE_CONFIG))
        ckpt = tmp_path / "model.bin"
        trace = tmp_path / "trace.csv"
        code, out, _ = run_cli(
            capsys, "train", str(cfg_path),
            "--out-checkpoint", str(ckpt), "--out-trace", str(trace),
        )
        assert code == 0
        payload = json.loads(out)
        assert payload["step"] == 10
        assert ckpt.exists() and (tmp_path / "model.bin.json").exists()
        header, rows = parse_csv(trace.read_text())
        assert header == ["step", "loss", "lambda_mean"]
        assert rows[-1][0] == "10"

    def test_repeat_run_identical_trace(self, capsys, tmp_path):
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(BASE_CONFIG))
        traces = []
        for i in range(2):
            trace = tmp_path / f"trace{i}.csv"
            code, _, _ = run_cli(
                capsys, "train", str(cfg_path),
                "--out-checkpoint", str(tmp_path / f"m{i}.bin"),
                "--out-trace", str(trace),
            )
            assert code == 0
            traces.append(trace.read_text())
        assert traces[0] == traces[1]

    def test_missing_field_names_it(self, capsys, tmp_path):
        cfg = dict(BASE_CONFIG)
        del cfg["iterations"]
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        code, _, err = run_cli(
            capsys, "train", str(cfg_path), "--out-checkpoint", str(tmp_path / "m.bin")
        )
        assert code == 2
        assert "iterations" in err


@pytest.fixture()
def trained_checkpoint(tmp_path_factory):
    base = tmp_path_factory.mktemp("ckpt")
    cfg_path = base / "run.json"
    cfg_path.write_text(json.dumps(BASE_CONFIG))
    ckpt = base / "model.bin"
    code = main(["train", str(cfg_path), "--out-checkpoint", str(ckpt)])
    assert code == 0
    return ckpt


class TestSample:
    def test_plan_and_samples(self, capsys, trained_checkpoint, tmp_path):
        samples = tmp_path / "samples.csv"
        plan = tmp_path / "plan.csv"
        code, _, _ = run_cli(
            capsys, "sample", str(trained_checkpoint),
            "--steps", "50", "--n", "20", "--seed", "2",
            "--out-samples", str(samples), "--out-plan", str(plan),
        )
        assert code == 0
        header, rows = parse_csv(samples.read_text())
        assert header == ["x", "y"]
        assert len(rows) == 20
        pheader, prows = parse_csv(plan.read_text())
        assert pheader == ["i", "t", "lambda", "t_prime", "alpha", "sigma"]
        assert len(prows) == 51

    def test_cosine_plan_self_aligned(self, capsys, tmp_path):
        cfg = dict(BASE_CONFIG)
        cfg["schedule"] = {"family": "cosine"}
        cfg_path = tmp_path / "run.json"
        cfg_path.write_text(json.dumps(cfg))
        ckpt = tmp_path / "model.bin"
        assert main(["train", str(cfg_path), "--out-checkpoint", str(ckpt)]) == 0
        plan = tmp_path / "plan.csv"
        code, _, _ = run_cli(
            capsys, "sample", str(ckpt), "--steps", "50", "--n", "0",
            "--out-samples", str(tmp_path / "s.csv"), "--out-plan", str(plan),
        )
        assert code == 0
        _, prows = parse_csv(plan.read_text())
        for r in prows:
            assert float(r[1]) == pytest.approx(float(r[3]), abs=1e-9)

    def test_aligned_coefficients_across_schedules(self, capsys, trained_checkpoint, tmp_path):
        # the Laplace plan's (alpha, sigma) columns must match a cosine
        # plan's row by row
        plan_l = tmp_path / "plan_laplace.csv"
        code, _, _ = run_cli(
            capsys, "sample", str(trained_checkpoint), "--steps", "50", "--n", "0",
            "--out-samples", str(tmp_path / "s1.csv"), "--out-plan", str(plan_l),
        )
        assert code == 0
        code, _, _ = run_cli(
            capsys, "sample", str(trained_checkpoint),
            "--spec", '{"family": "cosine"}', "--force-schedule",
            "--steps", "50", "--n", "0",
            "--out-samples", str(tmp_path / "s2.csv"),
            "--out-plan", str(tmp_path / "plan_cosine.csv"),
        )
        assert code == 0
        _, rows_l = parse_csv(plan_l.read_text())
        _, rows_c = parse_csv((tmp_path / "plan_cosine.csv").read_text())
        for rl, rc in zip(rows_l, rows_c):
            assert float(rl[4]) == pytest.approx(float(rc[4]), abs=1e-8)
            assert float(rl[5]) == pytest.approx(float(rc[5]), abs=1e-8)

    def test_empty_sample_file_keeps_header(self, capsys, trained_checkpoint, tmp_path):
        samples = tmp_path / "samples.csv"
        code, _, _ = run_cli(
            capsys, "sample", str(trained_checkpoint), "--n", "0",
            "--out-samples", str(samples),
        )
        assert code == 0
        assert samples.read_text() == "x,y\n"

    def test_schedule_mismatch_needs_force(self, capsys, trained_checkpoint, tmp_path):
        code, _, err = run_cli(
            capsys, "sample", str(trained_checkpoint),
            "--spec", '{"family": "cosine"}',
            "--out-samples", str(tmp_path / "s.csv"),
        )
        assert code == 2
        assert "force" in err

    def test_matching_schedule_needs_no_force(self, capsys, trained_checkpoint, tmp_path):
        code, _, _ = run_cli(
            capsys, "sample", str(trained_checkpoint),
            "--spec", '{"family": "laplace", "mu": 0.0, "b": 0.5}',
            "--n", "5", "--out-samples", str(tmp_path / "s.csv"),
        )
        assert code == 0


class TestCompare:
    def _configs(self):
        a = dict(BASE_CONFIG)
        a["schedule"] = {"family": "cosine"}
        a.update(iterations=40, sampler_steps=8, n_eval=64, eval_every=20)
        b = dict(a)
        b = json.loads(json.dumps(a))
        b["schedule"] = {"family": "laplace", "mu": 0.0, "b": 0.5}
        return [a, b]

    def test_summary_declares_winner(self, capsys, tmp_path):
        cfg_path = tmp_path / "configs.json"
        cfg_path.write_text(json.dumps(self._configs()))
        out_csv = tmp_path / "rows.csv"
        code, out, _ = run_cli(
            capsys, "compare", str(cfg_path),
            "--out-csv", str(out_csv), "--out-summary", str(tmp_path / "summary.json"),
        )
        assert code == 0
        summary = json.loads(out)
        assert len(summary["results"]) == 2
        assert "v" in summary["best_by_target"]
        header, rows = parse_csv(out_csv.read_text())
        assert header == [
            "config_id", "schedule_json", "step", "sliced_wasserstein", "energy_distance",
        ]
        assert len(rows) == 4  # 2 configs x 2 checkpoints

    def test_duplicate_configs_tie(self, capsys, tmp_path):
        cfgs = self._configs()
        cfgs[1] = json.loads(json.dumps(cfgs[0]))
        cfg_path = tmp_path / "configs.json"
        cfg_path.write_text(json.dumps(cfgs))
        code, out, _ = run_cli(capsys, "compare", str(cfg_path))
        assert code == 0
        summary = json.loads(out)
        finals = [r["final_sliced_wasserstein"] for r in summary["results"]]
        assert finals[0] == finals[1]
        assert sorted(summary["best_by_target"]["v"]) == [0, 1]

    def test_single_config_exits_2(self, capsys, tmp_path):
        cfg_path = tmp_path / "configs.json"
        cfg_path.write_text(json.dumps(self._configs()[:1]))
        code, _, err = run_cli(capsys, "compare", str(cfg_path))
        assert code == 2
        assert "2" in err

    def test_invalid_config_rejected_before_training(self, capsys, tmp_path):
        cfgs = self._configs()
        del cfgs[1]["target"]
        cfg_path = tmp_path / "configs.json"
        cfg_path.write_text(json.dumps(cfgs))
        code, _, err = run_cli(capsys, "compare", str(cfg_path))
        assert code == 2
        assert "target" in err


class TestArgumentErrors:
    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 2

    def test_missing_checkpoint(self, capsys, tmp_path):
        code, _, err = run_cli(
            capsys, "sample", str(tmp_path / "missing.bin"),
            "--out-samples", str(tmp_path / "s.csv"),
        )
        assert code == 2
