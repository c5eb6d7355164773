import dataclasses
import json
import time

import numpy as np
import pytest

from momcs import __version__
from momcs.cli import main, run_theory_suite
from momcs.config import ConfigError, plan_from_ini, read_ini
from momcs.experiments import (
    BENCH_COLUMNS,
    ExperimentPlan,
    derive_seed,
    emit_trace,
    make_trial_problem,
    read_csv,
    run_plan,
)
from momcs.generator import load_weights, random_generator
from momcs.recovery import RecoveryConfig, recover
from momcs.sensing import Gaussian, load_problem, read_array, synthesize

FAST = RecoveryConfig(algorithm="mom_tournament", M=4, iterations=30, restarts=2, step_size=0.05)


def small_plan(tmp_path, **kw):
    base = dict(
        scenario="heavy_tailed",
        m_grid=[40],
        algorithms={"mom": FAST, "erm": RecoveryConfig(algorithm="erm", iterations=30, restarts=2)},
        trials=2,
        generator_dims=[3, 10, 20],
        out=str(tmp_path),
    )
    base.update(kw)
    return ExperimentPlan(**base)


def without_timing(path):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in read_csv(path)]


class TestSeeds:
    def test_deterministic_and_distinct(self):
        assert derive_seed(7, 1, 100, 0, 3) == derive_seed(7, 1, 100, 0, 3)
        keys = [(s, m, a, t) for s in range(3) for m in (100, 200) for a in range(3) for t in range(5)]
        assert len({derive_seed(7, *k) for k in keys}) == len(keys)
        assert derive_seed(7, 1, 100, 0, 3) != derive_seed(8, 1, 100, 0, 3)

    def test_cell_rerunnable_in_isolation(self, tmp_path):
        plan = small_plan(tmp_path, trials=3)
        net = plan.generator()
        a, _ = make_trial_problem(plan, net, 40, 2)
        b, _ = make_trial_problem(plan, net, 40, 2)
        assert a.A.tobytes() == b.A.tobytes() and a.y.tobytes() == b.y.tobytes()


class TestRunPlan:
    def test_single_cell(self, tmp_path):
        plan = small_plan(tmp_path, algorithms={"mom": FAST}, trials=1)
        res = run_plan(plan)
        lines = (tmp_path / "bench.csv").read_text().splitlines()
        assert lines[0].startswith("#")
        assert lines[1] == ",".join(BENCH_COLUMNS)
        assert len(lines) == 3
        assert len(res.rows) == 1 and len(res.summary) == 1

    def test_same_seed_same_tables(self, tmp_path):
        run_plan(small_plan(tmp_path / "a"))
        run_plan(small_plan(tmp_path / "b"))
        assert without_timing(tmp_path / "a" / "bench.csv") == without_timing(tmp_path / "b" / "bench.csv")
        assert (tmp_path / "a" / "summary.csv").read_text() == (tmp_path / "b" / "summary.csv").read_text()
        run_plan(small_plan(tmp_path / "c", master_seed=1))
        assert without_timing(tmp_path / "a" / "bench.csv") != without_timing(tmp_path / "c" / "bench.csv")

    def test_worker_pool_matches_serial(self, tmp_path):
        run_plan(small_plan(tmp_path / "serial"))
        run_plan(small_plan(tmp_path / "pool"), workers=2)
        assert without_timing(tmp_path / "serial" / "bench.csv") == without_timing(tmp_path / "pool" / "bench.csv")

    def test_rows_match_direct_recovery(self, tmp_path):
        plan = small_plan(tmp_path, algorithms={"mom": FAST}, trials=1)
        row = run_plan(plan).rows[0]
        net = plan.generator()
        prob, _ = make_trial_problem(plan, net, 40, 0)
        seed = derive_seed(0, 1, 40, 1, 0) % 2**63
        rep = recover(prob, net, dataclasses.replace(FAST, seed=seed))
        assert row["recon_error_per_pixel"] == rep.recon_error_per_pixel

    def test_full_precision_floats(self, tmp_path):
        res = run_plan(small_plan(tmp_path, trials=1))
        back = read_csv(tmp_path / "bench.csv")
        for r, b in zip(res.rows, back):
            assert float(b["recon_error_per_pixel"]) == r["recon_error_per_pixel"]

    def test_summary_interval(self, tmp_path):
        res = run_plan(small_plan(tmp_path, trials=3))
        for s in res.summary:
            err = res.errors(s["m"], s["algorithm"])
            assert s["mean"] == pytest.approx(err.mean())
            assert s["ci_low"] <= s["mean"] <= s["ci_high"]

    def test_divergence_recorded_not_fatal(self, tmp_path):
        bad = RecoveryConfig(algorithm="erm", optimizer="gd", step_size=1e8, iterations=20, restarts=1)
        res = run_plan(small_plan(tmp_path, algorithms={"bad": bad}, trials=2))
        assert all(r["diverged"] == 1 for r in res.rows)
        assert res.summary[0]["diverged"] == 2

    @pytest.mark.parametrize(
        "kw",
        [
            {"scenario": "mnist"},
            {"m_grid": []},
            {"trials": 0},
            {"m_grid": [42]},
            {"algorithms": {}},
        ],
    )
    def test_invalid_plans_rejected_before_work(self, tmp_path, kw):
        with pytest.raises(ValueError):
            run_plan(small_plan(tmp_path, **kw))
        assert not (tmp_path / "bench.csv").exists()


class TestTrace:
    def test_trace_rows(self, tmp_path):
        net = random_generator([3, 10, 20], seed=0)
        prob = synthesize(net, np.ones(3), 40, Gaussian(), seed=0)
        rep = recover(prob, net, RecoveryConfig(M=4, iterations=10, restarts=2))
        rows = emit_trace(rep, tmp_path / "trace.csv", master_seed=5)
        back = read_csv(tmp_path / "trace.csv")
        assert len(rows) == len(back) == 10
        elapsed = [float(r["elapsed_seconds"]) for r in back]
        assert elapsed == sorted(elapsed)
        assert float(back[-1]["objective"]) == rep.final_objective
        assert (tmp_path / "trace.csv").read_text().startswith(f"# momcs {__version__} master_seed=5")


class TestTheorySuite:
    def test_small_default_suite(self, tmp_path):
        t0 = time.perf_counter()
        rows, ok = run_theory_suite(out=tmp_path / "t.jsonl", log=lambda *_: None)
        assert time.perf_counter() - t0 < 60
        assert ok
        text = (tmp_path / "t.jsonl").read_text().splitlines()
        assert text[0].startswith("# momcs") and "master_seed=0" in text[0]
        checks = {json.loads(line)["check"] for line in text[1:]}
        assert {"objective_bound", "batch_srec[generator]", "batch_srec[subspace]", "multiplier_bound"} <= checks

    def test_noiseless_objective_bound(self):
        rows, _ = run_theory_suite(overrides={"sigma": "0", "calibrate": "false", "trials": "5"}, log=lambda *_: None)
        bound = [r for r in rows if r["check"] == "objective_bound"]
        assert bound and all(r["pass_rate"] == 1.0 for r in bound)

    def test_malformed_key_named(self, tmp_path):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[theory]\ntrials = many\n")
        with pytest.raises(ConfigError, match="trials"):
            run_theory_suite(cfg, log=lambda *_: None)
        cfg.write_text("[theory]\ntrails = 5\n")
        with pytest.raises(ConfigError, match="trails"):
            run_theory_suite(cfg, log=lambda *_: None)

    def test_exit_status(self, tmp_path, capsys):
        assert main(["theory", "--calibrate", "false", "--trials", "5", "--out", str(tmp_path / "t.jsonl")]) == 0
        # an unreachable gamma makes the S-REC check fail
        assert main(["theory", "--calibrate", "false", "--trials", "5", "--gamma", "3"]) == 1
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[theory]\ntrials = many\n")
        assert main(["theory", "--config", str(cfg)]) == 2
        assert "trials" in capsys.readouterr().err


class TestConfigFiles:
    def test_plan_sections(self, tmp_path):
        cfg = tmp_path / "plan.ini"
        cfg.write_text(
            "[plan]\nscenario = corrupted  ; outliers on\nm_grid = 40, 80\ntrials = 3\n"
            "[algorithm:mom]\nalgorithm = mom_tournament\nM = 4\nstep_size = 0.01\n"
            "[algorithm:erm]\nalgorithm = erm\n"
        )
        plan = plan_from_ini(read_ini(cfg), {"trials": "7"}, {"iterations": "11"})
        assert plan.scenario == "corrupted" and plan.m_grid == [40, 80] and plan.trials == 7
        assert plan.algorithms["mom"].M == 4 and plan.algorithms["mom"].step_size == 0.01
        assert all(c.iterations == 11 for c in plan.algorithms.values())

    @pytest.mark.parametrize(
        "text,key",
        [
            ("[plan]\nm_grid = 40, x\n", "m_grid"),
            ("[plan]\nbogus = 1\n", "bogus"),
            ("[algorithm:a]\nstep_size = fast\n", "step_size"),
            ("[other]\nx = 1\n", "other"),
        ],
    )
    def test_errors_name_the_key(self, tmp_path, text, key):
        cfg = tmp_path / "p.ini"
        cfg.write_text(text)
        with pytest.raises(ConfigError, match=key):
            plan_from_ini(read_ini(cfg))


class TestCommands:
    def test_gen_synth_recover_bench(self, tmp_path, capsys):
        w = tmp_path / "g.gnw"
        assert main(["gen", "--dims", "3,10,20", "--seed", "2", "--out", str(w)]) == 0
        assert load_weights(w).layer_dims == [3, 10, 20]

        p = tmp_path / "prob"
        assert main(["synth", "--generator", str(w), "--m", "40", "--epsilon", "0.05", "--seed", "1", "--out", str(p)]) == 0
        prob = load_problem(p)
        assert prob.m == 40 and prob.corrupted_rows.size == 2

        r = tmp_path / "rec"
        args = ["recover", "--problem", str(p), "--generator", str(w), "--out", str(r)]
        assert main(args + ["--algorithm", "mom_tournament", "--M", "4", "--iterations", "25", "--restarts", "2"]) == 0
        summary = json.loads((r / "report.json").read_text())
        assert summary["algorithm"] == "mom_tournament"
        assert len(read_csv(r / "trace.csv")) == 25
        assert read_array(r / "z_hat.bin").shape == (3,)

        cfg = tmp_path / "rec.ini"
        cfg.write_text("[recover]\nalgorithm = erm\niterations = 5\nrestarts = 1\n")
        assert main(["recover", "--problem", str(p), "--generator", str(w), "--config", str(cfg), "--out", str(r)]) == 0
        assert json.loads((r / "report.json").read_text())["algorithm"] == "erm"

        b = tmp_path / "bench"
        bench = ["bench", "--seed", "3", "--out", str(b), "--m-grid", "40", "--trials", "1", "--generator-file", str(w), "--iterations", "5"]
        assert main(bench) == 0
        assert (b / "bench.csv").read_text().startswith("# momcs") and "master_seed=3" in (b / "bench.csv").read_text()
        capsys.readouterr()

    def test_bad_input_exit_code(self, tmp_path, capsys):
        assert main(["recover", "--problem", str(tmp_path / "missing"), "--generator", str(tmp_path / "x"), "--out", str(tmp_path)]) == 2
        cfg = tmp_path / "plan.ini"
        cfg.write_text("[algorithm:mom]\nM = 4\n")
        assert main(["bench", "--config", str(cfg), "--m-grid", "41", "--trials", "1"]) == 2
        assert "error" in capsys.readouterr().err
