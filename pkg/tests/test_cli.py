"""CLI surface tests on a miniature synthetic experiment: config parsing,
archive resume semantics, evaluation outputs, report determinism, kernel
subcommands, and exit codes."""

import json
import os

import pytest

from tarsim.cli import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_OK,
    evaluate,
    load_config,
    main,
    parse_config,
    report,
    simulate,
)
from tarsim.errors import ConfigError, DataError
from tarsim.evaluation import read_records_csv


def tiny_config(output_dir, seeds=2):
    return {
        "corpus": {
            "synthetic": {
                "doc_count": 250,
                "vocab_size": 200,
                "corpus_seed": 5,
                "categories": [
                    {"id": "easy-cat", "prevalence": 0.1, "difficulty": 0.9},
                    {"id": "hard-cat", "prevalence": 0.1, "difficulty": 0.3},
                ],
            }
        },
        "seeds_per_category": seeds,
        "batch_size": 50,
        "targets": [0.3, 0.7],
        "global_seed": 3,
        "rules": [
            {"name": "quant"},
            {"name": "quant_ci"},
            {"name": "batch_pos", "threshold": 5, "patience": 1},
            {"name": "budget"},
        ],
        "output_dir": str(output_dir),
    }


@pytest.fixture()
def config_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(tiny_config(tmp_path / "out")))
    return path


class TestConfigParsing:
    def test_load_valid(self, config_file):
        config = load_config(config_file)
        assert config.batch_size == 50
        assert config.targets == (0.3, 0.7)
        assert len(config.rules) == 4

    def test_missing_corpus(self):
        with pytest.raises(ConfigError):
            parse_config({"rules": [{"name": "quant"}]})

    def test_missing_rules(self):
        with pytest.raises(ConfigError):
            parse_config({"corpus": {"synthetic": {"categories": []}}, "rules": []})

    def test_bad_target(self, tmp_path):
        raw = tiny_config(tmp_path)
        raw["targets"] = [0.0]
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_unknown_rule(self, tmp_path):
        raw = tiny_config(tmp_path)
        raw["rules"] = [{"name": "nonsense"}]
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_both_corpus_kinds_rejected(self, tmp_path):
        raw = tiny_config(tmp_path)
        raw["corpus"]["svmlight"] = {"path": "x"}
        with pytest.raises(ConfigError):
            parse_config(raw)

    def test_invalid_json_file(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_config(path)


class TestSimulate:
    def test_run_matrix_files(self, tmp_path):
        config = parse_config(tiny_config(tmp_path / "out"))
        traj_dir = simulate(config, tmp_path / "out")
        files = sorted(p.name for p in traj_dir.glob("*.npz"))
        assert files == [
            "easy-cat__r0.npz", "easy-cat__r1.npz",
            "hard-cat__r0.npz", "hard-cat__r1.npz",
        ]
        manifest = json.loads((traj_dir / "manifest.json").read_text())
        assert len(manifest["runs"]) == 4
        corpus_manifest = json.loads(
            (traj_dir / "corpus_manifest.json").read_text())
        bins = {c["id"]: c["difficulty_bin"]
                for c in corpus_manifest["categories"]}
        assert bins["easy-cat"] == "easy"
        assert bins["hard-cat"] == "hard"

    def test_resume_skips_completed(self, tmp_path):
        config = parse_config(tiny_config(tmp_path / "out"))
        traj_dir = simulate(config, tmp_path / "out")
        mtimes = {p.name: os.path.getmtime(p) for p in traj_dir.glob("*.npz")}
        simulate(config, tmp_path / "out")
        after = {p.name: os.path.getmtime(p) for p in traj_dir.glob("*.npz")}
        assert mtimes == after

    def test_corrupt_file_refused_then_forced(self, tmp_path):
        config = parse_config(tiny_config(tmp_path / "out"))
        traj_dir = simulate(config, tmp_path / "out")
        victim = traj_dir / "easy-cat__r0.npz"
        victim.write_bytes(b"garbage")
        with pytest.raises(DataError):
            simulate(config, tmp_path / "out")
        simulate(config, tmp_path / "out", force=True)
        from tarsim.simulation import load_trajectory

        load_trajectory(victim)  # recomputed and readable again

    def test_foreign_archive_refused(self, tmp_path):
        config = parse_config(tiny_config(tmp_path / "out"))
        simulate(config, tmp_path / "out")
        changed = tiny_config(tmp_path / "out")
        changed["batch_size"] = 25
        with pytest.raises(DataError):
            simulate(parse_config(changed), tmp_path / "out")
        simulate(parse_config(changed), tmp_path / "out", force=True)

    def test_worker_pool_matches_serial(self, tmp_path):
        config = parse_config(tiny_config(tmp_path / "serial"))
        serial_dir = simulate(config, tmp_path / "serial")
        config2 = parse_config(tiny_config(tmp_path / "pooled"))
        pooled_dir = simulate(config2, tmp_path / "pooled", workers=2)
        from tarsim.simulation import load_trajectory

        for name in ("easy-cat__r0.npz", "hard-cat__r1.npz"):
            a = load_trajectory(serial_dir / name)
            b = load_trajectory(pooled_dir / name)
            assert a.batches == b.batches
            assert a.cumulative_relevant == b.cumulative_relevant


class TestEvaluateAndReport:
    @pytest.fixture()
    def evaluated(self, tmp_path):
        out = tmp_path / "out"
        config = parse_config(tiny_config(out))
        simulate(config, out)
        results_dir = evaluate(config, out)
        return config, out, results_dir

    def test_record_counts(self, evaluated):
        config, out, results_dir = evaluated
        records = read_records_csv(results_dir / "cost_records.csv")
        # 4 runs x 4 rules x 2 targets
        assert len(records) == 32
        assert (results_dir / "aggregate.json").exists()
        assert (results_dir / "cost_dynamics.csv").exists()

    def test_agnostic_rules_share_stop_round_across_targets(self, evaluated):
        _, _, results_dir = evaluated
        records = read_records_csv(results_dir / "cost_records.csv")
        by_run = {}
        for r in records:
            if r.rule_id.startswith("BatchPos"):
                by_run.setdefault(r.run_id, set()).add(r.stop_round)
        assert by_run
        assert all(len(stops) == 1 for stops in by_run.values())

    def test_missing_trajectory_named(self, evaluated):
        config, out, _ = evaluated
        victim = out / "trajectories" / "easy-cat__r0.npz"
        victim.unlink()
        with pytest.raises(DataError, match="easy-cat__r0"):
            evaluate(config, out)

    def test_evaluate_without_archive(self, tmp_path):
        config = parse_config(tiny_config(tmp_path / "nowhere"))
        with pytest.raises(DataError):
            evaluate(config, tmp_path / "nowhere")

    def test_report_outputs_and_determinism(self, evaluated):
        config, out, _ = evaluated
        report_dir = report(config, out)
        names = ["mse_by_target.csv", "cost_ratio_by_target.csv",
                 "recall_distributions.csv", "stop_markers.csv", "tables.txt"]
        first = {n: (report_dir / n).read_bytes() for n in names}
        report(config, out)
        second = {n: (report_dir / n).read_bytes() for n in names}
        assert first == second

    def test_cost_dynamics_rows(self, evaluated):
        config, out, results_dir = evaluated
        lines = (results_dir / "cost_dynamics.csv").read_text().splitlines()
        header, rows = lines[0], lines[1:]
        assert header == "run_id,target,round,reviewed,penalty,total"
        from tarsim.simulation import load_trajectory

        traj = load_trajectory(out / "trajectories" / "easy-cat__r0.npz")
        per_run = [r for r in rows if r.startswith("easy-cat-seed")]
        assert len(per_run) == 2 * traj.n_rounds * 2  # 2 runs x targets


class TestMainEntry:
    def test_simulate_evaluate_report_exit_codes(self, tmp_path, capsys):
        out = tmp_path / "out"
        path = tmp_path / "config.json"
        path.write_text(json.dumps(tiny_config(out)))
        assert main(["simulate", "-c", str(path)]) == EXIT_OK
        assert main(["evaluate", "-c", str(path)]) == EXIT_OK
        assert main(["report", "-c", str(path)]) == EXIT_OK

    def test_config_error_exit(self, tmp_path, capsys):
        path = tmp_path / "bad.json"
        path.write_text("{}")
        assert main(["simulate", "-c", str(path)]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_data_error_exit(self, tmp_path, capsys):
        path = tmp_path / "config.json"
        path.write_text(json.dumps(tiny_config(tmp_path / "missing")))
        assert main(["evaluate", "-c", str(path)]) == EXIT_DATA
        assert "data error" in capsys.readouterr().err

    def test_kernel_hypergeom(self, capsys):
        code = main(["kernel", "hypergeom", "--population", "10",
                     "--successes", "4", "--draws", "3", "--k", "1"])
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["cdf"] == pytest.approx(2 / 3)

    def test_kernel_quant(self, capsys):
        code = main(["kernel", "quant", "--reviewed", "0.9,0.8",
                     "--unreviewed", "0.3,0.1"])
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["point"] == pytest.approx(0.8095238095238095)
        assert payload["ci_lower"] == pytest.approx(0.0654278711294809)

    def test_kernel_knee(self, capsys):
        code = main(["kernel", "knee", "--points", "0:0,200:180,400:260,600:300"])
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["knee_index"] == 200
        assert payload["rho"] == pytest.approx(0.9 * 400 / 121)

    def test_kernel_corr(self, capsys):
        code = main(["kernel", "corr", "--x", "1,2,3,5", "--y", "1,2,3,4"])
        assert code == EXIT_OK
        payload = json.loads(capsys.readouterr().out)
        assert payload["r"] == pytest.approx(0.9827076298239908)

    def test_kernel_bad_parameters_exit(self, capsys):
        code = main(["kernel", "hypergeom", "--population", "5",
                     "--successes", "9", "--draws", "3", "--k", "1"])
        assert code == EXIT_CONFIG
