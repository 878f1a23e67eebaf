"""Experiment orchestration: ``simulate``, ``evaluate``, ``report``, and
the ``kernel`` debug surface.

A single JSON config drives everything. ``simulate`` materializes the
seed x category run matrix into an immutable trajectory archive (resumable
by fingerprint); ``evaluate`` replays every configured rule and recall
target over the archive into a records table, the aggregate report, and
per-round cost dynamics; ``report`` renders tables and plot-ready data
from the results alone. Outputs carry no timestamps, so identical config
and seed give byte-identical result files.

Exit codes: 0 success, 1 configuration error, 2 data error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .corpus import (
    CategoryTask,
    Corpus,
    assign_difficulty_bin,
    assign_prevalence_bin,
    bm25_saturate,
    difficulty_probe,
    load_svmlight,
    read_manifest,
    synthesize,
    write_manifest,
)
from .errors import ConfigError, DataError, TarsimError
from .estimators import hypergeometric_cdf, knee_point, pearson_corr, quant_ci
from .evaluation import (
    aggregate,
    idealized_penalty,
    read_records_csv,
    score_rule_decisions,
    write_records_csv,
)
from .simulation import (
    RunTrajectory,
    load_trajectory,
    run as run_simulation,
    save_trajectory,
    verify_trajectory,
)
from .stopping import evaluate_rules, parse_rule_config

__all__ = ["ExperimentConfig", "load_config", "simulate", "evaluate", "report",
           "main"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2

ARCHIVE_MANIFEST = "manifest.json"
DEFAULT_TARGETS = (0.1, 0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class SyntheticCategorySpec:
    category_id: str
    prevalence: float
    difficulty: float


@dataclass(frozen=True)
class ExperimentConfig:
    corpus_spec: dict
    rules: tuple
    rule_specs: tuple[dict, ...]
    targets: tuple[float, ...] = DEFAULT_TARGETS
    seeds_per_category: int = 10
    batch_size: int = 200
    max_rounds: int | None = None
    global_seed: int = 0
    bm25_k1: float = 1.2
    l2_weight: float = 1.0
    tol: float = 1e-6
    max_iter: int = 1000
    difficulty_bands: tuple[float, float] = (0.45, 0.7)
    prevalence_bands: tuple[float, float] = (0.02, 0.1)
    output_dir: str = "runs"

    def sim_params(self) -> dict:
        """The parameters that determine trajectory content, for
        fingerprinting and resume checks."""
        return {
            "corpus": self.corpus_spec,
            "seeds_per_category": self.seeds_per_category,
            "batch_size": self.batch_size,
            "max_rounds": self.max_rounds,
            "global_seed": self.global_seed,
            "bm25_k1": self.bm25_k1,
            "l2_weight": self.l2_weight,
            "tol": self.tol,
            "max_iter": self.max_iter,
        }


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


def parse_config(raw: dict) -> ExperimentConfig:
    if "corpus" not in raw:
        raise ConfigError("config needs a 'corpus' section")
    corpus_spec = raw["corpus"]
    if not (("synthetic" in corpus_spec) ^ ("svmlight" in corpus_spec)):
        raise ConfigError("corpus must be exactly one of 'synthetic' or 'svmlight'")

    rule_specs = raw.get("rules")
    if not rule_specs:
        raise ConfigError("config needs at least one rule")
    rules = tuple(parse_rule_config(spec) for spec in rule_specs)

    targets = tuple(float(t) for t in raw.get("targets", DEFAULT_TARGETS))
    if not targets or any(not 0.0 < t <= 1.0 for t in targets):
        raise ConfigError("targets must be a non-empty list within (0, 1]")

    seeds = int(raw.get("seeds_per_category", 10))
    if seeds < 1:
        raise ConfigError("seeds_per_category must be >= 1")

    bands_d = raw.get("difficulty_bands", {})
    bands_p = raw.get("prevalence_bands", {})
    model = raw.get("model", {})
    return ExperimentConfig(
        corpus_spec=corpus_spec,
        rules=rules,
        rule_specs=tuple(rule_specs),
        targets=targets,
        seeds_per_category=seeds,
        batch_size=int(raw.get("batch_size", 200)),
        max_rounds=raw.get("max_rounds"),
        global_seed=int(raw.get("global_seed", 0)),
        bm25_k1=float(raw.get("bm25_k1", 1.2)),
        l2_weight=float(model.get("l2_weight", 1.0)),
        tol=float(model.get("tol", 1e-6)),
        max_iter=int(model.get("max_iter", 1000)),
        difficulty_bands=(float(bands_d.get("hard_max", 0.45)),
                          float(bands_d.get("easy_min", 0.7))),
        prevalence_bands=(float(bands_p.get("rare_max", 0.02)),
                          float(bands_p.get("common_min", 0.1))),
        output_dir=str(raw.get("output_dir", "runs")),
    )


def _stable_seed(*parts) -> int:
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:4], "big")


def _slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name)


def build_corpora(config: ExperimentConfig) -> list[tuple[Corpus, CategoryTask, float]]:
    """One (saturated corpus, binned task, probe value) triple per category."""
    hard_max, easy_min = config.difficulty_bands
    rare_max, common_min = config.prevalence_bands
    out = []
    if "synthetic" in config.corpus_spec:
        spec = config.corpus_spec["synthetic"]
        doc_count = int(spec.get("doc_count", 5000))
        vocab = int(spec.get("vocab_size", 2000))
        corpus_seed = int(spec.get("corpus_seed", 0))
        categories = spec.get("categories")
        if not categories:
            raise ConfigError("synthetic corpus needs a 'categories' list")
        for entry in categories:
            cat = SyntheticCategorySpec(
                category_id=str(entry["id"]),
                prevalence=float(entry["prevalence"]),
                difficulty=float(entry["difficulty"]),
            )
            raw_corpus, task = synthesize(
                cat.prevalence, cat.difficulty, doc_count, vocab,
                seed=_stable_seed(corpus_seed, cat.category_id),
                category_id=cat.category_id,
            )
            corpus = bm25_saturate(raw_corpus, config.bm25_k1)
            probe = difficulty_probe(
                corpus, task, seed=_stable_seed(corpus_seed, cat.category_id, "probe"),
                l2_weight=config.l2_weight,
            )
            task = CategoryTask.build(
                cat.category_id, task.positive_set, doc_count,
                difficulty_bin=assign_difficulty_bin(probe, hard_max, easy_min),
                prevalence_bin=assign_prevalence_bin(task.prevalence, rare_max,
                                                     common_min),
            )
            out.append((corpus, task, probe))
        return out

    spec = config.corpus_spec["svmlight"]
    if "path" not in spec:
        raise ConfigError("svmlight corpus needs a 'path'")
    corpus, tasks = load_svmlight(
        spec["path"],
        zero_based=spec.get("zero_based"),
        n_features=spec.get("n_features"),
        downsample_fraction=spec.get("downsample"),
        downsample_seed=int(spec.get("downsample_seed", 0)),
    )
    corpus = bm25_saturate(corpus, config.bm25_k1)
    wanted = spec.get("categories")
    if wanted is not None:
        missing = set(wanted) - {t.category_id for t in tasks}
        if missing:
            raise DataError(f"categories not in corpus: {sorted(missing)}")
        tasks = [t for t in tasks if t.category_id in wanted]
    manifest_bins: dict[str, dict] = {}
    if spec.get("manifest"):
        manifest = read_manifest(spec["manifest"])
        manifest_bins = {c["id"]: c for c in manifest.get("categories", [])}
    for task in tasks:
        entry = manifest_bins.get(task.category_id)
        if entry and entry.get("difficulty_bin"):
            probe = float(entry.get("probe_r_precision") or -1.0)
            task = CategoryTask.build(
                task.category_id, task.positive_set, corpus.doc_count,
                difficulty_bin=entry["difficulty_bin"],
                prevalence_bin=entry.get("prevalence_bin")
                or assign_prevalence_bin(task.prevalence, rare_max, common_min),
            )
        else:
            probe = difficulty_probe(
                corpus, task,
                seed=_stable_seed(config.global_seed, task.category_id, "probe"),
                l2_weight=config.l2_weight,
            )
            task = CategoryTask.build(
                task.category_id, task.positive_set, corpus.doc_count,
                difficulty_bin=assign_difficulty_bin(probe, hard_max, easy_min),
                prevalence_bin=assign_prevalence_bin(task.prevalence, rare_max,
                                                     common_min),
            )
        out.append((corpus, task, probe))
    return out


def _run_job(args: tuple) -> tuple[str, str]:
    """Worker body: simulate one run and persist it."""
    corpus, task, run_seed, config_dict, path, fingerprint = args
    traj = run_simulation(
        corpus, task, seed=run_seed,
        batch_size=config_dict["batch_size"],
        max_rounds=config_dict["max_rounds"],
        l2_weight=config_dict["l2_weight"],
        tol=config_dict["tol"],
        max_iter=config_dict["max_iter"],
    )
    save_trajectory(traj, path)
    return Path(path).name, fingerprint


def simulate(config: ExperimentConfig, out_dir: str | Path, workers: int = 1,
             force: bool = False) -> Path:
    """Run the seed x category matrix into ``out_dir/trajectories``.

    Completed runs (file present with a matching fingerprint) are skipped,
    so an interrupted matrix resumes where it left off. A fingerprint
    mismatch or unreadable file aborts unless ``force`` allows recomputing.
    """
    traj_dir = Path(out_dir) / "trajectories"
    traj_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = traj_dir / ARCHIVE_MANIFEST

    config_fp = hashlib.sha256(
        json.dumps(config.sim_params(), sort_keys=True).encode()
    ).hexdigest()
    existing: dict = {}
    if manifest_path.exists():
        existing = json.loads(manifest_path.read_text())
        if existing.get("config_fingerprint") != config_fp and not force:
            raise DataError(
                f"{manifest_path}: archive belongs to a different config; "
                "use --force to overwrite"
            )
        if existing.get("config_fingerprint") != config_fp:
            existing = {}

    triples = build_corpora(config)
    known_runs: dict[str, str] = dict(existing.get("runs", {}))
    sim_dict = {
        "batch_size": config.batch_size,
        "max_rounds": config.max_rounds,
        "l2_weight": config.l2_weight,
        "tol": config.tol,
        "max_iter": config.max_iter,
    }

    jobs = []
    for corpus, task, _probe in sorted(triples, key=lambda t: t[1].category_id):
        for replicate in range(config.seeds_per_category):
            run_seed = _stable_seed(config.global_seed, task.category_id, replicate)
            name = f"{_slug(task.category_id)}__r{replicate}.npz"
            path = traj_dir / name
            fingerprint = hashlib.sha256(json.dumps(
                {"config": config_fp, "category": task.category_id,
                 "replicate": replicate, "seed": run_seed},
                sort_keys=True).encode()).hexdigest()
            if path.exists():
                if known_runs.get(name) == fingerprint:
                    try:
                        load_trajectory(path)
                        continue  # completed previously
                    except DataError:
                        if not force:
                            raise DataError(
                                f"{path}: corrupt archive; use --force to recompute"
                            ) from None
                elif not force:
                    raise DataError(
                        f"{path}: present but not part of this config's archive; "
                        "use --force to recompute"
                    )
            jobs.append((corpus, task, run_seed, sim_dict, str(path), fingerprint))

    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(job) for job in jobs]
    for name, fingerprint in results:
        known_runs[name] = fingerprint

    write_manifest(
        traj_dir / "corpus_manifest.json",
        triples[0][0],
        [task for _, task, _ in triples],
        seeds=[config.global_seed],
        probe_values={task.category_id: probe for _, task, probe in triples},
    )
    manifest_path.write_text(json.dumps(
        {"config_fingerprint": config_fp,
         "runs": dict(sorted(known_runs.items()))},
        indent=2, sort_keys=True))
    return traj_dir


def _load_archive(traj_dir: Path, verify: bool = True) -> list[RunTrajectory]:
    manifest_path = traj_dir / ARCHIVE_MANIFEST
    if not manifest_path.exists():
        raise DataError(f"{traj_dir}: no archive manifest; run simulate first")
    manifest = json.loads(manifest_path.read_text())
    trajectories = []
    for name in sorted(manifest.get("runs", {})):
        path = traj_dir / name
        if not path.exists():
            raise DataError(f"missing trajectory {name}; re-run simulate")
        traj = load_trajectory(path)
        if verify:
            verify_trajectory(traj)
        trajectories.append(traj)
    if not trajectories:
        raise DataError(f"{traj_dir}: archive is empty")
    return trajectories


def evaluate(config: ExperimentConfig, out_dir: str | Path,
             verify: bool = True) -> Path:
    """Score every rule x target over the archived trajectories.

    Writes ``results/cost_records.csv``, ``results/aggregate.json``, and
    ``results/cost_dynamics.csv`` (per-round reviewed cost and penalty for
    every run and target, for later plotting).
    """
    out_dir = Path(out_dir)
    trajectories = _load_archive(out_dir / "trajectories", verify=verify)
    results_dir = out_dir / "results"
    results_dir.mkdir(parents=True, exist_ok=True)

    records = []
    for traj in trajectories:
        rows = evaluate_rules(traj, config.rules, config.targets)
        records.extend(score_rule_decisions(traj, rows))
    write_records_csv(records, results_dir / "cost_records.csv")

    report_payload = aggregate(records).to_json_dict()
    (results_dir / "aggregate.json").write_text(
        json.dumps(report_payload, indent=2, sort_keys=True))

    with (results_dir / "cost_dynamics.csv").open("w", newline="",
                                                  encoding="utf-8") as handle:
        handle.write("run_id,target,round,reviewed,penalty,total\n")
        for traj in trajectories:
            for target in config.targets:
                for r in range(traj.n_rounds):
                    penalty = idealized_penalty(traj, r, target)
                    reviewed = traj.training_sizes[r]
                    handle.write(
                        f"{traj.run_id},{target!r},{r},{reviewed},"
                        f"{penalty},{reviewed + penalty}\n")
    return results_dir


def _format_table(title: str, rules: list[str], targets: list[float],
                  cell) -> str:
    header = ["rule"] + [f"{t:g}" for t in targets]
    widths = [max(len(header[0]), *(len(r) for r in rules))]
    rows = []
    for rule in rules:
        rows.append([rule] + [cell(rule, t) for t in targets])
    for col in range(1, len(header)):
        widths.append(max(len(header[col]), *(len(row[col]) for row in rows)))
    lines = [title, "  ".join(h.ljust(w) for h, w in zip(header, widths))]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def report(config: ExperimentConfig, out_dir: str | Path) -> Path:
    """Render tables and plot data from the results directory."""
    out_dir = Path(out_dir)
    results_dir = out_dir / "results"
    records = read_records_csv(results_dir / "cost_records.csv")
    payload = json.loads((results_dir / "aggregate.json").read_text())
    report_dir = out_dir / "report"
    report_dir.mkdir(parents=True, exist_ok=True)

    stats = {(g["rule_id"], g["target"]): g for g in payload["groups"]}
    rules = sorted({r for r, _ in stats})
    targets = sorted({t for _, t in stats})

    with (report_dir / "mse_by_target.csv").open("w", newline="",
                                                 encoding="utf-8") as handle:
        handle.write("rule_id," + ",".join(f"target_{t:g}" for t in targets)
                     + ",avg\n")
        for rule in rules:
            cells = [stats[(rule, t)]["mse_recall"] for t in targets]
            handle.write(rule + "," + ",".join(repr(c) for c in cells)
                         + f",{sum(cells) / len(cells)!r}\n")

    with (report_dir / "cost_ratio_by_target.csv").open(
            "w", newline="", encoding="utf-8") as handle:
        handle.write("rule_id,"
                     + ",".join(f"target_{t:g},target_{t:g}_std" for t in targets)
                     + "\n")
        for rule in rules:
            cells = []
            for t in targets:
                g = stats[(rule, t)]
                cells.extend([repr(g["mean_cost_ratio"]),
                              repr(g["std_cost_ratio"])])
            handle.write(rule + "," + ",".join(cells) + "\n")

    with (report_dir / "recall_distributions.csv").open(
            "w", newline="", encoding="utf-8") as handle:
        handle.write("rule_id,target,prevalence_bin,difficulty_bin,run_id,"
                     "recall_at_stop\n")
        ordered = sorted(records, key=lambda r: (r.rule_id, r.target, r.run_id))
        for r in ordered:
            handle.write(f"{r.rule_id},{r.target!r},{r.prevalence_bin or ''},"
                         f"{r.difficulty_bin or ''},{r.run_id},"
                         f"{r.recall_at_stop!r}\n")

    with (report_dir / "stop_markers.csv").open("w", newline="",
                                                encoding="utf-8") as handle:
        handle.write("run_id,target,rule_id,stop_round,reviewed,reason\n")
        ordered = sorted(records, key=lambda r: (r.run_id, r.target, r.rule_id))
        for r in ordered:
            handle.write(f"{r.run_id},{r.target!r},{r.rule_id},{r.stop_round},"
                         f"{r.reviewed},{r.reason}\n")

    # ship the per-round series next to its markers so report/ holds all
    # plot inputs
    dynamics = results_dir / "cost_dynamics.csv"
    (report_dir / "cost_dynamics.csv").write_bytes(dynamics.read_bytes())

    mse_text = _format_table(
        "Recall MSE by target", rules, targets,
        lambda rule, t: f"{stats[(rule, t)]['mse_recall']:.3f}")
    ratio_text = _format_table(
        "Mean cost ratio by target (std)", rules, targets,
        lambda rule, t: (f"{stats[(rule, t)]['mean_cost_ratio']:.2f}"
                         f" ({stats[(rule, t)]['std_cost_ratio']:.2f})"))
    (report_dir / "tables.txt").write_text(mse_text + "\n" + ratio_text)
    return report_dir


# ----------------------------------------------------------------------
# kernel debug subcommand
# ----------------------------------------------------------------------


def _parse_floats(text: str) -> list[float]:
    return [float(tok) for tok in text.split(",") if tok]


def _kernel(args) -> dict:
    if args.kernel == "hypergeom":
        value = hypergeometric_cdf(args.population, args.successes,
                                   args.draws, args.k)
        return {"cdf": value}
    if args.kernel == "quant":
        est = quant_ci(_parse_floats(args.reviewed),
                       _parse_floats(args.unreviewed),
                       multiplier=args.multiplier)
        return {
            "point": est.point,
            "variance_bound": est.variance_bound,
            "ci_lower": est.ci_lower,
            "ci_upper": est.ci_upper,
            "r_hat": est.r_hat,
            "u_hat": est.u_hat,
        }
    if args.kernel == "knee":
        points = []
        for token in args.points.split(","):
            s_str, _, g_str = token.partition(":")
            points.append((float(s_str), float(g_str)))
        geometry = knee_point(points, int(points[-1][0]))
        return {"knee_index": geometry.knee_index, "rho": geometry.rho,
                "s": geometry.s}
    if args.kernel == "corr":
        return {"r": pearson_corr(_parse_floats(args.x), _parse_floats(args.y))}
    raise ConfigError(f"unknown kernel {args.kernel!r}")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tarsim",
        description="Simulate one-phase review workflows and evaluate "
                    "stopping rules.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run the seed x category matrix")
    p_sim.add_argument("-c", "--config", required=True)
    p_sim.add_argument("-o", "--output-dir", default=None)
    p_sim.add_argument("--workers", type=int, default=1)
    p_sim.add_argument("--force", action="store_true",
                       help="recompute runs that mismatch the archive")

    p_eval = sub.add_parser("evaluate", help="score rules over the archive")
    p_eval.add_argument("-c", "--config", required=True)
    p_eval.add_argument("-o", "--output-dir", default=None)
    p_eval.add_argument("--no-verify", action="store_true",
                        help="skip trajectory integrity replay")

    p_rep = sub.add_parser("report", help="render tables and plot data")
    p_rep.add_argument("-c", "--config", required=True)
    p_rep.add_argument("-o", "--output-dir", default=None)

    p_ker = sub.add_parser("kernel", help="evaluate one estimator kernel")
    ker_sub = p_ker.add_subparsers(dest="kernel", required=True)
    k_h = ker_sub.add_parser("hypergeom")
    k_h.add_argument("--population", type=int, required=True)
    k_h.add_argument("--successes", type=int, required=True)
    k_h.add_argument("--draws", type=int, required=True)
    k_h.add_argument("--k", type=int, required=True)
    k_q = ker_sub.add_parser("quant")
    k_q.add_argument("--reviewed", required=True)
    k_q.add_argument("--unreviewed", required=True)
    k_q.add_argument("--multiplier", type=float, default=2.0)
    k_k = ker_sub.add_parser("knee")
    k_k.add_argument("--points", required=True,
                     help="comma-separated s:gain pairs, e.g. 0:0,200:180")
    k_c = ker_sub.add_parser("corr")
    k_c.add_argument("--x", required=True)
    k_c.add_argument("--y", required=True)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "kernel":
            print(json.dumps(_kernel(args), sort_keys=True))
            return EXIT_OK
        config = load_config(args.config)
        out_dir = Path(args.output_dir or config.output_dir)
        if args.command == "simulate":
            traj_dir = simulate(config, out_dir, workers=args.workers,
                                force=args.force)
            print(f"trajectories: {traj_dir}")
        elif args.command == "evaluate":
            results_dir = evaluate(config, out_dir, verify=not args.no_verify)
            print(f"results: {results_dir}")
        elif args.command == "report":
            report_dir = report(config, out_dir)
            print(f"report: {report_dir}")
        return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, TarsimError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
