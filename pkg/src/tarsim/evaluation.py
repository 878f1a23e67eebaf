"""Scoring stopping decisions: recall at stop, undershoot penalty, total
and optimal cost, and per-rule aggregation.

The cost model charges every reviewed document, plus (when a rule stops
short of the recall target) an idealized second pass that walks the stop
round's model ranking until the target is reached. Overshoot is charged
implicitly through the larger reviewed count. Each run's total is
normalized by its optimal cost, the review depth at the first round that
meets the target.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, ParameterError
from .linear_model import rank_by_score
from .simulation import RunTrajectory
from .stopping import RuleDecision, StoppingDecision, StopReason

__all__ = [
    "CostRecord",
    "GroupStats",
    "AggregateReport",
    "recall_at",
    "idealized_penalty",
    "optimal_cost",
    "score",
    "score_rule_decisions",
    "aggregate",
    "write_records_csv",
    "read_records_csv",
]

logger = logging.getLogger(__name__)

RECORDS_CSV_COLUMNS = [
    "run_id",
    "category_id",
    "seed",
    "prevalence_bin",
    "difficulty_bin",
    "rule_id",
    "target",
    "stop_round",
    "reason",
    "reviewed",
    "penalty",
    "extra_sample_cost",
    "total_cost",
    "recall_at_stop",
    "optimal_cost",
    "cost_ratio",
]


@dataclass(frozen=True)
class CostRecord:
    """Cost and recall outcome for one (run, rule, target) triple."""

    run_id: str
    category_id: str
    seed: int
    prevalence_bin: str | None
    difficulty_bin: str | None
    rule_id: str
    target: float
    stop_round: int
    reason: str
    reviewed: int
    penalty: int
    extra_sample_cost: int
    total_cost: int
    recall_at_stop: float
    optimal_cost: int
    cost_ratio: float


def recall_at(traj: RunTrajectory, round_index: int) -> float:
    """Fraction of the task's relevant documents found by the end of the
    given round."""
    if not 0 <= round_index <= traj.last_round:
        raise ParameterError(f"round {round_index} out of range")
    return traj.cumulative_relevant[round_index] / traj.task.positive_count


def _penalty_snapshot_round(traj: RunTrajectory, round_index: int) -> int | None:
    """Snapshot to rank the second pass with: the stop round's own model.

    A round-0 stop predates any snapshot; the round-1 snapshot is the model
    trained on exactly what was reviewed at that stop, so use it. Returns
    None when the trajectory holds no snapshot at all.
    """
    if traj.last_round == 0:
        return None
    return max(round_index, 1)


def idealized_penalty(traj: RunTrajectory, round_index: int, target: float) -> int:
    """Documents an idealized second pass must review to reach the target.

    Zero when the stop round already meets the target. Otherwise unreviewed
    documents are walked in the stop-round model's ranked order until
    cumulative recall (reviewed plus ranked prefix) reaches the target; the
    returned depth is that prefix length.
    """
    if not 0.0 < target <= 1.0:
        raise ParameterError("target must be in (0, 1]")
    if recall_at(traj, round_index) >= target:
        return 0
    mask = traj.reviewed_mask_through(round_index)
    unreviewed = np.flatnonzero(~mask)
    snapshot_round = _penalty_snapshot_round(traj, round_index)
    if snapshot_round is None:
        logger.warning("%s: no snapshot to rank the second pass; charging "
                       "the full unreviewed count", traj.run_id)
        return int(unreviewed.size)
    probs = traj.snapshot(snapshot_round)
    ranked = rank_by_score(probs[unreviewed], unreviewed)
    relevance = np.fromiter(
        (1 if int(d) in traj.task.positive_set else 0 for d in ranked),
        dtype=np.int64, count=ranked.size,
    )
    found = traj.cumulative_relevant[round_index] + np.cumsum(relevance)
    reaches = found / traj.task.positive_count >= target
    depth = int(np.argmax(reaches)) + 1 if reaches.any() else None
    if depth is None:
        logger.warning("%s: target %.3f unreachable even reviewing "
                       "everything", traj.run_id, target)
        return int(unreviewed.size)
    return depth


def optimal_cost(traj: RunTrajectory, target: float) -> int:
    """Review depth at the first round whose recall meets the target (the
    round where an early-stopping penalty first becomes zero). Falls back
    to exhaustion cost plus penalty when the trajectory never reaches it."""
    if not 0.0 < target <= 1.0:
        raise ParameterError("target must be in (0, 1]")
    for r in range(traj.n_rounds):
        if recall_at(traj, r) >= target:
            return traj.training_sizes[r]
    logger.warning("%s: trajectory never reaches target %.3f; optimal cost "
                   "uses the final round plus its penalty", traj.run_id, target)
    return traj.training_sizes[-1] + idealized_penalty(traj, traj.last_round, target)


def score(
    traj: RunTrajectory,
    decision: StoppingDecision,
    target: float,
    extra_sample_cost: int = 0,
) -> CostRecord:
    """Assemble the cost record for one decision at one recall target.

    Decisions that never fired are charged at the end of the trajectory.
    """
    if extra_sample_cost < 0:
        raise ParameterError("extra_sample_cost must be >= 0")
    effective_round = (decision.stop_round if decision.stop_round is not None
                       else traj.last_round)
    reviewed = traj.training_sizes[effective_round]
    if reviewed != decision.s_at_stop:
        raise DataError(
            f"decision depth {decision.s_at_stop} does not match trajectory "
            f"round {effective_round} (s={reviewed})"
        )
    recall = recall_at(traj, effective_round)
    penalty = idealized_penalty(traj, effective_round, target)
    total = reviewed + penalty + extra_sample_cost
    optimal = optimal_cost(traj, target)
    return CostRecord(
        run_id=traj.run_id,
        category_id=traj.task.category_id,
        seed=traj.seed,
        prevalence_bin=traj.task.prevalence_bin,
        difficulty_bin=traj.task.difficulty_bin,
        rule_id=decision.rule_id,
        target=float(target),
        stop_round=effective_round,
        reason=decision.reason.value if isinstance(decision.reason, StopReason)
        else str(decision.reason),
        reviewed=reviewed,
        penalty=penalty,
        extra_sample_cost=extra_sample_cost,
        total_cost=total,
        recall_at_stop=recall,
        optimal_cost=optimal,
        cost_ratio=total / optimal,
    )


def score_rule_decisions(
    traj: RunTrajectory, rows: Sequence[RuleDecision]
) -> list[CostRecord]:
    return [score(traj, row.decision, row.target, row.extra_cost) for row in rows]


@dataclass(frozen=True)
class GroupStats:
    """Aggregate for one (rule, target) cell, with per-bin breakdowns."""

    rule_id: str
    target: float
    run_count: int
    mse_recall: float
    mean_cost_ratio: float
    std_cost_ratio: float
    reliability: float
    by_bin: dict


@dataclass(frozen=True)
class AggregateReport:
    groups: tuple[GroupStats, ...]

    def to_json_dict(self) -> dict:
        return {"groups": [asdict(g) for g in self.groups]}


def _stats(records: list[CostRecord], target: float) -> dict:
    recalls = np.array([r.recall_at_stop for r in records])
    ratios = np.array([r.cost_ratio for r in records])
    return {
        "run_count": len(records),
        "mse_recall": float(np.mean((recalls - target) ** 2)),
        "mean_cost_ratio": float(ratios.mean()),
        "std_cost_ratio": float(ratios.std()),
        "reliability": float(np.mean(recalls >= target)),
    }


def aggregate(records: Sequence[CostRecord]) -> AggregateReport:
    """Group records by (rule, target): recall MSE against the target,
    mean/std cost ratio, reliability (share of runs meeting the target),
    plus the same statistics per prevalence/difficulty bin."""
    if not records:
        raise ParameterError("no records to aggregate")
    by_group: dict[tuple[str, float], list[CostRecord]] = {}
    for record in records:
        by_group.setdefault((record.rule_id, record.target), []).append(record)
    groups = []
    for (rule_id, target), group in sorted(by_group.items()):
        by_bin: dict[str, list[CostRecord]] = {}
        for record in group:
            key = f"{record.prevalence_bin or 'unbinned'}-" \
                  f"{record.difficulty_bin or 'unbinned'}"
            by_bin.setdefault(key, []).append(record)
        groups.append(
            GroupStats(
                rule_id=rule_id,
                target=target,
                by_bin={k: _stats(v, target) for k, v in sorted(by_bin.items())},
                **_stats(group, target),
            )
        )
    return AggregateReport(groups=tuple(groups))


def write_records_csv(records: Sequence[CostRecord], path: str | Path) -> None:
    """Records table with a fixed column schema, sorted for reproducible
    bytes. Floats are serialized with ``repr`` (shortest round-trip)."""
    ordered = sorted(records, key=lambda r: (r.rule_id, r.target, r.run_id))
    with Path(path).open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(RECORDS_CSV_COLUMNS)
        for record in ordered:
            row = asdict(record)
            writer.writerow([_cell(row[c]) for c in RECORDS_CSV_COLUMNS])


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def read_records_csv(path: str | Path) -> list[CostRecord]:
    records = []
    with Path(path).open("r", newline="", encoding="utf-8") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames != RECORDS_CSV_COLUMNS:
            raise DataError(f"{path}: unexpected records schema")
        for row in reader:
            records.append(
                CostRecord(
                    run_id=row["run_id"],
                    category_id=row["category_id"],
                    seed=int(row["seed"]),
                    prevalence_bin=row["prevalence_bin"] or None,
                    difficulty_bin=row["difficulty_bin"] or None,
                    rule_id=row["rule_id"],
                    target=float(row["target"]),
                    stop_round=int(row["stop_round"]),
                    reason=row["reason"],
                    reviewed=int(row["reviewed"]),
                    penalty=int(row["penalty"]),
                    extra_sample_cost=int(row["extra_sample_cost"]),
                    total_cost=int(row["total_cost"]),
                    recall_at_stop=float(row["recall_at_stop"]),
                    optimal_cost=int(row["optimal_cost"]),
                    cost_ratio=float(row["cost_ratio"]),
                )
            )
    if not records:
        raise DataError(f"{path}: empty records table")
    return records
