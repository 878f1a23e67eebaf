"""Catalog of stopping rules evaluated over recorded trajectories.

Every rule is a pure function of a trajectory prefix plus its own
configuration: rules never intervene in the run, so one simulated
trajectory serves every rule and every recall target. A rule reports the
first round at which its condition holds (``threshold-met``), the final
round when the collection ran out first (``exhausted``), or ``never`` when
the trajectory ended early without triggering.

Target-agnostic rules (fixed iterations, review-depth, batch positives,
probability cutoff, score correlation, knee, budget) ignore the recall
target; the target-aware ones (the hypergeometric pivot test, the
model-based point estimate and its confidence-interval variant, and the
random-sample baseline) adapt to it.
"""

from __future__ import annotations

import logging
import math
from bisect import bisect_left
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    ConfigError,
    InapplicableRuleError,
    NoKneeError,
    ParameterError,
    UndefinedCorrelationError,
    UndefinedEstimateError,
    UndefinedVarianceError,
)
from .estimators import (
    RecallEstimate,
    hypergeometric_cdf,
    knee_point,
    pearson_corr,
    quant_ci,
)
from .simulation import RunTrajectory, gain_curve

__all__ = [
    "StopReason",
    "StoppingDecision",
    "fixed_iterations",
    "rule_2399",
    "batch_pos",
    "max_prob",
    "corr_coef",
    "knee_schedule",
    "knee",
    "budget",
    "cmh",
    "quant_estimate_series",
    "quant",
    "quant_ci_rule",
    "sample_recall",
    "RuleDecision",
    "parse_rule_config",
    "default_rule_configs",
    "evaluate_rules",
]

logger = logging.getLogger(__name__)


class StopReason(str, Enum):
    THRESHOLD_MET = "threshold-met"
    EXHAUSTED = "exhausted"
    NEVER = "never"


@dataclass(frozen=True)
class StoppingDecision:
    """Outcome of one rule on one trajectory: the stop round (None when the
    rule never fired on a truncated run) and the review depth there."""

    rule_id: str
    stop_round: int | None
    s_at_stop: int
    reason: StopReason

    @property
    def stopped(self) -> bool:
        return self.stop_round is not None


def _stopped(traj: RunTrajectory, rule_id: str, round_index: int) -> StoppingDecision:
    return StoppingDecision(
        rule_id=rule_id,
        stop_round=round_index,
        s_at_stop=traj.training_sizes[round_index],
        reason=StopReason.THRESHOLD_MET,
    )


def _not_stopped(traj: RunTrajectory, rule_id: str) -> StoppingDecision:
    if traj.exhausted:
        return StoppingDecision(
            rule_id=rule_id,
            stop_round=traj.last_round,
            s_at_stop=traj.training_sizes[-1],
            reason=StopReason.EXHAUSTED,
        )
    return StoppingDecision(
        rule_id=rule_id,
        stop_round=None,
        s_at_stop=traj.training_sizes[-1],
        reason=StopReason.NEVER,
    )


# ----------------------------------------------------------------------
# target-agnostic rules
# ----------------------------------------------------------------------


def fixed_iterations(traj: RunTrajectory, k: int) -> StoppingDecision:
    """Stop after a predetermined number of feedback rounds."""
    if k < 1:
        raise ParameterError("k must be >= 1")
    rule_id = f"FixedIter-{k}"
    if k <= traj.last_round:
        return _stopped(traj, rule_id, k)
    return _not_stopped(traj, rule_id)


def rule_2399(traj: RunTrajectory, x: float = 1.2) -> StoppingDecision:
    """Stop once the review depth reaches 2399 + x * (relevant found)."""
    if x < 0:
        raise ParameterError("x must be >= 0")
    rule_id = "2399-Rule" if x == 1.2 else f"2399-Rule-x{x:g}"
    for r in range(traj.n_rounds):
        if traj.training_sizes[r] >= 2399 + x * traj.cumulative_relevant[r]:
            return _stopped(traj, rule_id, r)
    return _not_stopped(traj, rule_id)


def batch_pos(
    traj: RunTrajectory,
    threshold: int = 20,
    patience: int = 1,
    mode: str = "consecutive",
) -> StoppingDecision:
    """Stop when feedback batches stay unproductive.

    A round qualifies when its batch holds at most ``threshold`` positives.
    ``consecutive`` mode (default) requires ``patience`` qualifying rounds
    in a row; ``fixed-delay`` mode stops ``patience - 1`` rounds after the
    first qualifying round regardless of what happens in between. The seed
    round is not a feedback batch and is not examined.
    """
    if threshold < 0:
        raise ParameterError("threshold must be >= 0")
    if patience < 1:
        raise ParameterError("patience must be >= 1")
    if mode not in ("consecutive", "fixed-delay"):
        raise ParameterError(f"unknown batch_pos mode {mode!r}")
    rule_id = f"BatchPos-{threshold}-{patience}"

    streak = 0
    for r in range(1, traj.n_rounds):
        qualifies = traj.batches[r].batch_positive_count <= threshold
        if mode == "consecutive":
            streak = streak + 1 if qualifies else 0
            if streak >= patience:
                return _stopped(traj, rule_id, r)
        else:
            if qualifies:
                stop_at = r + patience - 1
                if stop_at <= traj.last_round:
                    return _stopped(traj, rule_id, stop_at)
                break
    return _not_stopped(traj, rule_id)


def max_prob(traj: RunTrajectory, cutoff: float = 0.1) -> StoppingDecision:
    """Stop when every unreviewed document scores at or below the cutoff."""
    if not 0.0 < cutoff < 1.0:
        raise ParameterError("cutoff must be in (0, 1)")
    rule_id = f"MaxProb-{cutoff:g}"
    for r in range(1, traj.n_rounds):
        mask = traj.reviewed_mask_through(r)
        unreviewed = ~mask
        if not unreviewed.any():
            break
        if traj.snapshot(r)[unreviewed].max() <= cutoff:
            return _stopped(traj, rule_id, r)
    return _not_stopped(traj, rule_id)


def corr_coef(
    traj: RunTrajectory, threshold: float = 0.99, window: int = 3
) -> StoppingDecision:
    """Stop when consecutive score snapshots stabilize.

    For each round r >= 2 the correlation between the full-collection
    snapshots of rounds r-1 and r joins a rolling window; the rule fires
    when the mean of the last ``window`` coefficients reaches the
    threshold. Rounds whose correlation is undefined (a zero-variance
    snapshot) contribute nothing and do not advance the window.
    """
    if window < 1:
        raise ParameterError("window must be >= 1")
    rule_id = ("CorrCoef" if (threshold, window) == (0.99, 3)
               else f"CorrCoef-{threshold:g}-{window}")
    coefficients: list[float] = []
    for r in range(2, traj.n_rounds):
        try:
            value = pearson_corr(traj.snapshot(r - 1), traj.snapshot(r))
        except UndefinedCorrelationError:
            continue
        coefficients.append(value)
        if len(coefficients) >= window:
            if float(np.mean(coefficients[-window:])) >= threshold:
                return _stopped(traj, rule_id, r)
    return _not_stopped(traj, rule_id)


def _reference_schedule_sizes(limit: int) -> list[int]:
    """Training-set sizes of the exponential reference schedule: a 1-doc
    seed round, then batches starting at 1 and growing by ceil(B/10)."""
    sizes = [1]
    batch = 1
    while sizes[-1] + batch <= limit:
        sizes.append(sizes[-1] + batch)
        batch += math.ceil(batch / 10)
    return sizes


def knee_schedule(batch_size: int, min_s: int = 1000, max_size: int = 10**6) -> list[int]:
    """Fixed-batch training sizes at which the knee test runs.

    The reference implementation tests at its own (exponentially growing)
    round ends once they reach ``min_s``. To stay conservative with fixed
    batches, a checkpoint s' = 1 + k * batch_size tests exactly when some
    reference test size falls inside (s' - batch_size, s']: never sooner
    than the reference, never more often.
    """
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    if min_s < 1:
        raise ParameterError("min_s must be >= 1")
    reference = [c for c in _reference_schedule_sizes(max_size) if c >= min_s]
    if not reference:
        return []
    schedule = []
    for checkpoint in range(1 + batch_size, max_size + 1, batch_size):
        lo = bisect_left(reference, checkpoint - batch_size + 1)
        if lo < len(reference) and reference[lo] <= checkpoint:
            schedule.append(checkpoint)
    return schedule


def knee(traj: RunTrajectory, min_s: int = 1000) -> StoppingDecision:
    """Stop when the gain curve has a sharp enough knee.

    Tested only at the scheduled training sizes; fires at the first
    checkpoint where the slope ratio reaches 156 - min(Rel(s), 150).
    Checkpoints without a usable knee (no relevant found yet, or too few
    points) are skipped.
    """
    rule_id = "Knee" if min_s == 1000 else f"Knee-min{min_s}"
    size_to_round = {s: r for r, s in enumerate(traj.training_sizes)}
    schedule = knee_schedule(traj.batch_size, min_s=min_s,
                             max_size=traj.training_sizes[-1])
    points = gain_curve(traj)
    for checkpoint in schedule:
        r = size_to_round.get(checkpoint)
        if r is None or r < 2:
            continue
        rel = traj.cumulative_relevant[r]
        try:
            geometry = knee_point(points[: r + 2], checkpoint)
        except NoKneeError:
            continue
        if geometry.rho >= 156 - min(rel, 150):
            return _stopped(traj, rule_id, r)
    return _not_stopped(traj, rule_id)


def budget(traj: RunTrajectory) -> StoppingDecision:
    """Stop at 75% of the collection, or earlier once a mild knee
    coincides with a review depth of at least 10 C / Rel(s).

    The slope ratio is evaluated at every round end here, not on the knee
    schedule.
    """
    rule_id = "Budget"
    c = traj.doc_count
    points = gain_curve(traj)
    for r in range(traj.n_rounds):
        s = traj.training_sizes[r]
        if s >= 0.75 * c:
            return _stopped(traj, rule_id, r)
        rel = traj.cumulative_relevant[r]
        if rel == 0 or r < 2:
            continue
        try:
            geometry = knee_point(points[: r + 2], s)
        except NoKneeError:
            continue
        if geometry.rho >= 6 and s >= 10 * c / rel:
            return _stopped(traj, rule_id, r)
    return _not_stopped(traj, rule_id)


# ----------------------------------------------------------------------
# target-aware rules
# ----------------------------------------------------------------------


def cmh(
    traj: RunTrajectory,
    target: float,
    alpha: float = 0.95,
    draw_units: str = "documents",
    stop_mode: str = "printed",
) -> StoppingDecision:
    """Hypergeometric pivot test over earlier rounds.

    For the current round (depth s, Rel(s) found) and every prior round j,
    the documents reviewed after round j are hypothetically treated as a
    random draw from the then-unreviewed collection, and the tail
    probability of having found so few extra positives is computed against
    K_tar = floor(Rel(s)/target - Rel(s_j) + 1) remaining relevant. As
    originally stated the rule draws ``s - j`` items (round units) and
    stops when min_j p_j < 1 - alpha; ``draw_units="documents"`` (default)
    uses the dimensionally consistent s - s_j instead, and
    ``stop_mode="prose"`` flips the firing condition to min_j p_j >= alpha.
    """
    if not 0.0 < target <= 1.0:
        raise ParameterError("target must be in (0, 1]")
    if not 0.0 < alpha < 1.0:
        raise ParameterError("alpha must be in (0, 1)")
    if draw_units not in ("documents", "rounds"):
        raise ParameterError(f"unknown draw_units {draw_units!r}")
    if stop_mode not in ("printed", "prose"):
        raise ParameterError(f"unknown stop_mode {stop_mode!r}")
    rule_id = "CMH-heuristic"
    c = traj.doc_count
    warned = False
    for r in range(1, traj.n_rounds):
        s = traj.training_sizes[r]
        rel_s = traj.cumulative_relevant[r]
        p_min = 1.0
        for j in range(r):
            s_j = traj.training_sizes[j]
            rel_j = traj.cumulative_relevant[j]
            k_tar = math.floor(rel_s / target - rel_j + 1)
            if k_tar < 0:
                continue  # no evidence from this pivot: p_j = 1
            population = c - rel_j
            draws = (s - s_j) if draw_units == "documents" else (r - j)
            successes = k_tar
            if successes > population or draws > population:
                if not warned:
                    logger.warning(
                        "%s: clamping hypergeometric parameters at round %d "
                        "(population=%d, successes=%d, draws=%d)",
                        traj.run_id, r, population, successes, draws,
                    )
                    warned = True
                successes = min(successes, population)
                draws = min(draws, population)
            p_j = hypergeometric_cdf(population, successes, draws, rel_s - rel_j)
            p_min = min(p_min, p_j)
        fired = (p_min < 1.0 - alpha) if stop_mode == "printed" else (p_min >= alpha)
        if fired:
            return _stopped(traj, rule_id, r)
    return _not_stopped(traj, rule_id)


def quant_estimate_series(
    traj: RunTrajectory, multiplier: float = 2.0
) -> list[RecallEstimate | None]:
    """Per-round recall estimates from each round's snapshot, split into
    reviewed/unreviewed at that round's end. Index 0 (the seed round,
    which has no snapshot) and rounds with undefined estimates are None."""
    series: list[RecallEstimate | None] = [None]
    for r in range(1, traj.n_rounds):
        probs = traj.snapshot(r)
        mask = traj.reviewed_mask_through(r)
        try:
            series.append(quant_ci(probs[mask], probs[~mask], multiplier=multiplier))
        except (UndefinedEstimateError, UndefinedVarianceError):
            series.append(None)
    return series


def _first_crossing(
    traj: RunTrajectory,
    rule_id: str,
    values: Sequence[float | None],
    target: float,
) -> StoppingDecision:
    for r, value in enumerate(values):
        if value is not None and value >= target:
            return _stopped(traj, rule_id, r)
    return _not_stopped(traj, rule_id)


def quant(traj: RunTrajectory, target: float) -> StoppingDecision:
    """Stop when the model-based recall point estimate reaches the target."""
    if not 0.0 < target <= 1.0:
        raise ParameterError("target must be in (0, 1]")
    series = quant_estimate_series(traj)
    points = [est.point if est is not None else None for est in series]
    return _first_crossing(traj, "Quant", points, target)


def quant_ci_rule(
    traj: RunTrajectory, target: float, multiplier: float = 2.0
) -> StoppingDecision:
    """Stop when the raw lower end of the recall confidence interval
    reaches the target; never fires before the point-estimate rule."""
    if not 0.0 < target <= 1.0:
        raise ParameterError("target must be in (0, 1]")
    series = quant_estimate_series(traj, multiplier=multiplier)
    lowers = [est.ci_lower if est is not None else None for est in series]
    return _first_crossing(traj, "QuantCI", lowers, target)


def sample_recall(
    traj: RunTrajectory, target: float, k: int = 20, seed: int = 0
) -> tuple[StoppingDecision, int]:
    """Random-sample recall baseline.

    Draws uniform documents without replacement until ``k`` positives are
    found (that labeling effort is the returned extra cost), then stops the
    run at the first round whose reviewed set contains at least
    ``target * k`` of the sampled positives.
    """
    if not 0.0 < target <= 1.0:
        raise ParameterError("target must be in (0, 1]")
    if k < 1:
        raise ParameterError("k must be >= 1")
    if traj.task.positive_count < k:
        raise InapplicableRuleError(
            f"collection holds {traj.task.positive_count} positives, need {k}"
        )
    rule_id = f"SampleRecall-{k}"
    rng = np.random.default_rng(seed)
    order = rng.permutation(traj.doc_count)
    sampled: set[int] = set()
    sample_cost = 0
    for doc in order:
        sample_cost += 1
        if int(doc) in traj.task.positive_set:
            sampled.add(int(doc))
            if len(sampled) == k:
                break

    found = 0
    for r in range(traj.n_rounds):
        found += sum(1 for d in traj.batches[r].doc_indices if d in sampled)
        if found / k >= target:
            return _stopped(traj, rule_id, r), sample_cost
    return _not_stopped(traj, rule_id), sample_cost


# ----------------------------------------------------------------------
# rule configuration and the bank
# ----------------------------------------------------------------------


@dataclass(frozen=True)
class FixedIterationsConfig:
    k: int
    target_aware = False

    def decide(self, traj, target=None):
        return fixed_iterations(traj, self.k), 0


@dataclass(frozen=True)
class Rule2399Config:
    x: float = 1.2
    target_aware = False

    def decide(self, traj, target=None):
        return rule_2399(traj, self.x), 0


@dataclass(frozen=True)
class BatchPosConfig:
    threshold: int = 20
    patience: int = 1
    mode: str = "consecutive"
    target_aware = False

    def decide(self, traj, target=None):
        return batch_pos(traj, self.threshold, self.patience, self.mode), 0


@dataclass(frozen=True)
class MaxProbConfig:
    cutoff: float = 0.1
    target_aware = False

    def decide(self, traj, target=None):
        return max_prob(traj, self.cutoff), 0


@dataclass(frozen=True)
class CorrCoefConfig:
    threshold: float = 0.99
    window: int = 3
    target_aware = False

    def decide(self, traj, target=None):
        return corr_coef(traj, self.threshold, self.window), 0


@dataclass(frozen=True)
class KneeConfig:
    min_s: int = 1000
    target_aware = False

    def decide(self, traj, target=None):
        return knee(traj, self.min_s), 0


@dataclass(frozen=True)
class BudgetConfig:
    target_aware = False

    def decide(self, traj, target=None):
        return budget(traj), 0


@dataclass(frozen=True)
class CmhConfig:
    alpha: float = 0.95
    draw_units: str = "documents"
    stop_mode: str = "printed"
    target_aware = True

    def decide(self, traj, target=None):
        return cmh(traj, target, self.alpha, self.draw_units, self.stop_mode), 0


@dataclass(frozen=True)
class QuantConfig:
    target_aware = True

    def decide(self, traj, target=None):
        return quant(traj, target), 0


@dataclass(frozen=True)
class QuantCIConfig:
    multiplier: float = 2.0
    target_aware = True

    def decide(self, traj, target=None):
        return quant_ci_rule(traj, target, self.multiplier), 0


@dataclass(frozen=True)
class SampleRecallConfig:
    k: int = 20
    seed: int = 0
    target_aware = True

    def decide(self, traj, target=None):
        return sample_recall(traj, target, self.k, self.seed)


_RULE_TYPES = {
    "fixed_iterations": FixedIterationsConfig,
    "2399": Rule2399Config,
    "batch_pos": BatchPosConfig,
    "max_prob": MaxProbConfig,
    "corr_coef": CorrCoefConfig,
    "knee": KneeConfig,
    "budget": BudgetConfig,
    "cmh": CmhConfig,
    "quant": QuantConfig,
    "quant_ci": QuantCIConfig,
    "sample_recall": SampleRecallConfig,
}


def parse_rule_config(spec: dict):
    """Build a rule configuration from its JSON dict form."""
    if "name" not in spec:
        raise ConfigError("rule config needs a 'name'")
    name = spec["name"]
    cls = _RULE_TYPES.get(name)
    if cls is None:
        raise ConfigError(f"unknown rule {name!r}; known: {sorted(_RULE_TYPES)}")
    kwargs = {k: v for k, v in spec.items() if k != "name"}
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad parameters for rule {name!r}: {exc}") from exc


def default_rule_configs() -> list:
    """The full catalog at its standard settings."""
    return [
        Rule2399Config(),
        BatchPosConfig(threshold=20, patience=1),
        BatchPosConfig(threshold=20, patience=4),
        MaxProbConfig(cutoff=0.1),
        CorrCoefConfig(),
        KneeConfig(),
        BudgetConfig(),
        CmhConfig(),
        QuantConfig(),
        QuantCIConfig(),
    ]


@dataclass(frozen=True)
class RuleDecision:
    """One row of the bank's output: a rule's decision for one target."""

    rule_id: str
    target: float
    decision: StoppingDecision
    extra_cost: int = 0


def evaluate_rules(
    traj: RunTrajectory, configs: Sequence, targets: Sequence[float]
) -> list[RuleDecision]:
    """Evaluate every configured rule against every recall target.

    Target-agnostic rules are decided once and fanned out across targets;
    rules inapplicable to the task (e.g. a sample larger than the positive
    population) are skipped with a log line.
    """
    if not configs:
        raise ConfigError("no stopping rules configured")
    if not targets:
        raise ConfigError("no recall targets configured")
    rows: list[RuleDecision] = []
    for config in configs:
        if config.target_aware:
            for target in targets:
                try:
                    decision, extra = config.decide(traj, target)
                except InapplicableRuleError as exc:
                    logger.info("skipping %s on %s: %s",
                                type(config).__name__, traj.run_id, exc)
                    break
                rows.append(RuleDecision(decision.rule_id, float(target),
                                         decision, extra))
        else:
            decision, extra = config.decide(traj)
            rows.extend(
                RuleDecision(decision.rule_id, float(target), decision, extra)
                for target in targets
            )
    return rows
