"""One-phase review loop: seed, train, score, review, repeat.

A run starts from one random positive seed document, then repeatedly
trains the scorer on everything reviewed so far, snapshots predicted
probabilities for the whole collection, and reviews the top-ranked batch
of unreviewed documents with their true labels. The resulting
``RunTrajectory`` records everything any stopping rule or cost model can
ask for, so rules never re-train and trajectories are reusable across
rules and recall targets.

While the reviewed set is still single-class (before the first true
negative shows up), training adds a seeded draw of unreviewed documents
labeled as artificial negatives; those never count as reviewed.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
import numpy as np

from .corpus import CategoryTask, Corpus
from .errors import DataError, ParameterError, TaskError
from .linear_model import TrainingSet, predict_proba, rank_by_score, train

__all__ = [
    "BatchRecord",
    "ScoreSnapshot",
    "RunTrajectory",
    "run",
    "gain_curve",
    "save_trajectory",
    "load_trajectory",
    "verify_trajectory",
]

TRAJECTORY_FORMAT = "tarsim-trajectory"
TRAJECTORY_FORMAT_VERSION = 1

DEFAULT_ARTIFICIAL_NEGATIVES = 100


@dataclass(frozen=True)
class BatchRecord:
    """Documents reviewed in one round, with their true labels."""

    round_index: int
    doc_indices: tuple[int, ...]
    labels: tuple[int, ...]

    def __post_init__(self):
        if len(self.doc_indices) != len(self.labels):
            raise DataError("doc_indices and labels differ in length")
        if self.round_index == 0 and (len(self.labels) != 1 or self.labels[0] != 1):
            raise DataError("round 0 must review exactly one positive seed")

    @property
    def batch_positive_count(self) -> int:
        return int(sum(self.labels))


@dataclass(frozen=True)
class ScoreSnapshot:
    """Predicted relevance probabilities for every collection document,
    taken at the start of a round (before that round's batch is picked)."""

    round_index: int
    probabilities: np.ndarray

    def __post_init__(self):
        self.probabilities.setflags(write=False)
        p = self.probabilities
        if p.ndim != 1 or not np.all((p > 0.0) & (p < 1.0)):
            raise DataError("snapshot probabilities must lie strictly in (0, 1)")


@dataclass(frozen=True)
class RunTrajectory:
    """Complete record of one active-learning run.

    ``training_sizes[k]`` is the number of reviewed documents after round
    k (1 + k * batch_size except for a short final batch);
    ``cumulative_relevant[k]`` is how many of them are relevant;
    ``snapshots[k - 1]`` holds the probabilities used during round k >= 1.
    """

    task: CategoryTask
    seed: int
    batch_size: int
    doc_count: int
    batches: tuple[BatchRecord, ...]
    cumulative_relevant: tuple[int, ...]
    training_sizes: tuple[int, ...]
    snapshots: tuple[ScoreSnapshot, ...] = field(repr=False)

    def __post_init__(self):
        n = len(self.batches)
        if n == 0:
            raise DataError("trajectory has no rounds")
        if len(self.cumulative_relevant) != n or len(self.training_sizes) != n:
            raise DataError("per-round series lengths disagree")
        if len(self.snapshots) != n - 1:
            raise DataError("expected one snapshot per round after the seed round")
        if any(b - a <= 0 for a, b in zip(self.training_sizes, self.training_sizes[1:])):
            raise DataError("training sizes must be strictly increasing")
        if any(b < a for a, b in zip(self.cumulative_relevant,
                                     self.cumulative_relevant[1:])):
            raise DataError("cumulative relevant counts must be non-decreasing")
        if any(r > s for r, s in zip(self.cumulative_relevant, self.training_sizes)):
            raise DataError("cumulative relevant exceeds reviewed count")
        if self.cumulative_relevant[-1] > self.task.positive_count:
            raise DataError("cumulative relevant exceeds the task positive count")

    @property
    def run_id(self) -> str:
        return f"{self.task.category_id}-seed{self.seed}"

    @property
    def n_rounds(self) -> int:
        return len(self.batches)

    @property
    def last_round(self) -> int:
        return len(self.batches) - 1

    @property
    def exhausted(self) -> bool:
        return self.training_sizes[-1] == self.doc_count

    def snapshot(self, round_index: int) -> np.ndarray:
        if not 1 <= round_index <= self.last_round:
            raise ParameterError(f"no snapshot for round {round_index}")
        return self.snapshots[round_index - 1].probabilities

    def reviewed_mask_through(self, round_index: int) -> np.ndarray:
        """Boolean mask of documents reviewed in rounds 0..round_index."""
        if not 0 <= round_index <= self.last_round:
            raise ParameterError(f"round {round_index} out of range")
        mask = np.zeros(self.doc_count, dtype=bool)
        for batch in self.batches[: round_index + 1]:
            mask[list(batch.doc_indices)] = True
        return mask


def run(
    corpus: Corpus,
    task: CategoryTask,
    seed: int,
    batch_size: int = 200,
    max_rounds: int | None = None,
    l2_weight: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 1000,
    artificial_negatives: int = DEFAULT_ARTIFICIAL_NEGATIVES,
) -> RunTrajectory:
    """Execute one relevance-feedback run and record its trajectory.

    Deterministic given (corpus, task, seed): the seed fixes the choice of
    the positive seed document and the artificial-negative draw; everything
    else is exact optimization and tie-broken ranking. Stops at collection
    exhaustion or after ``max_rounds`` (default: enough rounds to exhaust).
    """
    if batch_size < 1:
        raise ParameterError("batch_size must be >= 1")
    if not task.positive_set:
        raise TaskError("task has no positive documents")
    if max(task.positive_set) >= corpus.doc_count:
        raise TaskError("task positives reference documents outside the corpus")
    if max_rounds is None:
        max_rounds = math.ceil(corpus.doc_count / batch_size)

    rng = np.random.default_rng(seed)
    positives_sorted = np.array(sorted(task.positive_set), dtype=np.int64)
    seed_doc = int(rng.choice(positives_sorted))

    reviewed: list[int] = [seed_doc]
    reviewed_labels: list[int] = [1]
    reviewed_mask = np.zeros(corpus.doc_count, dtype=bool)
    reviewed_mask[seed_doc] = True

    batches = [BatchRecord(0, (seed_doc,), (1,))]
    cumulative = [1]
    sizes = [1]

    artificial_pool: np.ndarray | None = None
    snapshots: list[ScoreSnapshot] = []

    for round_index in range(1, max_rounds + 1):
        unreviewed = np.flatnonzero(~reviewed_mask)
        if unreviewed.size == 0:
            break

        training = TrainingSet.from_reviewed(zip(reviewed, reviewed_labels))
        if min(reviewed_labels) == 1:
            # the pool is drawn once and reused, but every pool doc may get
            # reviewed (as positive) before any true negative appears;
            # redraw from the remaining unreviewed docs in that case
            if artificial_pool is None or reviewed_mask[artificial_pool].all():
                pool_size = min(artificial_negatives, unreviewed.size)
                artificial_pool = np.sort(
                    rng.choice(unreviewed, size=pool_size, replace=False)
                )
            extras = [d for d in artificial_pool if not reviewed_mask[d]]
            training = training.with_artificial_negatives(extras)

        model = train(corpus, training, l2_weight=l2_weight, tol=tol,
                      max_iter=max_iter)
        probabilities = predict_proba(model, corpus)
        snapshots.append(ScoreSnapshot(round_index, probabilities))

        # rank the snapshot itself (not raw scores) so that re-ranking a
        # stored snapshot reproduces the batch exactly, clipping included
        batch = rank_by_score(probabilities[unreviewed], unreviewed)[:batch_size]
        labels = [1 if int(d) in task.positive_set else 0 for d in batch]

        reviewed.extend(int(d) for d in batch)
        reviewed_labels.extend(labels)
        reviewed_mask[batch] = True
        batches.append(
            BatchRecord(round_index, tuple(int(d) for d in batch), tuple(labels))
        )
        cumulative.append(cumulative[-1] + sum(labels))
        sizes.append(sizes[-1] + len(batch))

    return RunTrajectory(
        task=task,
        seed=seed,
        batch_size=batch_size,
        doc_count=corpus.doc_count,
        batches=tuple(batches),
        cumulative_relevant=tuple(cumulative),
        training_sizes=tuple(sizes),
        snapshots=tuple(snapshots),
    )


def gain_curve(traj: RunTrajectory) -> list[tuple[int, int]]:
    """Gain-curve points (reviewed count, relevant found), prefixed by the
    origin: one point per completed round."""
    points = [(0, 0)]
    points.extend(zip(traj.training_sizes, traj.cumulative_relevant))
    return points


def _trajectory_fingerprint(meta: dict) -> str:
    return hashlib.sha256(
        json.dumps(meta, sort_keys=True).encode()
    ).hexdigest()


def save_trajectory(traj: RunTrajectory, path: str | Path) -> None:
    """Persist a trajectory as a compressed columnar archive."""
    batch_docs = np.concatenate([np.array(b.doc_indices, dtype=np.int64)
                                 for b in traj.batches])
    batch_labels = np.concatenate([np.array(b.labels, dtype=np.int8)
                                   for b in traj.batches])
    offsets = np.cumsum([0] + [len(b.doc_indices) for b in traj.batches])
    snapshot_matrix = (
        np.stack([s.probabilities for s in traj.snapshots])
        if traj.snapshots
        else np.zeros((0, traj.doc_count))
    )
    meta = {
        "format": TRAJECTORY_FORMAT,
        "version": TRAJECTORY_FORMAT_VERSION,
        "category_id": traj.task.category_id,
        "prevalence": traj.task.prevalence,
        "difficulty_bin": traj.task.difficulty_bin,
        "prevalence_bin": traj.task.prevalence_bin,
        "seed": traj.seed,
        "batch_size": traj.batch_size,
        "doc_count": traj.doc_count,
        "n_rounds": traj.n_rounds,
    }
    with Path(path).open("wb") as handle:
        np.savez_compressed(
            handle,
            meta=np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                               dtype=np.uint8),
            positive_indices=np.array(sorted(traj.task.positive_set),
                                      dtype=np.int64),
            batch_docs=batch_docs,
            batch_labels=batch_labels,
            batch_offsets=offsets.astype(np.int64),
            cumulative_relevant=np.array(traj.cumulative_relevant, dtype=np.int64),
            training_sizes=np.array(traj.training_sizes, dtype=np.int64),
            snapshots=snapshot_matrix,
        )


def load_trajectory(path: str | Path) -> RunTrajectory:
    try:
        with np.load(Path(path)) as archive:
            meta = json.loads(bytes(archive["meta"]).decode())
            if meta.get("format") != TRAJECTORY_FORMAT:
                raise DataError(f"{path}: not a trajectory archive")
            if meta.get("version") != TRAJECTORY_FORMAT_VERSION:
                raise DataError(f"{path}: unsupported archive version")
            positive = archive["positive_indices"]
            offsets = archive["batch_offsets"]
            docs = archive["batch_docs"]
            labels = archive["batch_labels"]
            snapshots = archive["snapshots"]
            cumulative = archive["cumulative_relevant"]
            sizes = archive["training_sizes"]
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{path}: corrupt trajectory archive ({exc})") from exc

    task = CategoryTask.build(
        meta["category_id"],
        positive,
        meta["doc_count"],
        difficulty_bin=meta.get("difficulty_bin"),
        prevalence_bin=meta.get("prevalence_bin"),
    )
    batches = tuple(
        BatchRecord(
            k,
            tuple(int(d) for d in docs[offsets[k]: offsets[k + 1]]),
            tuple(int(l) for l in labels[offsets[k]: offsets[k + 1]]),
        )
        for k in range(meta["n_rounds"])
    )
    return RunTrajectory(
        task=task,
        seed=int(meta["seed"]),
        batch_size=int(meta["batch_size"]),
        doc_count=int(meta["doc_count"]),
        batches=batches,
        cumulative_relevant=tuple(int(c) for c in cumulative),
        training_sizes=tuple(int(s) for s in sizes),
        snapshots=tuple(
            ScoreSnapshot(k + 1, snapshots[k]) for k in range(snapshots.shape[0])
        ),
    )


def verify_trajectory(traj: RunTrajectory) -> None:
    """Integrity replay: every recorded batch must be exactly the
    top-ranked unreviewed documents under its round's snapshot, counts must
    be consistent, and no document may be reviewed twice. Raises
    ``DataError`` on any violation."""
    seen: set[int] = set()
    running_relevant = 0
    running_size = 0
    for batch in traj.batches:
        docs = set(batch.doc_indices)
        if docs & seen:
            raise DataError(f"round {batch.round_index}: document reviewed twice")
        expected_labels = tuple(
            1 if d in traj.task.positive_set else 0 for d in batch.doc_indices
        )
        if expected_labels != batch.labels:
            raise DataError(f"round {batch.round_index}: labels disagree with task")
        if batch.round_index >= 1:
            probs = traj.snapshot(batch.round_index)
            unreviewed = np.array(
                sorted(set(range(traj.doc_count)) - seen), dtype=np.int64
            )
            expected = rank_by_score(probs[unreviewed], unreviewed)
            expected = tuple(int(d) for d in expected[: len(batch.doc_indices)])
            if expected != batch.doc_indices:
                raise DataError(
                    f"round {batch.round_index}: batch is not the top of the "
                    "snapshot ranking"
                )
        seen |= docs
        running_relevant += batch.batch_positive_count
        running_size += len(batch.doc_indices)
        if traj.cumulative_relevant[batch.round_index] != running_relevant:
            raise DataError(f"round {batch.round_index}: cumulative count mismatch")
        if traj.training_sizes[batch.round_index] != running_size:
            raise DataError(f"round {batch.round_index}: training size mismatch")
