"""Shared fixtures: fabricate trajectories with chosen labels/snapshots,
and build small simulated runs for rule and cost tests."""

import numpy as np

from tarsim.corpus import CategoryTask, bm25_saturate, synthesize
from tarsim.simulation import BatchRecord, RunTrajectory, ScoreSnapshot
from tarsim.simulation import run as simulate_run


def build_trajectory(
    round_labels,
    doc_count,
    snapshots=None,
    positive_total=None,
    category_id="fabricated",
    seed=0,
    batch_size=None,
):
    """Fabricate a ``RunTrajectory`` from per-round label lists.

    Documents are assigned sequentially: round 0 reviews doc 0 (label
    must be [1]), round k reviews the next ``len(round_labels[k])`` ids.
    ``snapshots`` supplies one probability array per round >= 1 (default:
    flat 0.5). Unreviewed positives are appended at the tail of the id
    space to reach ``positive_total`` when given.
    """
    assert round_labels[0] == [1], "round 0 must be the positive seed"
    if batch_size is None:
        batch_size = len(round_labels[1]) if len(round_labels) > 1 else 1

    batches = []
    next_doc = 0
    positives = []
    for k, labels in enumerate(round_labels):
        docs = list(range(next_doc, next_doc + len(labels)))
        next_doc += len(labels)
        positives.extend(d for d, l in zip(docs, labels) if l == 1)
        batches.append(BatchRecord(k, tuple(docs), tuple(labels)))
    reviewed_count = next_doc
    assert reviewed_count <= doc_count

    if positive_total is not None:
        assert positive_total >= len(positives)
        extra = positive_total - len(positives)
        assert reviewed_count + extra <= doc_count
        positives.extend(range(doc_count - extra, doc_count))

    if snapshots is None:
        snapshots = [np.full(doc_count, 0.5) for _ in range(len(round_labels) - 1)]
    snapshot_records = tuple(
        ScoreSnapshot(k + 1, np.asarray(p, dtype=float))
        for k, p in enumerate(snapshots)
    )

    cumulative = []
    sizes = []
    total_rel = 0
    total_size = 0
    for batch in batches:
        total_rel += batch.batch_positive_count
        total_size += len(batch.doc_indices)
        cumulative.append(total_rel)
        sizes.append(total_size)

    task = CategoryTask.build(category_id, positives, doc_count)
    return RunTrajectory(
        task=task,
        seed=seed,
        batch_size=batch_size,
        doc_count=doc_count,
        batches=tuple(batches),
        cumulative_relevant=tuple(cumulative),
        training_sizes=tuple(sizes),
        snapshots=snapshot_records,
    )


def small_synthetic_run(
    prevalence=0.08,
    difficulty=0.8,
    doc_count=600,
    vocab_size=400,
    corpus_seed=3,
    run_seed=1,
    batch_size=50,
    max_rounds=None,
):
    """Simulate one small run on a synthetic task (saturated weights)."""
    corpus, task = synthesize(prevalence, difficulty, doc_count, vocab_size,
                              seed=corpus_seed)
    corpus = bm25_saturate(corpus)
    traj = simulate_run(corpus, task, seed=run_seed, batch_size=batch_size,
                        max_rounds=max_rounds)
    return corpus, task, traj
