"""Sparse labeled document collections: loading, weighting, synthesis,
and difficulty characterization.

Collections are immutable once constructed; every operation that changes
weights or membership returns a new ``Corpus``. Term weights are raw term
frequencies until ``bm25_saturate`` is applied.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import (
    DegenerateSplitError,
    EmptyCorpusError,
    ParameterError,
    ParseError,
    TaskError,
)
from .linear_model import LogisticScorer, rank_by_score

__all__ = [
    "SparseVector",
    "Corpus",
    "CategoryTask",
    "load_svmlight",
    "save_svmlight",
    "downsample",
    "bm25_saturate",
    "synthesize",
    "difficulty_probe",
    "r_precision",
    "assign_difficulty_bin",
    "assign_prevalence_bin",
    "write_manifest",
    "read_manifest",
]

DIFFICULTY_BINS = ("hard", "medium", "easy")
PREVALENCE_BINS = ("rare", "medium", "common")

MANIFEST_FORMAT = "tarsim-corpus-manifest"
MANIFEST_FORMAT_VERSION = 1

_HEADER_RE = re.compile(r"index-base\s*[:=]\s*([01])")

# synthetic vocabulary layout: one signal block per class, background after
_SIG_BLOCK = 16
_BG_START = 2 * _SIG_BLOCK
_BG_TERMS_PER_DOC = 24
_SIG_TERMS_PER_DOC = 8


@dataclass(frozen=True)
class SparseVector:
    """One document: (feature id, weight) entries with strictly increasing
    ids and finite non-negative weights."""

    entries: tuple[tuple[int, float], ...]

    def __post_init__(self):
        prev = -1
        for fid, weight in self.entries:
            if fid <= prev:
                raise ParameterError("feature ids must be strictly increasing")
            if fid < 0:
                raise ParameterError("feature ids must be non-negative")
            if not math.isfinite(weight) or weight < 0:
                raise ParameterError("weights must be finite and >= 0")
            prev = fid


class Corpus:
    """Immutable collection of sparse document vectors."""

    def __init__(self, matrix: sparse.spmatrix):
        m = matrix.tocsr().astype(np.float64)
        m.sort_indices()
        if m.shape[0] == 0:
            raise EmptyCorpusError("corpus has no documents")
        if not np.all(np.isfinite(m.data)) or (m.data.size and m.data.min() < 0):
            raise ParameterError("weights must be finite and >= 0")
        m.data.setflags(write=False)
        m.indices.setflags(write=False)
        m.indptr.setflags(write=False)
        self._matrix = m

    @classmethod
    def from_documents(
        cls, documents: Sequence[SparseVector], vocabulary_size: int | None = None
    ) -> "Corpus":
        indptr = [0]
        indices: list[int] = []
        data: list[float] = []
        for doc in documents:
            for fid, weight in doc.entries:
                indices.append(fid)
                data.append(weight)
            indptr.append(len(indices))
        width = (max(indices) + 1) if indices else 1
        if vocabulary_size is not None:
            if indices and vocabulary_size <= max(indices):
                raise ParameterError("vocabulary_size too small for feature ids")
            width = vocabulary_size
        matrix = sparse.csr_matrix(
            (np.array(data), np.array(indices, dtype=np.int32), np.array(indptr)),
            shape=(len(documents), width),
        )
        return cls(matrix)

    @property
    def matrix(self) -> sparse.csr_matrix:
        return self._matrix

    @property
    def doc_count(self) -> int:
        return self._matrix.shape[0]

    @property
    def vocabulary_size(self) -> int:
        return self._matrix.shape[1]

    def document(self, index: int) -> SparseVector:
        if not 0 <= index < self.doc_count:
            raise ParameterError(f"document index {index} out of range")
        row = self._matrix.getrow(index)
        return SparseVector(
            tuple((int(f), float(w)) for f, w in zip(row.indices, row.data))
        )


@dataclass(frozen=True)
class CategoryTask:
    """One retrieval task over a corpus: a labeled positive set with its
    prevalence and (optionally) the prevalence/difficulty bin labels."""

    category_id: str
    positive_set: frozenset[int]
    prevalence: float
    difficulty_bin: str | None = None
    prevalence_bin: str | None = None

    def __post_init__(self):
        if not self.positive_set:
            raise TaskError(f"category {self.category_id!r} has no positives")
        if not 0.0 < self.prevalence < 1.0:
            raise TaskError(
                f"category {self.category_id!r} prevalence {self.prevalence} "
                "outside (0, 1)"
            )
        if self.difficulty_bin is not None and self.difficulty_bin not in DIFFICULTY_BINS:
            raise TaskError(f"unknown difficulty bin {self.difficulty_bin!r}")
        if self.prevalence_bin is not None and self.prevalence_bin not in PREVALENCE_BINS:
            raise TaskError(f"unknown prevalence bin {self.prevalence_bin!r}")

    @classmethod
    def build(
        cls,
        category_id: str,
        positive_indices: Iterable[int],
        doc_count: int,
        difficulty_bin: str | None = None,
        prevalence_bin: str | None = None,
    ) -> "CategoryTask":
        positives = frozenset(int(i) for i in positive_indices)
        return cls(
            category_id=category_id,
            positive_set=positives,
            prevalence=len(positives) / doc_count,
            difficulty_bin=difficulty_bin,
            prevalence_bin=prevalence_bin,
        )

    @property
    def positive_count(self) -> int:
        return len(self.positive_set)

    def labels_for(self, doc_indices: Sequence[int]) -> np.ndarray:
        pos = self.positive_set
        return np.array([1 if int(d) in pos else 0 for d in doc_indices],
                        dtype=np.int64)


def _parse_feature_token(token: str, base: int, line_no: int) -> tuple[int, float]:
    fid_str, _, val_str = token.partition(":")
    if not _:
        raise ParseError(f"line {line_no}: expected fid:value, got {token!r}")
    try:
        fid = int(fid_str)
        value = float(val_str)
    except ValueError as exc:
        raise ParseError(f"line {line_no}: bad feature token {token!r}") from exc
    fid -= base
    if fid < 0:
        raise ParseError(
            f"line {line_no}: feature id {fid_str} below the declared index base"
        )
    if not math.isfinite(value) or value < 0:
        raise ParseError(f"line {line_no}: weight must be finite and >= 0")
    return fid, value


def load_svmlight(
    path: str | Path,
    zero_based: bool | None = None,
    n_features: int | None = None,
    downsample_fraction: float | None = None,
    downsample_seed: int = 0,
) -> tuple[Corpus, list[CategoryTask]]:
    """Parse an svmlight-style sparse text file with multi-label support.

    Lines look like ``labelA,labelB fid:weight fid:weight ...``; a line whose
    first token contains ``:`` has no labels. Feature ids are 1-based unless
    a leading comment declares ``# index-base: 0`` or ``zero_based`` forces
    the choice. Weights are raw term frequencies. One ``CategoryTask`` is
    returned per distinct label. ``downsample_fraction`` keeps a seeded
    uniform subsample of documents, dropping categories that lose all
    positives.
    """
    path = Path(path)
    declared_base: int | None = None
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    doc_labels: list[list[str]] = []

    with path.open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            stripped = raw.strip()
            if stripped.startswith("#"):
                match = _HEADER_RE.search(stripped)
                if match and declared_base is None and not doc_labels:
                    declared_base = int(match.group(1))
                continue
            line = raw.split(" #", 1)[0].strip()
            if not line:
                continue
            base = 1
            if zero_based is not None:
                base = 0 if zero_based else 1
            elif declared_base is not None:
                base = declared_base
            tokens = line.split()
            if ":" in tokens[0]:
                labels: list[str] = []
                feature_tokens = tokens
            else:
                labels = [l for l in tokens[0].split(",") if l]
                feature_tokens = tokens[1:]
            prev_fid = -1
            for token in feature_tokens:
                fid, value = _parse_feature_token(token, base, line_no)
                if fid <= prev_fid:
                    raise ParseError(
                        f"line {line_no}: feature ids must be strictly increasing"
                    )
                prev_fid = fid
                indices.append(fid)
                data.append(value)
            indptr.append(len(indices))
            doc_labels.append(labels)

    if not doc_labels:
        raise EmptyCorpusError(f"{path}: no documents")

    width = (max(indices) + 1) if indices else 1
    if n_features is not None:
        if indices and n_features <= max(indices):
            raise ParseError(f"{path}: n_features smaller than max feature id")
        width = n_features
    matrix = sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(len(doc_labels), width),
    )
    corpus = Corpus(matrix)

    by_label: dict[str, set[int]] = {}
    for doc_idx, labels in enumerate(doc_labels):
        for label in labels:
            by_label.setdefault(label, set()).add(doc_idx)
    tasks = [
        CategoryTask.build(label, positives, corpus.doc_count)
        for label, positives in sorted(by_label.items())
    ]

    if downsample_fraction is not None:
        corpus, tasks = downsample(corpus, tasks, downsample_fraction, downsample_seed)
    return corpus, tasks


def save_svmlight(
    corpus: Corpus,
    tasks: Sequence[CategoryTask],
    path: str | Path,
    zero_based: bool = False,
) -> None:
    """Write a corpus (and its label sets) back to svmlight text. Weights
    are serialized with ``repr`` so a reload reproduces identical floats."""
    base = 0 if zero_based else 1
    labels_by_doc: dict[int, list[str]] = {}
    for task in tasks:
        for doc in task.positive_set:
            labels_by_doc.setdefault(doc, []).append(task.category_id)
    m = corpus.matrix
    with Path(path).open("w", encoding="utf-8") as handle:
        handle.write(f"# index-base: {base}\n")
        for doc in range(corpus.doc_count):
            row_start, row_end = m.indptr[doc], m.indptr[doc + 1]
            features = " ".join(
                f"{int(fid) + base}:{float(val)!r}"
                for fid, val in zip(m.indices[row_start:row_end],
                                    m.data[row_start:row_end])
            )
            labels = ",".join(sorted(labels_by_doc.get(doc, [])))
            handle.write(f"{labels} {features}".strip() + "\n")


def downsample(
    corpus: Corpus,
    tasks: Sequence[CategoryTask],
    fraction: float,
    seed: int = 0,
) -> tuple[Corpus, list[CategoryTask]]:
    """Seeded uniform subsample of documents (without replacement).

    Document order is preserved. Categories left without any positive (or
    without any negative) in the subsample disappear from the returned
    task list.
    """
    if not 0.0 < fraction <= 1.0:
        raise ParameterError("fraction must be in (0, 1]")
    keep_count = int(math.floor(fraction * corpus.doc_count))
    if keep_count < 1:
        raise ParameterError("fraction keeps no documents")
    rng = np.random.default_rng(seed)
    kept = np.sort(rng.choice(corpus.doc_count, size=keep_count, replace=False))
    remap = {int(old): new for new, old in enumerate(kept)}
    new_corpus = Corpus(corpus.matrix[kept])
    new_tasks = []
    for task in tasks:
        positives = [remap[d] for d in task.positive_set if d in remap]
        if not positives or len(positives) == new_corpus.doc_count:
            continue
        new_tasks.append(
            CategoryTask.build(
                task.category_id,
                positives,
                new_corpus.doc_count,
                difficulty_bin=task.difficulty_bin,
                prevalence_bin=task.prevalence_bin,
            )
        )
    return new_corpus, new_tasks


def bm25_saturate(corpus: Corpus, k1: float = 1.2) -> Corpus:
    """Replace every raw term frequency tf by tf*(k1+1)/(tf+k1).

    The map is monotone, fixes 0, and approaches (but never reaches) k1+1,
    so repeated heavy terms stop dominating the feature vector. No document
    length normalization is applied.
    """
    if k1 <= 0:
        raise ParameterError("k1 must be positive")
    m = corpus.matrix.copy()
    m.data = m.data * (k1 + 1.0) / (m.data + k1)
    return Corpus(m)


def synthesize(
    prevalence: float,
    difficulty: float,
    doc_count: int,
    vocab_size: int,
    seed: int,
    category_id: str = "synthetic",
) -> tuple[Corpus, CategoryTask]:
    """Generate a labeled sparse corpus with tunable class separation.

    Positives and negatives share a background vocabulary but draw their
    signal terms from two per-class blocks. ``difficulty`` in [0, 1] sets
    how exclusively each class sticks to its own block: 1 gives fully
    separated signal (trivially learnable), 0 makes the classes
    indistinguishable. The positive count is floor(prevalence * doc_count).
    Deterministic given the seed.
    """
    if not 0.0 < prevalence < 1.0:
        raise ParameterError("prevalence must be in (0, 1)")
    if not 0.0 <= difficulty <= 1.0:
        raise ParameterError("difficulty must be in [0, 1]")
    if doc_count < 2:
        raise ParameterError("need at least 2 documents")
    n_pos = int(math.floor(prevalence * doc_count))
    if n_pos < 1:
        raise ParameterError("prevalence * doc_count < 1: no positives possible")
    if n_pos >= doc_count:
        raise ParameterError("prevalence leaves no negatives")
    if vocab_size < _BG_START + _BG_TERMS_PER_DOC:
        raise ParameterError(
            f"vocab_size must be at least {_BG_START + _BG_TERMS_PER_DOC}"
        )

    rng = np.random.default_rng(seed)
    positive = np.zeros(doc_count, dtype=bool)
    positive[rng.choice(doc_count, size=n_pos, replace=False)] = True

    bg_vocab = np.arange(_BG_START, vocab_size)
    bg_weights = 1.0 / (1.0 + np.arange(bg_vocab.size)) ** 0.8
    bg_weights /= bg_weights.sum()
    bg_ids = rng.choice(bg_vocab, size=(doc_count, _BG_TERMS_PER_DOC), p=bg_weights)
    bg_tf = 1 + rng.poisson(0.5, size=(doc_count, _BG_TERMS_PER_DOC))

    # probability that a signal slot lands in the document's own class block
    own_rate = 0.5 * (1.0 + difficulty)
    own_block = rng.random((doc_count, _SIG_TERMS_PER_DOC)) < own_rate
    offsets = rng.integers(0, _SIG_BLOCK, size=(doc_count, _SIG_TERMS_PER_DOC))
    own_base = np.where(positive, 0, _SIG_BLOCK)[:, None]
    other_base = np.where(positive, _SIG_BLOCK, 0)[:, None]
    sig_ids = np.where(own_block, own_base, other_base) + offsets
    sig_tf = 1 + rng.poisson(0.5, size=(doc_count, _SIG_TERMS_PER_DOC))

    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for doc in range(doc_count):
        counts: dict[int, float] = {}
        for fid, tf in zip(bg_ids[doc], bg_tf[doc]):
            counts[int(fid)] = counts.get(int(fid), 0.0) + float(tf)
        for fid, tf in zip(sig_ids[doc], sig_tf[doc]):
            counts[int(fid)] = counts.get(int(fid), 0.0) + float(tf)
        for fid in sorted(counts):
            indices.append(fid)
            data.append(counts[fid])
        indptr.append(len(indices))

    matrix = sparse.csr_matrix(
        (np.array(data), np.array(indices, dtype=np.int64), np.array(indptr)),
        shape=(doc_count, vocab_size),
    )
    corpus = Corpus(matrix)
    task = CategoryTask.build(category_id, np.flatnonzero(positive), doc_count)
    return corpus, task


def r_precision(relevance_in_rank_order: Sequence[int]) -> float:
    """Fraction of the relevant documents found within the top-R ranks,
    R being the total number of relevant documents in the ranking."""
    rel = np.asarray(relevance_in_rank_order, dtype=np.int64)
    r = int(rel.sum())
    if r == 0:
        raise DegenerateSplitError("ranking contains no relevant documents")
    return float(rel[:r].sum()) / r


def difficulty_probe(
    corpus: Corpus,
    task: CategoryTask,
    train_fraction: float = 0.25,
    seed: int = 0,
    l2_weight: float = 1.0,
) -> float:
    """R-precision of a scorer trained on a random document split.

    Trains on ``train_fraction`` of the collection and ranks the holdout;
    the returned value is the share of holdout positives within the top-R'
    ranks (R' = holdout positive count). Used to bin task difficulty.
    """
    if not 0.0 < train_fraction < 1.0:
        raise ParameterError("train_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(corpus.doc_count)
    n_train = int(math.floor(train_fraction * corpus.doc_count))
    if n_train < 1 or n_train >= corpus.doc_count:
        raise ParameterError("train_fraction leaves an empty split")
    train_idx = perm[:n_train]
    holdout_idx = perm[n_train:]

    y_train = task.labels_for(train_idx)
    y_holdout = task.labels_for(holdout_idx)
    if y_train.min() == y_train.max():
        raise DegenerateSplitError("training split has a single class")
    if y_holdout.sum() == 0:
        raise DegenerateSplitError("holdout split has no positives")

    scorer = LogisticScorer(l2_weight=l2_weight).fit(corpus.matrix[train_idx], y_train)
    scores = scorer.decision_function(corpus.matrix[holdout_idx])
    ranked_docs = rank_by_score(scores, holdout_idx)
    ranked_relevance = task.labels_for(ranked_docs)
    return r_precision(ranked_relevance)


def assign_difficulty_bin(
    probe_r_precision: float, hard_max: float = 0.45, easy_min: float = 0.7
) -> str:
    """Map a probe R-precision value onto hard/medium/easy bands."""
    if not 0.0 <= probe_r_precision <= 1.0:
        raise ParameterError("R-precision must be in [0, 1]")
    if probe_r_precision < hard_max:
        return "hard"
    if probe_r_precision <= easy_min:
        return "medium"
    return "easy"


def assign_prevalence_bin(
    prevalence: float, rare_max: float = 0.02, common_min: float = 0.1
) -> str:
    """Map a prevalence value onto rare/medium/common bands."""
    if not 0.0 < prevalence < 1.0:
        raise ParameterError("prevalence must be in (0, 1)")
    if prevalence < rare_max:
        return "rare"
    if prevalence >= common_min:
        return "common"
    return "medium"


def write_manifest(
    path: str | Path,
    corpus: Corpus,
    tasks: Sequence[CategoryTask],
    seeds: Sequence[int] = (),
    probe_values: dict[str, float] | None = None,
) -> None:
    """Sidecar JSON describing a corpus: categories, bins, and run seeds."""
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_FORMAT_VERSION,
        "doc_count": corpus.doc_count,
        "vocabulary_size": corpus.vocabulary_size,
        "seeds": [int(s) for s in seeds],
        "categories": [
            {
                "id": task.category_id,
                "positives": task.positive_count,
                "prevalence": task.prevalence,
                "difficulty_bin": task.difficulty_bin,
                "prevalence_bin": task.prevalence_bin,
                "probe_r_precision": (probe_values or {}).get(task.category_id),
            }
            for task in tasks
        ],
    }
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_manifest(path: str | Path) -> dict:
    manifest = json.loads(Path(path).read_text())
    if manifest.get("format") != MANIFEST_FORMAT:
        raise ParseError(f"{path}: not a corpus manifest")
    return manifest
