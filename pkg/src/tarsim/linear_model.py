"""L2-regularized logistic scorer for sparse document features.

The scorer both prioritizes review batches (by ranking) and produces the
calibrated probabilities the recall estimators consume. Training minimizes
the summed log-loss plus ``(l2_weight / 2) * ||w||^2`` with an
unregularized intercept, using a deterministic full-gradient L-BFGS loop
with the objective value recorded at every accepted iterate.

``LogisticScorer`` follows the scikit-learn estimator protocol
(``fit`` / ``predict_proba`` / ``decision_function`` / ``get_params``) so
it composes with that ecosystem; the module-level ``train`` /
``predict_proba`` / ``rank`` functions are the pipeline-facing surface and
return or consume an immutable ``LinearModel``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.optimize import minimize
from scipy.special import expit

from .errors import DataError, DegenerateClassError, ParameterError

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import Corpus

__all__ = [
    "PROVENANCE_REVIEWED",
    "PROVENANCE_ARTIFICIAL",
    "TrainingExample",
    "TrainingSet",
    "LinearModel",
    "LogisticScorer",
    "train",
    "predict_proba",
    "rank",
    "rank_by_score",
    "objective_and_gradient",
    "save_model",
    "load_model",
]

PROVENANCE_REVIEWED = "reviewed"
PROVENANCE_ARTIFICIAL = "artificial-negative"

MODEL_FORMAT = "tarsim-linear-model"
MODEL_FORMAT_VERSION = 1

# predicted probabilities are clamped inside the open unit interval so the
# recall estimators never see an exact 0 or 1 from a saturated sigmoid
_PROB_FLOOR = 1e-15


@dataclass(frozen=True)
class TrainingExample:
    doc_index: int
    label: int
    provenance: str = PROVENANCE_REVIEWED

    def __post_init__(self):
        if self.label not in (0, 1):
            raise DataError(f"label must be 0 or 1, got {self.label!r}")
        if self.provenance not in (PROVENANCE_REVIEWED, PROVENANCE_ARTIFICIAL):
            raise DataError(f"unknown provenance {self.provenance!r}")


@dataclass(frozen=True)
class TrainingSet:
    """Labeled examples for one training call.

    Reviewed examples carry true labels; artificial negatives are unreviewed
    documents labeled 0 to break a single-class reviewed set. Reviewed
    document indices must be unique.
    """

    examples: tuple[TrainingExample, ...]

    def __post_init__(self):
        if not self.examples:
            raise DataError("training set is empty")
        reviewed = [e.doc_index for e in self.examples
                    if e.provenance == PROVENANCE_REVIEWED]
        if len(set(reviewed)) != len(reviewed):
            raise DataError("duplicate document indices among reviewed examples")

    @classmethod
    def from_reviewed(cls, pairs: Iterable[tuple[int, int]]) -> "TrainingSet":
        return cls(tuple(TrainingExample(int(d), int(l)) for d, l in pairs))

    def with_artificial_negatives(self, doc_indices: Iterable[int]) -> "TrainingSet":
        extra = tuple(
            TrainingExample(int(d), 0, PROVENANCE_ARTIFICIAL) for d in doc_indices
        )
        return TrainingSet(self.examples + extra)

    @property
    def doc_indices(self) -> np.ndarray:
        return np.array([e.doc_index for e in self.examples], dtype=np.int64)

    @property
    def labels(self) -> np.ndarray:
        return np.array([e.label for e in self.examples], dtype=np.float64)

    def fingerprint(self) -> str:
        payload = sorted((e.doc_index, e.label, e.provenance) for e in self.examples)
        return hashlib.sha256(json.dumps(payload).encode()).hexdigest()


@dataclass(frozen=True)
class LinearModel:
    """Immutable fitted scorer: dense weights plus intercept, with the
    optimizer trace and the fingerprint of the training set it came from."""

    weights: np.ndarray
    intercept: float
    converged: bool
    n_iter: int
    objective_trace: tuple[float, ...]
    training_fingerprint: str = ""

    def __post_init__(self):
        self.weights.setflags(write=False)
        if not np.all(np.isfinite(self.weights)) or not np.isfinite(self.intercept):
            raise DataError("model parameters must be finite")


def _validate_design_matrix(X) -> sparse.csr_matrix:
    if not sparse.issparse(X):
        X = sparse.csr_matrix(np.asarray(X, dtype=np.float64))
    X = X.tocsr().astype(np.float64)
    if not np.all(np.isfinite(X.data)):
        raise DataError("non-finite feature value in design matrix")
    return X


def _validate_labels(y, n_rows: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.size != n_rows:
        raise DataError(f"label count {y.size} != row count {n_rows}")
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DataError("labels must be 0 or 1")
    if y.min() == y.max():
        raise DegenerateClassError("training labels contain a single class")
    return y


def objective_and_gradient(
    params: np.ndarray,
    X: sparse.csr_matrix,
    y: np.ndarray,
    l2_weight: float,
) -> tuple[float, np.ndarray]:
    """Summed log-loss plus ridge penalty and its analytic gradient.

    ``params`` stacks the feature weights with the intercept as the last
    entry; the intercept is excluded from the penalty.
    """
    w = params[:-1]
    b = params[-1]
    z = X @ w + b
    loss = float(np.logaddexp(0.0, z).sum() - y @ z)
    penalty = 0.5 * l2_weight * float(w @ w)
    residual = expit(z) - y
    grad = np.empty_like(params)
    grad[:-1] = X.T @ residual + l2_weight * w
    grad[-1] = residual.sum()
    return loss + penalty, grad


class LogisticScorer:
    """Scikit-learn style logistic regression on sparse rows.

    Parameters
    ----------
    l2_weight : strength of the ridge penalty on the weights (not the
        intercept); the loss term is summed, not averaged.
    tol : convergence target for the max absolute gradient component.
    max_iter : optimizer iteration cap.
    """

    def __init__(self, l2_weight: float = 1.0, tol: float = 1e-6,
                 max_iter: int = 1000):
        self.l2_weight = l2_weight
        self.tol = tol
        self.max_iter = max_iter

    def get_params(self, deep: bool = True) -> dict:
        return {"l2_weight": self.l2_weight, "tol": self.tol,
                "max_iter": self.max_iter}

    def set_params(self, **params) -> "LogisticScorer":
        valid = self.get_params()
        for key, value in params.items():
            if key not in valid:
                raise ParameterError(f"unknown parameter {key!r}")
            setattr(self, key, value)
        return self

    def fit(self, X, y) -> "LogisticScorer":
        if self.l2_weight <= 0:
            raise ParameterError("l2_weight must be positive")
        if self.tol <= 0:
            raise ParameterError("tol must be positive")
        X = _validate_design_matrix(X)
        y = _validate_labels(y, X.shape[0])

        x0 = np.zeros(X.shape[1] + 1)
        trace = [objective_and_gradient(x0, X, y, self.l2_weight)[0]]

        def _record(params):
            trace.append(objective_and_gradient(params, X, y, self.l2_weight)[0])

        result = minimize(
            objective_and_gradient,
            x0,
            args=(X, y, self.l2_weight),
            jac=True,
            method="L-BFGS-B",
            callback=_record,
            options={"maxiter": self.max_iter, "gtol": self.tol, "ftol": 1e-14},
        )
        final_grad = objective_and_gradient(result.x, X, y, self.l2_weight)[1]

        self.weights_ = result.x[:-1].copy()
        self.intercept_ = float(result.x[-1])
        self.n_iter_ = int(result.nit)
        self.converged_ = bool(np.abs(final_grad).max() <= self.tol)
        self.objective_trace_ = tuple(trace)
        return self

    def decision_function(self, X) -> np.ndarray:
        X = _validate_design_matrix(X)
        return X @ self.weights_ + self.intercept_

    def predict_proba(self, X) -> np.ndarray:
        p = np.clip(expit(self.decision_function(X)), _PROB_FLOOR, 1.0 - _PROB_FLOOR)
        return np.column_stack([1.0 - p, p])

    def predict(self, X) -> np.ndarray:
        return (self.decision_function(X) > 0.0).astype(int)

    @property
    def model_(self) -> LinearModel:
        return LinearModel(
            weights=self.weights_.copy(),
            intercept=self.intercept_,
            converged=self.converged_,
            n_iter=self.n_iter_,
            objective_trace=self.objective_trace_,
        )


def train(
    corpus: "Corpus",
    training: TrainingSet,
    l2_weight: float = 1.0,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> LinearModel:
    """Fit the scorer on the given training examples of a corpus."""
    indices = training.doc_indices
    if indices.size and (indices.min() < 0 or indices.max() >= corpus.doc_count):
        raise DataError("training document index out of range")
    X = corpus.matrix[indices]
    y = training.labels
    scorer = LogisticScorer(l2_weight=l2_weight, tol=tol, max_iter=max_iter).fit(X, y)
    return LinearModel(
        weights=scorer.weights_,
        intercept=scorer.intercept_,
        converged=scorer.converged_,
        n_iter=scorer.n_iter_,
        objective_trace=scorer.objective_trace_,
        training_fingerprint=training.fingerprint(),
    )


def _scores(model: LinearModel, corpus: "Corpus",
            doc_indices: Sequence[int] | None) -> tuple[np.ndarray, np.ndarray]:
    if doc_indices is None:
        idx = np.arange(corpus.doc_count, dtype=np.int64)
    else:
        idx = np.asarray(doc_indices, dtype=np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= corpus.doc_count):
            raise DataError("document index out of range")
    return idx, corpus.matrix[idx] @ model.weights + model.intercept


def predict_proba(
    model: LinearModel, corpus: "Corpus", doc_indices: Sequence[int] | None = None
) -> np.ndarray:
    """Predicted probability of relevance for the given documents (all of
    the corpus when ``doc_indices`` is None), strictly inside (0, 1)."""
    _, z = _scores(model, corpus, doc_indices)
    return np.clip(expit(z), _PROB_FLOOR, 1.0 - _PROB_FLOOR)


def rank_by_score(scores: np.ndarray, candidates: np.ndarray) -> np.ndarray:
    """Candidates ordered by descending score; ties by ascending index."""
    order = np.lexsort((candidates, -np.asarray(scores, dtype=np.float64)))
    return np.asarray(candidates)[order]


def rank(
    model: LinearModel, corpus: "Corpus", candidate_indices: Sequence[int]
) -> list[int]:
    """Total ordering of candidate documents under the model."""
    candidates = np.asarray(candidate_indices, dtype=np.int64)
    if candidates.size == 0:
        raise ParameterError("candidate list is empty")
    idx, z = _scores(model, corpus, candidates)
    return [int(d) for d in rank_by_score(z, idx)]


def save_model(model: LinearModel, path: str | Path) -> None:
    blob = {
        "format": MODEL_FORMAT,
        "version": MODEL_FORMAT_VERSION,
        "weights": [float(w) for w in model.weights],
        "intercept": model.intercept,
        "converged": model.converged,
        "n_iter": model.n_iter,
        "objective_trace": [float(v) for v in model.objective_trace],
        "training_fingerprint": model.training_fingerprint,
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True))


def load_model(path: str | Path) -> LinearModel:
    blob = json.loads(Path(path).read_text())
    if blob.get("format") != MODEL_FORMAT or blob.get("version") != MODEL_FORMAT_VERSION:
        raise DataError(f"unrecognized model snapshot format in {path}")
    return LinearModel(
        weights=np.array(blob["weights"], dtype=np.float64),
        intercept=float(blob["intercept"]),
        converged=bool(blob["converged"]),
        n_iter=int(blob["n_iter"]),
        objective_trace=tuple(float(v) for v in blob["objective_trace"]),
        training_fingerprint=str(blob["training_fingerprint"]),
    )
