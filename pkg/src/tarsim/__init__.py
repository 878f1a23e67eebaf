"""tarsim: simulate one-phase technology-assisted review workflows and
evaluate heuristic stopping rules on recall accuracy and review cost."""

from .corpus import (
    CategoryTask,
    Corpus,
    SparseVector,
    bm25_saturate,
    difficulty_probe,
    downsample,
    load_svmlight,
    save_svmlight,
    synthesize,
)
from .errors import (
    ConfigError,
    DataError,
    ParameterError,
    ParseError,
    TarsimError,
)
from .estimators import (
    KneeGeometry,
    RecallEstimate,
    hypergeometric_cdf,
    knee_point,
    pearson_corr,
    quant_ci,
    quant_counts,
    quant_recall,
    quant_variance,
)
from .evaluation import (
    AggregateReport,
    CostRecord,
    aggregate,
    idealized_penalty,
    optimal_cost,
    recall_at,
    score,
)
from .linear_model import (
    LinearModel,
    LogisticScorer,
    TrainingSet,
    predict_proba,
    rank,
    train,
)
from .simulation import (
    RunTrajectory,
    gain_curve,
    load_trajectory,
    run,
    save_trajectory,
    verify_trajectory,
)
from .stopping import (
    StopReason,
    StoppingDecision,
    batch_pos,
    budget,
    cmh,
    corr_coef,
    evaluate_rules,
    fixed_iterations,
    knee,
    knee_schedule,
    max_prob,
    quant,
    quant_ci_rule,
    rule_2399,
    sample_recall,
)

__version__ = "0.1.0"
