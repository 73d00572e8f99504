"""Weighted temporal-logic rule learning for multivariate event sequences.

The model explains a target event type with a small set of human-readable
rules: each rule is a conjunction of predicates plus pairwise temporal
relations, carries a nonnegative weight, and additively raises the target's
conditional intensity while its body is satisfied.  Rules are discovered by
maximizing the event-sequence likelihood over continuous rule embeddings and
read off as discrete formulas.
"""

from .events import (
    CorpusError,
    Dataset,
    DUMMY_PREDICATE,
    EventSequence,
    Relation,
    breakpoints,
    fact_relation,
    fact_static,
    load_corpus,
    save_corpus,
)
from .features import (
    EmbeddingTables,
    HyperParams,
    RuleEmbedding,
    SelectionResult,
    argmax_select,
    combined_feature,
    gumbel_select,
    init_rule_embedding,
    interpret_rule,
    one_hot_tables,
    selection_from_formula,
    similarity_matrix,
    softmin,
    static_feature,
    temporal_feature,
)
from .likelihood import (
    CompiledDataset,
    CompiledRule,
    DivergenceError,
    GradientBundle,
    IntensityParams,
    compensator,
    compile_dataset,
    gradient,
    intensity_at,
    neg_log_likelihood,
    predict_next_time,
)
from .rules import (
    ContradictionError,
    RuleFormula,
    RuleSyntaxError,
    canonicalize,
    format_rule,
    parse_rule,
)
from .synth import (
    GenerationError,
    GroundTruthRule,
    GroundTruthSpec,
    PRESETS,
    assign_rules,
    generate_dataset,
    generate_sequence,
    load_spec,
    sample_target_times,
    save_spec,
)
from .induction import (
    FitResult,
    RuleSet,
    TrainConfig,
    best_of_restarts,
    fit_single_rule,
    is_explained,
    joint_refine,
    load_model,
    model_intensity,
    model_predict_next,
    save_model,
    sequential_cover,
)
from .evaluation import (
    EvalReport,
    aggregate,
    evaluate_model,
    event_mae,
    exact_match_accuracy,
    match_rules,
    run_experiment,
    split_dataset,
    weight_mae,
)

__version__ = "0.1.0"
