"""Two-layer rule engine for autonomous-driving behaviour planning.

The maneuver layer maps an environment scene to candidate behaviours and keeps
the most conservative ones; the parameter layer turns those into one concrete
behaviour. Both layers can be learned from labelled scenes.
"""

from .errors import (
    EmptyResolutionError,
    InputError,
    MixedManeuverError,
    NoBehaviourError,
    ParameterConflictError,
    RuleEngineError,
    SceneValidationError,
    SchemaError,
    UnknownFeatureError,
)
from .model import (
    DEFAULT_ORDER,
    MOST_GENERAL,
    TRUE,
    UNDEFINED,
    Antecedent,
    Behaviour,
    ConservativenessOrder,
    Feature,
    FeatureFeature,
    FeatureKind,
    FeatureValue,
    LayerSchema,
    Maneuver,
    Op,
    Property,
    Rule,
    Scene,
    Theory,
    Value,
    complete_scene,
    validate_scene,
)
from .evaluator import (
    CompiledTheory,
    EngineConfig,
    InferenceTrace,
    LayerTrace,
    apply_rule,
    apply_theory,
    eval_constraint,
    infer,
    resolve_maneuver,
    resolve_par,
    transform_man,
    transform_par,
)
from .learning import (
    BadBaseRules,
    Heuristic,
    IterationBudgetExceeded,
    LabelledScene,
    coverage,
    learn_engine,
    misclassified,
    rule_engine_update,
    rule_update,
)
from .dsl import (
    load_config,
    parse_constraint_text,
    parse_dataset,
    parse_rule_document,
    serialize_rule_document,
)
from .diagnosis import (
    detect_discrepancy,
    engineering_step,
    find_conflicting_scenes,
    sanitize_scene,
)

__version__ = "0.1.0"
