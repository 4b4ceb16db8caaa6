"""Order-invariant attention plans for a deterministic toy transformer.

The package contrasts four segment-ordering regimes behind one engine
interface: plain causal attention, isolated parallel windows (pcw),
query-dependent score reordering (pine), and a global sort with circular
assignment (rotor), plus confidence-based routing between the original and
an invariant plan and a brute-force invariance certification harness.
"""

from .accounting import CostReport, analytic_cost, instrumented_forward
from .arrangement import AttentionPlan, distinct_layout_count, original_plan, rotor_plan
from .baselines import (
    CollisionStats,
    NoPoSScore,
    collision_rate,
    ordering_collision_stats,
    pcw_plan,
    pine_plan,
    pine_scores,
)
from .errors import (
    ConfigError,
    DomainError,
    PromptFormatError,
    RotorError,
    ShapeError,
    WeightFormatError,
)
from .harness import (
    build_plan,
    certify_invariance,
    generate_random_input,
    make_plan_builder,
    shuffle_study,
)
from .inputs import (
    PromptFile,
    SegmentedInput,
    Tokenizer,
    decode,
    encode,
    make_input,
    parse_prompt_file,
    shuffle_segments,
)
from .model import (
    ForwardResult,
    ModelConfig,
    ToyLM,
    answer_token_distribution,
    forward,
    greedy_decode,
    init_seeded,
    load_weights,
    perplexity,
    save_weights,
)
from .numerics import OpCounter, RotationSpec, matmul, rope_rotate, softmax
from .ordering import (
    GlobalOrder,
    compute_order,
    frequency_order,
    lexical_order,
    reversed_lexical_order,
    score_order,
)
from .routing import (
    ALPHA_GRID,
    DEFAULT_ALPHA,
    RoutingDecision,
    alpha_sweep,
    oracle_route,
    route,
)
from .rng import Xorshift64Star

__version__ = "0.1.0"
