"""Trajectory-optimized preference elicitation on a synthetic dialogue game.

A questioner policy learns to ask clarifying questions about a hidden user
profile and to produce a profile-matching final response, trained either by
supervised learning on winning trajectories, by paired contrastive losses
over clarifications and responses, or by the combined method. Everything is
tabular and seeded, so every probability, gradient, and metric is exact and
every run is bit-reproducible.
"""

from .core import (
    AttributeSpace,
    Conversation,
    DatasetSplit,
    GoldResponse,
    Persona,
    PreferencePair,
    Task,
    Token,
)
from .dataset import generate_dataset, load_split, save_split, split_digest
from .environment import (
    Environment,
    RoleplayerConfig,
    ScorerConfig,
    gold_loglik,
    oracle_gold,
    roleplayer_answer,
)
from .errors import (
    ConfigError,
    DataFormatError,
    InstanceTooLargeError,
    NumericsError,
    TemplateError,
    TogateError,
    TransportError,
)
from .estimator import PreferenceElicitationTrainer
from .evaluation import (
    DeterministicJudge,
    EvalConfig,
    JudgeVerdict,
    WinRateReport,
    biased_judge,
    clarification_metric,
    deterministic_judge,
    dual_pass_win_rate,
    evaluate_checkpoint,
)
from .losses import (
    LossConfig,
    SftExample,
    bt_probability,
    clarification_loss,
    combined_loss,
    dpo_term,
    implicit_reward,
    partition_oracle,
    response_loss,
    sft_loss_and_grad,
)
from .policy import (
    PolicyParams,
    QuestionContext,
    ResponseContext,
    UNOBSERVED,
    grad_trajectory_logprob,
    kl_to_reference,
    load_policy,
    question_logprob,
    response_logprob,
    sample_conversation,
    save_policy,
    snapshot,
    trajectory_logprob,
    zero_policy,
)
from .trajectory import (
    ExplorationConfig,
    build_dp,
    collect_sft_examples,
    explore_pair,
    extract_questions,
    generate_response,
)
from .training import (
    PhaseSettings,
    RunArtifacts,
    TrainConfig,
    run_dpo_only,
    run_stargate,
    run_togate,
    sgd_step,
    train_run,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
