"""scikit-learn style front end.

PreferenceElicitationTrainer wraps the functional training runners behind
the familiar fit/score/get_params surface, so the trainer composes with
sklearn tooling (clone, parameter grids) and with anything else that
expects estimator semantics. X for fit is a DatasetSplit; after fitting,
the checkpoint ladder, metrics, and manifest hang off trailing-underscore
attributes.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .core import DatasetSplit
from .environment import Environment, RoleplayerConfig, ScorerConfig
from .errors import ConfigError
from .evaluation import EvalConfig, clarification_metric, eval_responses
from .losses import LossConfig
from .trajectory import ExplorationConfig
from .training import METHODS, PhaseSettings, TrainConfig, train_run
from .validation import check_split


class PreferenceElicitationTrainer(BaseEstimator):
    """Trains a questioner policy on a hidden-attribute dialogue game.

    Parameters mirror the experiment config; validation happens in fit, not
    in __init__, per sklearn convention.

    Attributes set by fit:
        policy_        final checkpoint
        checkpoints_   iteration -> policy table (0 is untrained)
        metrics_       per-iteration records
        manifest_      resolved run manifest
        env_           the environment the run used
    """

    def __init__(
        self,
        method: str = "togate",
        iterations: int = 3,
        beta: float = 0.1,
        lam: float = 2.0,
        sft_learning_rate: float = 5.0,
        sft_epochs: int = 15,
        dpo_learning_rate: float = 40.0,
        dpo_epochs: int = 60,
        samples_per_pair: int = 10,
        turns: int = 3,
        temperature: float = 1.0,
        margin_min: float = 1e-9,
        refresh_reference: bool = True,
        sft_every_iteration: bool = False,
        p_correct_revealed: float = 0.9,
        p_wrong_revealed: float = 0.05,
        roleplayer_noise: float = 0.0,
        wrong_penalty: float = 1.0,
        eval_seed: int = 0,
        seed: int = 7,
        workers: int = 1,
    ) -> None:
        self.method = method
        self.iterations = iterations
        self.beta = beta
        self.lam = lam
        self.sft_learning_rate = sft_learning_rate
        self.sft_epochs = sft_epochs
        self.dpo_learning_rate = dpo_learning_rate
        self.dpo_epochs = dpo_epochs
        self.samples_per_pair = samples_per_pair
        self.turns = turns
        self.temperature = temperature
        self.margin_min = margin_min
        self.refresh_reference = refresh_reference
        self.sft_every_iteration = sft_every_iteration
        self.p_correct_revealed = p_correct_revealed
        self.p_wrong_revealed = p_wrong_revealed
        self.roleplayer_noise = roleplayer_noise
        self.wrong_penalty = wrong_penalty
        self.eval_seed = eval_seed
        self.seed = seed
        self.workers = workers

    def _train_config(self) -> TrainConfig:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        return TrainConfig(
            method=self.method,
            iterations=self.iterations,
            sft=PhaseSettings(self.sft_learning_rate, self.sft_epochs),
            dpo=PhaseSettings(self.dpo_learning_rate, self.dpo_epochs),
            loss=LossConfig(beta=self.beta, lam=self.lam),
            exploration=ExplorationConfig(
                samples_per_pair=self.samples_per_pair,
                turns=self.turns,
                temperature=self.temperature,
                seed=self.seed,
            ),
            eval=EvalConfig(seed=self.eval_seed, turns=self.turns, wrong_penalty=self.wrong_penalty),
            seed=self.seed,
            margin_min=self.margin_min,
            refresh_reference=self.refresh_reference,
            sft_every_iteration=self.sft_every_iteration,
            workers=self.workers,
        )

    def _environment(self, split: DatasetSplit) -> Environment:
        return Environment(
            split.space,
            ScorerConfig(self.p_correct_revealed, self.p_wrong_revealed),
            RoleplayerConfig(self.roleplayer_noise),
        )

    def fit(self, X: DatasetSplit, y=None) -> "PreferenceElicitationTrainer":
        """Train on a DatasetSplit. y is ignored (the golds live in X)."""
        if not isinstance(X, DatasetSplit):
            raise ConfigError(f"fit expects a DatasetSplit, got {type(X).__name__}")
        check_split(X)
        config = self._train_config()
        env = self._environment(X)
        artifacts = train_run(X, env, config)
        self.env_ = env
        self.checkpoints_ = artifacts.checkpoints
        self.metrics_ = artifacts.metrics
        self.manifest_ = artifacts.manifest
        self.policy_ = artifacts.final_checkpoint()
        self.n_iterations_ = max(artifacts.checkpoints)
        return self

    def predict(self, X: DatasetSplit) -> list:
        """Final responses of seeded evaluation rollouts for X's test pairs
        under the fitted policy, in sorted pair order."""
        check_is_fitted(self, "policy_")
        eval_config = EvalConfig(seed=self.eval_seed, turns=self.turns, wrong_penalty=self.wrong_penalty)
        return eval_responses(self.policy_, X, self._environment(X), eval_config)

    def score(self, X: DatasetSplit, y=None) -> float:
        """Normalized clarification score of the final checkpoint on X's
        test pairs (0.5 means indistinguishable from untrained)."""
        check_is_fitted(self, "policy_")
        eval_config = EvalConfig(seed=self.eval_seed, turns=self.turns, wrong_penalty=self.wrong_penalty)
        _, normalized = clarification_metric(self.policy_, X, self._environment(X), eval_config)
        return normalized
