"""End-to-end training runs.

The full method runs one supervised phase on winning trajectories, freezes
that policy as the reference, rebuilds the contrastive dataset with it, and
then optimizes the weighted paired losses; later iterations repeat
exploration plus contrastive optimization with the reference refreshed to
the latest checkpoint. Two baselines share the machinery: supervised-only
(winners each iteration, no reference, no contrastive phase) and
contrastive-only (no supervised warmup, reference pinned to the untrained
policy).

Runs are bit-reproducible: identical configs (seed included) produce
byte-identical checkpoints and metrics files.
"""

from __future__ import annotations

import dataclasses
import functools
import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .core import DatasetSplit
from .environment import Environment
from .errors import ConfigError, DataFormatError, NumericsError
from .evaluation import EvalConfig, evaluate_checkpoint
from .losses import (
    LossConfig,
    clarification_loss,
    combine_gradients,
    combined_loss,
    response_loss,
    sft_loss_and_grad,
)
from .policy import PolicyParams, kl_to_reference, load_policy, save_policy, snapshot, zero_policy
from .trajectory import ExplorationConfig, build_dp, collect_sft_examples
from .validation import check_positive

logger = logging.getLogger(__name__)

METHODS = ("togate", "stargate", "dpo_only")

METRICS_FORMAT_VERSION = 1
MANIFEST_FORMAT_VERSION = 1

# Loss increases above this within a full-batch phase are logged as
# suspect; the tolerance absorbs float noise only.
MONOTONICITY_TOLERANCE = 1e-9


@dataclass(frozen=True)
class PhaseSettings:
    """Plain gradient descent settings for one phase. batch_size 0 means
    full batch, which is also what makes per-epoch loss decrease
    monotonically at the default rates."""

    learning_rate: float
    epochs: int
    batch_size: int = 0

    def __post_init__(self) -> None:
        check_positive(self.learning_rate, "learning_rate")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 0:
            raise ConfigError(f"batch_size must be >= 0, got {self.batch_size}")


DEFAULT_SFT = PhaseSettings(learning_rate=5.0, epochs=15)
DEFAULT_DPO = PhaseSettings(learning_rate=40.0, epochs=60)


@dataclass(frozen=True)
class TrainConfig:
    method: str = "togate"
    iterations: int = 3
    sft: PhaseSettings = DEFAULT_SFT
    dpo: PhaseSettings = DEFAULT_DPO
    loss: LossConfig = field(default_factory=LossConfig)
    exploration: ExplorationConfig = field(default_factory=ExplorationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 7
    margin_min: float = 1e-9
    refresh_reference: bool = True
    sft_every_iteration: bool = False
    workers: int = 1

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}; valid methods: {', '.join(METHODS)}")
        if self.iterations < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if self.margin_min < 0:
            raise ConfigError(f"margin_min must be >= 0, got {self.margin_min}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def run_exploration(self) -> ExplorationConfig:
        """Exploration config with the run seed substituted in, so one knob
        governs the whole run; per-pair rng streams mix the iteration index
        in separately."""
        return dataclasses.replace(self.exploration, seed=self.seed)


@dataclass
class RunArtifacts:
    """Everything a run produces: the checkpoint ladder (index 0 is the
    untrained policy), per-iteration metrics, the manifest, the
    post-supervised-phase snapshot, and the contrastive datasets kept for
    audit."""

    method: str
    checkpoints: dict[int, PolicyParams]
    metrics: list[dict]
    manifest: dict
    sft_policy: Optional[PolicyParams] = None
    dp_by_iteration: dict[int, list] = field(default_factory=dict)

    def final_checkpoint(self) -> PolicyParams:
        return self.checkpoints[max(self.checkpoints)]


def sgd_step(params: PolicyParams, gradient: PolicyParams, learning_rate: float) -> PolicyParams:
    """params <- params - learning_rate * gradient, in place."""
    check_positive(learning_rate, "learning_rate")
    if not gradient.is_finite():
        raise NumericsError(
            f"non-finite gradient (max |entry| so far {params.max_abs():.3g}); aborting"
        )
    return params.add_scaled(gradient, -learning_rate)


def _batches(items: list, batch_size: int):
    if batch_size <= 0 or batch_size >= len(items):
        yield items
    else:
        for i in range(0, len(items), batch_size):
            yield items[i : i + batch_size]


def _check_finite_loss(loss: float, where: str) -> None:
    if not math.isfinite(loss):
        raise NumericsError(f"non-finite loss at {where}: {loss}")


def _sft_phase(policy: PolicyParams, examples: list, settings: PhaseSettings) -> list[float]:
    """Returns the full-set loss at the start of every epoch plus the final
    loss after the last update."""
    losses = []
    full = settings.batch_size <= 0 or settings.batch_size >= len(examples)
    for epoch in range(settings.epochs):
        loss, grad = sft_loss_and_grad(policy, examples)
        _check_finite_loss(loss, f"sft epoch {epoch}")
        losses.append(loss)
        if full:
            sgd_step(policy, grad, settings.learning_rate)
        else:
            for batch in _batches(examples, settings.batch_size):
                _, batch_grad = sft_loss_and_grad(policy, batch)
                sgd_step(policy, batch_grad, settings.learning_rate)
    final, _ = sft_loss_and_grad(policy, examples)
    _check_finite_loss(final, "sft final")
    losses.append(final)
    _warn_if_not_monotone(losses, "sft", full)
    return losses


def _dpo_losses(policy, ref, dp, tasks, loss_config):
    l_c, g_c = clarification_loss(policy, ref, dp, tasks, loss_config.beta)
    l_o, g_o = response_loss(policy, ref, dp, tasks, loss_config.beta)
    total = combined_loss(l_c, l_o, loss_config.lam)
    grad = combine_gradients(g_c, g_o, loss_config.lam)
    return total, l_c, l_o, grad


def _dpo_phase(
    policy: PolicyParams,
    ref: PolicyParams,
    dp: list,
    tasks,
    settings: PhaseSettings,
    loss_config: LossConfig,
) -> list[dict]:
    records = []
    full = settings.batch_size <= 0 or settings.batch_size >= len(dp)
    for epoch in range(settings.epochs):
        total, l_c, l_o, grad = _dpo_losses(policy, ref, dp, tasks, loss_config)
        _check_finite_loss(total, f"dpo epoch {epoch}")
        records.append({"loss": total, "loss_c": l_c, "loss_o": l_o})
        if full:
            sgd_step(policy, grad, settings.learning_rate)
        else:
            for batch in _batches(dp, settings.batch_size):
                _, _, _, batch_grad = _dpo_losses(policy, ref, batch, tasks, loss_config)
                sgd_step(policy, batch_grad, settings.learning_rate)
    total, l_c, l_o, _ = _dpo_losses(policy, ref, dp, tasks, loss_config)
    _check_finite_loss(total, "dpo final")
    records.append({"loss": total, "loss_c": l_c, "loss_o": l_o})
    _warn_if_not_monotone([r["loss"] for r in records], "dpo", full)
    return records


def _warn_if_not_monotone(losses: list[float], phase: str, full_batch: bool) -> None:
    if not full_batch:
        return
    for i in range(1, len(losses)):
        if losses[i] > losses[i - 1] + MONOTONICITY_TOLERANCE:
            logger.warning(
                "%s loss increased at epoch %d: %.12g -> %.12g (learning rate too high?)",
                phase, i, losses[i - 1], losses[i],
            )


@functools.lru_cache(maxsize=1)
def _git_commit() -> str:
    """Best-effort commit hash of the working directory, for provenance of
    experiment runs; 'unknown' outside a repository."""
    try:
        out = subprocess.run(
            ["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5
        )
    except OSError:
        return "unknown"
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else "unknown"


def _base_manifest(config: TrainConfig, env: Environment, split_digest: str) -> dict:
    from . import __version__

    return {
        "version": MANIFEST_FORMAT_VERSION,
        "kind": "run-manifest",
        "method": config.method,
        "seed": config.seed,
        "train_config": _jsonable(dataclasses.asdict(config)),
        "environment": _jsonable(dataclasses.asdict(env)),
        "split_digest": split_digest,
        "package_version": __version__,
        "git_commit": _git_commit(),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj


def _eval_row(checkpoint, split, env, config: TrainConfig, baseline):
    if not split.test:
        return {}
    return evaluate_checkpoint(checkpoint, split, env, config.eval, baseline)


def _metrics_row(iteration: int, phase: str) -> dict:
    return {"iteration": iteration, "phase": phase}


def _mean_kl(policy, ref, split, config: TrainConfig) -> float:
    """Mean exact KL(policy || reference) over tasks after a contrastive
    phase; diagnostic only, the losses never optimize it directly."""
    if not split.tasks:
        return 0.0
    turns = config.exploration.turns
    return sum(kl_to_reference(policy, ref, task, turns) for task in split.tasks) / len(split.tasks)


def run_togate(split: DatasetSplit, env: Environment, config: TrainConfig) -> RunArtifacts:
    """Iteration 1: explore, supervised phase on winners, freeze the
    reference, re-explore, contrastive phase. Later iterations: refresh the
    reference to the latest checkpoint, explore, contrastive phase."""
    from .dataset import split_digest

    policy = zero_policy(env.space)
    checkpoints = {0: snapshot(policy)}
    baseline = checkpoints[0]
    artifacts = RunArtifacts(
        method="togate",
        checkpoints=checkpoints,
        metrics=[],
        manifest=_base_manifest(config, env, split_digest(split)),
    )
    row0 = _metrics_row(0, "init")
    row0.update(_eval_row(baseline, split, env, config, baseline))
    artifacts.metrics.append(row0)

    ref: Optional[PolicyParams] = None
    for iteration in range(1, config.iterations + 1):
        try:
            exploration = config.run_exploration()
            row = _metrics_row(iteration, "togate")
            if iteration == 1 or config.sft_every_iteration:
                examples = collect_sft_examples(
                    policy, split, env, exploration, iteration, config.workers
                )
                if examples:
                    row["sft_losses"] = _sft_phase(policy, examples, config.sft)
                else:
                    logger.warning("iteration %d: no training pairs, skipping the supervised phase", iteration)
                if iteration == 1:
                    artifacts.sft_policy = snapshot(policy)
            if iteration == 1 or config.refresh_reference or ref is None:
                ref = snapshot(policy)
            dp = build_dp(
                policy, split, env, exploration, config.margin_min, iteration, config.workers
            )
            artifacts.dp_by_iteration[iteration] = dp
            row["num_pairs"] = len(dp)
            if dp:
                row["mean_margin"] = sum(p.score_w - p.score_l for p in dp) / len(dp)
                row["dpo_epochs"] = _dpo_phase(policy, ref, dp, split.tasks, config.dpo, config.loss)
                row["mean_kl_to_reference"] = _mean_kl(policy, ref, split, config)
            else:
                logger.warning("iteration %d: contrastive dataset is empty, skipping the paired phase", iteration)
        except NumericsError as exc:
            raise NumericsError(f"iteration {iteration}: {exc}") from exc
        checkpoints[iteration] = snapshot(policy)
        row.update(_eval_row(checkpoints[iteration], split, env, config, baseline))
        artifacts.metrics.append(row)
    return artifacts


def run_stargate(split: DatasetSplit, env: Environment, config: TrainConfig) -> RunArtifacts:
    """Supervised learning on positive trajectories only, every iteration.
    No reference policy, no contrastive phase."""
    from .dataset import split_digest

    policy = zero_policy(env.space)
    checkpoints = {0: snapshot(policy)}
    baseline = checkpoints[0]
    artifacts = RunArtifacts(
        method="stargate",
        checkpoints=checkpoints,
        metrics=[],
        manifest=_base_manifest(config, env, split_digest(split)),
    )
    row0 = _metrics_row(0, "init")
    row0.update(_eval_row(baseline, split, env, config, baseline))
    artifacts.metrics.append(row0)

    for iteration in range(1, config.iterations + 1):
        try:
            exploration = config.run_exploration()
            row = _metrics_row(iteration, "stargate")
            examples = collect_sft_examples(policy, split, env, exploration, iteration, config.workers)
            if examples:
                row["sft_losses"] = _sft_phase(policy, examples, config.sft)
            else:
                logger.warning("iteration %d: no training pairs, skipping the supervised phase", iteration)
        except NumericsError as exc:
            raise NumericsError(f"iteration {iteration}: {exc}") from exc
        checkpoints[iteration] = snapshot(policy)
        if iteration == 1:
            artifacts.sft_policy = snapshot(policy)
        row.update(_eval_row(checkpoints[iteration], split, env, config, baseline))
        artifacts.metrics.append(row)
    return artifacts


def run_dpo_only(split: DatasetSplit, env: Environment, config: TrainConfig) -> RunArtifacts:
    """Contrastive training without any supervised warmup.

    The reference stays pinned to the untrained policy and, unlike the full
    method, exploration keeps sampling from that untrained policy as well:
    the baseline trains on a static preference-data distribution instead of
    dynamically improving trajectories."""
    from .dataset import split_digest

    policy = zero_policy(env.space)
    checkpoints = {0: snapshot(policy)}
    baseline = checkpoints[0]
    ref = snapshot(policy)
    artifacts = RunArtifacts(
        method="dpo_only",
        checkpoints=checkpoints,
        metrics=[],
        manifest=_base_manifest(config, env, split_digest(split)),
    )
    row0 = _metrics_row(0, "init")
    row0.update(_eval_row(baseline, split, env, config, baseline))
    artifacts.metrics.append(row0)

    for iteration in range(1, config.iterations + 1):
        try:
            exploration = config.run_exploration()
            row = _metrics_row(iteration, "dpo_only")
            dp = build_dp(
                ref, split, env, exploration, config.margin_min, iteration, config.workers
            )
            artifacts.dp_by_iteration[iteration] = dp
            row["num_pairs"] = len(dp)
            if dp:
                row["mean_margin"] = sum(p.score_w - p.score_l for p in dp) / len(dp)
                row["dpo_epochs"] = _dpo_phase(policy, ref, dp, split.tasks, config.dpo, config.loss)
                row["mean_kl_to_reference"] = _mean_kl(policy, ref, split, config)
            else:
                logger.warning("iteration %d: contrastive dataset is empty, skipping the paired phase", iteration)
        except NumericsError as exc:
            raise NumericsError(f"iteration {iteration}: {exc}") from exc
        checkpoints[iteration] = snapshot(policy)
        row.update(_eval_row(checkpoints[iteration], split, env, config, baseline))
        artifacts.metrics.append(row)
    return artifacts


_RUNNERS = {"togate": run_togate, "stargate": run_stargate, "dpo_only": run_dpo_only}


def train_run(split: DatasetSplit, env: Environment, config: TrainConfig) -> RunArtifacts:
    return _RUNNERS[config.method](split, env, config)


def checkpoint_path(run_dir: str | Path, iteration: int) -> Path:
    return Path(run_dir) / "checkpoints" / f"checkpoint_{iteration:03d}.jsonl"


def save_run(artifacts: RunArtifacts, run_dir: str | Path) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    for iteration, params in sorted(artifacts.checkpoints.items()):
        save_policy(params, checkpoint_path(run_dir, iteration))
    with open(run_dir / "metrics.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        header = {
            "version": METRICS_FORMAT_VERSION,
            "kind": "metrics",
            "method": artifacts.method,
        }
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for row in artifacts.metrics:
            fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")) + "\n")
    with open(run_dir / "manifest.json", "w", encoding="utf-8", newline="\n") as fh:
        json.dump(artifacts.manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_metrics(run_dir: str | Path) -> tuple[dict, list[dict]]:
    path = Path(run_dir) / "metrics.jsonl"
    if not path.exists():
        raise DataFormatError(f"{path}: metrics file not found")
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty metrics file")
    header = json.loads(lines[0])
    if header.get("kind") != "metrics" or header.get("version") != METRICS_FORMAT_VERSION:
        raise DataFormatError(f"{path}: not a version-{METRICS_FORMAT_VERSION} metrics file")
    return header, [json.loads(line) for line in lines[1:]]


def load_manifest(run_dir: str | Path) -> dict:
    path = Path(run_dir) / "manifest.json"
    if not path.exists():
        raise DataFormatError(f"{path}: manifest not found")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def list_checkpoints(run_dir: str | Path) -> list[int]:
    directory = Path(run_dir) / "checkpoints"
    if not directory.is_dir():
        return []
    out = []
    for path in sorted(directory.glob("checkpoint_*.jsonl")):
        try:
            out.append(int(path.stem.split("_")[1]))
        except (IndexError, ValueError):
            continue
    return sorted(out)


def load_checkpoint(run_dir: str | Path, iteration: int) -> PolicyParams:
    path = checkpoint_path(run_dir, iteration)
    if not path.exists():
        raise DataFormatError(f"{path}: checkpoint not found")
    return load_policy(path)
