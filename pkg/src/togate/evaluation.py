"""Deterministic evaluation of checkpoints.

Two metrics. The clarification metric rolls out one conversation per test
pair from the checkpoint and one from the untrained baseline, both sampled
at temperature 1 from the same fixed per-pair rng stream, and reports the
mean scorer log-likelihood plus the fraction of pairs the checkpoint
strictly wins (ties credited 0.5, so a self-comparison is exactly 0.5).
Seeded paired streams keep the whole evaluation byte-reproducible while
still measuring the sampled behavior the losses actually shape; an argmax
rollout would quantize both metrics to a step function of the table.

The response metric is a dual-pass win rate: every response pair is judged
twice, once in each presentation order, and the two pass percentages are
averaged. Judging twice is what cancels any positional preference a judge
may have; a deliberately biased judge is provided so tests can demonstrate
the cancellation.
"""

from __future__ import annotations

import enum
import logging
import math

from dataclasses import dataclass, field

import numpy as np

from .core import MAX_TURNS, DatasetSplit, GoldResponse, Task, Token
from .environment import Environment
from .errors import ConfigError
from .policy import PolicyParams, sample_conversation, zero_policy
from .validation import is_response_shaped

logger = logging.getLogger(__name__)


class JudgeVerdict(enum.Enum):
    FIRST_WINS = "first_wins"
    SECOND_WINS = "second_wins"
    TIE = "tie"


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    turns: int = 3
    wrong_penalty: float = 1.0

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"eval seed must be >= 0, got {self.seed}")
        if not 1 <= self.turns <= MAX_TURNS:
            raise ConfigError(f"eval turns must be in [1, {MAX_TURNS}], got {self.turns}")
        if self.wrong_penalty < 0:
            raise ConfigError(f"wrong_penalty must be >= 0, got {self.wrong_penalty}")


class DeterministicJudge:
    """Scores a response against the gold: +1 per matching Say token,
    -wrong_penalty per contradicting one. A malformed response scores -inf
    and therefore auto-loses. Position cannot influence the verdict by
    construction."""

    def __init__(self, wrong_penalty: float = 1.0) -> None:
        if wrong_penalty < 0:
            raise ConfigError(f"wrong_penalty must be >= 0, got {wrong_penalty}")
        self.wrong_penalty = wrong_penalty

    def score(self, gold: GoldResponse, response: tuple[Token, ...]) -> float:
        shape = Task(-1, tuple(t.attribute for t in gold.tokens if t.is_say))
        if not is_response_shaped(response, shape):
            logger.warning("malformed response %s, scoring -inf", [t.to_json() for t in response])
            return -math.inf
        gold_values = gold.values()
        matches = sum(1 for t in response if t.is_say and t.value == gold_values[t.attribute])
        wrong = sum(1 for t in response if t.is_say and t.value != gold_values[t.attribute])
        return matches - self.wrong_penalty * wrong

    def verdict(self, gold: GoldResponse, first, second) -> JudgeVerdict:
        s_first = self.score(gold, tuple(first))
        s_second = self.score(gold, tuple(second))
        if s_first > s_second:
            return JudgeVerdict.FIRST_WINS
        if s_second > s_first:
            return JudgeVerdict.SECOND_WINS
        return JudgeVerdict.TIE


class _BiasedJudge:
    """Test double: adds a constant bonus to whatever response is presented
    first before comparing. Models the positional preference the dual-pass
    protocol must cancel."""

    def __init__(self, base: DeterministicJudge, bias: float) -> None:
        if bias < 0:
            raise ConfigError(f"bias must be >= 0, got {bias}")
        self.base = base
        self.bias = bias

    def verdict(self, gold: GoldResponse, first, second) -> JudgeVerdict:
        s_first = self.base.score(gold, tuple(first)) + self.bias
        s_second = self.base.score(gold, tuple(second))
        if s_first > s_second:
            return JudgeVerdict.FIRST_WINS
        if s_second > s_first:
            return JudgeVerdict.SECOND_WINS
        return JudgeVerdict.TIE


def deterministic_judge(gold: GoldResponse, first, second, wrong_penalty: float = 1.0) -> JudgeVerdict:
    """Function form of DeterministicJudge for one-off comparisons."""
    return DeterministicJudge(wrong_penalty).verdict(gold, first, second)


def biased_judge(base: DeterministicJudge, bias: float) -> _BiasedJudge:
    return _BiasedJudge(base, bias)


def dual_pass_average(ab: float, ba: float) -> float:
    return (ab + ba) / 2.0


@dataclass(frozen=True)
class WinRateReport:
    """ab is the trained model's win percentage when presented first, ba
    when presented second; average is exactly their mean. Ties credit each
    side 0.5."""

    ab: float
    ba: float
    average: float
    verdicts: tuple[dict, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        for name, value in (("ab", self.ab), ("ba", self.ba)):
            if not 0.0 <= value <= 100.0:
                raise ConfigError(f"{name} must be a percentage in [0, 100], got {value}")
        if self.average != dual_pass_average(self.ab, self.ba):
            raise ConfigError(
                f"average {self.average} is not (ab + ba) / 2 = "
                f"{dual_pass_average(self.ab, self.ba)}"
            )


def dual_pass_win_rate(judge, trained_responses, base_responses, golds) -> WinRateReport:
    """Judge every aligned (trained, base, gold) triple twice, trained first
    then base first, and average the per-pass win percentages."""
    n = len(golds)
    if not (len(trained_responses) == len(base_responses) == n):
        raise ConfigError(
            f"misaligned evaluation lists: {len(trained_responses)} trained, "
            f"{len(base_responses)} base, {n} golds"
        )
    if n == 0:
        raise ConfigError("evaluation lists are empty")

    credit_first = {JudgeVerdict.FIRST_WINS: 1.0, JudgeVerdict.TIE: 0.5, JudgeVerdict.SECOND_WINS: 0.0}
    pass1 = 0.0
    pass2 = 0.0
    verdicts = []
    for i, (trained, base, gold) in enumerate(zip(trained_responses, base_responses, golds)):
        v1 = judge.verdict(gold, trained, base)
        v2 = judge.verdict(gold, base, trained)
        pass1 += credit_first[v1]
        pass2 += 1.0 - credit_first[v2]
        verdicts.append({"index": i, "trained_first": v1.value, "base_first": v2.value})
    ab = 100.0 * pass1 / n
    ba = 100.0 * pass2 / n
    return WinRateReport(ab=ab, ba=ba, average=dual_pass_average(ab, ba), verdicts=tuple(verdicts))


def _paired_rollout(policy, task, persona, env, config):
    rng = np.random.default_rng([config.seed, task.id, persona.id])
    return sample_conversation(
        policy, task, persona, env.roleplayer, config.turns, rng, temperature=1.0
    )


def clarification_metric(
    checkpoint: PolicyParams,
    split: DatasetSplit,
    env: Environment,
    config: EvalConfig,
    baseline: PolicyParams | None = None,
) -> tuple[float, float]:
    """(raw, normalized) clarification scores over the test pairs.

    raw is the mean scorer log-likelihood of the checkpoint's seeded
    rollouts; normalized is the fraction of pairs where the checkpoint's
    log-likelihood strictly exceeds the untrained baseline's under the same
    per-pair rng stream, counting ties as 0.5.
    """
    if not split.test:
        raise ConfigError("test split is empty")
    if baseline is None:
        baseline = zero_policy(env.space)
    raw_total = 0.0
    wins = 0.0
    for task_id, persona_id in sorted(split.test):
        task = split.task_by_id(task_id)
        persona = split.persona_by_id(persona_id)
        gold = split.gold_for(task_id, persona_id)
        conv = _paired_rollout(checkpoint, task, persona, env, config)
        base_conv = _paired_rollout(baseline, task, persona, env, config)
        score = env.loglik(task, conv, gold)
        base_score = env.loglik(task, base_conv, gold)
        raw_total += score
        if score > base_score:
            wins += 1.0
        elif score == base_score:
            wins += 0.5
    n = len(split.test)
    return raw_total / n, wins / n


def eval_responses(
    checkpoint: PolicyParams,
    split: DatasetSplit,
    env: Environment,
    config: EvalConfig,
) -> list[tuple[Token, ...]]:
    """Final responses of the seeded evaluation rollouts for every test
    pair, in sorted pair order."""
    out = []
    for task_id, persona_id in sorted(split.test):
        task = split.task_by_id(task_id)
        persona = split.persona_by_id(persona_id)
        conv = _paired_rollout(checkpoint, task, persona, env, config)
        out.append(conv.final_response)
    return out


def evaluate_checkpoint(
    checkpoint: PolicyParams,
    split: DatasetSplit,
    env: Environment,
    config: EvalConfig,
    baseline: PolicyParams | None = None,
) -> dict:
    """All per-checkpoint evaluation numbers in one record."""
    if baseline is None:
        baseline = zero_policy(env.space)
    raw, normalized = clarification_metric(checkpoint, split, env, config, baseline)
    trained = eval_responses(checkpoint, split, env, config)
    base = eval_responses(baseline, split, env, config)
    golds = [split.gold_for(*key) for key in sorted(split.test)]
    judge = DeterministicJudge(config.wrong_penalty)
    report = dual_pass_win_rate(judge, trained, base, golds)
    return {
        "clarification_raw": raw,
        "clarification_normalized": normalized,
        "win_ab": report.ab,
        "win_ba": report.ba,
        "win_average": report.average,
    }
