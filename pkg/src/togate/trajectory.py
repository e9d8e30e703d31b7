"""The exploration-collection loop body.

For every train pair the current policy plays the game several times; the
frozen scorer ranks the conversations; the best and worst become one
contrastive record (questions, regenerated responses, observed answers,
scores). Per-pair rng streams are derived from (seed, iteration, task_id,
persona_id), so exploration is bit-reproducible and independent of worker
scheduling; the collected dataset is always in sorted pair order.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .core import (
    MAX_TURNS,
    Conversation,
    DatasetSplit,
    GoldResponse,
    Persona,
    PreferencePair,
    Task,
    Token,
)
from .environment import Environment
from .errors import ConfigError, DataFormatError
from .losses import SftExample
from .policy import PolicyParams, sample_conversation, sample_response

DP_FORMAT_VERSION = 1
_DP_KIND = "preference-dataset"


@dataclass(frozen=True)
class ExplorationConfig:
    """samples_per_pair conversations are rolled out per (task, persona);
    turns counts questioner outputs including the final response."""

    samples_per_pair: int = 10
    turns: int = 3
    temperature: float = 1.0
    seed: int = 7

    def __post_init__(self) -> None:
        if self.samples_per_pair < 1:
            raise ConfigError(f"samples_per_pair must be >= 1, got {self.samples_per_pair}")
        if not 1 <= self.turns <= MAX_TURNS:
            raise ConfigError(f"turns must be in [1, {MAX_TURNS}], got {self.turns}")
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be > 0, got {self.temperature}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")


def pair_stream(seed: int, iteration: int, task_id: int, persona_id: int, stream: int) -> np.random.Generator:
    """Independent, order-free rng stream for one pair and purpose."""
    return np.random.default_rng([seed, iteration, task_id, persona_id, stream])


def explore_pair(
    policy: PolicyParams,
    task: Task,
    persona: Persona,
    gold: GoldResponse,
    env: Environment,
    config: ExplorationConfig,
    iteration: int = 1,
) -> tuple[Conversation, Conversation, list[float]]:
    """Sample conversations, score each with the frozen scorer, and return
    (best, worst, all scores). Ties go to the lowest sample index."""
    rng = pair_stream(config.seed, iteration, task.id, persona.id, 0)
    samples = [
        sample_conversation(
            policy, task, persona, env.roleplayer, config.turns, rng, config.temperature
        )
        for _ in range(config.samples_per_pair)
    ]
    scores = [env.loglik(task, conversation, gold) for conversation in samples]
    best_idx = max(range(len(scores)), key=lambda i: (scores[i], -i))
    worst_idx = min(range(len(scores)), key=lambda i: (scores[i], i))
    return samples[best_idx], samples[worst_idx], scores


def extract_questions(conversation: Conversation) -> tuple[Token, ...]:
    """The ordered Ask tokens of the clarification turns; the final
    response is never included."""
    return tuple(question for question, _ in conversation.turns)


def generate_response(
    policy: PolicyParams,
    task: Task,
    conversation: Conversation,
    mode: str,
    rng: np.random.Generator,
) -> tuple[Token, ...]:
    """Emit a final response for the conversation, one Say per relevant
    attribute conditioned on the conversation's observed answer for it.
    Greedy takes the argmax with the lowest-index tie-break."""
    if mode not in ("greedy", "sample"):
        raise ConfigError(f"mode must be 'greedy' or 'sample', got {mode!r}")
    return sample_response(
        policy, task, conversation.observed(), rng, temperature=1.0, greedy=(mode == "greedy")
    )


def competent_response(
    policy: PolicyParams,
    task: Task,
    conversation: Conversation,
    rng: np.random.Generator,
) -> tuple[Token, ...]:
    """Response generator used when building the contrastive dataset: echo
    the conversation's answer for every relevant attribute it revealed,
    sample the policy for the rest.

    This models a summarizer that competently uses whatever the dialogue
    uncovered, so the winning and losing responses differ exactly where the
    two dialogues differ in coverage. A generator that samples every slot
    from a cold policy would make the paired response loss carry no signal
    at all: the ranking never reads response content, so sampled winner
    tokens match the policy's own distribution in expectation.
    """
    observed = conversation.observed()
    tokens = []
    for a in task.relevant:
        if a in observed:
            tokens.append(Token.say(a, observed[a]))
        else:
            filler = sample_response(policy, Task(task.id, (a,)), observed, rng)
            tokens.append(filler[0])
    tokens.append(Token.end())
    return tuple(tokens)


def _observed_tuple(conversation: Conversation) -> tuple[tuple[int, int], ...]:
    return tuple(sorted(conversation.observed().items()))


def _map_pairs(pairs, fn: Callable, workers: int) -> list:
    if workers <= 1:
        return [fn(p) for p in pairs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, pairs))


def build_dp(
    policy: PolicyParams,
    split: DatasetSplit,
    env: Environment,
    config: ExplorationConfig,
    margin_min: float = 1e-9,
    iteration: int = 1,
    workers: int = 1,
) -> list[PreferencePair]:
    """Rebuild the contrastive dataset from scratch over every train pair.

    Records whose best-worst score margin falls below margin_min are
    dropped; everything is keyed by per-pair streams so the result does not
    depend on worker scheduling.
    """
    if margin_min < 0:
        raise ConfigError(f"margin_min must be >= 0, got {margin_min}")

    def one(pair_key: tuple[int, int]) -> Optional[PreferencePair]:
        task_id, persona_id = pair_key
        task = split.task_by_id(task_id)
        persona = split.persona_by_id(persona_id)
        gold = split.gold_for(task_id, persona_id)
        best, worst, scores = explore_pair(policy, task, persona, gold, env, config, iteration)
        score_w, score_l = max(scores), min(scores)
        if score_w - score_l < margin_min:
            return None
        rng = pair_stream(config.seed, iteration, task_id, persona_id, 1)
        o_w = competent_response(policy, task, best, rng)
        o_l = competent_response(policy, task, worst, rng)
        return PreferencePair(
            task_id=task_id,
            persona_id=persona_id,
            q_w=extract_questions(best),
            q_l=extract_questions(worst),
            o_w=o_w,
            o_l=o_l,
            answers_w=_observed_tuple(best),
            answers_l=_observed_tuple(worst),
            score_w=score_w,
            score_l=score_l,
        )

    results = _map_pairs(sorted(split.train), one, workers)
    return [record for record in results if record is not None]


def collect_sft_examples(
    policy: PolicyParams,
    split: DatasetSplit,
    env: Environment,
    config: ExplorationConfig,
    iteration: int = 1,
    workers: int = 1,
) -> list[SftExample]:
    """Explore every train pair and keep the winning clarification sequence
    paired with the oracle gold response as the supervised target, scored
    at the winning conversation's observed answers. No margin filter: a
    tie between best and worst still leaves a usable winner."""

    def one(pair_key: tuple[int, int]) -> SftExample:
        task_id, persona_id = pair_key
        task = split.task_by_id(task_id)
        persona = split.persona_by_id(persona_id)
        gold = split.gold_for(task_id, persona_id)
        best, _, _ = explore_pair(policy, task, persona, gold, env, config, iteration)
        return SftExample(
            task=task,
            questions=extract_questions(best),
            response=gold.tokens,
            observed=_observed_tuple(best),
        )

    return _map_pairs(sorted(split.train), one, workers)


def save_dp(pairs: Sequence[PreferencePair], path: str | Path) -> None:
    """Dump the contrastive dataset for audit, one record per line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {"version": DP_FORMAT_VERSION, "kind": _DP_KIND, "pairs": len(pairs)}
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for pair in pairs:
            record = {
                "task_id": pair.task_id,
                "persona_id": pair.persona_id,
                "q_w": [t.to_json() for t in pair.q_w],
                "q_l": [t.to_json() for t in pair.q_l],
                "o_w": [t.to_json() for t in pair.o_w],
                "o_l": [t.to_json() for t in pair.o_l],
                "answers_w": [list(x) for x in pair.answers_w],
                "answers_l": [list(x) for x in pair.answers_l],
                "score_w": pair.score_w,
                "score_l": pair.score_l,
            }
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")


def load_dp(path: str | Path) -> list[PreferencePair]:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = json.loads(lines[0])
    if header.get("kind") != _DP_KIND or header.get("version") != DP_FORMAT_VERSION:
        raise DataFormatError(f"{path}: not a version-{DP_FORMAT_VERSION} preference dataset")
    pairs = []
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
            pairs.append(
                PreferencePair(
                    task_id=int(obj["task_id"]),
                    persona_id=int(obj["persona_id"]),
                    q_w=tuple(Token.from_json(t) for t in obj["q_w"]),
                    q_l=tuple(Token.from_json(t) for t in obj["q_l"]),
                    o_w=tuple(Token.from_json(t) for t in obj["o_w"]),
                    o_l=tuple(Token.from_json(t) for t in obj["o_l"]),
                    answers_w=tuple((int(a), int(v)) for a, v in obj["answers_w"]),
                    answers_l=tuple((int(a), int(v)) for a, v in obj["answers_l"]),
                    score_w=float(obj["score_w"]),
                    score_l=float(obj["score_l"]),
                )
            )
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"{path}: line {line_no}: malformed record: {exc}") from exc
    if header.get("pairs") != len(pairs):
        raise DataFormatError(f"{path}: header says {header.get('pairs')} pairs, found {len(pairs)}")
    return pairs
