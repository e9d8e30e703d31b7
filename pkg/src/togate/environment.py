"""The fixed, non-learnable side of the game.

Three pieces live here: the oracle that produces gold responses from the
full (task, persona) information, the roleplayer that answers clarifying
questions (optionally with noise), and the frozen closed-form scorer that
assigns a log-likelihood to a gold response given a conversation. The
scorer is what ranks explored trajectories and what the clarification
metric reports; nothing in the training loop ever mutates it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import AttributeSpace, Conversation, GoldResponse, Persona, Task, Token
from .errors import ConfigError
from .validation import check_probability

DEFAULT_P_CORRECT = 0.9
DEFAULT_P_WRONG = 0.05


@dataclass(frozen=True)
class ScorerConfig:
    """Per-attribute emission probabilities of the frozen scorer.

    A relevant attribute whose true value was revealed in the conversation
    gets p_correct_revealed; one revealed with a wrong value gets
    p_wrong_revealed; an unrevealed one gets the uniform 1/V.
    """

    p_correct_revealed: float = DEFAULT_P_CORRECT
    p_wrong_revealed: float = DEFAULT_P_WRONG

    def __post_init__(self) -> None:
        check_probability(self.p_correct_revealed, "p_correct_revealed")
        check_probability(self.p_wrong_revealed, "p_wrong_revealed")
        if self.p_wrong_revealed >= self.p_correct_revealed:
            raise ConfigError(
                "p_wrong_revealed must be < p_correct_revealed, got "
                f"{self.p_wrong_revealed} >= {self.p_correct_revealed}"
            )


@dataclass(frozen=True)
class RoleplayerConfig:
    """noise is the probability that an answer reports a uniformly random
    wrong value instead of the true one. 0 is the faithful roleplayer."""

    noise: float = 0.0

    def __post_init__(self) -> None:
        check_probability(self.noise, "roleplayer noise", closed=True)


@dataclass(frozen=True)
class Environment:
    """Bundle of the attribute space and the two fixed configs, with
    convenience methods that fill in the space where the free functions
    need it."""

    space: AttributeSpace
    scorer: ScorerConfig = field(default_factory=ScorerConfig)
    roleplayer: RoleplayerConfig = field(default_factory=RoleplayerConfig)

    def __post_init__(self) -> None:
        check_scorer_for_space(self.scorer, self.space)

    def gold(self, task: Task, persona: Persona) -> GoldResponse:
        return oracle_gold(task, persona)

    def answer(self, persona: Persona, question: Token, rng: np.random.Generator) -> Token:
        return roleplayer_answer(persona, question, self.roleplayer, rng, self.space.num_values)

    def loglik(self, task: Task, conversation: Conversation, gold: GoldResponse) -> float:
        return gold_loglik(self.scorer, task, conversation, gold, self.space.num_values)


def check_scorer_for_space(config: ScorerConfig, space: AttributeSpace) -> None:
    """The ordering 0 < p_wrong < 1/V < p_correct < 1 is what makes a
    correct reveal strictly better than silence and silence strictly better
    than a wrong reveal."""
    uniform = 1.0 / space.num_values
    if not config.p_wrong_revealed < uniform < config.p_correct_revealed:
        raise ConfigError(
            f"scorer needs p_wrong_revealed < 1/V < p_correct_revealed; got "
            f"{config.p_wrong_revealed} / {uniform} / {config.p_correct_revealed}"
        )


def oracle_gold(task: Task, persona: Persona) -> GoldResponse:
    """Gold response: the persona's true value for every relevant attribute,
    ascending, then the terminator. Deterministic."""
    tokens = [Token.say(a, persona.values[a]) for a in task.relevant]
    tokens.append(Token.end())
    return GoldResponse(tuple(tokens))


def roleplayer_answer(
    persona: Persona,
    question: Token,
    config: RoleplayerConfig,
    rng: np.random.Generator,
    num_values: int,
) -> Token:
    """Answer a clarifying question.

    With probability 1 - noise the true value is reported; otherwise one of
    the num_values - 1 wrong values, uniformly. Deterministic given the rng
    stream state.
    """
    attribute = question.attribute
    true_value = persona.values[attribute]
    if config.noise > 0.0 and rng.random() < config.noise:
        offset = int(rng.integers(1, num_values))
        return Token.answer(attribute, (true_value + offset) % num_values)
    return Token.answer(attribute, true_value)


def gold_loglik(
    config: ScorerConfig,
    task: Task,
    conversation: Conversation,
    gold: GoldResponse,
    num_values: int,
) -> float:
    """Log-likelihood the frozen scorer assigns to the gold response given
    the conversation.

    Only the conversation's answers matter; the final response does not
    enter the score. A later answer for an attribute overrides an earlier
    one.
    """
    observed = conversation.observed()
    gold_values = gold.values()
    uniform = 1.0 / num_values
    total = 0.0
    for a in task.relevant:
        if a in observed:
            q = config.p_correct_revealed if observed[a] == gold_values[a] else config.p_wrong_revealed
        else:
            q = uniform
        total += math.log(q)
    return total
