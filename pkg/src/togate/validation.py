"""Input validation helpers.

Composite structures are validated against an AttributeSpace here rather
than in the dataclasses themselves, which keeps the types cheap to build in
inner loops while giving callers one place to check anything that crossed a
trust boundary (files, CLI input, library users).
"""

from __future__ import annotations

import math
from typing import Sequence

from .core import (
    MAX_TURNS,
    AttributeSpace,
    Conversation,
    DatasetSplit,
    GoldResponse,
    Persona,
    Task,
    Token,
)
from .errors import ConfigError, DataFormatError


def check_attribute_index(a: int, space: AttributeSpace, what: str = "attribute") -> None:
    if not 0 <= a < space.num_attributes:
        raise DataFormatError(f"{what} index {a} out of range [0, {space.num_attributes})")


def check_value(v: int, space: AttributeSpace, what: str = "value") -> None:
    if not 0 <= v < space.num_values:
        raise DataFormatError(f"{what} {v} out of range [0, {space.num_values})")


def check_persona(persona: Persona, space: AttributeSpace) -> None:
    if len(persona.values) != space.num_attributes:
        raise DataFormatError(
            f"persona {persona.id} has {len(persona.values)} values, "
            f"expected {space.num_attributes}"
        )
    for v in persona.values:
        check_value(v, space, f"persona {persona.id} value")


def check_task(task: Task, space: AttributeSpace) -> None:
    if list(task.relevant) != sorted(set(task.relevant)):
        raise DataFormatError(
            f"task {task.id} relevant set must be ascending without duplicates, "
            f"got {task.relevant}"
        )
    for a in task.relevant:
        check_attribute_index(a, space, f"task {task.id} relevant attribute")


def is_response_shaped(tokens: Sequence[Token], task: Task) -> bool:
    """True when tokens are exactly one Say per relevant attribute in
    ascending order followed by the terminator."""
    if len(tokens) != len(task.relevant) + 1:
        return False
    for tok, attr in zip(tokens, task.relevant):
        if not tok.is_say or tok.attribute != attr:
            return False
    return tokens[-1].is_end


def check_response_shape(tokens: Sequence[Token], task: Task, space: AttributeSpace) -> None:
    if not is_response_shaped(tokens, task):
        raise DataFormatError(
            f"response {[t.to_json() for t in tokens]} does not match the "
            f"shape for relevant set {task.relevant}"
        )
    for tok in tokens:
        if tok.is_say:
            check_value(tok.value, space, "response value")


def check_gold(gold: GoldResponse, task: Task, space: AttributeSpace) -> None:
    check_response_shape(gold.tokens, task, space)


def check_conversation(
    conversation: Conversation,
    space: AttributeSpace,
    task: Task | None = None,
) -> None:
    if conversation.num_turns > MAX_TURNS - 1:
        raise DataFormatError(
            f"conversation has {conversation.num_turns} clarification turns, "
            f"budget is {MAX_TURNS - 1}"
        )
    for k, (question, answer) in enumerate(conversation.turns):
        if not question.is_ask or not answer.is_answer:
            raise DataFormatError(f"turn {k} is not an (ask, answer) pair")
        if question.attribute != answer.attribute:
            raise DataFormatError(
                f"turn {k} answer addresses attribute {answer.attribute}, "
                f"question asked {question.attribute}"
            )
        check_attribute_index(question.attribute, space)
        check_value(answer.value, space)
    if conversation.final_response is not None and task is not None:
        check_response_shape(conversation.final_response, task, space)


def check_split(split: DatasetSplit) -> None:
    for i, persona in enumerate(split.personas):
        if persona.id != i:
            raise DataFormatError(f"persona ids must be consecutive, found {persona.id} at {i}")
        check_persona(persona, split.space)
    for i, task in enumerate(split.tasks):
        if task.id != i:
            raise DataFormatError(f"task ids must be consecutive, found {task.id} at {i}")
        check_task(task, split.space)
    train_pairs = set(split.train)
    test_pairs = set(split.test)
    if train_pairs & test_pairs:
        raise DataFormatError("train and test pair sets overlap")
    train_personas = {p for _, p in split.train}
    test_personas = {p for _, p in split.test}
    if train_personas & test_personas:
        raise DataFormatError("test personas must be disjoint from train personas")
    for task_id, persona_id in list(split.train) + list(split.test):
        if not 0 <= task_id < len(split.tasks):
            raise DataFormatError(f"pair references unknown task {task_id}")
        if not 0 <= persona_id < len(split.personas):
            raise DataFormatError(f"pair references unknown persona {persona_id}")
        if (task_id, persona_id) not in split.golds:
            raise DataFormatError(f"pair ({task_id}, {persona_id}) has no gold response")
        check_gold(split.golds[(task_id, persona_id)], split.tasks[task_id], split.space)


def check_probability(value: float, name: str, *, closed: bool = False) -> None:
    lo_ok = value >= 0.0 if closed else value > 0.0
    hi_ok = value <= 1.0 if closed else value < 1.0
    if not (math.isfinite(value) and lo_ok and hi_ok):
        bounds = "[0, 1]" if closed else "(0, 1)"
        raise ConfigError(f"{name} must be in {bounds}, got {value}")


def check_positive(value: float, name: str) -> None:
    if not (math.isfinite(value) and value > 0):
        raise ConfigError(f"{name} must be positive and finite, got {value}")


def check_non_negative(value: float, name: str) -> None:
    if math.isnan(value) or value < 0:
        raise ConfigError(f"{name} must be >= 0, got {value}")
