"""Domain objects for the hidden-attribute elicitation game.

A persona is a hidden assignment of one value per attribute. A task names
the subset of attributes a good final response must state. The questioner
sees the task but never the persona; it asks clarifying questions, receives
answers from a roleplayer who does know the persona, and finishes with a
response that names a value for each relevant attribute.

Everything here is immutable after construction and safe to share across
threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .errors import DataFormatError

# Contexts are encoded as bitmasks over attributes, so the game is capped
# at 16 attributes and at 3 questioner outputs per conversation (two
# clarification turns plus the final response).
MAX_ATTRIBUTES = 16
MAX_TURNS = 3

ASK = "ask"
ANSWER = "answer"
SAY = "say"
END = "end"

_KINDS = (ASK, ANSWER, SAY, END)


@dataclass(frozen=True)
class Token:
    """One discrete dialogue event.

    Four kinds exist: the questioner asks about an attribute, the roleplayer
    answers with a value for that attribute, the final response says a value
    for an attribute, and a terminator closes the response.
    """

    kind: str
    attribute: int = -1
    value: int = -1

    @staticmethod
    def ask(attribute: int) -> "Token":
        return Token(ASK, attribute)

    @staticmethod
    def answer(attribute: int, value: int) -> "Token":
        return Token(ANSWER, attribute, value)

    @staticmethod
    def say(attribute: int, value: int) -> "Token":
        return Token(SAY, attribute, value)

    @staticmethod
    def end() -> "Token":
        return Token(END)

    @property
    def is_ask(self) -> bool:
        return self.kind == ASK

    @property
    def is_answer(self) -> bool:
        return self.kind == ANSWER

    @property
    def is_say(self) -> bool:
        return self.kind == SAY

    @property
    def is_end(self) -> bool:
        return self.kind == END

    def to_json(self) -> list:
        if self.kind == ASK:
            return [ASK, self.attribute]
        if self.kind == END:
            return [END]
        return [self.kind, self.attribute, self.value]

    @staticmethod
    def from_json(obj: Sequence) -> "Token":
        if not isinstance(obj, (list, tuple)) or not obj or obj[0] not in _KINDS:
            raise DataFormatError(f"not a token record: {obj!r}")
        kind = obj[0]
        try:
            if kind == END:
                return Token.end()
            if kind == ASK:
                return Token.ask(int(obj[1]))
            return Token(kind, int(obj[1]), int(obj[2]))
        except (IndexError, TypeError, ValueError) as exc:
            raise DataFormatError(f"malformed {kind} token: {obj!r}") from exc


@dataclass(frozen=True)
class AttributeSpace:
    """Shape of the game: how many attributes, how many values each."""

    num_attributes: int
    num_values: int

    def __post_init__(self) -> None:
        if not 1 <= self.num_attributes <= MAX_ATTRIBUTES:
            raise DataFormatError(
                f"num_attributes must be in [1, {MAX_ATTRIBUTES}], "
                f"got {self.num_attributes}"
            )
        if self.num_values < 2:
            raise DataFormatError(f"num_values must be >= 2, got {self.num_values}")


@dataclass(frozen=True)
class Persona:
    """Hidden user profile: one value per attribute."""

    id: int
    values: tuple[int, ...]


@dataclass(frozen=True)
class Task:
    """A generation task, identified by the attributes that matter for it."""

    id: int
    relevant: tuple[int, ...]  # ascending, no duplicates

    def relevant_mask(self) -> int:
        return mask_of(self.relevant)


@dataclass(frozen=True)
class Conversation:
    """An ordered sequence of (question, answer) turns plus an optional
    final response."""

    task_id: int
    persona_id: int
    turns: tuple[tuple[Token, Token], ...]
    final_response: Optional[tuple[Token, ...]] = None

    @property
    def num_turns(self) -> int:
        return len(self.turns)

    def observed(self) -> dict[int, int]:
        """Attribute -> answered value; a later answer overrides an earlier
        one for the same attribute."""
        seen: dict[int, int] = {}
        for _, answer in self.turns:
            seen[answer.attribute] = answer.value
        return seen

    def asked_mask(self) -> int:
        mask = 0
        for question, _ in self.turns:
            mask |= 1 << question.attribute
        return mask


@dataclass(frozen=True)
class GoldResponse:
    """The target response an omniscient oracle produces: one Say per
    relevant attribute in ascending order, then the terminator."""

    tokens: tuple[Token, ...]

    def values(self) -> dict[int, int]:
        return {t.attribute: t.value for t in self.tokens if t.is_say}


@dataclass(frozen=True)
class PreferencePair:
    """One record of the dynamic contrastive dataset.

    q_w/q_l are the winning/losing clarification sequences, o_w/o_l the
    responses generated from them. answers_w/answers_l record the observed
    (attribute, value) answers of each conversation because response
    log-probabilities are conditioned on them.
    """

    task_id: int
    persona_id: int
    q_w: tuple[Token, ...]
    q_l: tuple[Token, ...]
    o_w: tuple[Token, ...]
    o_l: tuple[Token, ...]
    answers_w: tuple[tuple[int, int], ...]
    answers_l: tuple[tuple[int, int], ...]
    score_w: float
    score_l: float

    def __post_init__(self) -> None:
        if self.score_w < self.score_l:
            raise DataFormatError(
                f"score_w ({self.score_w}) < score_l ({self.score_l}) for "
                f"pair (task={self.task_id}, persona={self.persona_id})"
            )


@dataclass(frozen=True)
class DatasetSplit:
    """A full game instance: personas, tasks, gold responses, and the
    train/test pairing (split by persona, so test personas are unseen)."""

    space: AttributeSpace
    personas: tuple[Persona, ...]
    tasks: tuple[Task, ...]
    train: tuple[tuple[int, int], ...]  # (task_id, persona_id)
    test: tuple[tuple[int, int], ...]
    golds: Mapping[tuple[int, int], GoldResponse] = field(default_factory=dict)

    def persona_by_id(self, persona_id: int) -> Persona:
        return self.personas[persona_id]

    def task_by_id(self, task_id: int) -> Task:
        return self.tasks[task_id]

    def gold_for(self, task_id: int, persona_id: int) -> GoldResponse:
        return self.golds[(task_id, persona_id)]


def mask_of(indices: Iterable[int]) -> int:
    mask = 0
    for i in indices:
        mask |= 1 << i
    return mask


def bits_of(mask: int) -> tuple[int, ...]:
    return tuple(i for i in range(MAX_ATTRIBUTES) if mask >> i & 1)
