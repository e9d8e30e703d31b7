"""The learnable questioner: a tabular-softmax autoregressive policy.

The policy factorizes over two token families. Question tokens are drawn
from a softmax over attributes, conditioned on a QuestionContext (the
task's relevant-attribute bitmask plus the bitmask of attributes already
asked). Response tokens are drawn from a softmax over values, conditioned
on a ResponseContext (the attribute slot being filled plus the value the
conversation observed for it, if any). Contexts absent from the table read
as all-zero logits, so a freshly constructed policy is uniform everywhere.

Because everything is an explicit table, log-probabilities, gradients,
partition sums, and KL divergences are exact; nothing here is estimated.
A gradient has the same shape as the parameters, so PolicyParams doubles
as the gradient container.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np

from .core import AttributeSpace, Conversation, Persona, Task, Token
from .environment import RoleplayerConfig, roleplayer_answer
from .errors import ConfigError, DataFormatError

# Marker for "the conversation never answered this attribute".
UNOBSERVED = -1

CHECKPOINT_FORMAT_VERSION = 1
_CHECKPOINT_KIND = "policy-checkpoint"


@dataclass(frozen=True)
class QuestionContext:
    """Sufficient statistics for the next-question distribution."""

    relevant_mask: int
    asked_mask: int


@dataclass(frozen=True)
class ResponseContext:
    """Sufficient statistics for one response slot: which attribute is being
    answered and what value, if any, the dialogue revealed for it."""

    attribute: int
    observed: int = UNOBSERVED


class PolicyParams:
    """Two logit tables keyed by context. Mutable; training owns mutation,
    everything else treats instances as read-only."""

    __slots__ = ("space", "question_logits", "response_logits")

    def __init__(self, space: AttributeSpace) -> None:
        self.space = space
        self.question_logits: dict[QuestionContext, np.ndarray] = {}
        self.response_logits: dict[ResponseContext, np.ndarray] = {}

    def question_vector(self, ctx: QuestionContext) -> np.ndarray:
        row = self.question_logits.get(ctx)
        return row if row is not None else np.zeros(self.space.num_attributes)

    def response_vector(self, ctx: ResponseContext) -> np.ndarray:
        row = self.response_logits.get(ctx)
        return row if row is not None else np.zeros(self.space.num_values)

    def question_row(self, ctx: QuestionContext) -> np.ndarray:
        """Materialize (and keep) the row so it can be updated in place."""
        row = self.question_logits.get(ctx)
        if row is None:
            row = np.zeros(self.space.num_attributes)
            self.question_logits[ctx] = row
        return row

    def response_row(self, ctx: ResponseContext) -> np.ndarray:
        row = self.response_logits.get(ctx)
        if row is None:
            row = np.zeros(self.space.num_values)
            self.response_logits[ctx] = row
        return row

    def clone(self) -> "PolicyParams":
        out = PolicyParams(self.space)
        out.question_logits = {k: v.copy() for k, v in self.question_logits.items()}
        out.response_logits = {k: v.copy() for k, v in self.response_logits.items()}
        return out

    def add_scaled(self, other: "PolicyParams", scale: float) -> "PolicyParams":
        """self += scale * other, unioning over contexts. Addition is
        commutative, so merge order cannot change the result."""
        for ctx, vec in other.question_logits.items():
            self.question_row(ctx)
            self.question_logits[ctx] = self.question_logits[ctx] + scale * vec
        for rctx, vec in other.response_logits.items():
            self.response_row(rctx)
            self.response_logits[rctx] = self.response_logits[rctx] + scale * vec
        return self

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.question_logits.values()) and all(
            np.isfinite(v).all() for v in self.response_logits.values()
        )

    def max_abs(self) -> float:
        entries = [np.abs(v).max() for v in self.question_logits.values() if v.size]
        entries += [np.abs(v).max() for v in self.response_logits.values() if v.size]
        return float(max(entries)) if entries else 0.0

    def num_entries(self) -> int:
        return len(self.question_logits) + len(self.response_logits)

    def _canonical(self) -> list[dict]:
        """Rows that are exactly zero are omitted: absent and all-zero are
        the same policy."""
        records: list[dict] = []
        for ctx in sorted(self.question_logits, key=lambda c: (c.relevant_mask, c.asked_mask)):
            vec = self.question_logits[ctx]
            if np.any(vec):
                records.append(
                    {
                        "table": "question",
                        "relevant_mask": ctx.relevant_mask,
                        "asked_mask": ctx.asked_mask,
                        "logits": [float(x) for x in vec],
                    }
                )
        for rctx in sorted(self.response_logits, key=lambda c: (c.attribute, c.observed)):
            vec = self.response_logits[rctx]
            if np.any(vec):
                records.append(
                    {
                        "table": "response",
                        "attribute": rctx.attribute,
                        "observed": rctx.observed,
                        "logits": [float(x) for x in vec],
                    }
                )
        return records

    def equals_exact(self, other: "PolicyParams") -> bool:
        return self.space == other.space and self._canonical() == other._canonical()

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(
            json.dumps(
                {"num_attributes": self.space.num_attributes, "num_values": self.space.num_values},
                sort_keys=True,
            ).encode()
        )
        for record in self._canonical():
            h.update(json.dumps(record, sort_keys=True, separators=(",", ":")).encode())
        return h.hexdigest()


def zero_policy(space: AttributeSpace) -> PolicyParams:
    return PolicyParams(space)


def snapshot(params: PolicyParams) -> PolicyParams:
    """Referentially independent deep copy, used for reference policies and
    checkpoints."""
    return params.clone()


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def question_logprobs(params: PolicyParams, ctx: QuestionContext) -> np.ndarray:
    return _log_softmax(params.question_vector(ctx))


def question_logprob(params: PolicyParams, ctx: QuestionContext, attribute: int) -> float:
    return float(question_logprobs(params, ctx)[attribute])


def response_logprobs(params: PolicyParams, ctx: ResponseContext) -> np.ndarray:
    return _log_softmax(params.response_vector(ctx))


def response_logprob(params: PolicyParams, ctx: ResponseContext, value: int) -> float:
    return float(response_logprobs(params, ctx)[value])


def _walk(
    task: Task,
    questions: Sequence[Token],
    response: Optional[Sequence[Token]],
    observed: Optional[Mapping[int, int]],
) -> Iterator[tuple]:
    """Yield (context, chosen_index, is_question) factors of a trajectory.

    The asked mask grows after each question. Response slots condition on
    the observed answer for their attribute; End carries no probability
    because the response shape is fixed by the task.
    """
    relevant_mask = task.relevant_mask()
    asked = 0
    for token in questions:
        if not token.is_ask:
            raise ConfigError(f"expected an Ask token in the question segment, got {token.kind}")
        yield QuestionContext(relevant_mask, asked), token.attribute, True
        asked |= 1 << token.attribute
    if response is not None:
        obs = observed or {}
        for token in response:
            if token.is_end:
                continue
            if not token.is_say:
                raise ConfigError(f"expected a Say token in the response segment, got {token.kind}")
            yield ResponseContext(token.attribute, obs.get(token.attribute, UNOBSERVED)), token.value, False


def trajectory_logprob(
    params: PolicyParams,
    task: Task,
    questions: Sequence[Token],
    response: Optional[Sequence[Token]] = None,
    observed: Optional[Mapping[int, int]] = None,
) -> float:
    """Sum of per-token log-probabilities of a question sequence and an
    optional final response. Additive over concatenation, zero for the
    empty trajectory."""
    total = 0.0
    for ctx, choice, is_question in _walk(task, questions, response, observed):
        if is_question:
            total += question_logprob(params, ctx, choice)
        else:
            total += response_logprob(params, ctx, choice)
    return total


def grad_trajectory_logprob(
    params: PolicyParams,
    task: Task,
    questions: Sequence[Token],
    response: Optional[Sequence[Token]] = None,
    observed: Optional[Mapping[int, int]] = None,
) -> PolicyParams:
    """Exact gradient of trajectory_logprob with respect to the logit
    tables: one-hot(chosen) minus softmax at each visited context, summed
    over visits. Contexts never visited are absent from the result."""
    grad = PolicyParams(params.space)
    for ctx, choice, is_question in _walk(task, questions, response, observed):
        if is_question:
            row = grad.question_row(ctx)
            probs = np.exp(question_logprobs(params, ctx))
        else:
            row = grad.response_row(ctx)
            probs = np.exp(response_logprobs(params, ctx))
        row -= probs
        row[choice] += 1.0
    return grad


def _draw(rng: np.random.Generator, logits: np.ndarray, temperature: float, greedy: bool) -> int:
    if greedy:
        return int(np.argmax(logits))  # np.argmax takes the lowest index on ties
    if temperature <= 0.0:
        raise ConfigError(f"sampling temperature must be > 0, got {temperature}")
    probs = np.exp(_log_softmax(logits / temperature))
    r = rng.random()
    acc = 0.0
    for i, p in enumerate(probs):
        acc += p
        if r < acc:
            return i
    return len(probs) - 1


def sample_response(
    params: PolicyParams,
    task: Task,
    observed: Mapping[int, int],
    rng: np.random.Generator,
    temperature: float = 1.0,
    greedy: bool = False,
) -> tuple[Token, ...]:
    """One Say per relevant attribute in ascending order, then End."""
    tokens = []
    for a in task.relevant:
        ctx = ResponseContext(a, observed.get(a, UNOBSERVED))
        value = _draw(rng, params.response_vector(ctx), temperature, greedy)
        tokens.append(Token.say(a, value))
    tokens.append(Token.end())
    return tuple(tokens)


def sample_conversation(
    params: PolicyParams,
    task: Task,
    persona: Persona,
    roleplayer_config: RoleplayerConfig,
    turns: int,
    rng: np.random.Generator,
    temperature: float = 1.0,
    greedy: bool = False,
) -> Conversation:
    """Roll out turns - 1 (ask, answer) rounds against the roleplayer, then
    fill the final response slot by slot. Deterministic given the rng
    stream."""
    if turns < 1:
        raise ConfigError(f"turns must be >= 1, got {turns}")
    relevant_mask = task.relevant_mask()
    asked = 0
    rounds: list[tuple[Token, Token]] = []
    for _ in range(turns - 1):
        ctx = QuestionContext(relevant_mask, asked)
        attribute = _draw(rng, params.question_vector(ctx), temperature, greedy)
        question = Token.ask(attribute)
        answer = roleplayer_answer(persona, question, roleplayer_config, rng, params.space.num_values)
        rounds.append((question, answer))
        asked |= 1 << attribute
    conversation = Conversation(task.id, persona.id, tuple(rounds))
    response = sample_response(params, task, conversation.observed(), rng, temperature, greedy)
    return Conversation(task.id, persona.id, tuple(rounds), response)


def kl_to_reference(
    params: PolicyParams,
    ref: PolicyParams,
    task: Task,
    turns: int = 2,
) -> float:
    """Exact KL(params || ref) over the question process for one task.

    Reachable question contexts are enumerated by dynamic programming over
    the asked mask; each context's categorical KL is weighted by the
    probability that params visits it. Exposed as a diagnostic only; the
    contrastive losses realize the regularization in closed form.
    """
    if params.space != ref.space:
        raise ConfigError("policies live in different attribute spaces")
    relevant_mask = task.relevant_mask()
    states: dict[int, float] = {0: 1.0}
    total = 0.0
    for _ in range(max(turns - 1, 0)):
        successors: dict[int, float] = {}
        for asked, weight in sorted(states.items()):
            ctx = QuestionContext(relevant_mask, asked)
            lp = question_logprobs(params, ctx)
            lq = question_logprobs(ref, ctx)
            probs = np.exp(lp)
            total += weight * float((probs * (lp - lq)).sum())
            for a, p in enumerate(probs):
                nxt = asked | (1 << a)
                successors[nxt] = successors.get(nxt, 0.0) + weight * float(p)
        states = successors
    return total


def save_policy(params: PolicyParams, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    records = params._canonical()
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        header = {
            "version": CHECKPOINT_FORMAT_VERSION,
            "kind": _CHECKPOINT_KIND,
            "num_attributes": params.space.num_attributes,
            "num_values": params.space.num_values,
        }
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")) + "\n")
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
        footer = {"record": "footer", "rows": len(records)}
        fh.write(json.dumps(footer, sort_keys=True, separators=(",", ":")) + "\n")


def load_policy(path: str | Path) -> PolicyParams:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty checkpoint file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"{path}: line 1: not valid JSON") from exc
    if header.get("kind") != _CHECKPOINT_KIND or header.get("version") != CHECKPOINT_FORMAT_VERSION:
        raise DataFormatError(f"{path}: not a version-{CHECKPOINT_FORMAT_VERSION} policy checkpoint")
    params = PolicyParams(AttributeSpace(int(header["num_attributes"]), int(header["num_values"])))
    footer = None
    rows = 0
    for line_no, line in enumerate(lines[1:], start=2):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: line {line_no}: not valid JSON") from exc
        if obj.get("record") == "footer":
            footer = obj
            continue
        if footer is not None:
            raise DataFormatError(f"{path}: line {line_no}: record after footer")
        table = obj.get("table")
        try:
            logits = np.asarray(obj["logits"], dtype=float)
            if table == "question":
                if logits.shape != (params.space.num_attributes,):
                    raise DataFormatError(
                        f"{path}: line {line_no}: question row has {logits.size} logits, "
                        f"expected {params.space.num_attributes}"
                    )
                ctx = QuestionContext(int(obj["relevant_mask"]), int(obj["asked_mask"]))
                params.question_logits[ctx] = logits
            elif table == "response":
                if logits.shape != (params.space.num_values,):
                    raise DataFormatError(
                        f"{path}: line {line_no}: response row has {logits.size} logits, "
                        f"expected {params.space.num_values}"
                    )
                rctx = ResponseContext(int(obj["attribute"]), int(obj["observed"]))
                params.response_logits[rctx] = logits
            else:
                raise DataFormatError(f"{path}: line {line_no}: unknown table {table!r}")
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, DataFormatError):
                raise
            raise DataFormatError(f"{path}: line {line_no}: malformed row: {exc}") from exc
        rows += 1
    if footer is None:
        raise DataFormatError(f"{path}: missing footer record, file is truncated")
    if footer.get("rows") != rows:
        raise DataFormatError(f"{path}: footer says {footer.get('rows')} rows, found {rows}")
    return params
