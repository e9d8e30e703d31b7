"""Training objectives.

The supervised loss is a plain mean negative log-likelihood over winning
trajectories. The contrastive losses are paired sigmoid losses on policy
log-ratios against a frozen reference: one over clarification sequences,
one over final responses, combined with weights 1/(1+lambda) and
lambda/(1+lambda).

Bradley-Terry utilities and a brute-force partition oracle live here too.
The oracle exists purely so tests can verify, by exhaustive enumeration,
that the pairwise preference probability written in terms of rewards with
an explicit partition sum equals the policy-ratio form the losses actually
optimize: the partition term depends only on the task, so it cancels in
every pairwise comparison.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from .core import Task, Token
from .errors import ConfigError, InstanceTooLargeError
from .policy import PolicyParams, grad_trajectory_logprob, trajectory_logprob
from .validation import check_non_negative, check_positive

DEFAULT_BETA = 0.1
DEFAULT_LAMBDA = 2.0


@dataclass(frozen=True)
class LossConfig:
    """beta scales the log-ratio margin inside the sigmoid; lam weights the
    response loss against the clarification loss (lam may be math.inf for
    the response-only ablation)."""

    beta: float = DEFAULT_BETA
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self) -> None:
        check_positive(self.beta, "beta")
        check_non_negative(self.lam, "lambda")


@dataclass(frozen=True)
class SftExample:
    """One supervised sample: the winning clarification sequence and the
    response target, with the conversation's observed answers so response
    slots condition on them."""

    task: Task
    questions: tuple[Token, ...]
    response: tuple[Token, ...]
    observed: tuple[tuple[int, int], ...] = ()


def softplus(x: float) -> float:
    """log(1 + exp(x)) without overflow; -log(sigmoid(x)) == softplus(-x)."""
    return float(np.logaddexp(0.0, x))


def log_sigmoid(x: float) -> float:
    return -softplus(-x)


def sigmoid(x: float) -> float:
    return math.exp(log_sigmoid(x))


def _split_segments(seq: Sequence[Token]) -> tuple[tuple[Token, ...], Optional[tuple[Token, ...]]]:
    questions = tuple(t for t in seq if t.is_ask)
    rest = tuple(t for t in seq if not t.is_ask)
    return questions, rest or None


def _seq_logprob(
    params: PolicyParams,
    task: Task,
    seq: Sequence[Token],
    observed: Optional[Mapping[int, int]],
) -> float:
    questions, response = _split_segments(seq)
    return trajectory_logprob(params, task, questions, response, observed)


def _seq_grad(
    params: PolicyParams,
    task: Task,
    seq: Sequence[Token],
    observed: Optional[Mapping[int, int]],
) -> PolicyParams:
    questions, response = _split_segments(seq)
    return grad_trajectory_logprob(params, task, questions, response, observed)


def sft_loss_and_grad(
    policy: PolicyParams, batch: Sequence[SftExample]
) -> tuple[float, PolicyParams]:
    """Mean negative trajectory log-likelihood over the batch, with its
    exact gradient."""
    if not batch:
        raise ConfigError("SFT batch is empty")
    total = 0.0
    grad = PolicyParams(policy.space)
    scale = 1.0 / len(batch)
    for example in batch:
        observed = dict(example.observed)
        total -= trajectory_logprob(policy, example.task, example.questions, example.response, observed)
        g = grad_trajectory_logprob(policy, example.task, example.questions, example.response, observed)
        grad.add_scaled(g, -scale)
    return total * scale, grad


def dpo_term(
    policy: PolicyParams,
    ref: PolicyParams,
    task: Task,
    seq_w: Sequence[Token],
    seq_l: Sequence[Token],
    beta: float,
    observed_w: Optional[Mapping[int, int]] = None,
    observed_l: Optional[Mapping[int, int]] = None,
) -> float:
    """-log sigmoid of the beta-scaled difference of policy/reference
    log-ratios between the winning and losing sequence. Exactly log(2) at
    zero margin."""
    loss, _, _ = _dpo_term_with_grad(policy, ref, task, seq_w, seq_l, beta, observed_w, observed_l)
    return loss


def _dpo_term_with_grad(
    policy: PolicyParams,
    ref: PolicyParams,
    task: Task,
    seq_w: Sequence[Token],
    seq_l: Sequence[Token],
    beta: float,
    observed_w: Optional[Mapping[int, int]] = None,
    observed_l: Optional[Mapping[int, int]] = None,
    ref_logps: Optional[tuple[float, float]] = None,
) -> tuple[float, PolicyParams, float]:
    check_positive(beta, "beta")
    lp_w = _seq_logprob(policy, task, seq_w, observed_w)
    lp_l = _seq_logprob(policy, task, seq_l, observed_l)
    if ref_logps is None:
        ref_w = _seq_logprob(ref, task, seq_w, observed_w)
        ref_l = _seq_logprob(ref, task, seq_l, observed_l)
    else:
        ref_w, ref_l = ref_logps
    inner = beta * ((lp_w - ref_w) - (lp_l - ref_l))
    loss = softplus(-inner)
    # d/dtheta softplus(-inner) = -sigmoid(-inner) * beta * (grad_w - grad_l)
    coef = -sigmoid(-inner) * beta
    grad = PolicyParams(policy.space)
    grad.add_scaled(_seq_grad(policy, task, seq_w, observed_w), coef)
    grad.add_scaled(_seq_grad(policy, task, seq_l, observed_l), -coef)
    return loss, grad, inner


def _paired_loss(policy, ref, dp, tasks, beta, pick) -> tuple[float, PolicyParams]:
    if not dp:
        raise ConfigError("preference dataset is empty")
    total = 0.0
    grad = PolicyParams(policy.space)
    scale = 1.0 / len(dp)
    for pair in dp:
        task = tasks[pair.task_id]
        seq_w, seq_l, obs_w, obs_l = pick(pair)
        loss, g, _ = _dpo_term_with_grad(policy, ref, task, seq_w, seq_l, beta, obs_w, obs_l)
        total += loss
        grad.add_scaled(g, scale)
    return total * scale, grad


def clarification_loss(
    policy: PolicyParams,
    ref: PolicyParams,
    dp: Sequence,
    tasks: Sequence[Task],
    beta: float,
) -> tuple[float, PolicyParams]:
    """Mean paired loss over winning vs losing clarification sequences.

    dp is a sequence of PreferencePair; tasks resolves their task ids."""
    return _paired_loss(policy, ref, dp, tasks, beta, lambda p: (p.q_w, p.q_l, None, None))


def response_loss(
    policy: PolicyParams,
    ref: PolicyParams,
    dp: Sequence,
    tasks: Sequence[Task],
    beta: float,
) -> tuple[float, PolicyParams]:
    """Mean paired loss over winning vs losing final responses, each scored
    at its own conversation's observed answers."""
    return _paired_loss(
        policy, ref, dp, tasks, beta,
        lambda p: (p.o_w, p.o_l, dict(p.answers_w), dict(p.answers_l)),
    )


def combine_weights(lam: float) -> tuple[float, float]:
    """(clarification weight, response weight); the pair sums to exactly 1
    for every lam >= 0, including the lam -> inf response-only limit."""
    check_non_negative(lam, "lambda")
    if math.isinf(lam):
        return 0.0, 1.0
    w_o = lam / (1.0 + lam)
    return 1.0 - w_o, w_o


def combined_loss(l_c: float, l_o: float, lam: float) -> float:
    w_c, w_o = combine_weights(lam)
    return w_c * l_c + w_o * l_o


def combine_gradients(g_c: PolicyParams, g_o: PolicyParams, lam: float) -> PolicyParams:
    w_c, w_o = combine_weights(lam)
    out = PolicyParams(g_c.space)
    out.add_scaled(g_c, w_c)
    out.add_scaled(g_o, w_o)
    return out


def bt_probability(r_w: float, r_l: float) -> float:
    """exp(r_w) / (exp(r_w) + exp(r_l)), shifted by the max so arbitrarily
    large rewards cannot overflow."""
    m = max(r_w, r_l)
    ew = math.exp(r_w - m)
    el = math.exp(r_l - m)
    return ew / (ew + el)


def implicit_reward(
    policy: PolicyParams,
    ref: PolicyParams,
    task: Task,
    seq: Sequence[Token],
    beta: float,
    observed: Optional[Mapping[int, int]] = None,
) -> float:
    """beta * (log pi(seq) - log pi_ref(seq)): the pair-relevant part of the
    reward induced by the policy. The additive task-only partition term is
    omitted because it cancels in every pairwise comparison; the
    partition_oracle tests prove that cancellation rather than assume it."""
    check_positive(beta, "beta")
    return beta * (_seq_logprob(policy, task, seq, observed) - _seq_logprob(ref, task, seq, observed))


def enumerate_question_sequences(num_attributes: int, turns: int) -> list[tuple[Token, ...]]:
    """Every possible clarification sequence of length turns - 1."""
    length = max(turns - 1, 0)
    return [
        tuple(Token.ask(a) for a in combo)
        for combo in itertools.product(range(num_attributes), repeat=length)
    ]


def partition_oracle(
    ref: PolicyParams,
    task: Task,
    reward_fn: Callable[[tuple[Token, ...]], float],
    beta: float,
    turns: int = 2,
    max_sequences: int = 10_000,
) -> float:
    """Brute-force partition sum over the whole clarification-sequence
    space: sum_q pi_ref(q) * exp(reward(q) / beta).

    Depends on the task only, never on which sequence a caller compares;
    refuses instances too large to enumerate.
    """
    check_positive(beta, "beta")
    num_sequences = ref.space.num_attributes ** max(turns - 1, 0)
    if num_sequences > max_sequences:
        raise InstanceTooLargeError(
            f"{num_sequences} question sequences (A={ref.space.num_attributes}, "
            f"turns={turns}) exceed the enumeration limit of {max_sequences}"
        )
    total = 0.0
    for seq in enumerate_question_sequences(ref.space.num_attributes, turns):
        lp_ref = _seq_logprob(ref, task, seq, None)
        total += math.exp(lp_ref + reward_fn(seq) / beta)
    return total
