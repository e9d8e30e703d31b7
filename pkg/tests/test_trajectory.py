import math

import numpy as np
import pytest

from togate import (
    AttributeSpace,
    ConfigError,
    Conversation,
    ExplorationConfig,
    PolicyParams,
    QuestionContext,
    ResponseContext,
    RoleplayerConfig,
    Task,
    Token,
    UNOBSERVED,
    build_dp,
    collect_sft_examples,
    explore_pair,
    extract_questions,
    generate_response,
    sample_conversation,
    zero_policy,
)
from togate.trajectory import competent_response, load_dp, save_dp

# Frozen from the first audited exploration of the default game with the
# untrained policy (seed=7, 10 samples per pair): no pair ties, so the
# margin filter keeps all 180.
DP_COUNT_UNTRAINED_SEED7 = 180


def first_pair(split):
    task_id, persona_id = sorted(split.train)[0]
    return split.task_by_id(task_id), split.persona_by_id(persona_id), split.gold_for(task_id, persona_id)


def test_exploration_config_validation():
    ExplorationConfig()
    with pytest.raises(ConfigError):
        ExplorationConfig(samples_per_pair=0)
    with pytest.raises(ConfigError):
        ExplorationConfig(turns=4)
    with pytest.raises(ConfigError):
        ExplorationConfig(temperature=0.0)


def test_explore_single_sample_best_equals_worst(default_split, default_env):
    task, persona, gold = first_pair(default_split)
    config = ExplorationConfig(samples_per_pair=1, seed=3)
    best, worst, scores = explore_pair(zero_policy(default_env.space), task, persona, gold, default_env, config)
    assert best == worst
    assert len(scores) == 1


def test_explore_tie_rule_lowest_index(default_split, default_env):
    # a fully deterministic policy + noiseless roleplayer makes all samples equal
    task, persona, gold = first_pair(default_split)
    policy = zero_policy(default_env.space)
    ctx = QuestionContext(task.relevant_mask(), 0)
    policy.question_row(ctx)[0] = 500.0
    nxt = QuestionContext(task.relevant_mask(), 0b1)
    policy.question_row(nxt)[0] = 500.0
    for a in task.relevant:
        for v in list(range(4)) + [UNOBSERVED]:
            policy.response_row(ResponseContext(a, v))[0] = 500.0
    config = ExplorationConfig(samples_per_pair=5, seed=3)
    best, worst, scores = explore_pair(policy, task, persona, gold, default_env, config)
    assert len(set(scores)) == 1
    assert best == worst  # both resolve to sample 0


def test_explore_ranks_revealing_conversations_first(default_split, default_env):
    task, persona, gold = first_pair(default_split)
    a, b = task.relevant
    revealing = Conversation(
        task.id, persona.id,
        ((Token.ask(a), Token.answer(a, persona.values[a])), (Token.ask(b), Token.answer(b, persona.values[b]))),
    )
    blind = Conversation(task.id, persona.id, ())
    assert default_env.loglik(task, revealing, gold) == pytest.approx(2 * math.log(0.9), abs=1e-12)
    assert default_env.loglik(task, blind, gold) == pytest.approx(2 * math.log(0.25), abs=1e-12)
    assert default_env.loglik(task, revealing, gold) > default_env.loglik(task, blind, gold)


def test_explore_is_reproducible(default_split, default_env):
    task, persona, gold = first_pair(default_split)
    policy = zero_policy(default_env.space)
    config = ExplorationConfig(seed=11)
    one = explore_pair(policy, task, persona, gold, default_env, config)
    two = explore_pair(policy, task, persona, gold, default_env, config)
    assert one == two


def test_extract_questions():
    conv = Conversation(
        0, 0,
        ((Token.ask(1), Token.answer(1, 2)), (Token.ask(3), Token.answer(3, 0))),
        (Token.say(1, 2), Token.say(3, 0), Token.end()),
    )
    assert extract_questions(conv) == (Token.ask(1), Token.ask(3))
    assert extract_questions(Conversation(0, 0, ())) == ()


def test_extract_questions_only_asks(default_split, default_env):
    policy = zero_policy(default_env.space)
    rng = np.random.default_rng(0)
    for task_id, persona_id in default_split.train[:20]:
        task = default_split.task_by_id(task_id)
        persona = default_split.persona_by_id(persona_id)
        conv = sample_conversation(policy, task, persona, RoleplayerConfig(0.0), 3, rng)
        assert all(tok.is_ask for tok in extract_questions(conv))


def test_generate_response_empty_relevant():
    policy = zero_policy(AttributeSpace(6, 4))
    task = Task(0, ())
    conv = Conversation(0, 0, ())
    out = generate_response(policy, task, conv, "greedy", np.random.default_rng(0))
    assert out == (Token.end(),)


def test_generate_response_greedy_copies_strong_table():
    policy = zero_policy(AttributeSpace(6, 4))
    for a in (1, 3):
        for v in range(4):
            policy.response_row(ResponseContext(a, v))[v] = 6.0
    task = Task(0, (1, 3))
    conv = Conversation(0, 0, ((Token.ask(1), Token.answer(1, 0)), (Token.ask(3), Token.answer(3, 3))))
    out = generate_response(policy, task, conv, "greedy", np.random.default_rng(0))
    assert out == (Token.say(1, 0), Token.say(3, 3), Token.end())


def test_generate_response_greedy_tie_break_zero():
    policy = zero_policy(AttributeSpace(6, 4))
    task = Task(0, (1, 3))
    conv = Conversation(0, 0, ())
    out = generate_response(policy, task, conv, "greedy", np.random.default_rng(0))
    assert out == (Token.say(1, 0), Token.say(3, 0), Token.end())


def test_generate_response_rejects_unknown_mode():
    with pytest.raises(ConfigError):
        generate_response(zero_policy(AttributeSpace(6, 4)), Task(0, ()), Conversation(0, 0, ()), "argmax", np.random.default_rng(0))


def test_competent_response_echoes_observed():
    policy = zero_policy(AttributeSpace(6, 4))
    task = Task(0, (1, 3))
    conv = Conversation(0, 0, ((Token.ask(3), Token.answer(3, 2)),))
    out = competent_response(policy, task, conv, np.random.default_rng(0))
    says = {t.attribute: t.value for t in out if t.is_say}
    assert says[3] == 2  # revealed slot echoed
    assert 0 <= says[1] < 4  # unrevealed slot sampled from the policy
    assert out[-1].is_end


def test_build_dp_margin_filter(default_split, default_env):
    # force ties everywhere: deterministic policy means every sample is identical
    policy = zero_policy(default_env.space)
    for mask in {t.relevant_mask() for t in default_split.tasks}:
        policy.question_row(QuestionContext(mask, 0))[0] = 500.0
        policy.question_row(QuestionContext(mask, 0b1))[0] = 500.0
    config = ExplorationConfig(samples_per_pair=4, seed=2)
    kept_zero = build_dp(policy, default_split, default_env, config, margin_min=0.0)
    kept_default = build_dp(policy, default_split, default_env, config, margin_min=1e-9)
    assert len(kept_zero) == len(default_split.train)  # ties kept only at exactly 0
    assert kept_default == []


def test_build_dp_empty_train(default_env):
    from togate import generate_dataset

    split = generate_dataset(1, AttributeSpace(6, 4), 0, 0, 2, 0.5)
    assert build_dp(zero_policy(default_env.space), split, default_env, ExplorationConfig(seed=1)) == []


def test_build_dp_golden_count_and_invariants(default_split, default_env):
    config = ExplorationConfig(seed=7)
    dp = build_dp(zero_policy(default_env.space), default_split, default_env, config, margin_min=1e-9)
    assert len(dp) == DP_COUNT_UNTRAINED_SEED7
    for pair in dp:
        assert pair.score_w >= pair.score_l + 1e-9
        assert len(pair.q_w) <= 2 and len(pair.q_l) <= 2
    # sorted by (task_id, persona_id)
    keys = [(p.task_id, p.persona_id) for p in dp]
    assert keys == sorted(keys)


def test_build_dp_schedule_independent(default_split, default_env):
    config = ExplorationConfig(seed=7)
    serial = build_dp(zero_policy(default_env.space), default_split, default_env, config)
    threaded = build_dp(zero_policy(default_env.space), default_split, default_env, config, workers=4)
    assert serial == threaded


def test_collect_sft_examples_gold_targets(default_split, default_env):
    config = ExplorationConfig(seed=7)
    examples = collect_sft_examples(zero_policy(default_env.space), default_split, default_env, config)
    assert len(examples) == len(default_split.train)
    # examples are in sorted train-pair order
    for example, (task_id, persona_id) in zip(examples, sorted(default_split.train)):
        assert example.task.id == task_id
        assert example.response == default_split.gold_for(task_id, persona_id).tokens
        assert all(tok.is_ask for tok in example.questions)


def test_dp_roundtrip(tmp_path, default_split, default_env):
    config = ExplorationConfig(seed=7)
    dp = build_dp(zero_policy(default_env.space), default_split, default_env, config)[:25]
    path = tmp_path / "dp.jsonl"
    save_dp(dp, path)
    assert load_dp(path) == dp
