import json

import pytest

from togate import (
    AttributeSpace,
    ConfigError,
    DataFormatError,
    generate_dataset,
    load_split,
    oracle_gold,
    save_split,
    split_digest,
)
from togate.validation import check_split

# Frozen from the first audited run of the seeded generator on the default
# desk-scale game (seed=42, A=6, V=4, 20 personas, 10 tasks, 2 relevant,
# train_fraction 0.9).
DEFAULT_SPLIT_DIGEST = "32f8b4c79f52714c09e4a7ca161b25ec93209f52c0d9daa72dd7b06afcc3d4f1"


def test_empty_counts_give_empty_split():
    split = generate_dataset(1, AttributeSpace(6, 4), 0, 0, 2, 0.5)
    assert split.train == () and split.test == ()
    assert split.golds == {}


def test_large_scale_persona_split():
    # 110 personas at fraction ~0.909 -> 100 train / 10 test personas
    split = generate_dataset(0, AttributeSpace(6, 4), 110, 5, 2, 0.909)
    train_personas = {p for _, p in split.train}
    test_personas = {p for _, p in split.test}
    assert len(train_personas) == 100
    assert len(test_personas) == 10
    assert not train_personas & test_personas
    # every (task, persona) pair on each side is enumerated
    assert len(split.train) == 5 * 100
    assert len(split.test) == 5 * 10


def test_default_split_shape_and_digest(default_split):
    assert len(default_split.personas) == 20
    assert len(default_split.tasks) == 10
    assert len(default_split.train) == 180
    assert len(default_split.test) == 20
    assert split_digest(default_split) == DEFAULT_SPLIT_DIGEST


def test_generation_is_deterministic(default_split, default_space):
    again = generate_dataset(42, default_space, 20, 10, 2, 0.9)
    assert again == default_split
    assert split_digest(again) == split_digest(default_split)


def test_different_seed_changes_split(default_split, default_space):
    other = generate_dataset(43, default_space, 20, 10, 2, 0.9)
    assert split_digest(other) != split_digest(default_split)


def test_golds_state_true_persona_values(default_split):
    for (task_id, persona_id), gold in default_split.golds.items():
        task = default_split.task_by_id(task_id)
        persona = default_split.persona_by_id(persona_id)
        assert gold == oracle_gold(task, persona)
        for tok in gold.tokens:
            if tok.is_say:
                assert tok.value == persona.values[tok.attribute]


def test_rejects_relevant_larger_than_space():
    with pytest.raises(ConfigError):
        generate_dataset(1, AttributeSpace(4, 3), 5, 5, 5, 0.5)


def test_rejects_empty_side():
    with pytest.raises(ConfigError):
        generate_dataset(1, AttributeSpace(6, 4), 3, 2, 2, 0.01)
    with pytest.raises(ConfigError):
        generate_dataset(1, AttributeSpace(6, 4), 3, 2, 2, 0.99)
    with pytest.raises(ConfigError):
        generate_dataset(1, AttributeSpace(6, 4), 3, 2, 2, 1.5)


def test_roundtrip_empty(tmp_path):
    split = generate_dataset(1, AttributeSpace(6, 4), 0, 0, 2, 0.5)
    path = tmp_path / "empty.jsonl"
    save_split(split, path)
    assert load_split(path) == split


def test_roundtrip_default(tmp_path, default_split):
    path = tmp_path / "split.jsonl"
    save_split(default_split, path)
    loaded = load_split(path)
    assert loaded == default_split
    assert split_digest(loaded) == DEFAULT_SPLIT_DIGEST


def test_roundtrip_random_seeds(tmp_path):
    for seed in range(6):
        split = generate_dataset(seed, AttributeSpace(5, 3), 7, 4, 2, 0.7)
        check_split(split)
        path = tmp_path / f"s{seed}.jsonl"
        save_split(split, path)
        assert load_split(path) == split


def test_truncated_file_is_rejected(tmp_path, default_split):
    path = tmp_path / "split.jsonl"
    save_split(default_split, path)
    lines = path.read_text().splitlines()
    truncated = tmp_path / "truncated.jsonl"
    truncated.write_text("\n".join(lines[:-1]) + "\n")
    with pytest.raises(DataFormatError, match="truncated|footer"):
        load_split(truncated)


def test_malformed_record_names_line(tmp_path, default_split):
    path = tmp_path / "split.jsonl"
    save_split(default_split, path)
    lines = path.read_text().splitlines()
    lines[3] = json.dumps({"record": "persona", "id": 2})  # missing values
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match="line 4"):
        load_split(bad)


def test_not_json_is_rejected(tmp_path, default_split):
    path = tmp_path / "split.jsonl"
    save_split(default_split, path)
    lines = path.read_text().splitlines()
    lines[1] = "{not json"
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataFormatError, match="line 2"):
        load_split(bad)


def test_wrong_header_is_rejected(tmp_path):
    path = tmp_path / "nope.jsonl"
    path.write_text('{"kind":"something-else","version":1}\n')
    with pytest.raises(DataFormatError):
        load_split(path)
