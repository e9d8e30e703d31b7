"""Deterministic synthetic dataset generation and serialization.

A split is a pure function of (seed, parameters): personas get uniform
values, tasks get uniform relevant sets drawn without replacement, and the
train/test division is by persona so test personas are never seen during
training. Every (task, persona) pair on either side carries its oracle gold
response.

Files are line-delimited JSON with a leading header record that carries the
format version and a trailing footer with record counts, so truncation is
always detectable.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import IO, Iterator

import numpy as np

from .core import AttributeSpace, DatasetSplit, GoldResponse, Persona, Task, Token
from .environment import oracle_gold
from .errors import ConfigError, DataFormatError
from .validation import check_split

SPLIT_FORMAT_VERSION = 1
_SPLIT_KIND = "dataset-split"


def generate_dataset(
    seed: int,
    space: AttributeSpace,
    num_personas: int,
    num_tasks: int,
    relevant_per_task: int,
    train_fraction: float,
) -> DatasetSplit:
    """Build a split deterministically from the seed.

    Draw order is fixed (personas first, then tasks, then the persona
    permutation for the split), so a given seed always yields a
    byte-identical split.
    """
    if num_personas < 0 or num_tasks < 0:
        raise ConfigError("persona and task counts must be >= 0")
    if relevant_per_task > space.num_attributes:
        raise ConfigError(
            f"relevant_per_task ({relevant_per_task}) exceeds the "
            f"{space.num_attributes} available attributes"
        )
    if relevant_per_task < 0:
        raise ConfigError("relevant_per_task must be >= 0")
    if not 0.0 < train_fraction < 1.0:
        raise ConfigError(f"train_fraction must be in (0, 1), got {train_fraction}")

    rng = np.random.default_rng(seed)
    personas = tuple(
        Persona(i, tuple(int(v) for v in rng.integers(0, space.num_values, size=space.num_attributes)))
        for i in range(num_personas)
    )
    tasks = tuple(
        Task(i, tuple(sorted(int(a) for a in rng.choice(space.num_attributes, size=relevant_per_task, replace=False))))
        for i in range(num_tasks)
    )

    num_train = int(round(num_personas * train_fraction))
    if num_personas > 0 and num_tasks > 0 and not 0 < num_train < num_personas:
        raise ConfigError(
            f"train_fraction {train_fraction} leaves an empty side "
            f"({num_train} of {num_personas} personas in train)"
        )
    order = [int(p) for p in rng.permutation(num_personas)] if num_personas else []
    train_personas = sorted(order[:num_train])
    test_personas = sorted(order[num_train:])

    train = tuple((t.id, p) for t in tasks for p in train_personas)
    test = tuple((t.id, p) for t in tasks for p in test_personas)
    golds = {
        (task_id, persona_id): oracle_gold(tasks[task_id], personas[persona_id])
        for task_id, persona_id in train + test
    }
    split = DatasetSplit(space, personas, tasks, train, test, golds)
    check_split(split)
    return split


def _dump_line(fh: IO[str], obj: dict) -> None:
    fh.write(json.dumps(obj, sort_keys=True, separators=(",", ":")))
    fh.write("\n")


def _split_records(split: DatasetSplit) -> Iterator[dict]:
    yield {
        "version": SPLIT_FORMAT_VERSION,
        "kind": _SPLIT_KIND,
        "num_attributes": split.space.num_attributes,
        "num_values": split.space.num_values,
    }
    for persona in split.personas:
        yield {"record": "persona", "id": persona.id, "values": list(persona.values)}
    for task in split.tasks:
        yield {"record": "task", "id": task.id, "relevant": list(task.relevant)}
    for role, pairs in (("train", split.train), ("test", split.test)):
        for task_id, persona_id in pairs:
            yield {"record": "pair", "role": role, "task_id": task_id, "persona_id": persona_id}
    for (task_id, persona_id) in sorted(split.golds):
        gold = split.golds[(task_id, persona_id)]
        yield {
            "record": "gold",
            "task_id": task_id,
            "persona_id": persona_id,
            "tokens": [t.to_json() for t in gold.tokens],
        }
    yield {
        "record": "footer",
        "personas": len(split.personas),
        "tasks": len(split.tasks),
        "train": len(split.train),
        "test": len(split.test),
        "golds": len(split.golds),
    }


def save_split(split: DatasetSplit, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for record in _split_records(split):
            _dump_line(fh, record)


def split_digest(split: DatasetSplit) -> str:
    """sha256 over the canonical serialized form; used as the golden-file
    fingerprint and echoed into run manifests."""
    h = hashlib.sha256()
    for record in _split_records(split):
        h.update(json.dumps(record, sort_keys=True, separators=(",", ":")).encode())
        h.update(b"\n")
    return h.hexdigest()


def _parse_line(line_no: int, line: str) -> dict:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"line {line_no}: not valid JSON: {line[:80]!r}") from exc
    if not isinstance(obj, dict):
        raise DataFormatError(f"line {line_no}: expected an object, got {type(obj).__name__}")
    return obj


def load_split(path: str | Path) -> DatasetSplit:
    """Inverse of save_split. Raises DataFormatError naming the offending
    record on any malformed or truncated file; never returns a partial
    split."""
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DataFormatError(f"{path}: empty file, expected a header record")

    header = _parse_line(1, lines[0])
    if header.get("kind") != _SPLIT_KIND:
        raise DataFormatError(f"{path}: line 1: not a {_SPLIT_KIND} header")
    if header.get("version") != SPLIT_FORMAT_VERSION:
        raise DataFormatError(
            f"{path}: unsupported format version {header.get('version')!r}"
        )
    space = AttributeSpace(int(header["num_attributes"]), int(header["num_values"]))

    personas: list[Persona] = []
    tasks: list[Task] = []
    train: list[tuple[int, int]] = []
    test: list[tuple[int, int]] = []
    golds: dict[tuple[int, int], GoldResponse] = {}
    footer: dict | None = None

    for line_no, line in enumerate(lines[1:], start=2):
        obj = _parse_line(line_no, line)
        if footer is not None:
            raise DataFormatError(f"line {line_no}: record after footer")
        kind = obj.get("record")
        try:
            if kind == "persona":
                personas.append(Persona(int(obj["id"]), tuple(int(v) for v in obj["values"])))
            elif kind == "task":
                tasks.append(Task(int(obj["id"]), tuple(int(a) for a in obj["relevant"])))
            elif kind == "pair":
                pair = (int(obj["task_id"]), int(obj["persona_id"]))
                (train if obj["role"] == "train" else test).append(pair)
            elif kind == "gold":
                key = (int(obj["task_id"]), int(obj["persona_id"]))
                golds[key] = GoldResponse(tuple(Token.from_json(t) for t in obj["tokens"]))
            elif kind == "footer":
                footer = obj
            else:
                raise DataFormatError(f"line {line_no}: unknown record kind {kind!r}")
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"line {line_no}: malformed {kind!r} record: {exc}") from exc

    if footer is None:
        raise DataFormatError(f"{path}: missing footer record, file is truncated")
    counts = {
        "personas": len(personas),
        "tasks": len(tasks),
        "train": len(train),
        "test": len(test),
        "golds": len(golds),
    }
    for key, count in counts.items():
        if footer.get(key) != count:
            raise DataFormatError(
                f"{path}: footer says {footer.get(key)} {key} records, found {count}"
            )

    split = DatasetSplit(space, tuple(personas), tuple(tasks), tuple(train), tuple(test), golds)
    check_split(split)
    return split
