"""Span-labeled probing task datasets and their on-disk format.

A task is a sidecar JSON file ``<name>.task.json`` holding the label
inventory plus three JSON-lines files ``<name>.{train,dev,test}.jsonl``.
Each line carries one sentence's targets::

    {"sentence_id": 3, "targets": [{"span1": [0, 2], "span2": null,
                                    "label": "nsubj"}]}

Spans are sentence-local token intervals, end exclusive.  Tasks are either
single-span or two-span; mixing arities within one task is rejected.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

from .errors import TaskFormatError

SPLITS = ("train", "dev", "test")


@dataclass(frozen=True)
class SpanTarget:
    """One labeled span (or span pair) inside a sentence."""

    sentence_id: int
    span1: tuple[int, int]
    span2: tuple[int, int] | None
    label_id: int


@dataclass
class TaskDataset:
    """Label inventory plus train/dev/test target lists."""

    name: str
    label_names: list[str]
    ignore_for_f1: frozenset[int] = field(default_factory=frozenset)
    splits: dict[str, list[SpanTarget]] = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return len(self.label_names)

    @property
    def num_spans(self) -> int:
        for targets in self.splits.values():
            for t in targets:
                return 2 if t.span2 is not None else 1
        return 1


def _check_span(span, where: str) -> tuple[int, int]:
    if (not isinstance(span, (list, tuple)) or len(span) != 2
            or not all(isinstance(v, int) for v in span)):
        raise TaskFormatError(f"{where}: span must be [start, end], got {span!r}")
    s, e = int(span[0]), int(span[1])
    if s < 0 or e <= s:
        raise TaskFormatError(f"{where}: bad span [{s}, {e})")
    return (s, e)


def validate(task: TaskDataset) -> None:
    """Check task invariants; raise TaskFormatError otherwise."""
    if task.num_classes < 2:
        raise TaskFormatError("need at least 2 labels")
    if len(set(task.label_names)) != task.num_classes:
        raise TaskFormatError("duplicate label names")
    for ig in task.ignore_for_f1:
        if not 0 <= ig < task.num_classes:
            raise TaskFormatError(f"ignored label id {ig} out of range")
    for split in SPLITS:
        if split not in task.splits:
            raise TaskFormatError(f"missing split {split!r}")
    arity = task.num_spans
    for split, targets in task.splits.items():
        for t in targets:
            if not 0 <= t.label_id < task.num_classes:
                raise TaskFormatError(
                    f"{split}: label id {t.label_id} out of range")
            if t.sentence_id < 0:
                raise TaskFormatError(f"{split}: negative sentence id")
            t_arity = 2 if t.span2 is not None else 1
            if t_arity != arity:
                raise TaskFormatError(
                    f"{split}: mixed span arity ({t_arity} vs {arity})")


def _parse_line(line: str, label_index: dict[str, int], where: str):
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise TaskFormatError(f"{where}: not JSON: {exc}")
    if not isinstance(rec, dict) or "sentence_id" not in rec:
        raise TaskFormatError(f"{where}: missing sentence_id")
    sid = rec["sentence_id"]
    if not isinstance(sid, int) or sid < 0:
        raise TaskFormatError(f"{where}: bad sentence_id {sid!r}")
    out = []
    for tgt in rec.get("targets", []):
        label = tgt.get("label")
        if label not in label_index:
            raise TaskFormatError(f"{where}: unknown label {label!r}")
        span1 = _check_span(tgt.get("span1"), where)
        span2 = tgt.get("span2")
        if span2 is not None:
            span2 = _check_span(span2, where)
        out.append(SpanTarget(sentence_id=sid, span1=span1, span2=span2,
                              label_id=label_index[label]))
    return out


def load_task(sidecar_path) -> TaskDataset:
    """Load a task from its sidecar path, reading the three split files."""
    try:
        with open(sidecar_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise TaskFormatError(f"{sidecar_path}: sidecar is not JSON: {exc}")
    for key in ("name", "labels"):
        if key not in meta:
            raise TaskFormatError(f"{sidecar_path}: sidecar missing {key!r}")
    name = str(meta["name"])
    labels = [str(v) for v in meta["labels"]]
    label_index = {v: i for i, v in enumerate(labels)}
    ignore = frozenset(label_index[v] for v in meta.get("ignore_labels_for_f1", [])
                       if v in label_index)
    unknown = [v for v in meta.get("ignore_labels_for_f1", [])
               if v not in label_index]
    if unknown:
        raise TaskFormatError(
            f"{sidecar_path}: ignore_labels_for_f1 has unknown labels {unknown}")

    base = os.path.dirname(os.path.abspath(sidecar_path))
    splits: dict[str, list[SpanTarget]] = {}
    for split in SPLITS:
        path = os.path.join(base, f"{name}.{split}.jsonl")
        if not os.path.exists(path):
            raise TaskFormatError(f"missing split file {path}")
        targets: list[SpanTarget] = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                targets.extend(
                    _parse_line(line, label_index, f"{path}:{lineno}"))
        splits[split] = targets
    task = TaskDataset(name=name, label_names=labels, ignore_for_f1=ignore,
                       splits=splits)
    validate(task)
    return task


def write_task(task: TaskDataset, directory) -> str:
    """Write sidecar + split files into ``directory``; returns sidecar path.

    Output is deterministic: sorted keys, one sentence per line in target
    order.
    """
    validate(task)
    os.makedirs(directory, exist_ok=True)
    sidecar = os.path.join(directory, f"{task.name}.task.json")
    meta = {
        "name": task.name,
        "labels": list(task.label_names),
        "ignore_labels_for_f1": sorted(task.label_names[i]
                                       for i in task.ignore_for_f1),
    }
    with open(sidecar, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")
    for split in SPLITS:
        path = os.path.join(directory, f"{task.name}.{split}.jsonl")
        # group consecutive targets by sentence to keep files compact
        with open(path, "w", encoding="utf-8") as fh:
            targets = task.splits[split]
            i = 0
            while i < len(targets):
                sid = targets[i].sentence_id
                group = []
                while i < len(targets) and targets[i].sentence_id == sid:
                    t = targets[i]
                    group.append({
                        "span1": list(t.span1),
                        "span2": None if t.span2 is None else list(t.span2),
                        "label": task.label_names[t.label_id],
                    })
                    i += 1
                rec = {"sentence_id": sid, "targets": group}
                fh.write(json.dumps(rec, sort_keys=True,
                                    separators=(",", ":")))
                fh.write("\n")
    return sidecar
