"""Corpus ingestion, fold management, and synthetic corpora.

The on-disk carrier is a TSV with one record per line, ``label<TAB>text``.
Labels are densified to 0..K-1 in order of first appearance and the
mapping is kept on the corpus. Synthetic corpora provide a separable
sanity task (a single trigger token decides the class) and a harder
co-occurrence task that no single-token rule can solve.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, FormatError

TRIGGER_TOKEN = 7
CO_TOKEN = 11


@dataclass
class LabeledCorpus:
    records: list[tuple[str, int]]
    num_classes: int
    label_mapping: dict[str, int] = field(default_factory=dict)  # original -> dense

    def __len__(self) -> int:
        return len(self.records)

    def texts(self) -> list[str]:
        return [t for t, _ in self.records]

    def labels(self) -> np.ndarray:
        return np.array([l for _, l in self.records], dtype=np.int64)

    def subset(self, indices) -> "LabeledCorpus":
        return LabeledCorpus(
            records=[self.records[i] for i in indices],
            num_classes=self.num_classes,
            label_mapping=dict(self.label_mapping),
        )

    def class_counts(self) -> np.ndarray:
        counts = np.zeros(self.num_classes, dtype=np.int64)
        for _, label in self.records:
            counts[label] += 1
        return counts

    def majority_rate(self) -> float:
        counts = self.class_counts()
        return float(counts.max() / counts.sum())


def parse_tsv(path) -> LabeledCorpus:
    """Read ``label<TAB>text`` lines; CRLF and LF are equivalent."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        raw = fh.read()
    records: list[tuple[str, int]] = []
    mapping: dict[str, int] = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        if "\t" not in line:
            raise FormatError(f"line {lineno}: expected 'label<TAB>text'")
        raw_label, text = line.split("\t", 1)
        raw_label = raw_label.strip()
        try:
            int(raw_label)
        except ValueError:
            raise FormatError(f"line {lineno}: non-integer label {raw_label!r}") from None
        if raw_label not in mapping:
            mapping[raw_label] = len(mapping)
        records.append((text, mapping[raw_label]))
    if not records:
        raise FormatError("no records found in TSV file")
    return LabeledCorpus(records=records, num_classes=len(mapping), label_mapping=mapping)


def serialize_tsv(corpus: LabeledCorpus, path) -> None:
    """Write the corpus back out with its dense labels (parse round-trips)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for text, label in corpus.records:
            fh.write(f"{label}\t{text}\n")


def corpus_json(corpus: LabeledCorpus) -> str:
    """Normalized-corpus JSON for reproducibility archives."""
    return json.dumps(
        {
            "num_classes": corpus.num_classes,
            "label_mapping": corpus.label_mapping,
            "records": [{"label": l, "text": t} for t, l in corpus.records],
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def kfold_split(corpus: LabeledCorpus, k: int, seed: int) -> np.ndarray:
    """Stratified fold assignment, one fold id per record.

    Records of each class are shuffled and dealt round-robin, with the
    dealing pointer carried across classes so total fold sizes stay within
    one of each other as well.
    """
    n = len(corpus)
    if k < 2:
        raise DataError(f"k must be at least 2, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds the record count {n}")
    rng = np.random.default_rng(seed)
    labels = corpus.labels()
    assignment = np.full(n, -1, dtype=np.int64)
    pointer = 0
    for cls in range(corpus.num_classes):
        members = np.flatnonzero(labels == cls)
        if 0 < len(members) < k:
            warnings.warn(f"class {cls} has fewer than {k} members; distributing best-effort")
        rng.shuffle(members)
        for idx in members:
            assignment[idx] = pointer % k
            pointer += 1
    return assignment


def train_dev_indices(assignment: np.ndarray, fold: int) -> tuple[np.ndarray, np.ndarray]:
    return np.flatnonzero(assignment != fold), np.flatnonzero(assignment == fold)


def make_synthetic(
    n: int,
    vocab_size: int,
    trigger_rule: str = "trigger",
    seed: int = 0,
    min_len: int = 5,
    max_len: int = 12,
) -> LabeledCorpus:
    """Random token-sequence corpus with a planted classification rule.

    "trigger": label 1 iff token ``tok7`` appears. "cooc": label 1 iff
    both ``tok7`` and ``tok11`` appear, with single-token negatives mixed
    in so no one-token rule scores well. Both variants are balanced 50/50.
    """
    if n < 10:
        raise DataError(f"need at least 10 records, got {n}")
    if vocab_size <= max(TRIGGER_TOKEN, CO_TOKEN) + 1:
        raise DataError(f"vocab_size must exceed {max(TRIGGER_TOKEN, CO_TOKEN) + 1}")
    if trigger_rule not in ("trigger", "cooc"):
        raise DataError(f"unknown trigger_rule {trigger_rule!r}")

    rng = np.random.default_rng(seed)
    special = {TRIGGER_TOKEN} if trigger_rule == "trigger" else {TRIGGER_TOKEN, CO_TOKEN}
    background = np.array([t for t in range(vocab_size) if t not in special])

    def sample_tokens(length: int) -> list[int]:
        return list(rng.choice(background, size=length))

    records: list[tuple[str, int]] = []
    half = n // 2
    for i in range(n):
        positive = i < half
        length = int(rng.integers(min_len, max_len + 1))
        toks = sample_tokens(length)
        if trigger_rule == "trigger":
            if positive:
                toks[int(rng.integers(0, length))] = TRIGGER_TOKEN
        else:
            if positive:
                pos = rng.choice(length, size=2, replace=False)
                toks[int(pos[0])] = TRIGGER_TOKEN
                toks[int(pos[1])] = CO_TOKEN
            else:
                kind = i % 3  # one of: tok7 only, tok11 only, neither
                if kind < 2:
                    toks[int(rng.integers(0, length))] = TRIGGER_TOKEN if kind == 0 else CO_TOKEN
        text = " ".join(f"tok{t}" for t in toks)
        records.append((text, 1 if positive else 0))

    order = rng.permutation(n)
    records = [records[i] for i in order]
    return LabeledCorpus(records=records, num_classes=2, label_mapping={"0": 0, "1": 1})
