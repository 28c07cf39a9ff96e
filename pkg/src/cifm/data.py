"""Dataset records, hashed tokenization and minibatch assembly."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import torch

from .errors import DataError

PAD_ID = 0
CLS_ID = 1
N_SPECIAL = 2

TASK_KINDS = ("classification", "regression")


@dataclass(frozen=True)
class Record:
    text: str
    target: str | tuple[float, ...]


@dataclass
class Dataset:
    """Train/val/test splits plus the metadata needed to score them."""

    name: str
    task_kind: str
    train: list[Record]
    val: list[Record]
    test: list[Record]
    label_set: list[str] | None = None
    target_dim: int = 1
    metrics: list[str] = field(default_factory=lambda: ["macro_f1"])
    metric_options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise DataError(f"unknown task kind {self.task_kind!r}")
        if self.task_kind == "classification" and self.label_set is None:
            seen = {r.target for r in self.train + self.val + self.test}
            self.label_set = sorted(seen)

    @property
    def num_outputs(self) -> int:
        if self.task_kind == "classification":
            return len(self.label_set)
        return self.target_dim

    def label_index(self) -> dict[str, int]:
        return {lab: i for i, lab in enumerate(self.label_set or [])}

    def split(self, name: str) -> list[Record]:
        if name not in ("train", "val", "test"):
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def with_train(self, records: list[Record]) -> "Dataset":
        return Dataset(self.name, self.task_kind, list(records), self.val, self.test,
                       label_set=list(self.label_set) if self.label_set else None,
                       target_dim=self.target_dim, metrics=list(self.metrics),
                       metric_options=dict(self.metric_options))


@dataclass
class EncodedBatch:
    token_ids: torch.Tensor       # [N, L] int64
    attention_mask: torch.Tensor  # [N, L] {0,1}
    labels: torch.Tensor          # [N] int64 or [N, k] float

    def __len__(self):
        return self.token_ids.shape[0]

    def select(self, index) -> "EncodedBatch":
        return EncodedBatch(self.token_ids[index], self.attention_mask[index], self.labels[index])

    def validate(self, vocab_size: int) -> None:
        if self.token_ids.shape != self.attention_mask.shape:
            raise DataError("token_ids and attention_mask shapes differ")
        if self.labels.shape[0] != self.token_ids.shape[0]:
            raise DataError("label count does not match batch size")
        if (self.attention_mask.sum(dim=1) < 1).any():
            raise DataError("every mask row needs at least one active position")
        if int(self.token_ids.max()) >= vocab_size or int(self.token_ids.min()) < 0:
            raise DataError(f"token id outside vocabulary of size {vocab_size}")


class HashingTokenizer:
    """Whitespace tokenizer mapping words into a fixed hashed vocabulary.

    Position 0 of every sequence is a CLS token, used for first-token pooling.
    """

    def __init__(self, vocab_size: int = 30000, seed: int = 0, max_length: int = 128, lowercase: bool = True):
        if vocab_size <= N_SPECIAL:
            raise DataError("vocab_size too small")
        self.vocab_size = vocab_size
        self.seed = seed
        self.max_length = max_length
        self.lowercase = lowercase
        self._cache: dict[str, int] = {}

    def token_id(self, word: str) -> int:
        tid = self._cache.get(word)
        if tid is None:
            h = hashlib.blake2b(word.encode("utf-8"), digest_size=8, salt=self.seed.to_bytes(8, "little"))
            tid = N_SPECIAL + int.from_bytes(h.digest(), "little") % (self.vocab_size - N_SPECIAL)
            self._cache[word] = tid
        return tid

    def tokenize(self, text: str) -> list[str]:
        if self.lowercase:
            text = text.lower()
        return text.split()

    def encode(self, texts: Sequence[str]) -> tuple[torch.Tensor, torch.Tensor]:
        rows = []
        for t in texts:
            ids = [CLS_ID] + [self.token_id(w) for w in self.tokenize(t)]
            rows.append(ids[: self.max_length])
        width = max(len(r) for r in rows)
        token_ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
        mask = torch.zeros((len(rows), width), dtype=torch.long)
        for i, r in enumerate(rows):
            token_ids[i, : len(r)] = torch.tensor(r, dtype=torch.long)
            mask[i, : len(r)] = 1
        return token_ids, mask

    def manifest(self) -> dict:
        return {"kind": "hashing", "vocab_size": self.vocab_size, "seed": self.seed,
                "max_length": self.max_length, "lowercase": self.lowercase}


def encode_records(records: Sequence[Record], dataset: Dataset, tokenizer: HashingTokenizer) -> EncodedBatch:
    if not records:
        raise DataError("cannot encode an empty record list")
    token_ids, mask = tokenizer.encode([r.text for r in records])
    if dataset.task_kind == "classification":
        index = dataset.label_index()
        try:
            labels = torch.tensor([index[r.target] for r in records], dtype=torch.long)
        except KeyError as exc:
            raise DataError(f"label {exc.args[0]!r} not in label set") from None
    else:
        labels = torch.tensor([list(r.target) for r in records], dtype=torch.float32)
    return EncodedBatch(token_ids, mask, labels)


def iter_batches(encoded: EncodedBatch, batch_size: int, generator: torch.Generator | None = None) -> Iterator[EncodedBatch]:
    """Yield minibatches; shuffled when a generator is given."""
    n = len(encoded)
    order = torch.randperm(n, generator=generator) if generator is not None else torch.arange(n)
    for start in range(0, n, batch_size):
        idx = order[start:start + batch_size]
        sub = encoded.select(idx)
        # trim trailing all-pad columns so batch width tracks its longest row
        width = int(sub.attention_mask.sum(dim=1).max())
        yield EncodedBatch(sub.token_ids[:, :width], sub.attention_mask[:, :width], sub.labels)
