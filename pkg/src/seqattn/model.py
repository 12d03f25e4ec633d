"""Classifier assembly: embeddings -> attention stage -> pooled linear head.

Also owns batch encoding and the checkpoint format (an .npz archive of
parameter arrays plus one JSON metadata entry).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .backbone import EmbeddingTable, Vocab, embed, tokenize
from .data import LabeledCorpus
from .errors import FormatError
from .head import HeadParams, cross_entropy, init_head, pool_sequence
from .sam import SamConfig, SamParams, SamTrace, init_sam_params, sam_forward
from .tensor import Mask, Tensor


@dataclass
class Batch:
    mask: np.ndarray  # (B, L) flags
    labels: np.ndarray  # (B,) int64
    ids: np.ndarray | None = None  # (B, L) int64, table mode
    embs: np.ndarray | None = None  # (B, L, D) float64, precomputed mode

    def __len__(self) -> int:
        return len(self.labels)


def encode_texts(corpus: LabeledCorpus, vocab: Vocab, max_len: int) -> Batch:
    n = len(corpus)
    ids = np.zeros((n, max_len), dtype=np.int64)
    mask = np.zeros((n, max_len))
    for i, (text, _) in enumerate(corpus.records):
        ids[i], mask[i] = tokenize(text, vocab, max_len)
    return Batch(mask=mask, labels=corpus.labels(), ids=ids)


def encode_embeddings(seqs: list[tuple[np.ndarray, int]], max_len: int) -> Batch:
    """Pad or truncate precomputed per-token vectors to a fixed length."""
    if not seqs:
        raise FormatError("cannot batch an empty embedding file")
    dim = seqs[0][0].shape[1]
    n = len(seqs)
    embs = np.zeros((n, max_len, dim))
    mask = np.zeros((n, max_len))
    labels = np.zeros(n, dtype=np.int64)
    for i, (vectors, label) in enumerate(seqs):
        length = min(max(len(vectors), 1), max_len)
        embs[i, : len(vectors[:max_len])] = vectors[:max_len]
        mask[i, :length] = 1.0
        labels[i] = label
    return Batch(mask=mask, labels=labels, embs=embs)


def take(batch: Batch, indices: np.ndarray) -> Batch:
    return Batch(
        mask=batch.mask[indices],
        labels=batch.labels[indices],
        ids=None if batch.ids is None else batch.ids[indices],
        embs=None if batch.embs is None else batch.embs[indices],
    )


@dataclass
class Model:
    cfg: SamConfig
    sam: SamParams
    head: HeadParams
    table: EmbeddingTable | None = None
    vocab: Vocab | None = None

    def parameters(self) -> dict[str, Tensor]:
        params = {}
        if self.table is not None:
            params["embed.table"] = self.table.weight
        params.update(self.sam.tensors())
        params.update(self.head.tensors())
        return params

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.zero_grad()

    def forward(
        self,
        batch: Batch,
        dropout: float = 0.0,
        rng: np.random.Generator | None = None,
    ) -> tuple[Tensor, SamTrace]:
        """Logits for a batch; dropout (train mode only) hits the pooled
        representation, nothing else."""
        if batch.ids is not None:
            x = embed(batch.ids, self.table)
        else:
            x = Tensor(batch.embs)
        mask = Mask(batch.mask)
        out, trace = sam_forward(x, mask, self.cfg, self.sam)
        pooled = pool_sequence(out, mask, self.head.pooling)
        if dropout > 0.0 and rng is not None:
            keep = (rng.random(pooled.shape) >= dropout) / (1.0 - dropout)
            pooled = pooled * Tensor(keep)
        logits = pooled @ self.head.w + self.head.b
        return logits, trace

    def loss(self, batch: Batch, dropout: float = 0.0, rng=None) -> Tensor:
        logits, _ = self.forward(batch, dropout=dropout, rng=rng)
        return cross_entropy(logits, batch.labels)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.parameters().items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, p in self.parameters().items():
            p.data[...] = arrays[name]


def init_model(
    cfg: SamConfig,
    num_classes: int,
    pooling: str,
    rng: np.random.Generator,
    vocab: Vocab | None = None,
) -> Model:
    """Fresh model; pass a vocab for table mode, none for precomputed mode."""
    table = None
    if vocab is not None:
        table = EmbeddingTable.init(len(vocab), cfg.d_model, rng)
    return Model(
        cfg=cfg,
        sam=init_sam_params(cfg, rng),
        head=init_head(cfg.d_model, num_classes, rng, pooling),
        table=table,
        vocab=vocab,
    )


def save_checkpoint(path, model: Model, extra: dict | None = None) -> None:
    meta = {
        "sam": {
            "d_model": model.cfg.d_model,
            "max_len": model.cfg.max_len,
            "delta": model.cfg.delta,
            "bottleneck_ratio": model.cfg.bottleneck_ratio,
            "order": model.cfg.order.value,
            "fam_enabled": model.cfg.fam_enabled,
            "tam_enabled": model.cfg.tam_enabled,
        },
        "pooling": model.head.pooling,
        "num_classes": model.head.num_classes,
        "vocab": None if model.vocab is None else model.vocab.id_to_token[2:],
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v for k, v in model.state_arrays().items()}
    np.savez(path, __meta__=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)


def load_checkpoint(path) -> Model:
    with np.load(path) as archive:
        try:
            meta = json.loads(bytes(archive["__meta__"]).decode("utf-8"))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"unreadable checkpoint metadata: {exc}") from None
        arrays = {
            name[len("param/"):]: archive[name]
            for name in archive.files
            if name.startswith("param/")
        }
    cfg = SamConfig(**meta["sam"])
    vocab = Vocab(meta["vocab"]) if meta["vocab"] is not None else None
    rng = np.random.default_rng(0)
    model = init_model(cfg, meta["num_classes"], meta["pooling"], rng, vocab=vocab)
    expected = set(model.parameters())
    if expected != set(arrays):
        raise FormatError(
            f"checkpoint parameters {sorted(arrays)} do not match the configured model {sorted(expected)}"
        )
    for name, p in model.parameters().items():
        if p.data.shape != arrays[name].shape:
            raise FormatError(
                f"checkpoint parameter '{name}' has shape {arrays[name].shape}, expected {p.data.shape}"
            )
        p.data[...] = arrays[name]
    return model
