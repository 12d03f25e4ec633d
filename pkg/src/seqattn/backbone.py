"""Token embedding providers.

Two routes produce the (B, L, D) input tensor: a trainable embedding table
over a whitespace/punctuation vocabulary, and a loader for per-token
vectors exported offline by any external encoder (SAMEMB1 files, layout
documented at :data:`SAMEMB1_MAGIC`). The PAD row of the table is pinned
to zero and never updated.
"""

from __future__ import annotations

import json
import re
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, FormatError
from .tensor import Tensor

PAD_ID = 0
UNK_ID = 1

_TOKEN_RE = re.compile(r"[\w']+|[^\w\s]")


def split_text(text: str) -> list[str]:
    """Lowercased whitespace+punctuation split."""
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Bidirectional token/id map with reserved PAD=0 and UNK=1."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = ["<pad>", "<unk>"] + list(tokens)
        self.token_to_id = {tok: i for i, tok in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise DataError("duplicate token in vocabulary")

    @classmethod
    def build(cls, texts, min_freq: int = 1) -> "Vocab":
        counts: dict[str, int] = {}
        for text in texts:
            for tok in split_text(text):
                counts[tok] = counts.get(tok, 0) + 1
        # first-appearance order keeps ids deterministic
        return cls([tok for tok, c in counts.items() if c >= min_freq])

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)


def tokenize(text: str, vocab: Vocab, max_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Map text to a fixed-length id row plus its validity mask row.

    Sequences longer than ``max_len`` are truncated; empty inputs become a
    single UNK token so the mask invariant (at least one valid position)
    always holds.
    """
    toks = split_text(text)
    ids = [vocab.encode(t) for t in toks][:max_len] or [UNK_ID]
    row = np.full(max_len, PAD_ID, dtype=np.int64)
    row[: len(ids)] = ids
    mask_row = np.zeros(max_len)
    mask_row[: len(ids)] = 1.0
    return row, mask_row


@dataclass
class EmbeddingTable:
    """Trainable (V, D) lookup matrix; row PAD_ID stays exactly zero."""

    weight: Tensor

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator) -> "EmbeddingTable":
        bound = np.sqrt(6.0 / (vocab_size + dim))
        data = rng.uniform(-bound, bound, size=(vocab_size, dim))
        data[PAD_ID] = 0.0
        return cls(weight=Tensor(data, requires_grad=True))

    @property
    def vocab_size(self) -> int:
        return self.weight.shape[0]

    @property
    def dim(self) -> int:
        return self.weight.shape[1]

    def enforce_pad_zero(self) -> None:
        self.weight.data[PAD_ID] = 0.0
        if self.weight.grad is not None:
            self.weight.grad[PAD_ID] = 0.0


def embed(ids: np.ndarray, table: EmbeddingTable) -> Tensor:
    """Gather rows of the table into a (B, L, D) tensor.

    Gradients scatter-add back into the gathered rows only; the PAD row
    receives none.
    """
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise DataError(f"ids must be a (B, L) integer array, got shape {ids.shape}")
    oob = (ids < 0) | (ids >= table.vocab_size)
    if np.any(oob):
        b, l = np.argwhere(oob)[0]
        raise DataError(
            f"token id {ids[b, l]} at position ({b}, {l}) is outside the "
            f"table of size {table.vocab_size}"
        )
    weight = table.weight
    out = kernels.embedding_fwd(weight.data, ids)
    vocab_size = table.vocab_size

    def vjp(g):
        return (kernels.embedding_bwd(g, ids, vocab_size, PAD_ID),)

    return Tensor._result(out, (weight,), vjp, "embed")


# ---------------------------------------------------------------------------
# SAMEMB1: precomputed-embedding files
#
#   magic "SAMEMB1\n"
#   one UTF-8 JSON header line: {"num_sequences": N, "dim": D}\n
#   N records, each: u32le length L_i, u32le label, then L_i*D f32le values
# ---------------------------------------------------------------------------

SAMEMB1_MAGIC = b"SAMEMB1\n"


def store_precomputed(path, seqs: list[tuple[np.ndarray, int]]) -> None:
    """Write (L_i x D float, label) pairs in SAMEMB1 layout (values as f32)."""
    dim = int(seqs[0][0].shape[1]) if seqs else 0
    with open(path, "wb") as fh:
        fh.write(SAMEMB1_MAGIC)
        header = json.dumps({"num_sequences": len(seqs), "dim": dim})
        fh.write(header.encode("utf-8") + b"\n")
        for vectors, label in seqs:
            arr = np.ascontiguousarray(vectors, dtype=np.float32)
            if arr.ndim != 2 or arr.shape[1] != dim:
                raise DataError(f"sequence with shape {arr.shape} does not match dim {dim}")
            fh.write(struct.pack("<II", arr.shape[0], int(label)))
            fh.write(arr.tobytes())


def load_precomputed(path) -> list[tuple[np.ndarray, int]]:
    """Read a SAMEMB1 file back as (L_i x D float64, label) pairs."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(SAMEMB1_MAGIC)] != SAMEMB1_MAGIC:
        raise FormatError("bad magic, not a SAMEMB1 file", offset=0)
    offset = len(SAMEMB1_MAGIC)
    newline = blob.find(b"\n", offset)
    if newline < 0:
        raise FormatError("missing header line", offset=offset)
    try:
        header = json.loads(blob[offset:newline].decode("utf-8"))
        count, dim = int(header["num_sequences"]), int(header["dim"])
    except (ValueError, KeyError, UnicodeDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}", offset=offset) from None
    offset = newline + 1

    seqs: list[tuple[np.ndarray, int]] = []
    for _ in range(count):
        if offset + 8 > len(blob):
            raise FormatError("truncated record header", offset=offset)
        length, label = struct.unpack_from("<II", blob, offset)
        offset += 8
        nbytes = length * dim * 4
        if offset + nbytes > len(blob):
            raise FormatError("truncated record payload", offset=offset)
        values = np.frombuffer(blob, dtype="<f4", count=length * dim, offset=offset)
        offset += nbytes
        seqs.append((values.astype(np.float64).reshape(length, dim), int(label)))
    if offset != len(blob):
        raise FormatError("trailing bytes after final record", offset=offset)
    return seqs
