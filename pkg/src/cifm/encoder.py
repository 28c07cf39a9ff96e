"""Reference encoders with named parameter groups and seeded (stateless) dropout.

Two architectures share one interface:

* ``mlp``: embedding -> masked mean-pool -> 2 hidden layers -> head
* ``transformer``: embedding -> 2 post-LN transformer blocks -> first-token pool -> head

Dropout masks are drawn from a ``torch.Generator`` seeded per call, so a
forward pass is a pure function of (weights, batch, dropout_active, seed).
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import EncodedBatch
from .errors import ConfigError, DataError
from .estimators import ViewPair


@dataclass
class EncoderOutput:
    pooled: torch.Tensor          # Z [N, d]
    logits: torch.Tensor          # [N, C] or [N, k]
    hidden_prepool: torch.Tensor  # masked mean of embedding-layer output [N, d]
    token_states: torch.Tensor    # per-token representations [N, L, d]


def _dropout(x: torch.Tensor, p: float, gen: torch.Generator | None) -> torch.Tensor:
    if gen is None or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=gen, dtype=x.dtype) >= p
    return x * keep / (1.0 - p)


def _masked_mean(states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    m = mask.unsqueeze(-1).to(states.dtype)
    return (states * m).sum(dim=1) / m.sum(dim=1)


class Encoder(nn.Module):
    arch = "base"

    def __init__(self, vocab_size: int, num_outputs: int, dim: int, dropout: float, pooling: str):
        super().__init__()
        if not 0.0 <= dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if pooling not in ("mean", "first"):
            raise ConfigError(f"unknown pooling {pooling!r}")
        self.vocab_size = vocab_size
        self.num_outputs = num_outputs
        self.dim = dim
        self.dropout = dropout
        self.pooling = pooling

    # subclasses implement embed(), forward_embeddings(), parameter_groups(), config()

    def encode(self, batch: EncodedBatch, dropout_active: bool = False, seed: int = 0) -> EncoderOutput:
        batch.validate(self.vocab_size)
        gen = torch.Generator().manual_seed(seed) if dropout_active else None
        return self.forward_embeddings(self.embed(batch.token_ids), batch.attention_mask, gen)

    def make_view_pair(self, batch: EncodedBatch, seed_a: int, seed_b: int) -> tuple[ViewPair, EncoderOutput, EncoderOutput]:
        """Two dropout-active passes of the same batch; returns the pair and both full outputs."""
        out_a = self.encode(batch, dropout_active=True, seed=seed_a)
        out_b = self.encode(batch, dropout_active=True, seed=seed_b)
        return ViewPair(out_a.pooled, out_b.pooled), out_a, out_b

    def _pool(self, states: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        if self.pooling == "first":
            return states[:, 0]
        return _masked_mean(states, mask)

    def named_group(self, name: str) -> list[nn.Parameter]:
        groups = self.parameter_groups()
        if name not in groups:
            raise ConfigError(f"unknown parameter group {name!r}; available: {sorted(groups)}")
        return groups[name]

    def extractor_groups(self) -> list[str]:
        return [g for g in self.parameter_groups() if g != "head"]

    def reset_head(self, num_outputs: int) -> None:
        self.num_outputs = num_outputs
        self.head = nn.Linear(self.dim, num_outputs).to(next(self.parameters()).dtype)


class MLPEncoder(Encoder):
    arch = "mlp"

    def __init__(self, vocab_size: int, num_outputs: int, dim: int = 64, dropout: float = 0.2,
                 pooling: str = "mean", num_layers: int = 2):
        super().__init__(vocab_size, num_outputs, dim, dropout, pooling)
        self.num_layers = num_layers
        self.embedding = nn.Embedding(vocab_size, dim)
        nn.init.normal_(self.embedding.weight, std=0.1)
        self.layers = nn.ModuleList([nn.Linear(dim, dim) for _ in range(num_layers)])
        self.head = nn.Linear(dim, num_outputs)

    def embed(self, token_ids: torch.Tensor) -> torch.Tensor:
        return self.embedding(token_ids)

    def forward_embeddings(self, emb, mask, gen=None) -> EncoderOutput:
        prepool = self._pool(emb, mask)
        h = _dropout(prepool, self.dropout, gen)
        for layer in self.layers:
            h = F.gelu(layer(h))
            h = _dropout(h, self.dropout, gen)
        # the last dropout above is applied to Z itself, so the two views differ at Z
        return EncoderOutput(pooled=h, logits=self.head(h), hidden_prepool=_masked_mean(emb, mask), token_states=emb)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {"embedding": [self.embedding.weight]}
        for i, layer in enumerate(self.layers):
            groups[f"layer.{i}"] = [layer.weight, layer.bias]
        groups["head"] = [self.head.weight, self.head.bias]
        return groups

    def config(self) -> dict:
        return {"arch": self.arch, "vocab_size": self.vocab_size, "num_outputs": self.num_outputs,
                "dim": self.dim, "dropout": self.dropout, "pooling": self.pooling, "num_layers": self.num_layers}


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_mult: int = 4):
        super().__init__()
        if dim % heads:
            raise ConfigError("dim must be divisible by heads")
        self.heads = heads
        self.qkv = nn.Linear(dim, 3 * dim)
        self.out = nn.Linear(dim, dim)
        self.ln1 = nn.LayerNorm(dim)
        self.ff1 = nn.Linear(dim, ffn_mult * dim)
        self.ff2 = nn.Linear(ffn_mult * dim, dim)
        self.ln2 = nn.LayerNorm(dim)

    def forward(self, x, mask, p, gen):
        n, length, d = x.shape
        hd = d // self.heads
        q, k, v = self.qkv(x).view(n, length, 3, self.heads, hd).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(hd)
        scores = scores.masked_fill(mask[:, None, None, :] == 0, float("-inf"))
        attn = _dropout(scores.softmax(dim=-1), p, gen)
        ctx = (attn @ v).transpose(1, 2).reshape(n, length, d)
        x = self.ln1(x + _dropout(self.out(ctx), p, gen))
        ff = self.ff2(F.gelu(self.ff1(x)))
        return self.ln2(x + _dropout(ff, p, gen))


class TinyTransformer(Encoder):
    arch = "transformer"

    def __init__(self, vocab_size: int, num_outputs: int, dim: int = 64, dropout: float = 0.2,
                 pooling: str = "first", num_layers: int = 2, heads: int = 2, max_length: int = 128):
        super().__init__(vocab_size, num_outputs, dim, dropout, pooling)
        self.num_layers = num_layers
        self.heads = heads
        self.max_length = max_length
        self.embedding = nn.Embedding(vocab_size, dim)
        self.position = nn.Embedding(max_length, dim)
        nn.init.normal_(self.embedding.weight, std=0.1)
        nn.init.normal_(self.position.weight, std=0.1)
        self.emb_ln = nn.LayerNorm(dim)
        self.blocks = nn.ModuleList([_Block(dim, heads) for _ in range(num_layers)])
        self.head = nn.Linear(dim, num_outputs)

    def embed(self, token_ids: torch.Tensor) -> torch.Tensor:
        length = token_ids.shape[1]
        if length > self.max_length:
            raise DataError(f"sequence length {length} exceeds max_length {self.max_length}")
        return self.embedding(token_ids)

    def forward_embeddings(self, emb, mask, gen=None) -> EncoderOutput:
        pos = self.position.weight[: emb.shape[1]]
        x = self.emb_ln(emb + pos)
        prepool = _masked_mean(x, mask)
        x = _dropout(x, self.dropout, gen)
        for block in self.blocks:
            x = block(x, mask, self.dropout, gen)
        z = self._pool(x, mask)
        logits = self.head(_dropout(z, self.dropout, gen))
        return EncoderOutput(pooled=z, logits=logits, hidden_prepool=prepool, token_states=x)

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        groups = {"embedding": [self.embedding.weight, self.position.weight, self.emb_ln.weight, self.emb_ln.bias]}
        for i, block in enumerate(self.blocks):
            groups[f"layer.{i}"] = list(block.parameters())
        groups["head"] = [self.head.weight, self.head.bias]
        return groups

    def config(self) -> dict:
        return {"arch": self.arch, "vocab_size": self.vocab_size, "num_outputs": self.num_outputs,
                "dim": self.dim, "dropout": self.dropout, "pooling": self.pooling,
                "num_layers": self.num_layers, "heads": self.heads, "max_length": self.max_length}


ARCHITECTURES = {"mlp": MLPEncoder, "transformer": TinyTransformer}


def build_encoder(arch: str, **kwargs) -> Encoder:
    if arch not in ARCHITECTURES:
        raise ConfigError(f"unknown architecture {arch!r}; choose from {sorted(ARCHITECTURES)}")
    return ARCHITECTURES[arch](**kwargs)


def weights_checksum(params) -> str:
    """SHA-256 over the raw bytes of the given parameters (order-sensitive)."""
    import hashlib

    h = hashlib.sha256()
    for p in params:
        h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


# --- checkpoints -----------------------------------------------------------

MANIFEST_NAME = "manifest.json"


def save_checkpoint(path, model: Encoder, *, tokenizer_manifest: dict | None = None, extra: dict | None = None) -> Path:
    """Write a zip archive of ``<name>.npy`` tensors plus ``manifest.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    manifest = {"architecture": model.config(), "tokenizer": tokenizer_manifest or {}, "extra": extra or {},
                "tensors": {k: {"dtype": str(v.dtype).replace("torch.", ""), "shape": list(v.shape)} for k, v in state.items()}}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr(MANIFEST_NAME, json.dumps(manifest, indent=2, sort_keys=True))
        for name, tensor in state.items():
            buf = _npy_bytes(tensor.detach().cpu().numpy())
            zf.writestr(f"{name}.npy", buf)
    return path


def _npy_bytes(arr: np.ndarray) -> bytes:
    import io

    bio = io.BytesIO()
    np.save(bio, arr, allow_pickle=False)
    return bio.getvalue()


def load_checkpoint(path) -> tuple[Encoder, dict]:
    import io

    with zipfile.ZipFile(path) as zf:
        manifest = json.loads(zf.read(MANIFEST_NAME))
        cfg = dict(manifest["architecture"])
        model = build_encoder(cfg.pop("arch"), **cfg)
        state = {name: torch.from_numpy(np.load(io.BytesIO(zf.read(f"{name}.npy")), allow_pickle=False))
                 for name in manifest["tensors"]}
    if any(t.dtype == torch.float64 for t in state.values()):
        model.double()
    model.load_state_dict(state)
    return model, manifest
