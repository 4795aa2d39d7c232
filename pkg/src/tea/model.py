"""Encoder-decoder transformer whose encoder self-attention consumes PIAM.

Encoder attention scores are blended with a projected PIAM bias::

    S = (Q K^T / sqrt(d_k)) * alpha + (W_h . PIAM) * (1 - alpha)

where ``W_h`` is a per-head length-``p`` projection and ``alpha`` is a
per-layer, per-example gate ``sigmoid(w . mean(x) + b)`` computed from the
mean-pooled encoder input embeddings. Decoder attention is standard.
Layers use pre-norm residual wiring.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import DimensionError, FormatError, NonFiniteLoss
from .features import DEFAULT_X, PiamVersion
from .piam import PiamTensor
from .tokenizer import BOS, EOS, PAD

MASK_VALUE = -1e9
CHECKPOINT_MAGIC = b"TEA1"
CHECKPOINT_FORMAT = 1


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_heads: int = 4
    d_ff: int = 512
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    max_len: int = 128
    piam_version: PiamVersion = PiamVersion.NONE
    p: int = 0
    x: int = DEFAULT_X
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "piam_version", PiamVersion(self.piam_version))
        if self.d_model % self.n_heads:
            raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if self.p != self.piam_version.p:
            raise ValueError(f"p={self.p} inconsistent with piam_version={self.piam_version.value}")

    @classmethod
    def for_version(cls, vocab_size: int, piam_version="none", **kw) -> "ModelConfig":
        v = PiamVersion(piam_version)
        return cls(vocab_size=vocab_size, piam_version=v, p=v.p, **kw)

    @property
    def d_k(self) -> int:
        return self.d_model // self.n_heads

    def to_text(self) -> str:
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    @classmethod
    def from_text(cls, text: str) -> "ModelConfig":
        kw = {}
        types = {f.name: f.type for f in fields(cls)}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in types:
                raise FormatError(f"unknown config key {key!r}")
            kw[key] = value if key == "piam_version" else int(value)
        return cls(**kw)


# ------------------------------------------------------------------ attention


def alpha_gate(embeddings: torch.Tensor, w: torch.Tensor, b: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """``sigmoid(w . mean_pos(embeddings) + b)``.

    ``embeddings`` is ``(L, d)`` or ``(B, L, d)``; ``mask`` marks real
    (non-PAD) positions and restricts the mean to them.
    """
    if mask is None:
        pooled = embeddings.mean(dim=-2)
    else:
        m = mask.to(embeddings.dtype).unsqueeze(-1)
        pooled = (embeddings * m).sum(dim=-2) / m.sum(dim=-2).clamp_min(1.0)
    return torch.sigmoid(pooled @ w + b)


def attend(q, k, v, bias=None, alpha=None, mask=None):
    """Scaled dot-product attention, optionally blended with an additive bias.

    ``alpha=None`` gives the unmodified baseline. ``mask`` is boolean and True
    where attention is allowed.
    """
    scores = q @ k.transpose(-2, -1) / math.sqrt(q.size(-1))
    if alpha is not None:
        scores = scores * alpha + bias * (1 - alpha)
    if mask is not None:
        scores = scores.masked_fill(~mask, MASK_VALUE)
    return torch.softmax(scores, dim=-1) @ v


def contract_piam(index: torch.Tensor, w: torch.Tensor, batch: int, length: int) -> torch.Tensor:
    """Sparse contraction ``B[b,h,i,j] = sum_k w[h,k] * piam[b,i,j,k]``.

    ``index`` is an ``(E, 4)`` long tensor of ``(b, i, j, k)`` entries, sorted
    so the accumulation order is canonical.
    """
    heads = w.size(0)
    flat = torch.zeros(heads, batch * length * length, dtype=w.dtype)
    if index.numel():
        pos = (index[:, 0] * length + index[:, 1]) * length + index[:, 2]
        flat = flat.index_add(1, pos, w[:, index[:, 3]])
    return flat.view(heads, batch, length, length).transpose(0, 1)


def piam_attention(q, k, v, piam: PiamTensor, w_h, alpha, mask=None):
    """Single-head PIAM attention on ``(L, d_k)`` inputs."""
    L = q.size(0)
    if k.shape != q.shape or v.size(0) != L:
        raise DimensionError(f"q {tuple(q.shape)}, k {tuple(k.shape)}, v {tuple(v.shape)} mismatch")
    if piam.L != L or piam.p != w_h.numel():
        raise DimensionError(f"PIAM L={piam.L}, p={piam.p} vs sequence {L}, W length {w_h.numel()}")
    arr = torch.as_tensor(piam.array())
    index = torch.cat([torch.zeros(len(arr), 1, dtype=torch.long), arr], dim=1)
    bias = contract_piam(index, w_h.reshape(1, -1), 1, L)[0, 0]
    return attend(q, k, v, bias, alpha, mask)


class MultiHeadAttention(nn.Module):
    def __init__(self, d_model: int, n_heads: int, p: int = 0):
        super().__init__()
        self.n_heads = n_heads
        self.d_k = d_model // n_heads
        self.q = nn.Linear(d_model, d_model)
        self.k = nn.Linear(d_model, d_model)
        self.v = nn.Linear(d_model, d_model)
        self.o = nn.Linear(d_model, d_model)
        self.p = p
        if p:
            self.piam_w = nn.Parameter(torch.zeros(n_heads, p))
            self.gate_w = nn.Parameter(torch.zeros(d_model))
            self.gate_b = nn.Parameter(torch.zeros(()))

    def split(self, x: torch.Tensor) -> torch.Tensor:
        B, L, _ = x.shape
        return x.view(B, L, self.n_heads, self.d_k).transpose(1, 2)

    def forward(self, x, memory=None, mask=None, bias=None, alpha=None):
        src = x if memory is None else memory
        q, k, v = self.split(self.q(x)), self.split(self.k(src)), self.split(self.v(src))
        if alpha is not None:
            alpha = alpha.view(-1, 1, 1, 1)
        out = attend(q, k, v, bias, alpha, mask)
        B, _, L, _ = out.shape
        return self.o(out.transpose(1, 2).reshape(B, L, -1))


class FeedForward(nn.Module):
    def __init__(self, d_model: int, d_ff: int):
        super().__init__()
        self.fc1 = nn.Linear(d_model, d_ff)
        self.fc2 = nn.Linear(d_ff, d_model)

    def forward(self, x):
        return self.fc2(F.relu(self.fc1(x)))


class EncoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.attn = MultiHeadAttention(cfg.d_model, cfg.n_heads, cfg.p)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, x, mask, embedded, src_mask, piam_index=None, alpha_override=None):
        bias = alpha = None
        if self.attn.p:
            B, L, _ = x.shape
            bias = contract_piam(piam_index, self.attn.piam_w, B, L)
            if alpha_override is None:
                alpha = alpha_gate(embedded, self.attn.gate_w, self.attn.gate_b, src_mask)
            else:
                alpha = torch.full((B,), float(alpha_override), dtype=x.dtype)
        x = x + self.attn(self.norm1(x), mask=mask, bias=bias, alpha=alpha)
        return x + self.ff(self.norm2(x))


class DecoderLayer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.d_model)
        self.self_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm2 = nn.LayerNorm(cfg.d_model)
        self.cross_attn = MultiHeadAttention(cfg.d_model, cfg.n_heads)
        self.norm3 = nn.LayerNorm(cfg.d_model)
        self.ff = FeedForward(cfg.d_model, cfg.d_ff)

    def forward(self, y, memory, self_mask, cross_mask):
        y = y + self.self_attn(self.norm1(y), mask=self_mask)
        y = y + self.cross_attn(self.norm2(y), memory=memory, mask=cross_mask)
        return y + self.ff(self.norm3(y))


def sinusoid_table(max_len: int, d_model: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64).unsqueeze(1)
    div = torch.exp(torch.arange(0, d_model, 2, dtype=torch.float64) * (-math.log(10000.0) / d_model))
    pe = torch.zeros(max_len, d_model, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : d_model // 2]
    return pe.float()


@dataclass
class Batch:
    src: torch.Tensor  # (B, S) long, PAD-padded
    tgt: torch.Tensor  # (B, T) long, BOS ... EOS then PAD
    piam: torch.Tensor  # (E, 4) long (b, i, j, k), sorted


def collate(examples) -> Batch:
    """Pad ``(src_ids, piam_entries, tgt_ids)`` triples into a Batch.

    ``piam_entries`` is a PiamTensor, an ``(E, 3)`` integer array already in
    lexicographic order (as produced by ``PiamTensor.array``), or None for the
    baseline. Keeping entries sorted fixes the accumulation order of the
    contraction, so outputs do not depend on how the entries were gathered.
    """
    B = len(examples)
    S = max(max(len(s) for s, _, _ in examples), 1)
    T = max(len(t) for _, _, t in examples)
    src = torch.full((B, S), PAD, dtype=torch.long)
    tgt = torch.full((B, T), PAD, dtype=torch.long)
    parts = []
    for b, (s, piam, t) in enumerate(examples):
        src[b, : len(s)] = torch.as_tensor(list(s), dtype=torch.long)
        tgt[b, : len(t)] = torch.as_tensor(list(t), dtype=torch.long)
        if piam is None:
            continue
        arr = piam.array() if isinstance(piam, PiamTensor) else np.asarray(piam, dtype=np.int64)
        if len(arr):
            parts.append(np.concatenate([np.full((len(arr), 1), b, dtype=np.int64), arr], axis=1))
    if parts:
        piam_index = torch.from_numpy(np.ascontiguousarray(np.concatenate(parts)))
    else:
        piam_index = torch.zeros((0, 4), dtype=torch.long)
    return Batch(src, tgt, piam_index)


class TeaTransformer(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.embed = nn.Embedding(cfg.vocab_size, cfg.d_model)
        self.register_buffer("pos", sinusoid_table(cfg.max_len, cfg.d_model), persistent=False)
        self.encoder = nn.ModuleList(EncoderLayer(cfg) for _ in range(cfg.n_enc_layers))
        self.enc_norm = nn.LayerNorm(cfg.d_model)
        self.decoder = nn.ModuleList(DecoderLayer(cfg) for _ in range(cfg.n_dec_layers))
        self.dec_norm = nn.LayerNorm(cfg.d_model)
        self.out = nn.Linear(cfg.d_model, cfg.vocab_size)

    @classmethod
    def initialize(cls, cfg: ModelConfig) -> "TeaTransformer":
        """Seeded construction; only ``cfg.seed`` influences the parameters."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            model = cls(cfg)
            nn.init.normal_(model.embed.weight, std=cfg.d_model ** -0.5)
        return model

    def embed_tokens(self, ids: torch.Tensor) -> torch.Tensor:
        L = ids.size(1)
        if L > self.cfg.max_len:
            raise DimensionError(f"sequence length {L} exceeds max_len={self.cfg.max_len}")
        x = self.embed(ids) * math.sqrt(self.cfg.d_model)
        return x + self.pos[:L].to(x.dtype)

    def encode(self, src: torch.Tensor, piam_index: torch.Tensor | None = None, alpha_override=None, return_layers=False):
        src_mask = src != PAD
        attn_mask = src_mask[:, None, None, :]
        embedded = self.embed_tokens(src)
        if self.cfg.p and piam_index is None:
            piam_index = torch.zeros((0, 4), dtype=torch.long)
        if piam_index is not None and piam_index.numel():
            if int(piam_index[:, 3].max()) >= max(self.cfg.p, 1) or int(piam_index[:, 1:3].max()) >= src.size(1):
                raise DimensionError("PIAM entry outside model dimensions")
        x = embedded
        layers = []
        for layer in self.encoder:
            x = layer(x, attn_mask, embedded, src_mask, piam_index, alpha_override)
            layers.append(x)
        out = self.enc_norm(x)
        return (out, layers) if return_layers else out

    def decode(self, tgt_in: torch.Tensor, memory: torch.Tensor, src: torch.Tensor) -> torch.Tensor:
        T = tgt_in.size(1)
        causal = torch.tril(torch.ones(T, T, dtype=torch.bool))[None, None]
        cross = (src != PAD)[:, None, None, :]
        y = self.embed_tokens(tgt_in)
        for layer in self.decoder:
            y = layer(y, memory, causal, cross)
        return self.out(self.dec_norm(y))

    def forward(self, src, piam_index, tgt_in, alpha_override=None):
        memory = self.encode(src, piam_index, alpha_override)
        return self.decode(tgt_in, memory, src)


def forward(model: TeaTransformer, src_ids, piam, tgt_ids, alpha_override=None) -> torch.Tensor:
    """Logits ``(len(tgt_ids), vocab_size)`` for one example."""
    batch = collate([(src_ids, piam if model.cfg.p else None, tgt_ids)])
    return model(batch.src, batch.piam, batch.tgt, alpha_override)[0]


def batch_loss(model: TeaTransformer, batch: Batch) -> torch.Tensor:
    """Mean token cross-entropy of teacher-forced targets, ignoring PAD."""
    tgt_in, tgt_out = batch.tgt[:, :-1], batch.tgt[:, 1:]
    logits = model(batch.src, batch.piam, tgt_in)
    count = int((tgt_out != PAD).sum())
    if count == 0:
        return logits.sum() * 0.0
    return F.cross_entropy(logits.reshape(-1, logits.size(-1)), tgt_out.reshape(-1), ignore_index=PAD, reduction="sum") / count


def loss_and_grads(model: TeaTransformer, batch, step: int = 0) -> tuple[float, dict[str, torch.Tensor]]:
    """Loss plus reverse-mode gradients for every parameter tensor."""
    if not isinstance(batch, Batch):
        batch = collate(batch)
    model.zero_grad(set_to_none=False)
    loss = batch_loss(model, batch)
    value = float(loss.detach())
    if not math.isfinite(value):
        raise NonFiniteLoss(step, value)
    loss.backward()
    grads = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p)) for name, p in model.named_parameters()}
    return value, grads


# --------------------------------------------------------------------- decoding


def beam_search(step_fn, bos: int, eos: int, beam_width: int, max_steps: int):
    """Length-normalized beam search.

    ``step_fn(prefixes)`` returns a ``(len(prefixes), V)`` array of next-token
    log-probabilities. Returns ``(tokens, normalized_score)`` pairs (tokens
    exclude BOS, include EOS when produced), best first. Ties are broken by
    token ids, so width 1 is greedy argmax with lowest-id tie-breaking.
    """
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    alive: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_steps):
        if not alive:
            break
        logp = np.asarray(step_fn([[bos] + seq for _, seq in alive]), dtype=np.float64)
        cands = []
        for (score, seq), row in zip(alive, logp):
            for tok in np.nonzero(np.isfinite(row))[0]:
                cands.append((score + float(row[tok]), seq + [int(tok)]))
        cands.sort(key=lambda c: (-c[0], c[1]))
        alive = []
        for score, seq in cands[:beam_width]:
            (finished if seq[-1] == eos else alive).append((score, seq))
    finished.extend(alive)
    ranked = [(seq, score / max(len(seq), 1)) for score, seq in finished]
    ranked.sort(key=lambda r: (-r[1], r[0]))
    return ranked


@torch.no_grad()
def beam_decode(model: TeaTransformer, src_ids, piam, beam_width: int = 1, max_steps: int | None = None):
    """Ranked ``(ids, score)`` hypotheses for one source sequence."""
    model.eval()
    if max_steps is None:
        max_steps = model.cfg.max_len - 1
    max_steps = min(max_steps, model.cfg.max_len - 1)
    batch = collate([(src_ids, piam if model.cfg.p else None, [BOS])])
    memory = model.encode(batch.src, batch.piam)

    def step(prefixes):
        n = len(prefixes)
        tgt = torch.as_tensor(prefixes, dtype=torch.long)
        logits = model.decode(tgt, memory.expand(n, -1, -1), batch.src.expand(n, -1))[:, -1]
        logp = torch.log_softmax(logits.double(), dim=-1)
        logp[:, PAD] = -math.inf
        logp[:, BOS] = -math.inf
        return logp.numpy()

    return beam_search(step, BOS, EOS, beam_width, max_steps)


# ------------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    """Model config plus named float32 parameter tensors in module order."""

    config: ModelConfig
    tensors: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: TeaTransformer) -> "Checkpoint":
        tensors = {name: p.detach().to(torch.float32).numpy().copy() for name, p in model.named_parameters()}
        return cls(model.cfg, tensors)

    def to_model(self) -> TeaTransformer:
        model = TeaTransformer(self.config)
        expected = [name for name, _ in model.named_parameters()]
        if expected != list(self.tensors):
            raise FormatError("checkpoint tensors do not match the model layout")
        with torch.no_grad():
            for name, p in model.named_parameters():
                arr = self.tensors[name]
                if tuple(arr.shape) != tuple(p.shape):
                    raise FormatError(f"tensor {name} has shape {arr.shape}, expected {tuple(p.shape)}")
                p.copy_(torch.from_numpy(arr))
        return model

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(CHECKPOINT_MAGIC)
        cfg = self.config.to_text().encode("utf-8")
        buf.write(struct.pack("<II", CHECKPOINT_FORMAT, len(cfg)))
        buf.write(cfg)
        buf.write(struct.pack("<I", len(self.tensors)))
        for name, arr in self.tensors.items():
            raw = name.encode("utf-8")
            buf.write(struct.pack("<H", len(raw)))
            buf.write(raw)
            buf.write(struct.pack("<B", arr.ndim))
            buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        return buf.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Checkpoint":
        view = memoryview(data)
        if bytes(view[:4]) != CHECKPOINT_MAGIC:
            raise FormatError("not a TEA checkpoint (bad magic)")
        off = 4
        try:
            version, cfg_len = struct.unpack_from("<II", view, off)
            off += 8
            if version != CHECKPOINT_FORMAT:
                raise FormatError(f"unsupported checkpoint format {version}")
            config = ModelConfig.from_text(bytes(view[off : off + cfg_len]).decode("utf-8"))
            off += cfg_len
            (count,) = struct.unpack_from("<I", view, off)
            off += 4
            tensors = {}
            for _ in range(count):
                (name_len,) = struct.unpack_from("<H", view, off)
                off += 2
                name = bytes(view[off : off + name_len]).decode("utf-8")
                off += name_len
                (ndim,) = struct.unpack_from("<B", view, off)
                off += 1
                shape = struct.unpack_from(f"<{ndim}I", view, off)
                off += 4 * ndim
                n = int(np.prod(shape)) if ndim else 1
                arr = np.frombuffer(view, dtype="<f4", count=n, offset=off).reshape(shape)
                off += 4 * n
                tensors[name] = arr.astype(np.float32)
        except (struct.error, ValueError) as exc:
            raise FormatError("truncated or malformed checkpoint") from exc
        if off != len(data):
            raise FormatError("trailing bytes after checkpoint tensors")
        return cls(config, tensors)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        return cls.from_bytes(Path(path).read_bytes())
