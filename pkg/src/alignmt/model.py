"""Transformer encoder-decoder for many-to-many translation.

Pre-LN blocks, sinusoidal positions, one embedding table shared by the
encoder, the decoder, and the tied output projection. The contrastive
projection head is a bias-free two-layer MLP applied to span-pooled
encoder states.

Language tagging: the pair's target-language tag is prepended to whichever
side enters the encoder, so NMT source passes, auxiliary target-side
passes, and retrieval embeddings all follow one rule.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, ShapeError

CHECKPOINT_MAGIC = b"ALNMT001"
NEG_INF = -1e9


@dataclass
class ModelConfig:
    vocab_size: int
    layers_enc: int = 2
    layers_dec: int = 2
    d: int = 64
    heads: int = 4
    d_ff: int = 256
    d_proj: int = 16
    dropout_nmt: float = 0.3
    dropout_contrastive: float = 0.2
    label_smoothing: float = 0.1
    max_positions: int = 256

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"hidden size {self.d} not divisible by {self.heads} heads")
        if not (0 < self.d_proj < self.d):
            raise ValueError(f"projection size must satisfy 0 < d_proj < d, got {self.d_proj} vs {self.d}")


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(d)[None, :]
    angle = pos / (10000 ** (2 * (i // 2) / d))
    pe = np.zeros((max_len, d))
    pe[:, 0::2] = np.sin(angle[:, 0::2])
    pe[:, 1::2] = np.cos(angle[:, 1::2])
    return pe


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


class TranslationModel:
    """Parameter container plus per-sentence forward passes."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.training = False
        self.dropout_rate = 0.0
        self._dropout_rng = np.random.default_rng(seed + 1)
        self._pos = sinusoidal_positions(config.max_positions, config.d)
        self._causal_cache: dict[int, np.ndarray] = {}
        self.params: dict[str, Tensor] = {}
        self._init_params(np.random.default_rng(seed))

    # ------------------------------------------------------------ parameters

    def _add(self, name: str, value: np.ndarray) -> None:
        self.params[name] = ad.param(value)

    def _init_attn(self, rng, prefix: str, d: int) -> None:
        for w in ("wq", "wk", "wv", "wo"):
            self._add(f"{prefix}.{w}", _xavier(rng, d, d))
            self._add(f"{prefix}.{w[1]}b", np.zeros(d))

    def _init_ln(self, prefix: str, d: int) -> None:
        self._add(f"{prefix}.g", np.ones(d))
        self._add(f"{prefix}.b", np.zeros(d))

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.config
        self._add("emb", rng.normal(0.0, c.d ** -0.5, size=(c.vocab_size, c.d)))
        for l in range(c.layers_enc):
            p = f"enc.{l}"
            self._init_ln(f"{p}.ln1", c.d)
            self._init_attn(rng, f"{p}.self", c.d)
            self._init_ln(f"{p}.ln2", c.d)
            self._add(f"{p}.ff.w1", _xavier(rng, c.d, c.d_ff))
            self._add(f"{p}.ff.b1", np.zeros(c.d_ff))
            self._add(f"{p}.ff.w2", _xavier(rng, c.d_ff, c.d))
            self._add(f"{p}.ff.b2", np.zeros(c.d))
        self._init_ln("enc.final", c.d)
        for l in range(c.layers_dec):
            p = f"dec.{l}"
            self._init_ln(f"{p}.ln1", c.d)
            self._init_attn(rng, f"{p}.self", c.d)
            self._init_ln(f"{p}.ln2", c.d)
            self._init_attn(rng, f"{p}.cross", c.d)
            self._init_ln(f"{p}.ln3", c.d)
            self._add(f"{p}.ff.w1", _xavier(rng, c.d, c.d_ff))
            self._add(f"{p}.ff.b1", np.zeros(c.d_ff))
            self._add(f"{p}.ff.w2", _xavier(rng, c.d_ff, c.d))
            self._add(f"{p}.ff.b2", np.zeros(c.d))
        self._init_ln("dec.final", c.d)
        self._add("head.w1", _xavier(rng, c.d, c.d))
        self._add("head.w2", _xavier(rng, c.d, c.d_proj))

    def train_mode(self, dropout_rate: float) -> None:
        self.training = True
        self.dropout_rate = dropout_rate

    def eval_mode(self) -> None:
        self.training = False
        self.dropout_rate = 0.0

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # --------------------------------------------------------------- forward

    def _dropout(self, x: Tensor) -> Tensor:
        if not self.training or self.dropout_rate <= 0.0:
            return x
        keep = 1.0 - self.dropout_rate
        mask = (self._dropout_rng.random(x.value.shape) < keep) / keep
        return ad.mul(x, ad.tensor(mask))

    def _ln(self, prefix: str, x: Tensor) -> Tensor:
        h = ad.layer_norm(x)
        return ad.add(ad.mul(h, self.params[f"{prefix}.g"]), self.params[f"{prefix}.b"])

    def _attention(self, prefix: str, x: Tensor, mem: Tensor, mask: np.ndarray | None) -> Tensor:
        c = self.config
        dh = c.d // c.heads
        p = self.params
        q = ad.add(ad.matmul(x, p[f"{prefix}.wq"]), p[f"{prefix}.qb"])
        k = ad.add(ad.matmul(mem, p[f"{prefix}.wk"]), p[f"{prefix}.kb"])
        v = ad.add(ad.matmul(mem, p[f"{prefix}.wv"]), p[f"{prefix}.vb"])
        heads = []
        for h in range(c.heads):
            lo, hi = h * dh, (h + 1) * dh
            qh = ad.slice_(q, lo, hi, axis=1)
            kh = ad.slice_(k, lo, hi, axis=1)
            vh = ad.slice_(v, lo, hi, axis=1)
            scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / math.sqrt(dh))
            if mask is not None:
                scores = ad.add(scores, ad.tensor(mask))
            heads.append(ad.matmul(ad.softmax(scores, axis=-1), vh))
        ctx = ad.concat(heads, axis=1)
        return ad.add(ad.matmul(ctx, p[f"{prefix}.wo"]), p[f"{prefix}.ob"])

    def _ffn(self, prefix: str, x: Tensor) -> Tensor:
        p = self.params
        h = ad.relu(ad.add(ad.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        return ad.add(ad.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])

    def _embed(self, ids: list[int]) -> Tensor:
        c = self.config
        if len(ids) > c.max_positions:
            raise ShapeError(f"sequence of {len(ids)} tokens exceeds max positions {c.max_positions}")
        x = ad.scale(ad.embedding_lookup(self.params["emb"], ids), math.sqrt(c.d))
        x = ad.add(x, ad.tensor(self._pos[: len(ids)]))
        return self._dropout(x)

    def _causal_mask(self, t: int) -> np.ndarray:
        if t not in self._causal_cache:
            i = np.arange(t)
            self._causal_cache[t] = np.where(i[:, None] < i[None, :], NEG_INF, 0.0)
        return self._causal_cache[t]

    def encode(self, subword_ids: list[int], tag_id: int) -> Tensor:
        """Contextual states for each subword position; the tag row is dropped."""
        x = self._embed([tag_id] + list(subword_ids))
        for l in range(self.config.layers_enc):
            p = f"enc.{l}"
            h = self._ln(f"{p}.ln1", x)
            x = ad.add(x, self._dropout(self._attention(f"{p}.self", h, h, None)))
            x = ad.add(x, self._dropout(self._ffn(f"{p}.ff", self._ln(f"{p}.ln2", x))))
        x = self._ln("enc.final", x)
        return ad.rows(x, 1, len(subword_ids) + 1)

    def _decoder_states(self, dec_in: list[int], memory: Tensor) -> Tensor:
        x = self._embed(dec_in)
        mask = self._causal_mask(len(dec_in))
        for l in range(self.config.layers_dec):
            p = f"dec.{l}"
            h = self._ln(f"{p}.ln1", x)
            x = ad.add(x, self._dropout(self._attention(f"{p}.self", h, h, mask)))
            x = ad.add(x, self._dropout(self._attention(f"{p}.cross", self._ln(f"{p}.ln2", x), memory, None)))
            x = ad.add(x, self._dropout(self._ffn(f"{p}.ff", self._ln(f"{p}.ln3", x))))
        return self._ln("dec.final", x)

    def logits(self, dec_states: Tensor) -> Tensor:
        return ad.matmul(dec_states, ad.transpose(self.params["emb"]))

    def decode_loss(self, tgt_ids: list[int], memory: Tensor, bos_id: int, eos_id: int,
                    smoothing: float | None = None) -> Tensor:
        """Teacher-forced smoothed cross-entropy, summed over target tokens."""
        dec_in = [bos_id] + list(tgt_ids)
        targets = list(tgt_ids) + [eos_id]
        states = self._decoder_states(dec_in, memory)
        s = self.config.label_smoothing if smoothing is None else smoothing
        return ad.cross_entropy_label_smoothed(self.logits(states), targets, s)

    def pool_span(self, states: Tensor, span: tuple[int, int]) -> Tensor:
        """Mean of the state rows in the half-open row range ``span``."""
        a, b = span
        if not (0 <= a < b <= states.value.shape[0]):
            raise ShapeError(f"span {span} out of bounds for {states.value.shape[0]} rows")
        return ad.mean(ad.rows(states, a, b), axis=0)

    def project(self, pooled: Tensor) -> Tensor:
        """Contrastive head: W2 . relu(W1 . x), no biases."""
        return ad.matmul(ad.relu(ad.matmul(pooled, self.params["head.w1"])), self.params["head.w2"])

    def project_rows(self, pooled_rows: Tensor) -> Tensor:
        """Row-wise projection head for a (n, d) stack of pooled vectors."""
        return ad.matmul(ad.relu(ad.matmul(pooled_rows, self.params["head.w1"])), self.params["head.w2"])

    def greedy_decode(self, src_subword_ids: list[int], tag_id: int, bos_id: int, eos_id: int,
                      max_len: int = 64) -> list[int]:
        """Argmax decoding until EOS or max_len; runs in eval mode, no tape."""
        was_training, rate = self.training, self.dropout_rate
        self.eval_mode()
        try:
            memory = self.encode(src_subword_ids, tag_id)
            out: list[int] = []
            for _ in range(max_len):
                states = self._decoder_states([bos_id] + out, memory)
                last = self.logits(states).value[-1]
                nxt = int(np.argmax(last))
                if nxt == eos_id:
                    break
                out.append(nxt)
            return out
        finally:
            self.training, self.dropout_rate = was_training, rate

    # ----------------------------------------------------------- persistence

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        if set(arrays) != set(self.params):
            missing = set(self.params) ^ set(arrays)
            raise ValueError(f"checkpoint parameter names do not match the model: {sorted(missing)}")
        for k, v in arrays.items():
            if v.shape != self.params[k].value.shape:
                raise ValueError(f"shape mismatch for {k}: {v.shape} vs {self.params[k].value.shape}")
            self.params[k].value = np.asarray(v, dtype=np.float64)

    def save_checkpoint(self, path: str | Path, meta: dict | None = None) -> None:
        save_checkpoint(path, self.state_arrays(), config=self.config, meta=meta)


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray],
                    config: ModelConfig, meta: dict | None = None) -> None:
    """Flat little-endian float64 payload prefixed by a JSON header."""
    names = sorted(arrays)
    header = {"params": [], "config": asdict(config), "meta": meta or {}}
    offset = 0
    blobs = []
    for name in names:
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        header["params"].append({"name": name, "shape": list(a.shape), "offset": offset})
        blobs.append(a.tobytes())
        offset += len(blobs[-1])
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header_bytes)))
        fh.write(header_bytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], ModelConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path} is not a model checkpoint (bad magic {magic!r})")
        (hlen,) = struct.unpack("<Q", fh.read(8))
        header = json.loads(fh.read(hlen).decode("utf-8"))
        payload = fh.read()
    arrays = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        arrays[entry["name"]] = np.frombuffer(payload, dtype="<f8", count=count, offset=start).reshape(shape).copy()
    config = ModelConfig(**header["config"])
    return arrays, config, header.get("meta", {})


def model_from_checkpoint(path: str | Path) -> tuple["TranslationModel", dict]:
    arrays, config, meta = load_checkpoint(path)
    model = TranslationModel(config, seed=0)
    model.load_arrays(arrays)
    return model, meta
