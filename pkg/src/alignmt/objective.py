"""Contrastive training objectives over in-batch aligned word pairs.

The word-level loss is a bidirectional InfoNCE: every aligned pair is a
positive, every other pair in the batch is a negative (across sentences
and language pairs, duplicates kept). Similarity is the cosine of the
projection-head outputs, temperature-scaled, evaluated with log-sum-exp
stability. The combined batch loss rescales the contrastive term by
n_tokens / (2 * n_pairs) so it stays commensurate with the NMT term.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import Batch, SentencePair
from .model import TranslationModel


@dataclass
class LossBreakdown:
    """Per-batch loss components and the bookkeeping that scales them."""

    l_nmt: float
    l_align: float
    n_pairs: int
    n_tokens: int
    batch_size: int
    weight: float
    temperature: float
    l_total: float
    align_active: bool

    def as_dict(self) -> dict:
        return {
            "l_nmt": self.l_nmt,
            "l_align": self.l_align,
            "n_pairs": self.n_pairs,
            "n_tokens": self.n_tokens,
            "batch_size": self.batch_size,
            "weight": self.weight,
            "temperature": self.temperature,
            "l_total": self.l_total,
            "align_active": self.align_active,
        }


def _bidirectional_info_nce(src_reps: Tensor, tgt_reps: Tensor, temperature: float) -> Tensor:
    """-sum_k [log softmax_m sim(s_k,t_m)/T at k + log softmax_m sim(s_m,t_k)/T at k]."""
    n = src_reps.value.shape[0]
    sims = ad.matmul(ad.l2_normalize(src_reps), ad.transpose(ad.l2_normalize(tgt_reps)))
    logits = ad.scale(sims, 1.0 / temperature)
    eye = np.eye(n)
    row_terms = ad.sum_(ad.mul(ad.log_softmax(logits, axis=1), ad.tensor(eye)))
    col_terms = ad.sum_(ad.mul(ad.log_softmax(logits, axis=0), ad.tensor(eye)))
    return ad.scale(ad.add(row_terms, col_terms), -1.0)


def word_contrastive_loss(src_reps: Tensor, tgt_reps: Tensor, temperature: float) -> Tensor:
    """Word-level contrastive loss over N projected pair representations.

    Inputs are (N, d') stacks, order-aligned: row k of both sides is the
    k-th aligned pair. N = 0 yields a constant zero (no gradient); the
    caller flags the batch as contributing no contrastive signal.
    """
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if src_reps.value.shape != tgt_reps.value.shape:
        raise ad.ShapeError(f"rep stacks disagree: {src_reps.value.shape} vs {tgt_reps.value.shape}")
    if src_reps.value.shape[0] == 0:
        return ad.tensor(0.0)
    return _bidirectional_info_nce(src_reps, tgt_reps, temperature)


def sentence_contrastive_loss(src_embs: Tensor, tgt_embs: Tensor, temperature: float) -> Tensor:
    """Sentence-level baseline: same InfoNCE with parallel sentences as positives."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if src_embs.value.shape[0] == 0:
        return ad.tensor(0.0)
    return _bidirectional_info_nce(src_embs, tgt_embs, temperature)


def combine(l_nmt: float, l_align: float, batch_size: int, n_pairs: int, n_tokens: int,
            weight: float, temperature: float = 0.2) -> LossBreakdown:
    """Total batch loss: (1/B) * (L_nmt + w * (N_T / 2N) * L_align)."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if n_pairs < 0:
        raise ValueError(f"n_pairs must be >= 0, got {n_pairs}")
    if n_pairs > 0:
        total = (l_nmt + weight * (n_tokens / (2.0 * n_pairs)) * l_align) / batch_size
        active = True
    else:
        total = l_nmt / batch_size
        active = False
    return LossBreakdown(l_nmt=l_nmt, l_align=l_align, n_pairs=n_pairs, n_tokens=n_tokens,
                         batch_size=batch_size, weight=weight, temperature=temperature,
                         l_total=total, align_active=active)


def combine_tensor(l_nmt: Tensor, l_align: Tensor | None, batch_size: int, n_pairs: int,
                   n_tokens: int, weight: float) -> Tensor:
    """Differentiable version of the combining rule, for the training graph."""
    if l_align is None or n_pairs == 0 or weight == 0.0:
        return ad.scale(l_nmt, 1.0 / batch_size)
    scaled = ad.scale(l_align, weight * n_tokens / (2.0 * n_pairs))
    return ad.scale(ad.add(l_nmt, scaled), 1.0 / batch_size)


def word_range_to_span(spans: list[tuple[int, int]], word_range: tuple[int, int],
                       where: str = "") -> tuple[int, int]:
    """Convert a half-open word range into its subword span via the span map."""
    a, b = word_range
    if not (0 <= a < b <= len(spans)):
        raise IndexError(f"word range {word_range} out of bounds for {len(spans)} words {where}")
    return (spans[a][0], spans[b - 1][1])


def gather_reps(batch: Batch, src_states: list[Tensor], tgt_states: list[Tensor],
                model: TranslationModel) -> tuple[Tensor, Tensor]:
    """Pooled, projected representations for every alignment entry in a batch.

    ``src_states[i]`` / ``tgt_states[i]`` are the encoder states of batch
    sentence i's source and target side. Returns two (N, d') stacks,
    order-aligned with ``batch.alignments``.
    """
    src_pooled: list[Tensor] = []
    tgt_pooled: list[Tensor] = []
    for sent_idx, src_range, tgt_range in batch.alignments:
        pair = batch.pairs[sent_idx]
        where = f"(sentence {sent_idx}, pair {src_range}-{tgt_range})"
        src_span = word_range_to_span(pair.src_spans, src_range, where)
        tgt_span = word_range_to_span(pair.tgt_spans, tgt_range, where)
        src_pooled.append(model.pool_span(src_states[sent_idx], src_span))
        tgt_pooled.append(model.pool_span(tgt_states[sent_idx], tgt_span))
    src_stack = ad.stack_rows(src_pooled)
    tgt_stack = ad.stack_rows(tgt_pooled)
    return model.project_rows(src_stack), model.project_rows(tgt_stack)


def encode_pair_sides(model: TranslationModel, pair: SentencePair, tag_id: int,
                      need_target: bool) -> tuple[Tensor, Tensor | None]:
    """Encoder states for the source side and, when needed, the target side.

    Both passes carry the pair's target-language tag (the target side is
    fed to the encoder as a source in its own language).
    """
    src_states = model.encode(pair.src_subwords, tag_id)
    tgt_states = model.encode(pair.tgt_subwords, tag_id) if need_target else None
    return src_states, tgt_states
