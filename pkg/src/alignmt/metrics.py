"""Evaluation: corpus BLEU, paired bootstrap, retrieval probes, correlation.

All operations are pure and read-only over model snapshots. Retrieval
embeds sentences with the mean-pooled encoder output (no projection head)
and retrieves by cosine; ties break toward the lowest candidate index.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .corpus import SentencePair
from .model import TranslationModel

BLEU_ORDER = 4
BLEU_EPS = 1e-9


class EvaluationError(ValueError):
    """Inputs unusable for the requested metric (empty corpus, zero variance)."""


# ----------------------------------------------------------------------- BLEU


@dataclass
class BleuReport:
    score: float
    precisions: list[float]
    brevity_penalty: float
    hyp_length: int
    ref_length: int

    def as_dict(self) -> dict:
        return {
            "bleu": self.score,
            "precisions": self.precisions,
            "brevity_penalty": self.brevity_penalty,
            "hyp_length": self.hyp_length,
            "ref_length": self.ref_length,
        }


def _tokens(sentence) -> list[str]:
    return sentence.split() if isinstance(sentence, str) else list(sentence)


def _ngrams(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(hypotheses, references) -> BleuReport:
    """Corpus-level case-sensitive BLEU with add-epsilon zero smoothing.

    Geometric mean of clipped 1..4-gram precisions times the brevity
    penalty; only zero precisions receive the 1e-9 floor.
    """
    hyps = [_tokens(h) for h in hypotheses]
    refs = [_tokens(r) for r in references]
    if not hyps or len(hyps) != len(refs):
        raise EvaluationError(f"need equal nonzero counts, got {len(hyps)} hypotheses / {len(refs)} references")
    correct = [0] * BLEU_ORDER
    total = [0] * BLEU_ORDER
    hyp_len = ref_len = 0
    for h, r in zip(hyps, refs):
        hyp_len += len(h)
        ref_len += len(r)
        for n in range(1, BLEU_ORDER + 1):
            hn = _ngrams(h, n)
            rn = _ngrams(r, n)
            total[n - 1] += max(len(h) - n + 1, 0)
            correct[n - 1] += sum(min(c, rn[g]) for g, c in hn.items())
    precisions = []
    for n in range(BLEU_ORDER):
        p = correct[n] / total[n] if total[n] > 0 else 0.0
        precisions.append(p if p > 0.0 else BLEU_EPS)
    if hyp_len == 0:
        bp = 0.0
    elif hyp_len < ref_len:
        bp = math.exp(1.0 - ref_len / hyp_len)
    else:
        bp = 1.0
    score = 100.0 * bp * math.exp(sum(math.log(p) for p in precisions) / BLEU_ORDER)
    return BleuReport(score=score, precisions=precisions, brevity_penalty=bp,
                      hyp_length=hyp_len, ref_length=ref_len)


def bootstrap_significance(hyp_a, hyp_b, refs, resamples: int = 1000, seed: int = 0) -> float:
    """Paired bootstrap p-value for the BLEU difference of two systems.

    Resamples sentence indices with replacement and reports the two-sided
    p = min(1, 2*min(frac(A<=B), frac(A>=B))). Identical systems give the
    degenerate no-difference outcome p = 1.
    """
    if resamples < 100:
        raise EvaluationError(f"resamples must be >= 100, got {resamples}")
    a = [_tokens(h) for h in hyp_a]
    b = [_tokens(h) for h in hyp_b]
    r = [_tokens(x) for x in refs]
    if not (len(a) == len(b) == len(r)) or not a:
        raise EvaluationError("hypothesis/reference triples must be aligned and nonempty")
    rng = np.random.default_rng(seed)
    n = len(a)
    a_le_b = a_ge_b = 0
    for _ in range(resamples):
        idx = rng.integers(0, n, size=n)
        sa = bleu([a[i] for i in idx], [r[i] for i in idx]).score
        sb = bleu([b[i] for i in idx], [r[i] for i in idx]).score
        if sa <= sb:
            a_le_b += 1
        if sa >= sb:
            a_ge_b += 1
    return min(1.0, 2.0 * min(a_le_b, a_ge_b) / resamples)


# ------------------------------------------------------------------ retrieval


@dataclass
class RetrievalReport:
    granularity: str
    scope: str
    per_pair: dict[str, dict[str, float]] = field(default_factory=dict)

    def add(self, pair_name: str, forward: float, backward: float) -> None:
        self.per_pair[pair_name] = {
            "forward": forward,
            "backward": backward,
            "average": (forward + backward) / 2.0,
        }

    def average(self) -> float:
        if not self.per_pair:
            return 0.0
        return sum(v["average"] for v in self.per_pair.values()) / len(self.per_pair)

    def as_dict(self) -> dict:
        return {"granularity": self.granularity, "scope": self.scope,
                "per_pair": self.per_pair, "average": self.average()}


def _p_at_1(queries: np.ndarray, candidates: np.ndarray) -> float:
    """Fraction of rows whose nearest candidate by cosine is the same row."""
    qn = queries / np.linalg.norm(queries, axis=1, keepdims=True)
    cn = candidates / np.linalg.norm(candidates, axis=1, keepdims=True)
    nearest = np.argmax(qn @ cn.T, axis=1)
    return float(np.mean(nearest == np.arange(len(queries))))


def sentence_embeddings(model: TranslationModel, pairs: list[SentencePair],
                        tag_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Mean-pooled encoder outputs for both sides of each pair (no projection)."""
    model.eval_mode()
    src = np.stack([model.encode(p.src_subwords, tag_id).value.mean(axis=0) for p in pairs])
    tgt = np.stack([model.encode(p.tgt_subwords, tag_id).value.mean(axis=0) for p in pairs])
    return src, tgt


def _token_batches(pairs: list[SentencePair], batch_tokens: int) -> list[list[int]]:
    batches: list[list[int]] = []
    cur: list[int] = []
    total = 0
    for i, p in enumerate(pairs):
        if cur and total + p.token_count > batch_tokens:
            batches.append(cur)
            cur, total = [], 0
        cur.append(i)
        total += p.token_count
    if cur:
        batches.append(cur)
    return batches


def sentence_retrieval_p1(model: TranslationModel, pairs: list[SentencePair], tag_id: int,
                          scope: str = "full", batch_tokens: int = 1024) -> tuple[float, float]:
    """P@1 of cross-lingual sentence retrieval, (forward, backward).

    ``full`` searches the whole candidate list per direction; ``in_batch``
    averages per-batch precision over token-budgeted groups.
    """
    if len(pairs) < 2:
        raise EvaluationError("sentence retrieval needs at least 2 pairs")
    src, tgt = sentence_embeddings(model, pairs, tag_id)
    if scope == "full":
        return _p_at_1(src, tgt), _p_at_1(tgt, src)
    if scope != "in_batch":
        raise EvaluationError(f"unknown retrieval scope {scope!r}")
    fwd, bwd = [], []
    for batch in _token_batches(pairs, batch_tokens):
        fwd.append(_p_at_1(src[batch], tgt[batch]))
        bwd.append(_p_at_1(tgt[batch], src[batch]))
    return float(np.mean(fwd)), float(np.mean(bwd))


def word_retrieval_p1(model: TranslationModel, pairs: list[SentencePair], tag_id: int,
                      batch_tokens: int = 512) -> tuple[float, float]:
    """In-batch word retrieval P@1 over each pair's aligned word ranges.

    Word embeddings are the mean-pooled encoder outputs on the aligned
    subword positions. Pairs are grouped into token-budgeted batches and
    per-batch precision is averaged, per direction.
    """
    from .objective import word_range_to_span

    model.eval_mode()
    fwd_scores, bwd_scores = [], []
    for batch in _token_batches(pairs, batch_tokens):
        src_vecs, tgt_vecs = [], []
        for i in batch:
            p = pairs[i]
            if not p.word_pairs:
                continue
            src_states = model.encode(p.src_subwords, tag_id).value
            tgt_states = model.encode(p.tgt_subwords, tag_id).value
            for src_range, tgt_range in p.word_pairs:
                a, b = word_range_to_span(p.src_spans, src_range)
                c, d = word_range_to_span(p.tgt_spans, tgt_range)
                src_vecs.append(src_states[a:b].mean(axis=0))
                tgt_vecs.append(tgt_states[c:d].mean(axis=0))
        if not src_vecs:
            continue
        s = np.stack(src_vecs)
        t = np.stack(tgt_vecs)
        fwd_scores.append(_p_at_1(s, t))
        bwd_scores.append(_p_at_1(t, s))
    if not fwd_scores:
        raise EvaluationError("no aligned word pairs available for word retrieval")
    return float(np.mean(fwd_scores)), float(np.mean(bwd_scores))


# ---------------------------------------------------------------- correlation


def pearson(xs, ys) -> float:
    """Product-moment correlation; raises on degenerate variance."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise EvaluationError(f"need two equal-length series of >= 2 points, got {x.shape} and {y.shape}")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = math.sqrt(float(xc @ xc))
    sy = math.sqrt(float(yc @ yc))
    if sx == 0.0 or sy == 0.0:
        raise EvaluationError("pearson undefined: a series has zero variance")
    return float(xc @ yc) / (sx * sy)


def spearman(xs, ys) -> float:
    """Rank correlation via pearson over average ranks (ties averaged)."""
    def ranks(v):
        v = np.asarray(v, dtype=np.float64)
        order = np.argsort(v, kind="stable")
        r = np.empty(len(v))
        i = 0
        while i < len(v):
            j = i
            while j + 1 < len(v) and v[order[j + 1]] == v[order[i]]:
                j += 1
            r[order[i : j + 1]] = (i + j) / 2.0 + 1.0
            i = j + 1
        return r

    return pearson(ranks(xs), ranks(ys))
