"""Bilingual lexicon induction and lexicon-based word pair extraction.

The lexicon scores candidate translations by the product of smoothed
conditionals p(tgt|src) * p(src|tgt), estimated from sentence-level
co-occurrence counts. Extraction takes top-1 hits, enforces per-coordinate
uniqueness, and merges consecutive hits into phrases.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class WordPair:
    """Aligned word ranges, half-open on both sides: src [a,b) <-> tgt [c,d)."""

    src_start: int
    src_end: int
    tgt_start: int
    tgt_end: int

    def __post_init__(self):
        if not (self.src_start < self.src_end and self.tgt_start < self.tgt_end):
            raise ValueError(f"empty range in {self}")

    @property
    def src_range(self) -> tuple[int, int]:
        return (self.src_start, self.src_end)

    @property
    def tgt_range(self) -> tuple[int, int]:
        return (self.tgt_start, self.tgt_end)


def single(i: int, j: int) -> WordPair:
    return WordPair(i, i + 1, j, j + 1)


@dataclass
class Lexicon:
    """Top-k ranked translations per source word."""

    entries: dict[str, list[tuple[str, float]]]
    alpha: float

    def top1(self, src_word: str) -> tuple[str, float] | None:
        ranked = self.entries.get(src_word)
        return ranked[0] if ranked else None

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for s in sorted(self.entries):
                for t, score in self.entries[s]:
                    fh.write(f"{s}\t{t}\t{score!r}\n")

    @classmethod
    def load(cls, path: str | Path, alpha: float = 0.1) -> "Lexicon":
        entries: dict[str, list[tuple[str, float]]] = defaultdict(list)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                s, t, score = line.rstrip("\n").split("\t")
                entries[s].append((t, float(score)))
        return cls(entries=dict(entries), alpha=alpha)


def build_lexicon(sentences, k: int, alpha: float = 0.1) -> Lexicon:
    """Estimate a top-k lexicon from parallel sentences.

    Counts are presence-based per sentence pair. Ranked lists sort by
    score descending, ties broken lexicographically on the target word.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    cooc: dict[str, Counter[str]] = defaultdict(Counter)
    src_total: Counter[str] = Counter()
    tgt_total: Counter[str] = Counter()
    src_vocab: set[str] = set()
    tgt_vocab: set[str] = set()
    n_pairs = 0
    for sent in sentences:
        src_words = sent.src_words if hasattr(sent, "src_words") else list(sent[0])
        tgt_words = sent.tgt_words if hasattr(sent, "tgt_words") else list(sent[1])
        n_pairs += 1
        ss, ts = set(src_words), set(tgt_words)
        src_vocab |= ss
        tgt_vocab |= ts
        for s in ss:
            for t in ts:
                cooc[s][t] += 1
                src_total[s] += 1
                tgt_total[t] += 1
    if n_pairs == 0:
        raise ValueError("cannot build a lexicon from an empty corpus")

    v_src, v_tgt = len(src_vocab), len(tgt_vocab)
    entries: dict[str, list[tuple[str, float]]] = {}
    for s, tc in cooc.items():
        scored = []
        for t, c in tc.items():
            p_t_given_s = (c + alpha) / (src_total[s] + alpha * v_tgt)
            p_s_given_t = (c + alpha) / (tgt_total[t] + alpha * v_src)
            scored.append((t, p_t_given_s * p_s_given_t))
        scored.sort(key=lambda ts: (-ts[1], ts[0]))
        entries[s] = scored[:k]
    return Lexicon(entries=entries, alpha=alpha)


def extract_pairs(src_words: list[str], tgt_words: list[str], lex: Lexicon,
                  threshold: float = 0.0) -> list[WordPair]:
    """Single-word pairs where the target word is the source word's top-1.

    Conflicts are resolved greedily: highest score first, then smaller
    source index, then smaller target index. Each coordinate is used at
    most once.
    """
    candidates: list[tuple[float, int, int]] = []
    for i, s in enumerate(src_words):
        hit = lex.top1(s)
        if hit is None:
            continue
        t_word, score = hit
        if score < threshold:
            continue
        for j, t in enumerate(tgt_words):
            if t == t_word:
                candidates.append((score, i, j))
    candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
    used_src: set[int] = set()
    used_tgt: set[int] = set()
    picked: list[WordPair] = []
    for score, i, j in candidates:
        if i in used_src or j in used_tgt:
            continue
        used_src.add(i)
        used_tgt.add(j)
        picked.append(single(i, j))
    picked.sort(key=lambda p: (p.src_start, p.tgt_start))
    return picked


def merge_phrases(pairs: list[WordPair]) -> list[WordPair]:
    """Merge maximal runs consecutive in BOTH coordinates into phrases.

    Input pairs must be single-word and unique per coordinate; output
    covers the same words with no two pairs still consecutive on both
    sides (maximality), so the operation is idempotent.
    """
    if not pairs:
        return []
    ordered = sorted(pairs, key=lambda p: p.src_start)
    merged: list[WordPair] = []
    cur = ordered[0]
    for nxt in ordered[1:]:
        if nxt.src_start == cur.src_end and nxt.tgt_start == cur.tgt_end:
            cur = WordPair(cur.src_start, nxt.src_end, cur.tgt_start, nxt.tgt_end)
        else:
            merged.append(cur)
            cur = nxt
    merged.append(cur)
    return merged


def pairs_per_sentence(total_pairs: int, n_sentences: int) -> float:
    """Average number of extracted pairs per sentence pair."""
    if n_sentences <= 0:
        raise ValueError("need at least one sentence pair")
    return total_pairs / n_sentences


# ------------------------------------------------- ranged alignment file IO


class RangedPairParseError(ValueError):
    """Malformed ranged-pair token; message carries the 1-based line number."""


def write_word_pairs(pairs_per_line: list[list[WordPair]], path: str | Path) -> None:
    """Extended alignment format: ``a:b-c:d`` tokens, half-open word ranges."""
    with open(path, "w", encoding="utf-8") as fh:
        for pairs in pairs_per_line:
            fh.write(" ".join(f"{p.src_start}:{p.src_end}-{p.tgt_start}:{p.tgt_end}" for p in pairs) + "\n")


def read_word_pairs(path: str | Path) -> list[list[WordPair]]:
    """Read ranged pairs; plain pharaoh ``i-j`` tokens parse as 1-word ranges."""
    out: list[list[WordPair]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            pairs = []
            for tok in line.split():
                try:
                    left, sep, right = tok.partition("-")
                    if not sep:
                        raise ValueError
                    if ":" in left:
                        a, b = (int(x) for x in left.split(":"))
                        c, d = (int(x) for x in right.split(":"))
                    else:
                        i, j = int(left), int(right)
                        a, b, c, d = i, i + 1, j, j + 1
                    pairs.append(WordPair(a, b, c, d))
                except ValueError:
                    raise RangedPairParseError(f"malformed word-pair token {tok!r} on line {lineno}")
            out.append(pairs)
    return out
