"""Unsupervised word alignment: IBM-2-style EM with a diagonal position prior.

Each target word aligns to one source position or to NULL. The position
prior weights source position i (of n) for target position j (of m) by
exp(-lambda * |(j+1)/m - (i+1)/n|), renormalized, with a fixed null mass
p0. Only the translation table is re-estimated; lambda and p0 stay fixed.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

NULL_WORD = "<null>"
OOV_FLOOR = 1e-9


class PharaohParseError(ValueError):
    """Malformed alignment token; message carries the 1-based line number."""


@dataclass
class AlignmentLink:
    src: int
    tgt: int

    def as_tuple(self) -> tuple[int, int]:
        return (self.src, self.tgt)


@dataclass
class TranslationTable:
    """Lexical translation probabilities theta(tgt|src) plus prior knobs."""

    theta: dict[str, dict[str, float]]
    p0: float
    lam: float
    log_likelihoods: list[float] = field(default_factory=list)

    def prob(self, src_word: str, tgt_word: str) -> float:
        return self.theta.get(src_word, {}).get(tgt_word, OOV_FLOOR)

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for s in sorted(self.theta):
                for t, p in sorted(self.theta[s].items()):
                    fh.write(f"{s}\t{t}\t{p!r}\n")

    @classmethod
    def load(cls, path: str | Path, p0: float, lam: float) -> "TranslationTable":
        theta: dict[str, dict[str, float]] = defaultdict(dict)
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                s, t, p = line.rstrip("\n").split("\t")
                theta[s][t] = float(p)
        return cls(theta=dict(theta), p0=p0, lam=lam)


def _position_priors(n_src: int, n_tgt: int, lam: float, p0: float) -> list[list[float]]:
    """priors[j][i] over source positions for each target position j; no null."""
    priors = []
    for j in range(n_tgt):
        weights = [math.exp(-lam * abs((j + 1) / n_tgt - (i + 1) / n_src)) for i in range(n_src)]
        z = sum(weights)
        priors.append([(1.0 - p0) * w / z for w in weights])
    return priors


def em_train(sentences, iters: int, p0: float = 0.08, lam: float = 4.0) -> TranslationTable:
    """Run EM over (src_words, tgt_words) sequences.

    Sentences may be SentencePair objects or plain (src_words, tgt_words)
    tuples; they are materialized once. The incomplete-data log-likelihood
    is recorded per iteration and is non-decreasing by the EM guarantee.
    """
    if iters < 1:
        raise ValueError(f"iters must be >= 1, got {iters}")
    data: list[tuple[list[str], list[str]]] = []
    for s in sentences:
        if hasattr(s, "src_words"):
            data.append((s.src_words, s.tgt_words))
        else:
            data.append((list(s[0]), list(s[1])))
    if not data:
        raise ValueError("cannot align an empty corpus")

    cooc: dict[str, set[str]] = defaultdict(set)
    for src_words, tgt_words in data:
        for t in tgt_words:
            cooc[NULL_WORD].add(t)
            for s in src_words:
                cooc[s].add(t)
    theta = {s: {t: 1.0 / len(ts) for t in ts} for s, ts in cooc.items()}

    table = TranslationTable(theta=theta, p0=p0, lam=lam)
    for _ in range(iters):
        counts: dict[str, dict[str, float]] = defaultdict(lambda: defaultdict(float))
        ll = 0.0
        for src_words, tgt_words in data:
            priors = _position_priors(len(src_words), len(tgt_words), lam, p0)
            for j, t in enumerate(tgt_words):
                post = [priors[j][i] * theta[s].get(t, 0.0) for i, s in enumerate(src_words)]
                null_mass = p0 * theta[NULL_WORD].get(t, 0.0)
                z = sum(post) + null_mass
                if z <= 0.0:
                    continue
                ll += math.log(z)
                for i, s in enumerate(src_words):
                    counts[s][t] += post[i] / z
                counts[NULL_WORD][t] += null_mass / z
        for s, tc in counts.items():
            total = sum(tc.values())
            if total > 0.0:
                theta[s] = {t: c / total for t, c in tc.items()}
        table.log_likelihoods.append(ll)
    table.theta = theta
    return table


def viterbi(src_words: list[str], tgt_words: list[str], table: TranslationTable) -> list[AlignmentLink]:
    """Best link per target word, or none when NULL wins.

    Source positions are scanned in increasing order and must strictly
    beat the incumbent, so ties resolve to the smaller source index and
    NULL wins exact ties against positions.
    """
    links: list[AlignmentLink] = []
    priors = _position_priors(len(src_words), len(tgt_words), table.lam, table.p0)
    for j, t in enumerate(tgt_words):
        best_score = table.p0 * table.theta.get(NULL_WORD, {}).get(t, OOV_FLOOR)
        best_i = -1
        for i, s in enumerate(src_words):
            score = priors[j][i] * table.prob(s, t)
            if score > best_score:
                best_score, best_i = score, i
        if best_i >= 0:
            links.append(AlignmentLink(src=best_i, tgt=j))
    return links


def filter_one_to_one(links: list[AlignmentLink]) -> list[AlignmentLink]:
    """Keep only links whose source AND target indices are unique."""
    src_count: dict[int, int] = defaultdict(int)
    tgt_count: dict[int, int] = defaultdict(int)
    for l in links:
        src_count[l.src] += 1
        tgt_count[l.tgt] += 1
    return [l for l in links if src_count[l.src] == 1 and tgt_count[l.tgt] == 1]


def align_corpus(sentences, table: TranslationTable) -> list[list[AlignmentLink]]:
    """Viterbi + 1-to-1 filter for every sentence pair."""
    out = []
    for s in sentences:
        src_words = s.src_words if hasattr(s, "src_words") else list(s[0])
        tgt_words = s.tgt_words if hasattr(s, "tgt_words") else list(s[1])
        out.append(filter_one_to_one(viterbi(src_words, tgt_words, table)))
    return out


# ------------------------------------------------------------ pharaoh format


def write_pharaoh(links_per_sentence: list[list[AlignmentLink]], path: str | Path) -> None:
    """One line per sentence of space-separated ``i-j`` tokens."""
    with open(path, "w", encoding="utf-8") as fh:
        for links in links_per_sentence:
            fh.write(" ".join(f"{l.src}-{l.tgt}" for l in links) + "\n")


def read_pharaoh(path: str | Path) -> list[list[AlignmentLink]]:
    out: list[list[AlignmentLink]] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            links = []
            for tok in line.split():
                i, sep, j = tok.partition("-")
                if not sep or not i.isdigit() or not j.isdigit():
                    raise PharaohParseError(f"malformed alignment token {tok!r} on line {lineno}")
                links.append(AlignmentLink(src=int(i), tgt=int(j)))
            out.append(links)
    return out
