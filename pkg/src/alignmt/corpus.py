"""Parallel corpus ingestion: BPE subwords, span maps, token-budgeted batches.

Word tokenization is whitespace splitting (NFC-normalized). Subword
segmentation is learned BPE over characters with a trailing word-boundary
marker, so encode/decode round-trips any training sentence exactly.
"""

from __future__ import annotations

import logging
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

BOUNDARY = "</w>"

PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"


class ConfigurationError(ValueError):
    """Bad build inputs: empty corpus, inconsistent files, malformed flags."""


class EmptySentenceError(ValueError):
    """A bitext line is empty on one side; callers skip it with a warning."""


def word_tokenize(line: str) -> list[str]:
    return unicodedata.normalize("NFC", line).split()


def lang_tag(lang: str) -> str:
    return f"<2{lang}>"


# ------------------------------------------------------------------ vocab/BPE


@dataclass
class Vocabulary:
    """Subword inventory with dense ids; specials first, then language tags."""

    token_to_id: dict[str, int]
    merges: list[tuple[str, str]]
    languages: list[str]

    def __post_init__(self):
        self.id_to_token = {i: t for t, i in self.token_to_id.items()}
        self._merge_rank = {pair: r for r, pair in enumerate(self.merges)}

    def __len__(self) -> int:
        return len(self.token_to_id)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def unk_id(self) -> int:
        return self.token_to_id[UNK]

    def tag_id(self, lang: str) -> int:
        try:
            return self.token_to_id[lang_tag(lang)]
        except KeyError:
            raise ConfigurationError(f"language {lang!r} has no tag in the vocabulary (known: {self.languages})")

    def encode_word(self, word: str) -> list[int]:
        """Segment one word into subword ids; unknown symbols become UNK."""
        symbols = list(word) + [BOUNDARY]
        while len(symbols) > 1:
            best_rank, best_i = None, -1
            for i in range(len(symbols) - 1):
                r = self._merge_rank.get((symbols[i], symbols[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_rank, best_i = r, i
            if best_rank is None:
                break
            symbols[best_i : best_i + 2] = [symbols[best_i] + symbols[best_i + 1]]
        unk = self.unk_id
        return [self.token_to_id.get(s, unk) for s in symbols]

    def decode(self, ids: list[int]) -> list[str]:
        """Subword ids back to words (specials dropped, markers stripped)."""
        specials = {self.pad_id, self.bos_id, self.eos_id}
        text = "".join(
            self.id_to_token[i]
            for i in ids
            if i not in specials and not self.id_to_token[i].startswith("<2")
        )
        return [w for w in text.split(BOUNDARY) if w]

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok, idx in sorted(self.token_to_id.items(), key=lambda kv: kv[1]):
                fh.write(f"{tok}\t{idx}\n")
            for a, b in self.merges:
                fh.write(f"#merge\t{a}\t{b}\n")
            fh.write(f"#languages\t{' '.join(self.languages)}\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        token_to_id: dict[str, int] = {}
        merges: list[tuple[str, str]] = []
        languages: list[str] = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if parts[0] == "#merge":
                    merges.append((parts[1], parts[2]))
                elif parts[0] == "#languages":
                    languages = parts[1].split() if len(parts) > 1 else []
                else:
                    token_to_id[parts[0]] = int(parts[1])
        return cls(token_to_id=token_to_id, merges=merges, languages=languages)


def train_bpe(token_stream, merges: int, languages: list[str]) -> Vocabulary:
    """Learn a BPE vocabulary from an iterable of word tokens.

    Merge selection is deterministic: highest pair frequency first, ties
    broken by the lexicographically smallest pair.
    """
    if merges < 0:
        raise ConfigurationError(f"merges must be >= 0, got {merges}")
    word_freq = Counter(token_stream)
    if not word_freq:
        raise ConfigurationError("cannot train BPE on an empty corpus")

    words = {w: tuple(w) + (BOUNDARY,) for w in word_freq}
    merge_list: list[tuple[str, str]] = []
    for _ in range(merges):
        pair_freq: Counter[tuple[str, str]] = Counter()
        for w, syms in words.items():
            f = word_freq[w]
            for i in range(len(syms) - 1):
                pair_freq[(syms[i], syms[i + 1])] += f
        if not pair_freq:
            break
        best = min(pair_freq.items(), key=lambda kv: (-kv[1], kv[0]))[0]
        merge_list.append(best)
        merged = best[0] + best[1]
        for w, syms in words.items():
            out = []
            i = 0
            while i < len(syms):
                if i + 1 < len(syms) and (syms[i], syms[i + 1]) == best:
                    out.append(merged)
                    i += 2
                else:
                    out.append(syms[i])
                    i += 1
            words[w] = tuple(out)

    inventory = sorted({s for syms in words.values() for s in syms})
    token_to_id: dict[str, int] = {}
    for sp in (PAD, BOS, EOS, UNK):
        token_to_id[sp] = len(token_to_id)
    for lang in sorted(set(languages)):
        token_to_id[lang_tag(lang)] = len(token_to_id)
    for sym in inventory:
        token_to_id[sym] = len(token_to_id)
    return Vocabulary(token_to_id=token_to_id, merges=merge_list, languages=sorted(set(languages)))


# -------------------------------------------------------------- sentence pair


@dataclass
class SentencePair:
    """One line of bitext with word and subword layers plus span maps.

    ``src_spans[i] = (a, b)`` means word i occupies subword positions
    [a, b). Spans partition the subword sequence.
    """

    src_lang: str
    tgt_lang: str
    src_words: list[str]
    tgt_words: list[str]
    src_subwords: list[int]
    tgt_subwords: list[int]
    src_spans: list[tuple[int, int]]
    tgt_spans: list[tuple[int, int]]
    word_pairs: list[tuple[tuple[int, int], tuple[int, int]]] = field(default_factory=list)

    @property
    def token_count(self) -> int:
        return len(self.src_subwords) + len(self.tgt_subwords)

    def check_spans(self) -> None:
        for spans, subwords, side in ((self.src_spans, self.src_subwords, "src"),
                                      (self.tgt_spans, self.tgt_subwords, "tgt")):
            pos = 0
            for a, b in spans:
                if a != pos or b <= a:
                    raise ValueError(f"{side} spans do not partition the subword sequence: {spans}")
                pos = b
            if pos != len(subwords):
                raise ValueError(f"{side} spans cover [0,{pos}) but sequence has length {len(subwords)}")


def _segment_side(words: list[str], vocab: Vocabulary) -> tuple[list[int], list[tuple[int, int]]]:
    subwords: list[int] = []
    spans: list[tuple[int, int]] = []
    for w in words:
        ids = vocab.encode_word(w)
        spans.append((len(subwords), len(subwords) + len(ids)))
        subwords.extend(ids)
    return subwords, spans


def segment(src_line: str, tgt_line: str, src_lang: str, tgt_lang: str, vocab: Vocabulary) -> SentencePair:
    """Tokenize and subword-segment one bitext line into a SentencePair."""
    src_words = word_tokenize(src_line)
    tgt_words = word_tokenize(tgt_line)
    if not src_words or not tgt_words:
        raise EmptySentenceError(f"empty side in pair {src_lang}-{tgt_lang}: {src_line!r} / {tgt_line!r}")
    src_sub, src_spans = _segment_side(src_words, vocab)
    tgt_sub, tgt_spans = _segment_side(tgt_words, vocab)
    return SentencePair(src_lang=src_lang, tgt_lang=tgt_lang,
                        src_words=src_words, tgt_words=tgt_words,
                        src_subwords=src_sub, tgt_subwords=tgt_sub,
                        src_spans=src_spans, tgt_spans=tgt_spans)


# ------------------------------------------------------------------ bitext IO


def bitext_paths(prefix: str) -> tuple[Path, Path, str, str]:
    """Resolve ``dir/name.src-tgt`` into the two files ``dir/name.src``/``.tgt``."""
    p = Path(prefix)
    name, dot, pair = p.name.rpartition(".")
    if not dot or "-" not in pair:
        raise ConfigurationError(f"bitext prefix must look like path/name.src-tgt, got {prefix!r}")
    src_lang, _, tgt_lang = pair.partition("-")
    if not name or not src_lang or not tgt_lang:
        raise ConfigurationError(f"bitext prefix must look like path/name.src-tgt, got {prefix!r}")
    base = p.parent / name
    return Path(f"{base}.{src_lang}"), Path(f"{base}.{tgt_lang}"), src_lang, tgt_lang


def read_bitext_lines(prefix: str) -> tuple[list[str], list[str], str, str]:
    src_path, tgt_path, src_lang, tgt_lang = bitext_paths(prefix)
    for path in (src_path, tgt_path):
        if not path.exists():
            raise ConfigurationError(f"bitext file not found: {path}")
    src_lines = src_path.read_text(encoding="utf-8").splitlines()
    tgt_lines = tgt_path.read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise ConfigurationError(
            f"bitext sides disagree: {src_path} has {len(src_lines)} lines, {tgt_path} has {len(tgt_lines)}")
    return src_lines, tgt_lines, src_lang, tgt_lang


@dataclass
class LoadReport:
    kept: int = 0
    skipped_empty: int = 0


def load_bitext(prefix: str, vocab: Vocabulary, report: LoadReport | None = None) -> list[SentencePair]:
    """Load and segment a bitext; empty-sided lines are skipped with a warning."""
    src_lines, tgt_lines, src_lang, tgt_lang = read_bitext_lines(prefix)
    pairs: list[SentencePair] = []
    skipped = 0
    for i, (s, t) in enumerate(zip(src_lines, tgt_lines)):
        try:
            pairs.append(segment(s, t, src_lang, tgt_lang, vocab))
        except EmptySentenceError:
            skipped += 1
            log.warning("skipping empty line %d of %s", i + 1, prefix)
    if report is not None:
        report.kept += len(pairs)
        report.skipped_empty += skipped
    return pairs


def word_token_stream(prefixes: list[str]):
    """All word tokens of all sides of the given bitexts, for BPE training."""
    for prefix in prefixes:
        src_lines, tgt_lines, _, _ = read_bitext_lines(prefix)
        for line in src_lines:
            yield from word_tokenize(line)
        for line in tgt_lines:
            yield from word_tokenize(line)


def corpus_languages(prefixes: list[str]) -> list[str]:
    langs = set()
    for prefix in prefixes:
        _, _, s, t = bitext_paths(prefix)
        langs.update((s, t))
    return sorted(langs)


# ------------------------------------------------------------------- batching


@dataclass
class Batch:
    """One training batch: sentence pairs plus their in-batch alignments."""

    pairs: list[SentencePair]
    alignments: list[tuple[int, tuple[int, int], tuple[int, int]]]
    token_count: int

    @property
    def size(self) -> int:
        return len(self.pairs)

    @property
    def n_alignments(self) -> int:
        return len(self.alignments)


def sampling_probabilities(sizes: list[int], temp: float) -> list[float]:
    """Language-pair sampling weights proportional to size**(1/temp)."""
    if temp <= 0:
        raise ConfigurationError(f"sampling temperature must be > 0, got {temp}")
    weights = [s ** (1.0 / temp) for s in sizes]
    z = sum(weights)
    if z == 0:
        raise ConfigurationError("cannot sample from empty language pairs")
    return [w / z for w in weights]


def _bucketed_stream(pairs: list[SentencePair], rng: np.random.Generator, bucket_size: int) -> list[int]:
    """Length-sorted indices, shuffled within buckets, buckets shuffled."""
    order = sorted(range(len(pairs)), key=lambda i: (pairs[i].token_count, i))
    buckets = [order[i : i + bucket_size] for i in range(0, len(order), bucket_size)]
    for b in buckets:
        rng.shuffle(b)
    rng.shuffle(buckets)
    return [i for b in buckets for i in b]


def make_batches(corpus: dict[tuple[str, str], list[SentencePair]], budget: int, temp: float,
                 seed: int, bucket_size: int = 128):
    """Yield an endless deterministic stream of token-budgeted batches.

    Each batch holds sentences of a single language pair chosen with
    probability proportional to pair size**(1/temp). Pairs longer than the
    budget are dropped up front with a counted warning.
    """
    keys = sorted(corpus.keys())
    usable: dict[tuple[str, str], list[SentencePair]] = {}
    dropped = 0
    for k in keys:
        kept = [p for p in corpus[k] if p.token_count <= budget]
        dropped += len(corpus[k]) - len(kept)
        if kept:
            usable[k] = kept
    if dropped:
        log.warning("dropped %d sentence pairs longer than the %d-token budget", dropped, budget)
    keys = [k for k in keys if k in usable]
    if not keys:
        raise ConfigurationError("no sentence pairs fit within the token budget")
    probs = sampling_probabilities([len(usable[k]) for k in keys], temp)

    rng = np.random.default_rng(seed)
    streams = {k: _bucketed_stream(usable[k], rng, bucket_size) for k in keys}
    cursors = {k: 0 for k in keys}

    while True:
        k = keys[rng.choice(len(keys), p=probs)]
        pairs_k = usable[k]
        stream = streams[k]
        chosen: list[SentencePair] = []
        total = 0
        while True:
            if cursors[k] >= len(stream):
                streams[k] = stream = _bucketed_stream(pairs_k, rng, bucket_size)
                cursors[k] = 0
            nxt = pairs_k[stream[cursors[k]]]
            if chosen and total + nxt.token_count > budget:
                break
            chosen.append(nxt)
            total += nxt.token_count
            cursors[k] += 1
        alignments = []
        for si, p in enumerate(chosen):
            for src_range, tgt_range in p.word_pairs:
                alignments.append((si, src_range, tgt_range))
        yield Batch(pairs=chosen, alignments=alignments, token_count=total)
