"""Text pipeline and the Markov-chain stego corpus generator.

Cover sentences are sampled from an order-n Markov chain trained on a plain
text corpus. Stego sentences walk the same chain but choose each word by
secret bits: the context's candidates are ranked by (count desc, word asc),
the top ``2**bpw`` of them form the bins, and ``bpw`` bits select one. Because
the ranking is deterministic, a receiver holding the same chain recovers the
bits with :func:`extract_bits`.
"""
from __future__ import annotations

import json
import logging
import re
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError
from .rng import RngState

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
COVER, STEGO = 0, 1

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def tokenize(text: str) -> list:
    """Lowercase, split on whitespace, detach each punctuation character."""
    return _TOKEN_RE.findall(text.lower())


def sample_corpus_path() -> Path:
    """Path of the small cover corpus shipped with the package."""
    return Path(str(resources.files("stegalyze") / "resources" / "cover_sample.txt"))


# -- vocabulary and encoding -----------------------------------------------


class Vocabulary:
    def __init__(self, words):
        words = list(words)
        if words[:2] != [PAD_TOKEN, UNK_TOKEN]:
            raise ConfigError("vocabulary must start with the PAD and UNK tokens")
        if len(set(words)) != len(words):
            raise ConfigError("vocabulary contains duplicate words")
        self.words = words
        self.index = {w: i for i, w in enumerate(words)}

    def __len__(self):
        return len(self.words)

    def __iter__(self):
        return iter(self.words)

    def __contains__(self, word):
        return word in self.index

    def id(self, word):
        return self.index.get(word, UNK)

    def word(self, i):
        return self.words[i]

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.words == other.words


def build_vocab(corpus, max_size=None, min_count=1) -> Vocabulary:
    """Frequency-ranked vocabulary; ties broken alphabetically so corpus order is irrelevant."""
    counts = Counter()
    n_sentences = 0
    for tokens in corpus:
        counts.update(tokens)
        n_sentences += 1
    if n_sentences == 0:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    ranked = sorted((w for w, c in counts.items() if c >= min_count), key=lambda w: (-counts[w], w))
    ranked = [w for w in ranked if w not in (PAD_TOKEN, UNK_TOKEN)]
    if max_size is not None:
        if max_size < 2:
            raise ConfigError("max_size must leave room for PAD and UNK")
        ranked = ranked[: max_size - 2]
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + ranked)


@dataclass
class Encoded:
    ids: np.ndarray
    length: int
    empty: bool = False


def encode(vocab: Vocabulary, tokens, T: int, min_len: int = 1) -> Encoded:
    """Map tokens to ids, truncate to ``T`` and right-pad with PAD.

    Sequences shorter than ``min_len`` are PAD-extended and reported with length
    ``min_len`` so every convolution bank has at least one full window.
    """
    if T < min_len:
        raise ConfigError(f"padded length {T} below minimum usable length {min_len}")
    ids = np.full(T, PAD, dtype=np.int64)
    kept = [vocab.id(t) for t in list(tokens)[:T]]
    ids[: len(kept)] = kept
    if not kept:
        log.warning("empty token list encoded as %d PAD tokens", min_len)
    return Encoded(ids, max(len(kept), min_len), empty=not kept)


def decode(vocab: Vocabulary, ids, length=None) -> list:
    ids = list(ids)[:length]
    return [vocab.word(i) for i in ids if i != PAD]


@dataclass
class EncodedBatch:
    ids: np.ndarray  # [B, T] int64
    lengths: np.ndarray  # [B]
    labels: np.ndarray  # [B] with 0 = cover, 1 = stego

    def __len__(self):
        return len(self.labels)

    def select(self, idx) -> "EncodedBatch":
        return EncodedBatch(self.ids[idx], self.lengths[idx], self.labels[idx])


def encode_batch(vocab, sentences, labels, T, min_len) -> EncodedBatch:
    encoded = [encode(vocab, s, T, min_len) for s in sentences]
    ids = np.stack([e.ids for e in encoded]) if encoded else np.zeros((0, T), dtype=np.int64)
    lengths = np.array([e.length for e in encoded], dtype=np.int64)
    return EncodedBatch(ids, lengths, np.asarray(labels, dtype=np.int64))


# -- Markov chain ----------------------------------------------------------


class MarkovModel:
    """Order-n word chain: context tuple -> next-word counts."""

    def __init__(self, order, transitions, starts):
        self.order = order
        self.transitions = transitions
        self.starts = starts
        self._ranked = {}
        self._start_list = sorted(starts.items(), key=lambda kv: (-kv[1], kv[0]))
        self._start_cum = np.cumsum([c for _, c in self._start_list])

    def ranked(self, context):
        """Candidates of ``context`` as ``(words, cumulative counts)``, ranked by (count desc, word asc)."""
        entry = self._ranked.get(context)
        if entry is None:
            counts = self.transitions.get(context)
            if not counts:
                return None
            items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
            entry = ([w for w, _ in items], np.cumsum([c for _, c in items]))
            self._ranked[context] = entry
        return entry

    def sample_start(self, rng):
        i = int(np.searchsorted(self._start_cum, rng.random() * self._start_cum[-1], side="right"))
        return self._start_list[min(i, len(self._start_list) - 1)][0]

    def candidate_sizes(self):
        return np.array([len(c) for c in self.transitions.values()])


def markov_train(corpus, order: int = 2) -> MarkovModel:
    if order < 1:
        raise ConfigError(f"Markov order must be at least 1, got {order}")
    transitions = {}
    starts = Counter()
    for tokens in corpus:
        tokens = list(tokens)
        if len(tokens) < order + 1:
            continue
        starts[tuple(tokens[:order])] += 1
        for j in range(order, len(tokens)):
            ctx = tuple(tokens[j - order : j])
            transitions.setdefault(ctx, Counter())[tokens[j]] += 1
    if not transitions:
        raise ConfigError(f"corpus has no sentence with at least {order + 1} tokens")
    return MarkovModel(order, {c: dict(v) for c, v in transitions.items()}, dict(starts))


def _walk(model, len_range, rng, choose, max_retries):
    lo, hi = len_range
    tokens = []
    for _ in range(max_retries + 1):
        target = int(rng.integers(lo, hi + 1))
        tokens = list(model.sample_start(rng))
        state = choose.restart()
        while len(tokens) < target:
            entry = model.ranked(tuple(tokens[-model.order :]))
            if entry is None:
                break
            tokens.append(choose(entry, state))
        if len(tokens) >= lo:
            break
    return tokens, state


class _Proportional:
    def __init__(self, rng):
        self.rng = rng

    def restart(self):
        return None

    def __call__(self, entry, state):
        words, cum = entry
        i = int(np.searchsorted(cum, self.rng.random() * cum[-1], side="right"))
        return words[min(i, len(words) - 1)]


class _BinSelect:
    def __init__(self, bpw, bits):
        self.bpw = bpw
        self.bins = 1 << bpw
        self.bits = np.asarray(bits, dtype=np.uint8)

    def restart(self):
        return {"pos": 0}

    def __call__(self, entry, state):
        words, _ = entry
        if len(words) < self.bins:
            return words[0]
        pos = state["pos"]
        chunk = self.bits[pos : pos + self.bpw]
        if len(chunk) < self.bpw:
            raise DataError(f"secret bit stream exhausted after {pos} bits")
        state["pos"] = pos + self.bpw
        return words[bits_to_int(chunk)]


def bits_to_int(bits) -> int:
    v = 0
    for b in bits:
        v = (v << 1) | int(b)
    return v


def int_to_bits(value: int, width: int) -> list:
    return [(value >> (width - 1 - j)) & 1 for j in range(width)]


def generate_cover(model: MarkovModel, len_range, rng: np.random.Generator, max_retries: int = 20) -> list:
    """Sample a sentence proportionally to chain counts.

    A target length is drawn uniformly from ``len_range`` (inclusive); the walk
    stops there or at a context with no successor. Walks shorter than the lower
    bound are resampled up to ``max_retries`` times.
    """
    tokens, _ = _walk(model, len_range, rng, _Proportional(rng), max_retries)
    return tokens


def generate_stego(model: MarkovModel, bpw: int, secret_bits, len_range, rng, max_retries: int = 20):
    """Generate a sentence carrying secret bits; returns ``(tokens, bits_embedded)``.

    ``rng`` only drives the target length and start context (in the same order
    as :func:`generate_cover`); every later word is fixed by the bits. Retries
    restart from the first secret bit.
    """
    if not 1 <= bpw <= 5:
        raise ConfigError(f"bpw must lie in 1..5, got {bpw}")
    tokens, state = _walk(model, len_range, rng, _BinSelect(bpw, secret_bits), max_retries)
    return tokens, state["pos"]


def extract_bits(model: MarkovModel, bpw: int, tokens) -> list:
    """Recover the embedded bits from a stego sentence by replaying bin selection."""
    bins = 1 << bpw
    tokens = list(tokens)
    bits = []
    for j in range(model.order, len(tokens)):
        entry = model.ranked(tuple(tokens[j - model.order : j]))
        if entry is None or len(entry[0]) < bins:
            continue
        try:
            idx = entry[0].index(tokens[j], 0, bins)
        except ValueError:
            raise DataError(f"word {tokens[j]!r} at position {j} is not in the top {bins} bins") from None
        bits.extend(int_to_bits(idx, bpw))
    return bits


# -- corpus construction ---------------------------------------------------


@dataclass
class StegoCorpusSpec:
    cover_path: str
    bpw: int = 3
    per_class: int = 2000
    len_range: tuple = (10, 30)
    seed: int = 0
    order: int = 2

    def __post_init__(self):
        self.len_range = tuple(int(v) for v in self.len_range)
        if not 1 <= int(self.bpw) <= 5:
            raise ConfigError(f"bpw must lie in 1..5, got {self.bpw}")
        if self.per_class < 1:
            raise ConfigError(f"per_class must be positive, got {self.per_class}")
        lo, hi = self.len_range
        if not 1 <= lo <= hi:
            raise ConfigError(f"invalid sentence length range {self.len_range}")
        if lo < self.order:
            raise ConfigError(f"minimum sentence length {lo} is below the Markov order {self.order}")


SPLITS = (("train", 0.7), ("val", 0.1), ("test", 0.2))


def split_counts(n):
    """Per-class split sizes summing to ``n`` (70/10/20, remainder to train)."""
    val = int(round(n * 0.1))
    test = int(round(n * 0.2))
    return {"train": n - val - test, "val": val, "test": test}


def read_cover_corpus(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read cover corpus {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"cover corpus {path} is not UTF-8") from exc
    return [tokenize(line) for line in text.splitlines() if line.strip()]


def generate_corpus(model, spec: StegoCorpusSpec, threads: int = 1):
    """Sentences and per-sentence embedded bit counts for both classes.

    Each sentence draws from its own substream, so the output does not depend
    on ``threads``.
    """
    rng = RngState(spec.seed)
    n = spec.per_class
    max_bits = spec.len_range[1] * spec.bpw

    def cover(i):
        return generate_cover(model, spec.len_range, rng.stream("cover", i))

    def stego(i):
        bits = rng.stream("bits", i).integers(0, 2, size=max_bits, dtype=np.uint8)
        return generate_stego(model, spec.bpw, bits, spec.len_range, rng.stream("stego", i))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            covers = list(pool.map(cover, range(n)))
            stegos = list(pool.map(stego, range(n)))
    else:
        covers = [cover(i) for i in range(n)]
        stegos = [stego(i) for i in range(n)]
    return covers, stegos


def make_dataset(spec: StegoCorpusSpec, out_dir, threads: int = 1) -> dict:
    """Generate a balanced cover/stego corpus and write train/val/test splits.

    Files are ``label<TAB>text`` lines (UTF-8) plus ``meta.json``. Each class is
    shuffled and split 70/10/20 separately, so every split is exactly balanced.
    """
    corpus = read_cover_corpus(spec.cover_path)
    model = markov_train(corpus, spec.order)
    covers, stegos = generate_corpus(model, spec, threads)

    rng = RngState(spec.seed)
    counts = split_counts(spec.per_class)
    cover_perm = rng.stream("split", COVER).permutation(spec.per_class)
    stego_perm = rng.stream("split", STEGO).permutation(spec.per_class)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    start = 0
    for j, (name, _) in enumerate(SPLITS):
        stop = start + counts[name]
        rows = [(COVER, covers[i]) for i in cover_perm[start:stop]]
        rows += [(STEGO, stegos[i][0]) for i in stego_perm[start:stop]]
        order = rng.stream("split-order", j).permutation(len(rows))
        paths[name] = out_dir / f"{name}.tsv"
        write_dataset(paths[name], [rows[i] for i in order])
        start = stop

    bits = np.array([b for _, b in stegos])
    words = np.array([max(len(t) - model.order, 1) for t, _ in stegos])
    meta = {
        "spec": asdict(spec),
        "seed": spec.seed,
        "splits": {name: 2 * counts[name] for name, _ in SPLITS},
        "mean_bits_per_word": float(bits.sum() / words.sum()),
        "markov_contexts": len(model.transitions),
    }
    meta["spec"]["len_range"] = list(spec.len_range)
    paths["meta"] = out_dir / "meta.json"
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def write_dataset(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for label, tokens in rows:
            fh.write(f"{int(label)}\t{' '.join(tokens)}\n")


def read_dataset(path):
    """``[(label, tokens)]`` from a ``label<TAB>text`` file."""
    rows = []
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line:
                    continue
                label, sep, text = line.partition("\t")
                if not sep or label not in ("0", "1"):
                    raise DataError(f"{path}:{lineno}: expected 'label<TAB>text' with label 0 or 1")
                rows.append((int(label), tokenize(text)))
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"dataset {path} is not UTF-8") from exc
    return rows
