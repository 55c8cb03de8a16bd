"""Subword-augmented skip-gram embeddings: training, composition, I/O."""

import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .wordpiece import SubwordVocab

SERIALIZATION_DECIMALS = 5


@dataclass(frozen=True)
class EmbedTrainConfig:
    """Hyperparameters for skip-gram training with negative sampling.

    char_ngram_min/max of 0 disable character n-grams entirely.
    """

    dim: int = 300
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.05
    min_count: int = 5
    char_ngram_min: int = 3
    char_ngram_max: int = 6
    ngram_buckets: int = 2_000_000
    seed: int = 1

    def __post_init__(self):
        if self.dim <= 0:
            raise ValueError(f"dim must be positive, got {self.dim}")
        for name in ("window", "negatives", "epochs", "min_count", "ngram_buckets"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.char_ngram_min < 0 or self.char_ngram_max < 0:
            raise ValueError("char n-gram bounds must be non-negative (0 disables)")
        if self.ngrams_enabled and self.char_ngram_min > self.char_ngram_max:
            raise ValueError("char_ngram_min must not exceed char_ngram_max")

    @property
    def ngrams_enabled(self) -> bool:
        return self.char_ngram_min > 0 and self.char_ngram_max > 0

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "window": self.window,
            "negatives": self.negatives,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "min_count": self.min_count,
            "char_ngram_min": self.char_ngram_min,
            "char_ngram_max": self.char_ngram_max,
            "ngram_buckets": self.ngram_buckets,
            "seed": self.seed,
        }


class EmbeddingTable:
    """Token string -> d-dimensional vector store."""

    def __init__(self, dim: int, entries=None, metadata=None):
        if dim <= 0:
            raise ValueError(f"dim must be positive, got {dim}")
        self.dim = dim
        self.entries: dict[str, np.ndarray] = {}
        self.metadata: dict = dict(metadata or {})
        for token, vec in (entries or {}).items():
            self.add(token, vec)

    def add(self, token: str, vector) -> None:
        vec = np.asarray(vector, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise ValueError(
                f"vector for {token!r} has shape {vec.shape}, expected ({self.dim},)"
            )
        if not np.all(np.isfinite(vec)):
            raise ValueError(f"vector for {token!r} contains NaN/Inf")
        if token in self.entries:
            raise ValueError(f"duplicate token {token!r}")
        self.entries[token] = vec

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def vector(self, token: str) -> np.ndarray:
        return self.entries[token]

    def scaled(self, factor: float) -> "EmbeddingTable":
        """New table with every vector multiplied by a positive scalar."""
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        scaled = {t: v * np.float32(factor) for t, v in self.entries.items()}
        return EmbeddingTable(self.dim, scaled, dict(self.metadata))


@dataclass
class Composition:
    """Mean of piece vectors, with the pieces that had no table entry."""

    vector: np.ndarray
    missing: tuple[str, ...] = ()

    @property
    def flagged(self) -> bool:
        return bool(self.missing)


def compose(table: EmbeddingTable, tokens) -> Composition:
    """Arithmetic mean of the token vectors, in float64.

    Tokens absent from the table contribute a zero vector and are reported in
    the result instead of raising; candidate strings may contain rare pieces.
    """
    tokens = list(tokens)
    if not tokens:
        raise ValueError("cannot compose an empty token sequence")
    total = np.zeros(table.dim, dtype=np.float64)
    missing = []
    for tok in tokens:
        vec = table.entries.get(tok)
        if vec is None:
            missing.append(tok)
        else:
            total += vec.astype(np.float64)
    return Composition(total / len(tokens), tuple(missing))


def _fnv1a(data: bytes) -> int:
    h = 2166136261
    for byte in data:
        h ^= byte
        h = (h * 16777619) & 0xFFFFFFFF
    return h


def char_ngram_buckets(token: str, nmin: int, nmax: int, buckets: int) -> list[int]:
    """Hashed bucket ids for the character n-grams of a boundary-wrapped token.

    The token string is used as-is, continuation marker included.
    """
    wrapped = "<" + token + ">"
    ids = []
    for n in range(nmin, nmax + 1):
        if n > len(wrapped):
            break
        for i in range(len(wrapped) - n + 1):
            ids.append(_fnv1a(wrapped[i:i + n].encode("utf-8")) % buckets)
    return ids


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def train_static_embeddings(tokenized_corpus, vocab: SubwordVocab,
                            cfg: EmbedTrainConfig, workers: int = 1) -> EmbeddingTable:
    """Train skip-gram embeddings with negative sampling over token-id sequences.

    Tokens occurring at least cfg.min_count times receive vectors. Each
    training step averages the input rows of the center token (its own row
    plus its hashed character n-gram rows) and updates against one positive
    context and cfg.negatives samples drawn from the unigram^0.75
    distribution. The stored vector for a token is the mean of its word row
    and its n-gram rows.

    With workers=1 the run is deterministic for a fixed seed; workers > 1
    updates shared rows without synchronization, so results vary run to run.
    """
    sentences = [list(s) for s in tokenized_corpus]
    counts: Counter[int] = Counter()
    for sent in sentences:
        counts.update(sent)
    if not counts:
        raise ValueError("tokenized corpus is empty")
    if max(counts) >= vocab.size or min(counts) < 0:
        raise ValueError("token id out of range for the given vocabulary")

    kept_ids = sorted(tid for tid, c in counts.items() if c >= cfg.min_count)
    if not kept_ids:
        raise ValueError(f"no token reaches min_count={cfg.min_count}")
    row_of = {tid: row for row, tid in enumerate(kept_ids)}
    n_tokens = len(kept_ids)

    # Input rows: one per kept token, then n-gram buckets.
    if cfg.ngrams_enabled:
        n_rows = n_tokens + cfg.ngram_buckets
        subword_rows = []
        for row, tid in enumerate(kept_ids):
            grams = char_ngram_buckets(
                vocab.tokens[tid], cfg.char_ngram_min, cfg.char_ngram_max,
                cfg.ngram_buckets,
            )
            subword_rows.append(np.array([row] + [n_tokens + g for g in grams]))
    else:
        n_rows = n_tokens
        subword_rows = [np.array([row]) for row in range(n_tokens)]

    rng = np.random.default_rng(cfg.seed)
    bound = 1.0 / cfg.dim
    vec_in = rng.uniform(-bound, bound, size=(n_rows, cfg.dim)).astype(np.float32)
    vec_out = np.zeros((n_tokens, cfg.dim), dtype=np.float32)

    freq = np.array([counts[tid] for tid in kept_ids], dtype=np.float64)
    noise = freq ** 0.75
    noise_cdf = np.cumsum(noise / noise.sum())

    filtered = [[row_of[t] for t in sent if t in row_of] for sent in sentences]
    filtered = [sent for sent in filtered if sent]
    total_tokens = sum(len(s) for s in filtered) * cfg.epochs
    if total_tokens == 0:
        raise ValueError("corpus has no trainable tokens")

    def run_span(sents, rng, progress_start):
        processed = progress_start
        for sent in sents:
            for pos, center in enumerate(sent):
                alpha = cfg.learning_rate * max(
                    1e-4, 1.0 - processed / total_tokens
                )
                processed += 1
                b = int(rng.integers(1, cfg.window + 1))
                rows = subword_rows[center]
                hidden = vec_in[rows].mean(axis=0, dtype=np.float32)
                grad_h = np.zeros(cfg.dim, dtype=np.float32)
                for ctx_pos in range(max(0, pos - b), min(len(sent), pos + b + 1)):
                    if ctx_pos == pos:
                        continue
                    target = sent[ctx_pos]
                    for label, out_row in _targets(target, rng):
                        score = _sigmoid(float(np.dot(hidden, vec_out[out_row])))
                        g = np.float32(alpha * (label - score))
                        grad_h += g * vec_out[out_row]
                        vec_out[out_row] += g * hidden
                vec_in[rows] += grad_h / np.float32(len(rows))
        return processed

    def _draw(rng):
        # Clamp: float cumsum can top out a hair below 1.0.
        return min(int(np.searchsorted(noise_cdf, rng.random())), n_tokens - 1)

    def _targets(positive, rng):
        yield 1.0, positive
        for _ in range(cfg.negatives):
            neg = _draw(rng)
            while neg == positive and n_tokens > 1:
                neg = _draw(rng)
            yield 0.0, neg

    if workers <= 1:
        processed = 0
        for _ in range(cfg.epochs):
            processed = run_span(filtered, rng, processed)
    else:
        chunk = max(1, math.ceil(len(filtered) / workers))
        spans = [filtered[i:i + chunk] for i in range(0, len(filtered), chunk)]
        for epoch in range(cfg.epochs):
            done = 0
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for i, span in enumerate(spans):
                    pool.submit(
                        run_span, span,
                        np.random.default_rng(cfg.seed + 7919 * (epoch + 1) + i),
                        epoch * (total_tokens // cfg.epochs) + done,
                    )
                    done += sum(len(s) for s in span)

    entries = {}
    for row, tid in enumerate(kept_ids):
        rows = subword_rows[row]
        entries[vocab.tokens[tid]] = vec_in[rows].mean(axis=0, dtype=np.float64)
    return EmbeddingTable(
        cfg.dim, entries,
        metadata={"source": "trained", "config": cfg.to_dict()},
    )


def save_table(table: EmbeddingTable, path) -> None:
    """Write the text format: header "count dim", then "token v1 .. vd" rows."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{len(table)} {table.dim}\n")
        for token, vec in table.entries.items():
            values = " ".join(f"{v:.{SERIALIZATION_DECIMALS}f}" for v in vec)
            f.write(f"{token} {values}\n")


def load_table(path, source: str = "loaded") -> EmbeddingTable:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}: malformed header {header!r}")
        try:
            count, dim = int(header[0]), int(header[1])
        except ValueError:
            raise ValueError(f"{path}: malformed header {header!r}") from None
        if dim <= 0 or count < 0:
            raise ValueError(f"{path}: invalid header values {count} {dim}")
        table = EmbeddingTable(dim, metadata={"source": source})
        for lineno, line in enumerate(f, start=2):
            parts = line.rstrip("\n").split(" ")
            if len(parts) != dim + 1:
                raise ValueError(
                    f"{path}:{lineno}: expected {dim} values, got {len(parts) - 1}"
                )
            try:
                vec = np.array([float(x) for x in parts[1:]], dtype=np.float32)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric vector value") from None
            table.add(parts[0], vec)
        if len(table) != count:
            raise ValueError(
                f"{path}: header declares {count} rows, found {len(table)}"
            )
    return table


def import_external_table(path, expected_vocab: SubwordVocab | None = None) -> EmbeddingTable:
    """Load a table produced by an external tool, e.g. per-layer PLM averages."""
    table = load_table(path, source="imported")
    if expected_vocab is not None:
        covered = sum(1 for t in expected_vocab.tokens if t in table.entries)
        table.metadata["vocab_coverage"] = covered / expected_vocab.size
    return table


def save_table_metadata(table: EmbeddingTable, path) -> None:
    meta = dict(table.metadata)
    meta["dim"] = table.dim
    meta["count"] = len(table)
    Path(path).write_text(
        json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
