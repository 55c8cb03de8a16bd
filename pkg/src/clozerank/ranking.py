"""Candidate ranking: static nearest-neighbor, frequency oracle, MLM adapter."""

import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .embeddings import Composition, EmbeddingTable, compose
from .kb import CandidateSet, Dataset, instantiate_query
from .wordpiece import UNK_TOKEN, SubwordVocab, tokenize


@dataclass
class Prediction:
    """Ranked candidates for one triple, scores descending.

    Ties sort by the lexicographically smaller candidate label.
    """

    triple_id: str
    relation_id: str
    ranked: list[tuple[str, float]]
    flags: dict = field(default_factory=dict)

    @property
    def top1(self) -> str:
        return self.ranked[0][0]

    def top_k(self, k: int) -> list[str]:
        return [cand for cand, _ in self.ranked[:k]]


def _rank_items(scores: dict[str, float]) -> list[tuple[str, float]]:
    return sorted(scores.items(), key=lambda item: (-item[1], item[0]))


def _cosine(q: np.ndarray, c: np.ndarray) -> tuple[float, bool]:
    qn = float(np.linalg.norm(q))
    cn = float(np.linalg.norm(c))
    if qn == 0.0 or cn == 0.0:
        # Zero-norm compositions get a fixed floor score instead of NaN.
        return -1.0, True
    return float(np.dot(q, c)) / (qn * cn), False


def _composed(table: EmbeddingTable, vocab: SubwordVocab, text: str) -> tuple[Composition, bool]:
    tokens = vocab.ids_to_tokens(tokenize(vocab, text))
    if not tokens:
        return Composition(np.zeros(table.dim, dtype=np.float64), (text,)), True
    comp = compose(table, tokens)
    return comp, comp.flagged or UNK_TOKEN in tokens


def rank_static(table: EmbeddingTable, vocab: SubwordVocab, dataset: Dataset,
                candidates: dict[str, CandidateSet],
                exclude_subject_match: bool = False) -> list[Prediction]:
    """Rank each relation's candidates by cosine to the composed subject.

    The template plays no part: the only signal is the subject string. With
    exclude_subject_match a candidate identical to the subject is dropped
    from that triple's ranking.
    """
    predictions = []
    for rel in dataset.relation_ids:
        cset = candidates[rel]
        composed_cands = {cand: _composed(table, vocab, cand)[0] for cand in cset}
        for triple in dataset.triples_by_relation[rel]:
            query, query_oov = _composed(table, vocab, triple.subject)
            scores = {}
            zero_norm = False
            for cand in cset:
                if exclude_subject_match and cand == triple.subject:
                    continue
                score, flagged = _cosine(query.vector, composed_cands[cand].vector)
                zero_norm = zero_norm or flagged
                scores[cand] = score
            predictions.append(Prediction(
                triple_id=triple.id,
                relation_id=rel,
                ranked=_rank_items(scores),
                flags={"query_oov": query_oov, "zero_norm": zero_norm},
            ))
    return predictions


def rank_oracle(dataset: Dataset, candidates: dict[str, CandidateSet]) -> list[Prediction]:
    """Per relation, rank candidates by gold-object frequency, most frequent first."""
    predictions = []
    for rel in dataset.relation_ids:
        triples = dataset.triples_by_relation[rel]
        if not triples:
            raise ValueError(f"relation {rel!r} has no triples")
        freq = Counter(t.object for t in triples)
        ranked = _rank_items({c: float(freq.get(c, 0)) for c in candidates[rel]})
        for triple in triples:
            predictions.append(Prediction(
                triple_id=triple.id, relation_id=rel,
                ranked=list(ranked), flags={"query_oov": False},
            ))
    return predictions


def export_mlm_manifest(dataset: Dataset, candidates: dict[str, CandidateSet],
                        scorer_vocab: SubwordVocab, out_path) -> int:
    """Write one JSONL row per (triple, candidate) pair for an external scorer.

    The query carries as many [MASK] tokens as the candidate has pieces under
    the scorer's vocabulary; rows whose candidate is [UNK]-only are flagged so
    the scorer can skip or special-case them. Returns the row count.
    """
    rows = 0
    with open(out_path, "w", encoding="utf-8") as f:
        for rel in dataset.relation_ids:
            spec = dataset.relations[rel]
            for triple in dataset.triples_by_relation[rel]:
                for cand in candidates[rel]:
                    token_ids = tokenize(scorer_vocab, cand)
                    row = {
                        "triple_id": triple.id,
                        "relation_id": rel,
                        "candidate": cand,
                        "query_text": instantiate_query(spec, triple.subject,
                                                        max(1, len(token_ids))),
                        "mask_token_ids": token_ids,
                        "candidate_oov": bool(token_ids) and all(
                            i == scorer_vocab.unk_id for i in token_ids
                        ),
                    }
                    f.write(json.dumps(row, ensure_ascii=False) + "\n")
                    rows += 1
    return rows


@dataclass(frozen=True)
class MlmScoreRecord:
    """Per-mask log probabilities for one (triple, candidate) pair."""

    triple_id: str
    candidate: str
    token_logprobs: tuple[float, ...]

    def __post_init__(self):
        if not self.token_logprobs:
            raise ValueError(
                f"empty token_logprobs for ({self.triple_id!r}, {self.candidate!r})"
            )
        for lp in self.token_logprobs:
            if not math.isfinite(lp) or lp > 0:
                raise ValueError(
                    f"log-prob {lp!r} for ({self.triple_id!r}, {self.candidate!r}) "
                    "must be finite and <= 0"
                )

    @property
    def score(self) -> float:
        return sum(self.token_logprobs) / len(self.token_logprobs)


def read_score_file(path) -> list[MlmScoreRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                records.append(MlmScoreRecord(
                    triple_id=row["triple_id"],
                    candidate=row["candidate"],
                    token_logprobs=tuple(float(x) for x in row["token_logprobs"]),
                ))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed score row: {exc}") from None
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    return records


def rank_mlm(score_path, dataset: Dataset, candidates: dict[str, CandidateSet],
             manifest_path=None) -> list[Prediction]:
    """Turn an external scorer's output into per-triple rankings.

    A candidate's score is the arithmetic mean of its per-mask log
    probabilities. The file must cover every (triple, candidate) pair exactly
    once; row order is irrelevant.
    """
    by_pair: dict[tuple[str, str], MlmScoreRecord] = {}
    for rec in read_score_file(score_path):
        key = (rec.triple_id, rec.candidate)
        if key in by_pair:
            raise ValueError(f"duplicate score row for {key!r}")
        by_pair[key] = rec

    if manifest_path is not None:
        with open(manifest_path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, start=1):
                if not line.strip():
                    continue
                row = json.loads(line)
                key = (row["triple_id"], row["candidate"])
                rec = by_pair.get(key)
                if rec is not None and len(rec.token_logprobs) != len(row["mask_token_ids"]):
                    raise ValueError(
                        f"score length {len(rec.token_logprobs)} for {key!r} does not "
                        f"match manifest mask count {len(row['mask_token_ids'])}"
                    )

    expected = set()
    for rel in dataset.relation_ids:
        for triple in dataset.triples_by_relation[rel]:
            for cand in candidates[rel]:
                expected.add((triple.id, cand))
    missing = sorted(expected - set(by_pair))
    if missing:
        shown = ", ".join(repr(m) for m in missing[:10])
        raise ValueError(f"{len(missing)} (triple, candidate) pairs unscored: {shown}")
    extra = sorted(set(by_pair) - expected)
    if extra:
        shown = ", ".join(repr(e) for e in extra[:10])
        raise ValueError(f"{len(extra)} score rows match no (triple, candidate) pair: {shown}")

    predictions = []
    for rel in dataset.relation_ids:
        for triple in dataset.triples_by_relation[rel]:
            scores = {c: by_pair[(triple.id, c)].score for c in candidates[rel]}
            predictions.append(Prediction(
                triple_id=triple.id, relation_id=rel,
                ranked=_rank_items(scores), flags={"query_oov": False},
            ))
    return predictions


def _stub_logprob(triple_id: str, candidate: str, position: int) -> float:
    digest = hashlib.sha256(
        f"{triple_id}\t{candidate}\t{position}".encode("utf-8")
    ).digest()
    unit = int.from_bytes(digest[:8], "big") / 2 ** 64
    return -0.01 - 7.99 * unit


def write_stub_scores(manifest_path, out_path, lookup=None) -> int:
    """Generate a valid score file from a manifest without any external model.

    lookup maps triple_id -> {candidate: [log-probs]} (or (triple_id,
    candidate) tuples directly); pairs not covered get deterministic filler
    values. Returns the number of rows written.
    """
    table: dict[tuple[str, str], list[float]] = {}
    for key, value in (lookup or {}).items():
        if isinstance(key, tuple):
            table[key] = list(value)
        else:
            for cand, lps in value.items():
                table[(key, cand)] = list(lps)

    rows = 0
    with open(manifest_path, "r", encoding="utf-8") as fin, \
            open(out_path, "w", encoding="utf-8") as fout:
        for line in fin:
            if not line.strip():
                continue
            row = json.loads(line)
            key = (row["triple_id"], row["candidate"])
            k = max(1, len(row["mask_token_ids"]))
            lps = table.get(key)
            if lps is None:
                lps = [_stub_logprob(*key, i) for i in range(k)]
            elif len(lps) != k:
                raise ValueError(
                    f"lookup for {key!r} has {len(lps)} log-probs, manifest wants {k}"
                )
            fout.write(json.dumps({
                "triple_id": key[0], "candidate": key[1], "token_logprobs": lps,
            }, ensure_ascii=False) + "\n")
            rows += 1
    return rows


def save_predictions(predictions, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for pred in predictions:
            f.write(json.dumps({
                "triple_id": pred.triple_id,
                "relation_id": pred.relation_id,
                "ranked": [[c, s] for c, s in pred.ranked],
                "flags": pred.flags,
            }, ensure_ascii=False) + "\n")


def load_predictions(path) -> list[Prediction]:
    predictions = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                row = json.loads(line)
                predictions.append(Prediction(
                    triple_id=row["triple_id"],
                    relation_id=row["relation_id"],
                    ranked=[(c, float(s)) for c, s in row["ranked"]],
                    flags=row.get("flags", {}),
                ))
            except (json.JSONDecodeError, KeyError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed prediction: {exc}") from None
    return predictions
