"""KB ingestion: triples, relation templates, typed candidate sets, queries."""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

logger = logging.getLogger(__name__)

SUBJECT_SLOT = "[X]"
OBJECT_SLOT = "[Y]"
MASK = "[MASK]"


@dataclass(frozen=True)
class Triple:
    """One (subject, relation, object) fact."""

    id: str
    subject: str
    relation_id: str
    object: str

    def __post_init__(self):
        for name in ("id", "subject", "relation_id", "object"):
            if not getattr(self, name):
                raise ValueError(f"triple field {name} must be non-empty")


@dataclass(frozen=True)
class RelationSpec:
    """A relation id with its cloze template."""

    relation_id: str
    template: str

    def __post_init__(self):
        for slot in (SUBJECT_SLOT, OBJECT_SLOT):
            if self.template.count(slot) != 1:
                raise ValueError(
                    f"template for {self.relation_id!r} must contain exactly one "
                    f"{slot}: {self.template!r}"
                )


@dataclass(frozen=True)
class CandidateSet:
    """Distinct gold objects of one relation, in lexicographic order."""

    relation_id: str
    candidates: tuple[str, ...]

    def __post_init__(self):
        if not self.candidates:
            raise ValueError(f"empty candidate set for {self.relation_id!r}")
        if list(self.candidates) != sorted(set(self.candidates)):
            raise ValueError(
                f"candidates for {self.relation_id!r} must be deduplicated "
                "and lexicographically sorted"
            )

    def __len__(self) -> int:
        return len(self.candidates)

    def __iter__(self):
        return iter(self.candidates)


@dataclass
class Dataset:
    """Triples grouped by relation, with templates attached. Immutable by use."""

    language: str
    relations: dict[str, RelationSpec]
    triples_by_relation: dict[str, list[Triple]] = field(default_factory=dict)

    @property
    def relation_ids(self) -> list[str]:
        return sorted(self.triples_by_relation)

    @property
    def n_triples(self) -> int:
        return sum(len(ts) for ts in self.triples_by_relation.values())

    def triples(self):
        for rel in self.relation_ids:
            yield from self.triples_by_relation[rel]

    def triple_by_id(self) -> dict[str, Triple]:
        return {t.id: t for t in self.triples()}


def _read_jsonl(path):
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: malformed JSON line: {exc}") from None


def ingest_dataset(triples_path, templates_path, language_tag: str = "en") -> Dataset:
    """Load triples and templates; every triple's relation must have a template.

    Triple rows are JSONL objects {id?, sub_label, obj_label, predicate_id};
    missing ids are synthesized as "<predicate_id>#<index>" with the index
    counting that relation's triples in file order.
    """
    relations: dict[str, RelationSpec] = {}
    for lineno, row in _read_jsonl(templates_path):
        try:
            spec = RelationSpec(relation_id=row["relation"], template=row["template"])
        except KeyError as exc:
            raise ValueError(
                f"{templates_path}:{lineno}: missing field {exc}"
            ) from None
        if spec.relation_id in relations:
            raise ValueError(
                f"{templates_path}:{lineno}: duplicate template for {spec.relation_id!r}"
            )
        relations[spec.relation_id] = spec

    triples_by_relation: dict[str, list[Triple]] = {}
    seen_ids: set[str] = set()
    unknown: dict[str, int] = {}
    for lineno, row in _read_jsonl(triples_path):
        try:
            rel = row["predicate_id"]
            subject = row["sub_label"]
            obj = row["obj_label"]
        except KeyError as exc:
            raise ValueError(f"{triples_path}:{lineno}: missing field {exc}") from None
        if rel not in relations:
            unknown[rel] = unknown.get(rel, 0) + 1
            continue
        group = triples_by_relation.setdefault(rel, [])
        triple_id = row.get("id") or f"{rel}#{len(group)}"
        if triple_id in seen_ids:
            raise ValueError(f"{triples_path}:{lineno}: duplicate triple id {triple_id!r}")
        seen_ids.add(triple_id)
        group.append(Triple(id=triple_id, subject=subject, relation_id=rel, object=obj))

    if unknown:
        offenders = ", ".join(
            f"{rel} ({count} triples)" for rel, count in sorted(unknown.items())
        )
        raise ValueError(f"triples reference relations with no template: {offenders}")
    return Dataset(language=language_tag, relations=relations,
                   triples_by_relation=triples_by_relation)


def build_candidates(dataset: Dataset) -> dict[str, CandidateSet]:
    """Per relation, the distinct gold objects across its triples."""
    if dataset.n_triples == 0:
        raise ValueError("dataset has no triples")
    out = {}
    for rel in dataset.relation_ids:
        objects = sorted({t.object for t in dataset.triples_by_relation[rel]})
        out[rel] = CandidateSet(relation_id=rel, candidates=tuple(objects))
    return out


def apply_subset(dataset: Dataset, id_list) -> tuple[Dataset, int]:
    """Retain exactly the listed triple ids; drop relations left empty.

    Returns the filtered dataset and the count of ids that matched nothing
    (reported as a warning, never an error).
    """
    wanted = set(id_list)
    kept: dict[str, list[Triple]] = {}
    found = 0
    for rel, triples in dataset.triples_by_relation.items():
        selected = [t for t in triples if t.id in wanted]
        found += len(selected)
        if selected:
            kept[rel] = selected
    unknown = len(wanted) - len({t.id for ts in kept.values() for t in ts})
    if unknown:
        logger.warning("subset list has %d ids not present in the dataset", unknown)
    return (
        Dataset(language=dataset.language, relations=dict(dataset.relations),
                triples_by_relation=kept),
        unknown,
    )


def read_subset_ids(path) -> list[str]:
    ids = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line:
            ids.append(line)
    return ids


def instantiate_query(spec: RelationSpec, subject: str, mask_count: int = 1) -> str:
    """Fill the template: subject into [X], mask_count [MASK] tokens into [Y]."""
    if mask_count < 1:
        raise ValueError(f"mask_count must be >= 1, got {mask_count}")
    masks = " ".join([MASK] * mask_count)
    return spec.template.replace(SUBJECT_SLOT, subject).replace(OBJECT_SLOT, masks)
