"""Entity store and exact-match query engine.

Databases are immutable after load; entity order is the file order, which
keeps value population and match counts deterministic.  Queries are linear
scans: the stores are desk-scale, so the scan is both the implementation
and its own obvious specification.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

from .core import BeliefState, DbResultSummary, Schema, ValidationError


@dataclass(frozen=True)
class Entity:
    domain: str
    values: Mapping[str, str]

    def validate(self, schema: Schema) -> "Entity":
        if not schema.has_domain(self.domain):
            raise ValidationError(f"entity has unknown domain {self.domain!r}")
        for slot, value in self.values.items():
            if not schema.has_slot(self.domain, slot):
                raise ValidationError(
                    f"entity slot {self.domain}.{slot} is not in the schema"
                )
            if value not in schema.slot_values(self.domain, slot):
                raise ValidationError(
                    f"entity value {value!r} not in vocabulary of {self.domain}.{slot}"
                )
        return self


@dataclass(frozen=True)
class Database:
    entities: Mapping[str, tuple[Entity, ...]]

    def domain_entities(self, domain: str) -> tuple[Entity, ...]:
        return self.entities.get(domain, ())

    @property
    def size(self) -> int:
        return sum(len(v) for v in self.entities.values())


def load_database(path: str | Path, schema: Schema) -> Database:
    """Load a JSON array of ``{"domain":…, "values":{…}}`` entities."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"database file {path}: invalid JSON at line {exc.lineno}") from exc
    if not isinstance(raw, list):
        raise ValidationError(f"database file {path}: top-level value must be an array")
    per_domain: dict[str, list[Entity]] = {}
    for index, item in enumerate(raw):
        if not isinstance(item, dict) or set(item) != {"domain", "values"}:
            raise ValidationError(
                f"entity {index}: expected exactly the keys 'domain' and 'values'"
            )
        entity = Entity(domain=str(item["domain"]), values=dict(item["values"]))
        try:
            entity.validate(schema)
        except ValidationError as exc:
            raise ValidationError(f"entity {index}: {exc}") from exc
        per_domain.setdefault(entity.domain, []).append(entity)
    return Database(entities={d: tuple(v) for d, v in per_domain.items()})


def query(db: Database, domain: str, constraints: Mapping[str, str]) -> tuple[Entity, ...]:
    """All entities of ``domain`` whose values equal every constraint exactly.

    Empty constraints return the whole domain; an unknown domain returns an
    empty list rather than an error.
    """
    return tuple(
        e
        for e in db.domain_entities(domain)
        if all(e.values.get(slot) == value for slot, value in constraints.items())
    )


def match_counts(db: Database, belief: BeliefState) -> DbResultSummary:
    """Match counts per belief-mentioned domain, in belief-mention order."""
    counts = []
    for domain in belief.domains():
        counts.append((domain, len(query(db, domain, belief.constraints_for(domain)))))
    return DbResultSummary(tuple(counts))
