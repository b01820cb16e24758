"""Domain model for schema-grounded dialogue acts and dialogue-state texts.

A dialogue action is an ordered list of (domain, intent, slot, value)
quadruples; the tracked belief is a list of (domain, slot, value) triplets.
The policy never sees raw state objects: it sees four flattened token
sequences (user act, system act, belief state, database result) produced by
the linearizers below.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

# Reserved wire tokens.  Request quadruples carry REQUEST_VALUE; quadruples
# whose value could not be grounded in the database carry NONE_VALUE.
REQUEST_VALUE = "?"
NONE_VALUE = "none"

INFORM_INTENT = "inform"
REQUEST_INTENT = "request"
BYE_INTENT = "bye"

PAD_TOKEN = "[pad]"
UNK_TOKEN = "[unk]"
CLS_TOKEN = "[cls]"
START_TOKEN = "[start]"
END_TOKEN = "[end]"

# Database match counts of 10 or more share one overflow token so the count
# vocabulary stays bounded.
COUNT_CAP = 10
COUNT_OVERFLOW_TOKEN = "10+"
COUNT_TOKENS = tuple(str(i) for i in range(COUNT_CAP)) + (COUNT_OVERFLOW_TOKEN,)

_NAME_RE = re.compile(r"^[a-z][a-z0-9_]*$")
_VALUE_WORD_RE = re.compile(r"^[a-z0-9_+]+$")

_SCHEMA_KEYS = {
    "domains",
    "intents",
    "slots",
    "requestable",
    "informable",
    "goal_slot_weights",
}


class ValidationError(ValueError):
    """A value violates the schema or a type invariant."""


def _check_name(name: object, what: str) -> str:
    if not isinstance(name, str) or not _NAME_RE.match(name):
        raise ValidationError(
            f"{what} {name!r} is not a lowercase whitespace-free token"
        )
    return name


def _check_value(value: object, what: str) -> str:
    if not isinstance(value, str) or not value:
        raise ValidationError(f"{what} {value!r} is not a non-empty string")
    words = value.split(" ")
    if not all(_VALUE_WORD_RE.match(w) for w in words):
        raise ValidationError(
            f"{what} {value!r} must be lowercase words separated by single spaces"
        )
    return value


@dataclass(frozen=True)
class Schema:
    """Closed vocabularies of domains, intents, slots, and slot values.

    ``slots`` maps domain -> slot -> value vocabulary.  ``requestable`` and
    ``informable`` name the slots a user may ask about or constrain, and
    ``goal_slot_weights`` drives goal sampling in the simulator.
    """

    domains: tuple[str, ...]
    intents: tuple[str, ...]
    slots: Mapping[str, Mapping[str, tuple[str, ...]]]
    requestable: Mapping[str, tuple[str, ...]]
    informable: Mapping[str, tuple[str, ...]]
    goal_slot_weights: Mapping[str, Mapping[str, float]]

    def has_domain(self, domain: str) -> bool:
        return domain in self.slots

    def has_intent(self, intent: str) -> bool:
        return intent in self.intents

    def has_slot(self, domain: str, slot: str) -> bool:
        return slot in self.slots.get(domain, {})

    def slot_values(self, domain: str, slot: str) -> tuple[str, ...]:
        return self.slots[domain][slot]

    def is_valid_triplet(self, domain: str, intent: str, slot: str) -> bool:
        return self.has_domain(domain) and self.has_intent(intent) and self.has_slot(domain, slot)

    def weight(self, domain: str, slot: str) -> float:
        return self.goal_slot_weights.get(domain, {}).get(slot, 0.0)

    @classmethod
    def from_dict(cls, raw: Mapping[str, object]) -> "Schema":
        extra = set(raw) - _SCHEMA_KEYS
        if extra:
            raise ValidationError(f"unknown schema keys: {sorted(extra)}")
        missing = _SCHEMA_KEYS - set(raw)
        if missing:
            raise ValidationError(f"missing schema keys: {sorted(missing)}")

        domains = tuple(sorted(_check_name(d, "domain") for d in raw["domains"]))
        if not domains:
            raise ValidationError("schema needs at least one domain")
        intents = tuple(sorted(_check_name(i, "intent") for i in raw["intents"]))
        if not intents:
            raise ValidationError("schema needs at least one intent")

        slots: dict[str, dict[str, tuple[str, ...]]] = {}
        for domain, slot_map in dict(raw["slots"]).items():
            _check_name(domain, "domain")
            if domain not in domains:
                raise ValidationError(f"slots listed for unknown domain {domain!r}")
            slots[domain] = {}
            for slot, values in dict(slot_map).items():
                _check_name(slot, f"slot (domain {domain})")
                vocab = tuple(
                    sorted(_check_value(v, f"value of {domain}.{slot}") for v in values)
                )
                if not vocab:
                    raise ValidationError(f"slot {domain}.{slot} has an empty value vocabulary")
                slots[domain][slot] = vocab
        for domain in domains:
            if domain not in slots:
                raise ValidationError(f"domain {domain!r} has no slots")

        def _slot_list(key: str) -> dict[str, tuple[str, ...]]:
            out: dict[str, tuple[str, ...]] = {}
            for domain, names in dict(raw[key]).items():
                if domain not in slots:
                    raise ValidationError(f"{key} lists unknown domain {domain!r}")
                for name in names:
                    if name not in slots[domain]:
                        raise ValidationError(
                            f"{key} slot {domain}.{name} is not in the slot map"
                        )
                out[domain] = tuple(sorted(names))
            for domain in domains:
                out.setdefault(domain, ())
            return out

        requestable = _slot_list("requestable")
        informable = _slot_list("informable")

        weights: dict[str, dict[str, float]] = {}
        for domain, wmap in dict(raw["goal_slot_weights"]).items():
            if domain not in slots:
                raise ValidationError(f"goal_slot_weights lists unknown domain {domain!r}")
            weights[domain] = {}
            any_positive = False
            for slot, w in dict(wmap).items():
                if slot not in slots[domain]:
                    raise ValidationError(
                        f"goal_slot_weights slot {domain}.{slot} is not in the slot map"
                    )
                w = float(w)
                if w < 0:
                    raise ValidationError(f"negative weight for {domain}.{slot}")
                if w > 0:
                    any_positive = True
                weights[domain][slot] = w
            if not any_positive:
                raise ValidationError(f"domain {domain!r} has no positive goal weight")
        for domain in domains:
            if domain not in weights:
                raise ValidationError(f"domain {domain!r} has no goal_slot_weights")

        return cls(
            domains=domains,
            intents=intents,
            slots=slots,
            requestable=requestable,
            informable=informable,
            goal_slot_weights=weights,
        )

    @classmethod
    def load(cls, path: str | Path) -> "Schema":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class AtomicAct:
    """One (domain, intent, slot) triplet, the unit the policy emits."""

    domain: str
    intent: str
    slot: str

    def validate(self, schema: Schema) -> "AtomicAct":
        if not schema.has_domain(self.domain):
            raise ValidationError(f"unknown domain {self.domain!r}")
        if not schema.has_intent(self.intent):
            raise ValidationError(f"unknown intent {self.intent!r}")
        if not schema.has_slot(self.domain, self.slot):
            raise ValidationError(f"unknown slot {self.slot!r} for domain {self.domain!r}")
        return self


@dataclass(frozen=True)
class Quadruple:
    domain: str
    intent: str
    slot: str
    value: str

    @property
    def triplet(self) -> AtomicAct:
        return AtomicAct(self.domain, self.intent, self.slot)

    def as_list(self) -> list[str]:
        return [self.domain, self.intent, self.slot, self.value]


@dataclass(frozen=True)
class DialogueAct:
    """Ordered list of quadruples emitted by one speaker in one turn."""

    quadruples: tuple[Quadruple, ...] = ()

    @property
    def is_empty(self) -> bool:
        return not self.quadruples

    def triplets(self) -> list[AtomicAct]:
        return [q.triplet for q in self.quadruples]

    def validate(self, schema: Schema) -> "DialogueAct":
        for q in self.quadruples:
            q.triplet.validate(schema)
            if q.intent == REQUEST_INTENT and q.value != REQUEST_VALUE:
                raise ValidationError(
                    f"request quadruple {q} must carry the value {REQUEST_VALUE!r}"
                )
        return self

    def to_lists(self) -> list[list[str]]:
        return [q.as_list() for q in self.quadruples]

    @classmethod
    def from_lists(cls, rows: Iterable[Sequence[str]]) -> "DialogueAct":
        quads = []
        for row in rows:
            if len(row) != 4:
                raise ValidationError(f"quadruple row {row!r} must have 4 fields")
            quads.append(Quadruple(*map(str, row)))
        return cls(tuple(quads))


EMPTY_ACT = DialogueAct()


@dataclass(frozen=True)
class BeliefTriplet:
    domain: str
    slot: str
    value: str

    def as_list(self) -> list[str]:
        return [self.domain, self.slot, self.value]


@dataclass(frozen=True)
class BeliefState:
    """Constraints the user has conveyed so far, in first-mention order."""

    triplets: tuple[BeliefTriplet, ...] = ()

    def validate(self, schema: Schema) -> "BeliefState":
        for t in self.triplets:
            if not schema.has_slot(t.domain, t.slot):
                raise ValidationError(
                    f"belief triplet names unknown slot {t.domain}.{t.slot}"
                )
            if t.value != NONE_VALUE and t.value not in schema.slot_values(t.domain, t.slot):
                raise ValidationError(
                    f"belief value {t.value!r} not in vocabulary of {t.domain}.{t.slot}"
                )
        return self

    def domains(self) -> tuple[str, ...]:
        seen: list[str] = []
        for t in self.triplets:
            if t.domain not in seen:
                seen.append(t.domain)
        return tuple(seen)

    def constraints_for(self, domain: str) -> dict[str, str]:
        return {t.slot: t.value for t in self.triplets if t.domain == domain}

    def to_lists(self) -> list[list[str]]:
        return [t.as_list() for t in self.triplets]

    @classmethod
    def from_lists(cls, rows: Iterable[Sequence[str]]) -> "BeliefState":
        return cls(tuple(BeliefTriplet(*map(str, row)) for row in rows))


EMPTY_BELIEF = BeliefState()


def update_belief(belief: BeliefState, act: DialogueAct) -> BeliefState:
    """Fold a user act into the belief: informs add or overwrite (domain, slot).

    First-mention order is preserved; a re-inform of a known (domain, slot)
    replaces its value in place.
    """
    triplets = list(belief.triplets)
    index = {(t.domain, t.slot): i for i, t in enumerate(triplets)}
    for q in act.quadruples:
        if q.intent != INFORM_INTENT or q.value in (REQUEST_VALUE, NONE_VALUE):
            continue
        key = (q.domain, q.slot)
        entry = BeliefTriplet(q.domain, q.slot, q.value)
        if key in index:
            triplets[index[key]] = entry
        else:
            index[key] = len(triplets)
            triplets.append(entry)
    return BeliefState(tuple(triplets))


@dataclass(frozen=True)
class UserGoal:
    """Hidden user goal: per-domain constraints and requested slots."""

    constraints: Mapping[str, Mapping[str, str]]
    requests: Mapping[str, tuple[str, ...]]

    def domains(self) -> tuple[str, ...]:
        return tuple(sorted(set(self.constraints) | set(self.requests)))

    def validate(self, schema: Schema) -> "UserGoal":
        if not self.domains():
            raise ValidationError("goal must mention at least one domain")
        for domain, cmap in self.constraints.items():
            informable = set(schema.informable.get(domain, ()))
            for slot, value in cmap.items():
                if slot not in informable:
                    raise ValidationError(f"constraint slot {domain}.{slot} is not informable")
                if value not in schema.slot_values(domain, slot):
                    raise ValidationError(
                        f"constraint value {value!r} not in vocabulary of {domain}.{slot}"
                    )
        for domain, slots in self.requests.items():
            requestable = set(schema.requestable.get(domain, ()))
            for slot in slots:
                if slot not in requestable:
                    raise ValidationError(f"request slot {domain}.{slot} is not requestable")
                if slot in self.constraints.get(domain, {}):
                    raise ValidationError(
                        f"slot {domain}.{slot} cannot be both constrained and requested"
                    )
        return self

    def to_jsonable(self) -> dict:
        return {
            "constraints": {d: dict(c) for d, c in sorted(self.constraints.items())},
            "requests": {d: sorted(r) for d, r in sorted(self.requests.items())},
        }

    @classmethod
    def from_jsonable(cls, raw: Mapping[str, object]) -> "UserGoal":
        constraints = {d: dict(c) for d, c in dict(raw["constraints"]).items()}
        requests = {d: tuple(r) for d, r in dict(raw["requests"]).items()}
        return cls(constraints=constraints, requests=requests)


@dataclass(frozen=True)
class DbResultSummary:
    """Per-domain database match counts, in belief-mention order."""

    counts: tuple[tuple[str, int], ...] = ()

    def validate(self, schema: Schema) -> "DbResultSummary":
        seen = set()
        for domain, count in self.counts:
            if not schema.has_domain(domain):
                raise ValidationError(f"unknown domain {domain!r} in db summary")
            if domain in seen:
                raise ValidationError(f"duplicate domain {domain!r} in db summary")
            if count < 0:
                raise ValidationError(f"negative match count for {domain!r}")
            seen.add(domain)
        return self

    def to_lists(self) -> list[list]:
        return [[d, n] for d, n in self.counts]

    @classmethod
    def from_lists(cls, rows: Iterable[Sequence]) -> "DbResultSummary":
        return cls(tuple((str(d), int(n)) for d, n in rows))


EMPTY_DB_SUMMARY = DbResultSummary()


@dataclass(frozen=True)
class DialogueStateText:
    """The four flattened texts the encoder consumes.

    Token sequences exclude the classifier token; the encoder prefixes it
    when embedding each text.
    """

    user_act_tokens: tuple[str, ...]
    system_act_tokens: tuple[str, ...]
    belief_tokens: tuple[str, ...]
    db_tokens: tuple[str, ...]

    def fields(self) -> tuple[tuple[str, ...], ...]:
        return (
            self.user_act_tokens,
            self.system_act_tokens,
            self.belief_tokens,
            self.db_tokens,
        )


def linearize_acts(acts: Sequence[AtomicAct], schema: Schema) -> tuple[str, ...]:
    """Flatten act triplets to ``domain intent slot`` token runs."""
    tokens: list[str] = []
    for act in acts:
        act.validate(schema)
        tokens.extend((act.domain, act.intent, act.slot))
    return tuple(tokens)


def linearize_belief(belief: BeliefState, schema: Schema) -> tuple[str, ...]:
    """Flatten belief triplets to ``domain slot value-words`` token runs."""
    belief.validate(schema)
    tokens: list[str] = []
    for t in belief.triplets:
        tokens.append(t.domain)
        tokens.append(t.slot)
        tokens.extend(t.value.split(" "))
    return tuple(tokens)


def count_token(count: int) -> str:
    if count < 0:
        raise ValidationError(f"negative match count {count}")
    return str(count) if count < COUNT_CAP else COUNT_OVERFLOW_TOKEN


def linearize_db(summary: DbResultSummary, schema: Schema) -> tuple[str, ...]:
    """Flatten match counts to ``domain count`` token runs (counts >= 10 bucket)."""
    summary.validate(schema)
    tokens: list[str] = []
    for domain, count in summary.counts:
        tokens.append(domain)
        tokens.append(count_token(count))
    return tuple(tokens)


def build_state_text(
    user_act: DialogueAct,
    system_act: DialogueAct,
    belief: BeliefState,
    db_summary: DbResultSummary,
    schema: Schema,
) -> DialogueStateText:
    """Linearize one observed dialogue state into its four texts."""
    return DialogueStateText(
        user_act_tokens=linearize_acts(user_act.validate(schema).triplets(), schema),
        system_act_tokens=linearize_acts(system_act.validate(schema).triplets(), schema),
        belief_tokens=linearize_belief(belief, schema),
        db_tokens=linearize_db(db_summary, schema),
    )
