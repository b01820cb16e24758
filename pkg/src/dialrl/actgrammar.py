"""Act-text grammar: decode generated tokens into schema-valid dialogue acts.

The decoder is unconstrained, so its output may violate the
``domain intent slot`` order.  ``parse_act_text`` runs a total, greedy
three-state scan that discards violating tokens, and ``populate_values``
grounds the surviving triplets in the database.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .core import (
    END_TOKEN,
    INFORM_INTENT,
    NONE_VALUE,
    REQUEST_INTENT,
    REQUEST_VALUE,
    AtomicAct,
    BeliefState,
    DialogueAct,
    Quadruple,
    Schema,
    ValidationError,
)

_EXPECT_DOMAIN = 0
_EXPECT_INTENT = 1
_EXPECT_SLOT = 2


@dataclass(frozen=True)
class Discard:
    position: int
    token: str
    reason: str


@dataclass(frozen=True)
class ParseReport:
    triplets: tuple[AtomicAct, ...]
    discarded: tuple[Discard, ...]
    terminated_by_end: bool


def parse_act_text(tokens: Sequence[str], schema: Schema) -> ParseReport:
    """Greedy left-to-right parse of act text into schema-valid triplets.

    The scanner expects domain -> intent -> slot.  A token invalid for the
    expected position is discarded and the scanner state is unchanged,
    except that a domain token arriving mid-triplet aborts the incomplete
    triplet (its consumed tokens are discarded) and starts a new one.
    Duplicate triplets keep their first occurrence.  Parsing stops at the
    first end token; leftover tokens after it are ignored.  The parse is
    total: arbitrary token garbage degrades to discards, never to an error.
    """
    triplets: list[AtomicAct] = []
    seen: set[AtomicAct] = set()
    discards: list[Discard] = []
    partial: list[tuple[int, str]] = []
    expect = _EXPECT_DOMAIN
    terminated = False

    def abort_partial(reason: str) -> None:
        for pos, tok in partial:
            discards.append(Discard(pos, tok, reason))
        partial.clear()

    for position, token in enumerate(tokens):
        if token == END_TOKEN:
            terminated = True
            break
        if expect == _EXPECT_DOMAIN:
            if schema.has_domain(token):
                partial.append((position, token))
                expect = _EXPECT_INTENT
            else:
                discards.append(Discard(position, token, "expected a domain"))
        elif expect == _EXPECT_INTENT:
            if schema.has_intent(token):
                partial.append((position, token))
                expect = _EXPECT_SLOT
            elif schema.has_domain(token):
                abort_partial("superseded by a new domain")
                partial.append((position, token))
                expect = _EXPECT_INTENT
            else:
                discards.append(Discard(position, token, "expected an intent"))
        else:
            domain = partial[0][1]
            if schema.has_slot(domain, token):
                partial.append((position, token))
                triplet = AtomicAct(domain, partial[1][1], token)
                if triplet in seen:
                    abort_partial("duplicate triplet")
                else:
                    seen.add(triplet)
                    triplets.append(triplet)
                    partial.clear()
                expect = _EXPECT_DOMAIN
            elif schema.has_domain(token):
                abort_partial("superseded by a new domain")
                partial.append((position, token))
                expect = _EXPECT_INTENT
            else:
                discards.append(
                    Discard(position, token, f"expected a slot of domain {domain}")
                )
    if partial:
        abort_partial("incomplete triplet at end of text")

    discards.sort(key=lambda d: d.position)
    return ParseReport(
        triplets=tuple(triplets),
        discarded=tuple(discards),
        terminated_by_end=terminated,
    )


def populate_values(
    triplets: Sequence[AtomicAct],
    db_entities: Mapping[str, Sequence],
    belief: BeliefState,
) -> DialogueAct:
    """Ground parsed triplets into quadruples.

    Requests carry the request placeholder.  Informs take the slot value of
    the first entity of the triplet's domain that matches the current belief
    constraints; when no entity matches, or the entity lacks the slot, the
    value degrades to ``none``.  Every other intent carries ``none``.
    """
    quadruples: list[Quadruple] = []
    first_match: dict[str, object] = {}
    for t in triplets:
        if t.intent == REQUEST_INTENT:
            value = REQUEST_VALUE
        elif t.intent == INFORM_INTENT:
            if t.domain not in first_match:
                first_match[t.domain] = _first_matching(
                    db_entities.get(t.domain, ()), belief.constraints_for(t.domain)
                )
            entity = first_match[t.domain]
            value = entity.values.get(t.slot, NONE_VALUE) if entity is not None else NONE_VALUE
        else:
            value = NONE_VALUE
        quadruples.append(Quadruple(t.domain, t.intent, t.slot, value))
    return DialogueAct(tuple(quadruples))


def _first_matching(entities: Sequence, constraints: Mapping[str, str]):
    for entity in entities:
        if all(entity.values.get(slot) == value for slot, value in constraints.items()):
            return entity
    return None


def linearize_target(act: DialogueAct, schema: Schema) -> tuple[str, ...]:
    """Supervised target for one act: its triplet tokens plus the end token.

    Inverse of ``parse_act_text`` over the triplet projection, provided the
    act carries no duplicate triplets.
    """
    tokens: list[str] = []
    for t in act.triplets():
        if not schema.is_valid_triplet(t.domain, t.intent, t.slot):
            raise ValidationError(f"act triplet {t} is not schema-valid")
        tokens.extend((t.domain, t.intent, t.slot))
    tokens.append(END_TOKEN)
    return tuple(tokens)
