"""Template natural-language rendering of system acts for the evaluation UI.

One fixed sentence per (intent, slot), with intent-level fallbacks; purely
cosmetic and deterministic.
"""

from __future__ import annotations

from ..core import NONE_VALUE, DialogueAct, UserGoal

INTENT_TEMPLATES = {
    "inform": "the {slot} of the {domain} is {value}.",
    "request": "which {slot} would you like for the {domain}?",
    "nooffer": "i could not find any matching {domain}.",
    "bye": "glad i could help. goodbye!",
}

SLOT_TEMPLATES = {
    ("inform", "name"): "i recommend the {domain} called {value}.",
    ("inform", "none"): "is there anything else i can do?",
    ("request", "area"): "which area should the {domain} be in?",
    ("request", "price"): "what price range do you want for the {domain}?",
}

INFORM_NONE_TEMPLATE = "i am afraid i have no {slot} for that {domain}."
EMPTY_ACT_TEXT = "okay."


def render_act(act: DialogueAct) -> str:
    """Render a system act as one deterministic sentence per quadruple."""
    if act.is_empty:
        return EMPTY_ACT_TEXT
    parts = []
    for q in act.quadruples:
        template = SLOT_TEMPLATES.get((q.intent, q.slot))
        if template is None:
            if q.intent == "inform" and q.value == NONE_VALUE:
                template = INFORM_NONE_TEMPLATE
            else:
                template = INTENT_TEMPLATES.get(q.intent, "{domain} {slot} {value}.")
        parts.append(template.format(domain=q.domain, slot=q.slot, value=q.value))
    return " ".join(parts)


def render_goal(goal: UserGoal) -> dict:
    """Goal panel payload: constraints and requests per domain."""
    return {
        "constraints": {d: dict(c) for d, c in sorted(goal.constraints.items())},
        "requests": {d: sorted(r) for d, r in sorted(goal.requests.items())},
    }
