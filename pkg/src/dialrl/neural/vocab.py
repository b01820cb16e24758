"""Closed token vocabulary derived from a schema."""

from __future__ import annotations

from dataclasses import dataclass

from ..core import (
    CLS_TOKEN,
    COUNT_TOKENS,
    END_TOKEN,
    NONE_VALUE,
    PAD_TOKEN,
    START_TOKEN,
    UNK_TOKEN,
    Schema,
)

SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, CLS_TOKEN, START_TOKEN, END_TOKEN)


@dataclass(frozen=True)
class Vocabulary:
    """Token-to-id map: specials first, then sorted schema tokens."""

    tokens: tuple[str, ...]

    @classmethod
    def from_schema(cls, schema: Schema) -> "Vocabulary":
        words: set[str] = set()
        words.update(schema.domains)
        words.update(schema.intents)
        for domain, slot_map in schema.slots.items():
            for slot, values in slot_map.items():
                words.add(slot)
                for value in values:
                    words.update(value.split(" "))
        words.update(COUNT_TOKENS)
        words.add(NONE_VALUE)
        words -= set(SPECIAL_TOKENS)
        return cls(tokens=SPECIAL_TOKENS + tuple(sorted(words)))

    def __post_init__(self) -> None:
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return self._index[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._index[UNK_TOKEN]

    @property
    def cls_id(self) -> int:
        return self._index[CLS_TOKEN]

    @property
    def start_id(self) -> int:
        return self._index[START_TOKEN]

    @property
    def end_id(self) -> int:
        return self._index[END_TOKEN]

    def encode(self, tokens) -> list[int]:
        unk = self.unk_id
        return [self._index.get(t, unk) for t in tokens]

    def decode(self, ids) -> list[str]:
        return [self.tokens[i] for i in ids]
