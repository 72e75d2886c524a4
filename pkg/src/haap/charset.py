"""Character sets and fixed-capacity token sequences.

Token layout (capacity ``T + 2``)::

    [B] c1 c2 ... cn [E] [PAD] ... [PAD]

Ids: ``[E] = 0``, characters ``1..S``, ``[B] = S + 1``, ``[PAD] = S + 2``.
Only ``0..S`` are ever predicted by the logit head.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field

import numpy as np

MAX_LABEL_LENGTH = 25


class UnknownCharacter(ValueError):
    def __init__(self, label: str, position: int):
        super().__init__(f"character {label[position]!r} at position {position} of {label!r} is not in the charset")
        self.label = label
        self.position = position


class LabelTooLong(ValueError):
    def __init__(self, length: int, limit: int = MAX_LABEL_LENGTH):
        super().__init__(f"label length {length} exceeds maximum {limit}")
        self.length = length


class MalformedSequence(ValueError):
    pass


@dataclass(frozen=True)
class Charset:
    name: str
    symbols: str
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(set(self.symbols)) != len(self.symbols):
            raise ValueError(f"charset {self.name!r} contains duplicate symbols")
        object.__setattr__(self, "_index", {ch: i + 1 for i, ch in enumerate(self.symbols)})

    @property
    def size(self) -> int:
        return len(self.symbols)

    @property
    def eos_id(self) -> int:
        return 0

    @property
    def bos_id(self) -> int:
        return self.size + 1

    @property
    def pad_id(self) -> int:
        return self.size + 2

    @property
    def num_tokens(self) -> int:
        """Embedding table size, including [B] and [PAD]."""
        return self.size + 3

    @property
    def num_classes(self) -> int:
        """Logit width: characters plus [E]."""
        return self.size + 1

    def id_of(self, ch: str) -> int:
        return self._index[ch]

    def __contains__(self, ch: str) -> bool:
        return ch in self._index


TRAIN94 = Charset("train94", string.digits + string.ascii_lowercase + string.ascii_uppercase + string.punctuation)
EVAL36 = Charset("eval36", string.digits + string.ascii_lowercase)

CHARSETS = {c.name: c for c in (TRAIN94, EVAL36)}


def get_charset(name_or_symbols: str) -> Charset:
    """Look up a built-in charset by name, or build a custom one from an ordered string."""
    if name_or_symbols in CHARSETS:
        return CHARSETS[name_or_symbols]
    return Charset("custom", name_or_symbols)


@dataclass(frozen=True)
class TokenSequence:
    ids: np.ndarray
    length: int

    def __post_init__(self):
        self.ids.setflags(write=False)


def encode(label: str, charset: Charset = TRAIN94, max_length: int = MAX_LABEL_LENGTH) -> TokenSequence:
    if len(label) > max_length:
        raise LabelTooLong(len(label), max_length)
    ids = np.full(max_length + 2, charset.pad_id, dtype=np.int64)
    ids[0] = charset.bos_id
    for pos, ch in enumerate(label):
        if ch not in charset:
            raise UnknownCharacter(label, pos)
        ids[pos + 1] = charset.id_of(ch)
    ids[len(label) + 1] = charset.eos_id
    return TokenSequence(ids, len(label))


def decode(ids, charset: Charset = TRAIN94) -> str:
    """Characters between [B] and the first [E]; everything after [E] is ignored.

    Accepts a ``TokenSequence`` or a bare id array. A sequence without [E]
    is accepted only if it runs to capacity with no [PAD] (a full-length
    prediction); otherwise it is malformed.
    """
    if isinstance(ids, TokenSequence):
        ids = ids.ids
    ids = [int(i) for i in ids]
    if ids and ids[0] == charset.bos_id:
        ids = ids[1:]
    out = []
    for i in ids:
        if i == charset.eos_id:
            return "".join(out)
        if i == charset.pad_id:
            raise MalformedSequence("[PAD] reached before [E]")
        if not 1 <= i <= charset.size:
            raise MalformedSequence(f"token id {i} is not a character")
        out.append(charset.symbols[i - 1])
    if len(out) > MAX_LABEL_LENGTH:
        raise MalformedSequence("no [E] within capacity")
    return "".join(out)


def decode_prediction(class_ids, charset: Charset = TRAIN94) -> str:
    """Decode argmax logit indices (0 = [E], 1..S characters), stopping at the first [E]."""
    out = []
    for i in class_ids:
        i = int(i)
        if i == charset.eos_id:
            break
        out.append(charset.symbols[i - 1])
    return "".join(out)


def fold_for_eval(text: str) -> str:
    return "".join(ch for ch in text.lower() if ch in EVAL36)
