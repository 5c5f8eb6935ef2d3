"""Label vocabulary for respiratory cycles and the algebra that combines labels.

Cycle labels are 3-bit vectors ``[normal, crackle, wheeze]``.  The 2-bit
``[crackle, wheeze]`` form is only a view of the 3-bit one, applied when a
model is trained or evaluated in 2-label mode.
"""

from __future__ import annotations

import enum
from typing import NamedTuple, Sequence

PatientId = str


def _check_bit(name: str, value: int) -> int:
    if value not in (0, 1):
        raise ValueError(f"{name} must be 0 or 1, got {value!r}")
    return int(value)


class Label3(NamedTuple):
    normal: int
    crackle: int
    wheeze: int

    @classmethod
    def of(cls, bits: Sequence[int]) -> "Label3":
        if len(bits) != 3:
            raise ValueError(f"Label3 needs 3 bits, got {len(bits)}")
        return cls(*(_check_bit(n, int(b)) for n, b in zip(cls._fields, bits)))

    @classmethod
    def from_annotation(cls, crackle: int, wheeze: int) -> "Label3":
        """Label of an original cycle: normal is set iff no adventitious sound."""
        c = _check_bit("crackle", int(crackle))
        w = _check_bit("wheeze", int(wheeze))
        return cls(int(c == 0 and w == 0), c, w)

    def is_original(self) -> bool:
        """True for the four patterns that can label a single, unmixed cycle."""
        if self.normal:
            return self.crackle == 0 and self.wheeze == 0
        return bool(self.crackle or self.wheeze)

    def is_augmented(self) -> bool:
        return any(self)

    @property
    def is_abnormal(self) -> bool:
        return bool(self.crackle or self.wheeze)


class Label2(NamedTuple):
    crackle: int
    wheeze: int

    @classmethod
    def of(cls, bits: Sequence[int]) -> "Label2":
        if len(bits) != 2:
            raise ValueError(f"Label2 needs 2 bits, got {len(bits)}")
        return cls(*(_check_bit(n, int(b)) for n, b in zip(cls._fields, bits)))


class IcbhiClass(enum.IntEnum):
    NORMAL = 0
    CRACKLE = 1
    WHEEZE = 2
    BOTH = 3


def label3_or(a: Label3, b: Label3) -> Label3:
    """Element-wise OR (max) of two labels."""
    return Label3(max(a.normal, b.normal), max(a.crackle, b.crackle), max(a.wheeze, b.wheeze))


def label3_to_label2(y: Label3) -> Label2:
    return Label2(y.crackle, y.wheeze)


def to_icbhi_class(y: Sequence[int]) -> IcbhiClass:
    """Map a binarized ``[normal, crackle, wheeze]`` vector to one ICBHI class.

    Priority: both abnormal bits -> BOTH, then CRACKLE, then WHEEZE, else
    NORMAL.  The normal bit is never consulted, so ``[0, 0, 0]`` is NORMAL.
    """
    _, crackle, wheeze = y
    if crackle and wheeze:
        return IcbhiClass.BOTH
    if crackle:
        return IcbhiClass.CRACKLE
    if wheeze:
        return IcbhiClass.WHEEZE
    return IcbhiClass.NORMAL


_CLASS_LABELS = {
    IcbhiClass.NORMAL: Label3(1, 0, 0),
    IcbhiClass.CRACKLE: Label3(0, 1, 0),
    IcbhiClass.WHEEZE: Label3(0, 0, 1),
    IcbhiClass.BOTH: Label3(0, 1, 1),
}


def class_label(cls: IcbhiClass) -> Label3:
    """The original-cycle label of an ICBHI class (inverse of ``to_icbhi_class``)."""
    return _CLASS_LABELS[IcbhiClass(cls)]


def format_label(y: Sequence[int]) -> str:
    return ",".join(str(int(b)) for b in y)


def parse_label(text: str) -> Label3 | Label2:
    parts = [p.strip() for p in text.split(",")]
    try:
        bits = [int(p) for p in parts]
    except ValueError:
        raise ValueError(f"malformed label {text!r}") from None
    if len(bits) == 3:
        return Label3.of(bits)
    if len(bits) == 2:
        return Label2.of(bits)
    raise ValueError(f"label must have 2 or 3 bits, got {text!r}")
