"""Copy identifiers for gadget networks: an original node id plus a tag."""

from dataclasses import dataclass
from enum import Enum
from typing import Hashable, Tuple, Union


class CopyTag(Enum):
    """Role of a copy; Lo/Hi are the copies fed the lower/upper bound."""

    SOLE = ("sole", 0)
    CRASH = ("crash", 1)
    SLOW = ("slow", 2)
    LO = ("lo", 3)
    HI = ("hi", 4)

    def __init__(self, label: str, rank: int):
        self.label = label
        self.rank = rank

    @classmethod
    def from_label(cls, label: str) -> "CopyTag":
        for tag in cls:
            if tag.label == label:
                return tag
        raise ValueError(f"unknown copy tag {label!r}")


@dataclass(frozen=True)
class CopyId:
    original: int
    tag: CopyTag

    @property
    def sort_key(self) -> Tuple[int, int]:
        return (self.original, self.tag.rank)

    def __lt__(self, other: "CopyId") -> bool:
        return self.sort_key < other.sort_key

    def __str__(self) -> str:
        return f"{self.original}:{self.tag.label}"

    @classmethod
    def parse(cls, text: str) -> "CopyId":
        original, _, label = text.partition(":")
        if not label:
            raise ValueError(f"copy id {text!r} must look like '<node>:<tag>'")
        return cls(int(original), CopyTag.from_label(label))


NodeRef = Union[int, CopyId]


def original_of(node: Hashable) -> int:
    """Source-graph node behind a copy; plain node ids map to themselves."""
    return node.original if isinstance(node, CopyId) else node


def node_key(node: Hashable) -> Tuple[int, int]:
    return node.sort_key if isinstance(node, CopyId) else (node, -1)


def node_to_json(node: Hashable) -> Union[int, str]:
    return str(node) if isinstance(node, CopyId) else node


def node_from_json(value: Union[int, str]) -> NodeRef:
    if isinstance(value, int):
        return value
    if isinstance(value, str) and ":" in value:
        return CopyId.parse(value)
    return int(value)
