"""Dense bit-arrays with word-level set operations.

One class backs both point-id sets (over a corpus) and node-id sets (over a
tree).  Bits are stored little-endian in uint64 words; unused bits of the
last word are kept zero so popcounts and equality work on raw words.
"""

from __future__ import annotations

import numpy as np

_WORD = 64


class BitSet:
    """Fixed-size set of small integers backed by packed uint64 words."""

    __slots__ = ("size", "words")

    def __init__(self, size: int, words: np.ndarray | None = None):
        if size < 0:
            raise ValueError("size must be nonnegative")
        self.size = int(size)
        n_words = (self.size + _WORD - 1) // _WORD
        if words is None:
            self.words = np.zeros(n_words, dtype=np.uint64)
        else:
            if len(words) != n_words:
                raise ValueError("word array length does not match size")
            self.words = words

    @classmethod
    def empty(cls, size: int) -> "BitSet":
        return cls(size)

    @classmethod
    def full(cls, size: int) -> "BitSet":
        out = cls(size)
        out.words[:] = np.uint64(0xFFFFFFFFFFFFFFFF)
        out._mask_tail()
        return out

    @classmethod
    def from_indices(cls, size: int, indices) -> "BitSet":
        mask = np.zeros(size, dtype=bool)
        mask[np.asarray(indices, dtype=np.int64)] = True
        return cls.from_bools(mask)

    @classmethod
    def from_bools(cls, mask: np.ndarray) -> "BitSet":
        mask = np.asarray(mask, dtype=bool)
        out = cls(mask.shape[0])
        packed = np.packbits(mask, bitorder="little")
        out.words.view(np.uint8)[: packed.shape[0]] = packed
        return out

    def _mask_tail(self) -> None:
        tail = self.size % _WORD
        if tail and self.words.shape[0]:
            keep = np.uint64((1 << tail) - 1)
            self.words[-1] &= keep

    def copy(self) -> "BitSet":
        return BitSet(self.size, self.words.copy())

    def count(self) -> int:
        return int(np.bitwise_count(self.words).sum())

    def contains(self, i: int) -> bool:
        if not 0 <= i < self.size:
            raise IndexError(i)
        return bool((self.words[i // _WORD] >> np.uint64(i % _WORD)) & np.uint64(1))

    def add(self, i: int) -> None:
        if not 0 <= i < self.size:
            raise IndexError(i)
        self.words[i // _WORD] |= np.uint64(1) << np.uint64(i % _WORD)

    def union(self, other: "BitSet") -> "BitSet":
        self._check(other)
        return BitSet(self.size, self.words | other.words)

    def intersection(self, other: "BitSet") -> "BitSet":
        self._check(other)
        return BitSet(self.size, self.words & other.words)

    def complement(self) -> "BitSet":
        out = BitSet(self.size, ~self.words)
        out._mask_tail()
        return out

    def issuperset(self, other: "BitSet") -> bool:
        self._check(other)
        return not np.any(~self.words & other.words)

    def to_bools(self) -> np.ndarray:
        bits = np.unpackbits(self.words.view(np.uint8), bitorder="little")
        return bits[: self.size].astype(bool)

    def to_indices(self) -> np.ndarray:
        return np.flatnonzero(self.to_bools())

    def packed_bytes(self) -> bytes:
        """Exactly ceil(size/8) bytes, bit i of byte j = element 8j+i."""
        return self.words.view(np.uint8)[: (self.size + 7) // 8].tobytes()

    @classmethod
    def from_packed_bytes(cls, size: int, data: bytes) -> "BitSet":
        if len(data) != (size + 7) // 8:
            raise ValueError("packed byte length does not match size")
        out = cls(size)
        out.words.view(np.uint8)[: len(data)] = np.frombuffer(data, dtype=np.uint8)
        out._mask_tail()
        return out

    def _check(self, other: "BitSet") -> None:
        if self.size != other.size:
            raise ValueError("bit sets are over different universes")

    def __or__(self, other: "BitSet") -> "BitSet":
        return self.union(other)

    def __and__(self, other: "BitSet") -> "BitSet":
        return self.intersection(other)

    def __invert__(self) -> "BitSet":
        return self.complement()

    def __eq__(self, other) -> bool:
        if not isinstance(other, BitSet):
            return NotImplemented
        return self.size == other.size and bool(np.array_equal(self.words, other.words))

    def __hash__(self):
        raise TypeError("BitSet is mutable, not hashable")

    def __len__(self) -> int:
        return self.size

    def __repr__(self) -> str:
        return f"BitSet(size={self.size}, count={self.count()})"


# A bit set over point ids of one corpus.
IdSet = BitSet
# A bit set over node ids of one tree.
NodeSet = BitSet
