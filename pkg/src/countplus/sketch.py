"""Count+ summary: the counter matrix of a Count-Min sketch.

The sketch is an r x k matrix of non-negative counters.  Each of the r
replicate rows hashes items to one of k columns with an independent seeded
hash; updating adds the item's count to one counter per row.  Because counts
are non-negative, every counter an item hashes to is an upper bound on its
true count, and the counters an item does *not* hash to carry draws from the
collision-error distribution.  Estimation lives in other modules; this one
owns construction, merging, serialization, and stream ingestion.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

_U64_MAX = 2**64 - 1

MAGIC = b"CMX1"


class SketchFormatError(ValueError):
    """Raised when a serialized sketch cannot be decoded."""


class ConfigMismatchError(ValueError):
    """Raised when two sketches with different configs are combined."""


def _hash64(item: bytes, seed: int) -> int:
    """Seeded 64-bit hash of a byte string.

    blake2b is overkill for speed but gives avalanche-quality mixing, which
    the error model relies on (each hash should look like a fully random
    mapping).  The seed enters as the key so distinct seeds give independent
    mappings of the same item.
    """
    key = seed.to_bytes(8, "little")
    return int.from_bytes(
        hashlib.blake2b(item, digest_size=8, key=key).digest(), "little"
    )


def _as_bytes(item) -> bytes:
    if isinstance(item, bytes):
        return item
    if isinstance(item, str):
        return item.encode("utf-8")
    raise TypeError(f"item must be str or bytes, got {type(item).__name__}")


@dataclass(frozen=True)
class SketchConfig:
    """Shape and hash seeds of a sketch.  Immutable.

    depth: number of replicate rows (r).
    width: counters per row (k).
    seeds: one 64-bit seed per row; pairwise distinct.
    """

    depth: int
    width: int
    seeds: tuple[int, ...]

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError(f"depth must be >= 1, got {self.depth}")
        if self.width < 1:
            raise ValueError(f"width must be >= 1, got {self.width}")
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if len(self.seeds) != self.depth:
            raise ValueError(
                f"need {self.depth} seeds, got {len(self.seeds)}"
            )
        if len(set(self.seeds)) != len(self.seeds):
            raise ValueError("seeds must be pairwise distinct")
        for s in self.seeds:
            if not 0 <= s <= _U64_MAX:
                raise ValueError("seeds must fit in 64 bits")

    @classmethod
    def from_master_seed(cls, depth: int, width: int, master_seed: int = 0):
        """Derive per-row seeds from one master seed (convenience only;
        seeds are stored explicitly so the sketch is reproducible without
        knowing the derivation)."""
        rng = np.random.default_rng(master_seed)
        seeds: set[int] = set()
        while len(seeds) < depth:
            seeds.add(int(rng.integers(0, _U64_MAX, dtype=np.uint64)))
        return cls(depth=depth, width=width, seeds=tuple(sorted(seeds)))


@dataclass(frozen=True)
class IndexSet:
    """The r (row, column) counter positions a query touches."""

    pairs: tuple[tuple[int, int], ...]

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def flat(self, width: int) -> np.ndarray:
        """Positions in the row-major flattening of the counter matrix."""
        return np.array([a * width + i for a, i in self.pairs], dtype=np.int64)

    @staticmethod
    def union(sets: Iterable["IndexSet"]) -> "IndexSet":
        seen = []
        have = set()
        for s in sets:
            for p in s.pairs:
                if p not in have:
                    have.add(p)
                    seen.append(p)
        return IndexSet(pairs=tuple(seen))


class CountPlusSketch:
    """r x k counter matrix with running total count.

    Counters are unsigned 64-bit and only ever increase; an update that
    would overflow raises instead of wrapping.  Updates need exclusive
    access; reads are safe once writes quiesce.
    """

    def __init__(self, config: SketchConfig):
        self.config = config
        self.counters = np.zeros((config.depth, config.width), dtype=np.uint64)
        self.total_count = 0
        self.distinct_hint: Optional[int] = None
        self._epoch = 0

    # -- construction ------------------------------------------------------

    @property
    def depth(self) -> int:
        return self.config.depth

    @property
    def width(self) -> int:
        return self.config.width

    @property
    def epoch(self) -> int:
        """Monotone counter bumped on every mutation."""
        return self._epoch

    def columns_for(self, item) -> np.ndarray:
        data = _as_bytes(item)
        k = self.config.width
        return np.array(
            [_hash64(data, s) % k for s in self.config.seeds], dtype=np.int64
        )

    def indices(self, item) -> IndexSet:
        """The counters `item` hashes to, one per row."""
        cols = self.columns_for(item)
        return IndexSet(pairs=tuple((a, int(c)) for a, c in enumerate(cols)))

    def update(self, item, count: int = 1) -> "CountPlusSketch":
        """Add `count` occurrences of `item`.  count must be >= 0."""
        count = int(count)
        if count < 0:
            raise ValueError(
                f"count must be non-negative (one-sided errors), got {count}"
            )
        cols = self.columns_for(item)
        if count > 0:
            rows = np.arange(self.config.depth)
            current = self.counters[rows, cols]
            if np.any(current > _U64_MAX - count):
                raise OverflowError("counter would exceed 64 bits")
            self.counters[rows, cols] = current + np.uint64(count)
            self.total_count += count
        self._epoch += 1
        return self

    def update_many(self, pairs: Iterable[tuple]) -> "CountPlusSketch":
        for item, count in pairs:
            self.update(item, count)
        return self

    def counter_values(self, index_set: IndexSet) -> np.ndarray:
        return np.array(
            [int(self.counters[a, i]) for a, i in index_set.pairs], dtype=np.int64
        )

    def design_row(self, item) -> np.ndarray:
        """The 0/1 covariate row for `item`: length r*k, exactly r ones.

        This is the row of the implicit random-projection matrix; the
        counter vector equals the sum of design rows weighted by counts.
        """
        row = np.zeros(self.config.depth * self.config.width, dtype=np.float64)
        row[self.indices(item).flat(self.config.width)] = 1.0
        return row

    # -- combination -------------------------------------------------------

    def merge(self, other: "CountPlusSketch") -> "CountPlusSketch":
        """Elementwise sum of two sketches built with identical configs."""
        if self.config != other.config:
            raise ConfigMismatchError("cannot merge sketches with different configs")
        out = CountPlusSketch(self.config)
        if np.any(other.counters > _U64_MAX - self.counters):
            raise OverflowError("merged counter would exceed 64 bits")
        out.counters = self.counters + other.counters
        out.total_count = self.total_count + other.total_count
        if self.distinct_hint is not None and other.distinct_hint is not None:
            out.distinct_hint = self.distinct_hint + other.distinct_hint
        out._epoch = 1
        return out

    # -- serialization -----------------------------------------------------

    def serialize(self) -> bytes:
        """Versioned binary format, checksummed.

        Layout: magic "CMX1" | u32 r | u32 k | r*u64 seeds | u64 total_count
        | r*k u64 counters row-major | u64 checksum of everything before it.
        All integers little-endian.
        """
        head = MAGIC + struct.pack(
            "<II", self.config.depth, self.config.width
        )
        head += struct.pack(f"<{self.config.depth}Q", *self.config.seeds)
        head += struct.pack("<Q", self.total_count)
        body = self.counters.astype("<u8").tobytes(order="C")
        payload = head + body
        checksum = _checksum64(payload)
        return payload + struct.pack("<Q", checksum)

    @classmethod
    def deserialize(cls, blob: bytes) -> "CountPlusSketch":
        if len(blob) < 4 or blob[:4] != MAGIC:
            raise SketchFormatError("bad magic; not a CMX1 sketch")
        if len(blob) < 4 + 8 + 8 + 8:
            raise SketchFormatError("truncated payload")
        payload, (stored,) = blob[:-8], struct.unpack("<Q", blob[-8:])
        if _checksum64(payload) != stored:
            raise SketchFormatError("checksum mismatch; payload corrupted")
        r, k = struct.unpack("<II", payload[4:12])
        need = 12 + 8 * r + 8 + 8 * r * k
        if len(payload) != need:
            raise SketchFormatError(
                f"payload length {len(payload)} != expected {need}"
            )
        seeds = struct.unpack(f"<{r}Q", payload[12 : 12 + 8 * r])
        (total,) = struct.unpack("<Q", payload[12 + 8 * r : 20 + 8 * r])
        sketch = cls(SketchConfig(depth=r, width=k, seeds=seeds))
        counters = np.frombuffer(payload[20 + 8 * r :], dtype="<u8")
        sketch.counters = counters.reshape(r, k).astype(np.uint64)
        sketch.total_count = int(total)
        return sketch

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "CountPlusSketch":
        with open(path, "rb") as fh:
            return cls.deserialize(fh.read())

    def __eq__(self, other) -> bool:
        if not isinstance(other, CountPlusSketch):
            return NotImplemented
        return (
            self.config == other.config
            and self.total_count == other.total_count
            and np.array_equal(self.counters, other.counters)
        )

    def __repr__(self) -> str:
        return (
            f"CountPlusSketch(r={self.config.depth}, k={self.config.width}, "
            f"total_count={self.total_count})"
        )


def _checksum64(data: bytes) -> int:
    # 64-bit integrity checksum (blake2b truncated; not a security boundary).
    return int.from_bytes(
        hashlib.blake2b(data, digest_size=8).digest(), "little"
    )


def sketch_stream(
    pairs: Iterable[tuple], depth: int, width: int, master_seed: int = 0
) -> CountPlusSketch:
    """Build a sketch from (item, count) pairs with derived seeds."""
    sk = CountPlusSketch(SketchConfig.from_master_seed(depth, width, master_seed))
    sk.update_many(pairs)
    return sk


@dataclass
class IngestStats:
    lines_read: int = 0
    lines_skipped: int = 0
    errors: list = field(default_factory=list)


class IngestError(ValueError):
    pass


def parse_tsv_line(line: str, lineno: int) -> tuple[str, int]:
    """One `item<TAB>count` line; a missing count field means count=1."""
    row = line.rstrip("\n").rstrip("\r")
    if not row:
        raise IngestError(f"line {lineno}: empty line")
    parts = row.split("\t")
    if len(parts) == 1:
        return parts[0], 1
    if len(parts) == 2:
        try:
            count = int(parts[1])
        except ValueError:
            raise IngestError(f"line {lineno}: count {parts[1]!r} is not an integer")
        if count < 0:
            raise IngestError(f"line {lineno}: negative count {count}")
        return parts[0], count
    raise IngestError(f"line {lineno}: expected item<TAB>count, got {len(parts)} fields")


def ingest_tsv(
    lines: Iterable[str],
    sketch: CountPlusSketch,
    strict: bool = True,
) -> IngestStats:
    """Feed a TSV stream into `sketch`.

    strict: abort on the first malformed line; lenient skips and counts.
    """
    stats = IngestStats()
    for lineno, line in enumerate(lines, start=1):
        if line.strip() == "":
            continue
        try:
            item, count = parse_tsv_line(line, lineno)
        except IngestError as exc:
            if strict:
                raise
            stats.lines_skipped += 1
            stats.errors.append(str(exc))
            continue
        sketch.update(item, count)
        stats.lines_read += 1
    return stats
