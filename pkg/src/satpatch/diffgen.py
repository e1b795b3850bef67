"""Delta computation between two application trees.

Changed files are diffed at unit granularity: textual files as lines,
binary files as content-defined chunks. Unit sequences are compared with
a Myers shortest-edit-script search (linear-space middle-snake variant),
so the emitted script has the provably minimal number of deleted and
inserted units. Scripts are run-length encoded as R (retain), D (delete),
I (insert) operations; inserted bytes ride alongside as one segment per
I run.

Chunk-mode operations carry the byte length of every unit they cover.
The receiver replays them by advancing byte counts through its local old
content and never has to re-chunk anything.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .errors import TreeError
from .fstree import FileTree, tree_digest

RETAIN = "R"
DELETE = "D"
INSERT = "I"


@dataclass(frozen=True)
class ChunkSpec:
    """Parameters of the content-defined chunker.

    A chunk boundary falls where the rolling hash of the trailing
    ``window`` bytes has ``mask_bits`` low zero bits, subject to
    ``min_size``/``max_size`` clamps. Both producer and receiver must use
    the same spec, so it travels in the package header.
    """

    window: int = 48
    mask_bits: int = 11
    min_size: int = 256
    max_size: int = 16384

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be positive")
        if not 0 <= self.mask_bits <= 32:
            raise ValueError("mask_bits out of range")
        if not 0 < self.min_size <= self.max_size:
            raise ValueError("need 0 < min_size <= max_size")


DEFAULT_CHUNK_SPEC = ChunkSpec()


@dataclass(frozen=True)
class EditOp:
    """One run-length edit: retain/delete/insert ``count`` units.

    ``unit_sizes`` is None for line-mode scripts. Chunk-mode scripts set
    it on every op (one byte length per unit) because the receiver walks
    its old content by byte counts instead of re-chunking.
    """

    kind: str
    count: int
    unit_sizes: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.kind not in (RETAIN, DELETE, INSERT):
            raise ValueError(f"unknown op kind {self.kind!r}")
        if self.count < 1:
            raise ValueError("op count must be positive")
        if self.unit_sizes is not None and len(self.unit_sizes) != self.count:
            raise ValueError("unit_sizes length must equal count")


class ChangeKind(Enum):
    DIR_INSERT = "D+"
    DIR_DELETE = "D-"
    FILE_INSERT = "F+"
    FILE_DELETE = "F-"
    TEXT_PATCH = "T~"
    CHUNK_PATCH = "B~"


@dataclass(frozen=True)
class FileChange:
    """One manifest entry: what happened to one path.

    Patches carry an edit script plus the inserted-byte segments, in I-op
    order. A file insert is a single segment holding the whole content.
    """

    path: str
    kind: ChangeKind
    ops: tuple[EditOp, ...] = ()
    segments: tuple[bytes, ...] = ()


@dataclass(frozen=True)
class ChangeSet:
    """Complete delta between two tree versions, in apply order.

    Apply order is: file deletes, directory deletes (children first),
    directory inserts (parents first), file inserts, patches. Source and
    target digests pin the exact versions the delta connects.
    """

    source_digest: bytes
    target_digest: bytes
    chunk_spec: ChunkSpec
    changes: tuple[FileChange, ...]

    def segment_bytes(self) -> int:
        return sum(len(s) for c in self.changes for s in c.segments)


# -- unit splitting ----------------------------------------------------------


def split_lines(data: bytes) -> list[bytes]:
    """Split into lines, each keeping its 0x0A terminator.

    An unterminated tail is its own line, so the concatenation of the
    result always reproduces the input exactly.
    """
    out = []
    start = 0
    while True:
        idx = data.find(b"\n", start)
        if idx < 0:
            break
        out.append(data[start : idx + 1])
        start = idx + 1
    if start < len(data):
        out.append(data[start:])
    return out


# Rolling-hash tables. The multiplier is odd, hence invertible mod 2**64,
# which lets window hashes come out of two prefix sums. Byte weights are
# drawn from SHA-256 so every input byte disturbs all 64 hash bits.
_HASH_MULT = np.uint64(1000000007)
_HASH_MULT_INV = np.uint64(pow(1000000007, -1, 2**64))
_BYTE_WEIGHTS = np.array(
    [
        int.from_bytes(hashlib.sha256(bytes([v])).digest()[:8], "big")
        for v in range(256)
    ],
    dtype=np.uint64,
)


def _boundary_candidates(data: bytes, spec: ChunkSpec) -> np.ndarray:
    """Positions where a full hash window ends with the masked bits zero.

    The window hash is sum(weight[data[pos-j]] * mult**j for j < window),
    a pure function of window content, so candidates are stable under
    shifts of the surrounding data. Computed via prefix sums: with
    C(i) = sum(w[k] * mult**-k, k <= i), the hash at pos is
    mult**pos * (C(pos) - C(pos - window)). All arithmetic is uint64
    wraparound.
    """
    n = len(data)
    w = spec.window
    if n < w:
        return np.empty(0, dtype=np.int64)
    weights = _BYTE_WEIGHTS[np.frombuffer(data, dtype=np.uint8)]
    inv_pows = np.empty(n, dtype=np.uint64)
    inv_pows[0] = 1
    pows = np.empty(n, dtype=np.uint64)
    pows[0] = 1
    if n > 1:
        np.cumprod(np.full(n - 1, _HASH_MULT_INV, dtype=np.uint64), out=inv_pows[1:])
        np.cumprod(np.full(n - 1, _HASH_MULT, dtype=np.uint64), out=pows[1:])
    csum = np.cumsum(weights * inv_pows, dtype=np.uint64)
    upper = csum[w - 1 :]
    lower = np.concatenate((np.zeros(1, dtype=np.uint64), csum[: n - w]))
    hashes = pows[w - 1 :] * (upper - lower)
    mask = np.uint64((1 << spec.mask_bits) - 1)
    return np.flatnonzero((hashes & mask) == 0) + (w - 1)


def chunk_lengths(data: bytes, spec: ChunkSpec = DEFAULT_CHUNK_SPEC) -> list[int]:
    """Byte lengths of the content-defined chunks of ``data``, in order."""
    n = len(data)
    if n == 0:
        return []
    cands = _boundary_candidates(data, spec)
    lengths = []
    start = 0
    while start < n:
        hi = min(start + spec.max_size, n) - 1
        lo = start + spec.min_size - 1
        end = hi
        if lo < hi:
            i = int(np.searchsorted(cands, lo, side="left"))
            if i < cands.size and cands[i] < hi:
                end = int(cands[i])
        lengths.append(end - start + 1)
        start = end + 1
    return lengths


def chunkify(data: bytes, spec: ChunkSpec = DEFAULT_CHUNK_SPEC) -> list[bytes]:
    """Split ``data`` into content-defined chunks; b"".join(...) round-trips."""
    chunks = []
    start = 0
    for length in chunk_lengths(data, spec):
        chunks.append(data[start : start + length])
        start += length
    return chunks


# -- shortest edit script ----------------------------------------------------


def _middle_snake(a: Sequence[int], b: Sequence[int], a0, a1, b0, b1):
    """Middle snake of the shortest edit path through a[a0:a1] x b[b0:b1].

    Bidirectional greedy search: forward and reverse furthest-reaching
    D-paths meet near the middle, giving the edit distance d and a snake
    (x, y) -> (u, v) in absolute indices that splits the problem in two.
    Reverse paths are tracked in reversed coordinates; the diagonal k of
    the forward space maps to delta - k in reverse space.
    """
    n = a1 - a0
    m = b1 - b0
    delta = n - m
    odd = delta & 1
    half = (n + m + 1) // 2
    off = half + 1
    vf = [0] * (2 * half + 3)
    vr = [0] * (2 * half + 3)
    for d in range(half + 1):
        for k in range(-d, d + 1, 2):
            if k == -d or (k != d and vf[off + k - 1] < vf[off + k + 1]):
                x = vf[off + k + 1]
            else:
                x = vf[off + k - 1] + 1
            y = x - k
            sx = x
            while x < n and y < m and a[a0 + x] == b[b0 + y]:
                x += 1
                y += 1
            vf[off + k] = x
            if odd and delta - (d - 1) <= k <= delta + (d - 1):
                if vf[off + k] + vr[off + delta - k] >= n:
                    return 2 * d - 1, a0 + sx, b0 + sx - k, a0 + x, b0 + y
        for k in range(-d, d + 1, 2):
            if k == -d or (k != d and vr[off + k - 1] < vr[off + k + 1]):
                x = vr[off + k + 1]
            else:
                x = vr[off + k - 1] + 1
            y = x - k
            sx, sy = x, y
            while x < n and y < m and a[a1 - 1 - x] == b[b1 - 1 - y]:
                x += 1
                y += 1
            vr[off + k] = x
            if not odd and -d <= delta - k <= d:
                if vr[off + k] + vf[off + delta - k] >= n:
                    return 2 * d, a0 + n - x, b0 + m - y, a0 + n - sx, b0 + m - sy
    raise AssertionError("edit path search failed to converge")


def _ses(a, b, a0, a1, b0, b1, out):
    """Append raw ops for a[a0:a1] -> b[b0:b1] to ``out``.

    Raw ops are ('R', n), ('D', n), or ('I', b_start, n); insert payloads
    are ranges of b so nothing is copied until final assembly.
    """
    run = 0
    while a0 < a1 and b0 < b1 and a[a0] == b[b0]:
        a0 += 1
        b0 += 1
        run += 1
    if run:
        out.append((RETAIN, run))
    tail = 0
    while a1 > a0 and b1 > b0 and a[a1 - 1] == b[b1 - 1]:
        a1 -= 1
        b1 -= 1
        tail += 1
    if a0 < a1 or b0 < b1:
        if a0 == a1:
            out.append((INSERT, b0, b1 - b0))
        elif b0 == b1:
            out.append((DELETE, a1 - a0))
        else:
            _, x, y, u, v = _middle_snake(a, b, a0, a1, b0, b1)
            _ses(a, b, a0, x, b0, y, out)
            if u > x:
                out.append((RETAIN, u - x))
            _ses(a, b, u, a1, v, b1, out)
    if tail:
        out.append((RETAIN, tail))


def diff_units(old_units: Sequence, new_units: Sequence) -> list[tuple]:
    """Canonical minimal edit script between two unit sequences.

    Returns raw ops ('R', n) / ('D', n) / ('I', new_start, n). Canonical
    form: adjacent ops of one kind are merged and, between two retains,
    the delete precedes the insert. Reordering within such a region is
    replay-equivalent because deletes consume only old units and inserts
    only new ones.
    """
    table: dict = {}
    a = [table.setdefault(u, len(table)) for u in old_units]
    start = len(table)
    b = [table.setdefault(u, len(table)) for u in new_units]
    raw: list[tuple] = []
    if not a and not b:
        return []
    if not any(u < start for u in b):
        # No unit occurs on both sides: the trivial script is minimal.
        if a:
            raw.append((DELETE, len(a)))
        if b:
            raw.append((INSERT, 0, len(b)))
    else:
        _ses(a, b, 0, len(a), 0, len(b), raw)
    return _canonicalize(raw)


def _canonicalize(raw: Iterable[tuple]) -> list[tuple]:
    out: list[tuple] = []
    retain = 0
    deleted = 0
    inserted: tuple | None = None  # (b_start, n), contiguous within a region
    def flush_edits():
        nonlocal deleted, inserted
        if deleted:
            out.append((DELETE, deleted))
            deleted = 0
        if inserted is not None:
            out.append((INSERT, inserted[0], inserted[1]))
            inserted = None
    def flush_retain():
        nonlocal retain
        if retain:
            out.append((RETAIN, retain))
            retain = 0
    for op in raw:
        if op[0] == RETAIN:
            flush_edits()
            retain += op[1]
        elif op[0] == DELETE:
            flush_retain()
            deleted += op[1]
        else:
            flush_retain()
            if inserted is None:
                inserted = (op[1], op[2])
            else:
                # I runs separated only by deletes consume adjacent new
                # units, so they concatenate into one run.
                inserted = (inserted[0], inserted[1] + op[2])
    flush_edits()
    flush_retain()
    return out


def _assemble(
    raw: list[tuple],
    old_units: Sequence[bytes],
    new_units: Sequence[bytes],
    with_sizes: bool,
) -> tuple[tuple[EditOp, ...], tuple[bytes, ...]]:
    ops: list[EditOp] = []
    segments: list[bytes] = []
    i = j = 0
    for op in raw:
        if op[0] == RETAIN:
            n = op[1]
            sizes = tuple(len(u) for u in old_units[i : i + n]) if with_sizes else None
            ops.append(EditOp(RETAIN, n, sizes))
            i += n
            j += n
        elif op[0] == DELETE:
            n = op[1]
            sizes = tuple(len(u) for u in old_units[i : i + n]) if with_sizes else None
            ops.append(EditOp(DELETE, n, sizes))
            i += n
        else:
            _, b_start, n = op
            assert b_start == j, "insert runs must consume new units in order"
            sizes = tuple(len(u) for u in new_units[j : j + n]) if with_sizes else None
            ops.append(EditOp(INSERT, n, sizes))
            segments.append(b"".join(new_units[j : j + n]))
            j += n
    assert i == len(old_units) and j == len(new_units)
    return tuple(ops), tuple(segments)


def line_diff(old: bytes, new: bytes) -> tuple[tuple[EditOp, ...], tuple[bytes, ...]]:
    """Minimal line-level edit script for textual content."""
    old_units = split_lines(old)
    new_units = split_lines(new)
    raw = diff_units(old_units, new_units)
    return _assemble(raw, old_units, new_units, with_sizes=False)


def chunk_diff(
    old: bytes, new: bytes, spec: ChunkSpec = DEFAULT_CHUNK_SPEC
) -> tuple[tuple[EditOp, ...], tuple[bytes, ...]]:
    """Minimal chunk-level edit script for binary content."""
    old_units = chunkify(old, spec)
    new_units = chunkify(new, spec)
    raw = diff_units(old_units, new_units)
    return _assemble(raw, old_units, new_units, with_sizes=True)


# -- tree comparison ---------------------------------------------------------


def compare_trees(
    old: FileTree, new: FileTree, spec: ChunkSpec = DEFAULT_CHUNK_SPEC
) -> ChangeSet:
    """Compute the ChangeSet turning ``old`` into ``new``.

    Files matching by content hash are skipped entirely. A changed file
    is line-diffed when both versions classify as textual, chunk-diffed
    otherwise. A path whose kind flips becomes a delete plus an insert.
    """
    file_del: list[FileChange] = []
    dir_del: list[FileChange] = []
    dir_ins: list[FileChange] = []
    file_ins: list[FileChange] = []
    patches: list[FileChange] = []

    def delete(path, entry):
        if entry.is_dir:
            dir_del.append(FileChange(path, ChangeKind.DIR_DELETE))
        else:
            file_del.append(FileChange(path, ChangeKind.FILE_DELETE))

    def insert(path, entry):
        if entry.is_dir:
            dir_ins.append(FileChange(path, ChangeKind.DIR_INSERT))
        else:
            file_ins.append(
                FileChange(path, ChangeKind.FILE_INSERT, segments=(entry.content,))
            )

    for path in sorted(
        set(old.paths()) | set(new.paths()), key=lambda p: p.encode("utf-8")
    ):
        o = old.get(path)
        n = new.get(path)
        if o is None and n is not None:
            insert(path, n)
        elif o is not None and n is None:
            delete(path, o)
        elif o.kind is not n.kind:
            delete(path, o)
            insert(path, n)
        elif o.is_file and o.content_hash != n.content_hash:
            if o.textual and n.textual:
                ops, segments = line_diff(o.content, n.content)
                patches.append(
                    FileChange(path, ChangeKind.TEXT_PATCH, ops, segments)
                )
            else:
                ops, segments = chunk_diff(o.content, n.content, spec)
                patches.append(
                    FileChange(path, ChangeKind.CHUNK_PATCH, ops, segments)
                )
    dir_del.reverse()  # children before parents
    changes = tuple(file_del + dir_del + dir_ins + file_ins + patches)
    return ChangeSet(tree_digest(old), tree_digest(new), spec, changes)


def retained_bytes(change: FileChange, new_content: bytes) -> int:
    """Bytes of the new file content that the script retains from the old.

    Used for modification-ratio accounting. Chunk ops carry their sizes;
    line ops are measured against the new content's line lengths.
    """
    if change.kind is ChangeKind.CHUNK_PATCH:
        return sum(
            sum(op.unit_sizes) for op in change.ops if op.kind == RETAIN
        )
    if change.kind is not ChangeKind.TEXT_PATCH:
        raise TreeError(f"not a patch change: {change.kind}")
    lines = split_lines(new_content)
    total = 0
    j = 0
    for op in change.ops:
        if op.kind == RETAIN:
            total += sum(len(l) for l in lines[j : j + op.count])
            j += op.count
        elif op.kind == INSERT:
            j += op.count
    return total
