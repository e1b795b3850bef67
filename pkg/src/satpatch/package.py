"""Serialization of a ChangeSet to the .satpkg wire format.

Layout (all integers big-endian), then gzip'd as a whole at level 9 with
a zeroed timestamp so identical change sets encode to identical bytes:

    magic "SATL" | u8 version
    u32 window | u32 mask_bits | u32 min_size | u32 max_size
    32B source tree digest | 32B target tree digest
    u64 manifest length | manifest (UTF-8 text, one line per change)
    u32 segment count
    per segment: u16 path length | path | u32 run index | u64 length | bytes

Manifest lines are tab-separated: change code, percent-encoded path, and
for patches an op string like ``R5 D2 I3`` (line mode) or
``R2:100,200 I1:30`` (chunk mode, sizes after the colon). Segments are
keyed by (path, insert-run index) and stored sorted, one record per I run
and one record, run 0, per inserted file.

Decoding validates structure and raises a typed PackageError subclass;
it never touches the filesystem.
"""

from __future__ import annotations

import gzip
import io
import struct
import urllib.parse
import zlib

from .diffgen import (
    ChangeKind,
    ChangeSet,
    ChunkSpec,
    EditOp,
    FileChange,
    INSERT,
    split_lines,
)
from .errors import (
    BadMagicError,
    CorruptPackageError,
    ManifestError,
    PackageInconsistencyError,
    PathError,
    TruncatedPackageError,
    UnsupportedVersionError,
)
from .fstree import normalize_path

MAGIC = b"SATL"
PACKAGE_VERSION = 1

_DIGEST_LEN = 32
_CODES = {kind.value: kind for kind in ChangeKind}
_PATCH_KINDS = (ChangeKind.TEXT_PATCH, ChangeKind.CHUNK_PATCH)


def _format_ops(ops: tuple[EditOp, ...], with_sizes: bool) -> str:
    parts = []
    for op in ops:
        if with_sizes:
            parts.append(f"{op.kind}{op.count}:" + ",".join(map(str, op.unit_sizes)))
        else:
            parts.append(f"{op.kind}{op.count}")
    return " ".join(parts)


def _parse_ops(text: str, with_sizes: bool, line_no: int, path: str):
    ops = []
    for token in text.split(" "):
        if not token or token[0] not in "RDI":
            raise ManifestError(f"bad op token {token!r}", line_no, path)
        kind = token[0]
        body = token[1:]
        sizes = None
        if with_sizes:
            count_text, sep, sizes_text = body.partition(":")
            if not sep:
                raise ManifestError(f"op {token!r} lacks unit sizes", line_no, path)
            try:
                sizes = tuple(int(s) for s in sizes_text.split(","))
            except ValueError:
                raise ManifestError(f"bad unit sizes in {token!r}", line_no, path)
            if any(s < 1 for s in sizes):
                raise ManifestError(f"non-positive unit size in {token!r}", line_no, path)
        else:
            count_text = body
            if ":" in body:
                raise ManifestError(f"unexpected sizes in {token!r}", line_no, path)
        if not count_text.isdigit() or int(count_text) < 1:
            raise ManifestError(f"bad op count in {token!r}", line_no, path)
        count = int(count_text)
        if sizes is not None and len(sizes) != count:
            raise ManifestError(f"size list length mismatch in {token!r}", line_no, path)
        ops.append(EditOp(kind, count, sizes))
    return tuple(ops)


def _encode_manifest(changes: tuple[FileChange, ...]) -> bytes:
    lines = []
    for change in changes:
        fields = [change.kind.value, urllib.parse.quote(change.path, safe="/")]
        if change.kind in _PATCH_KINDS:
            fields.append(
                _format_ops(change.ops, change.kind is ChangeKind.CHUNK_PATCH)
            )
        lines.append("\t".join(fields))
    return "".join(line + "\n" for line in lines).encode("utf-8")


def _decode_manifest(blob: bytes) -> list[FileChange]:
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ManifestError(f"manifest is not valid UTF-8: {exc}")
    changes = []
    for line_no, line in enumerate(text.split("\n")[:-1], start=1):
        fields = line.split("\t")
        if len(fields) < 2:
            raise ManifestError("too few fields", line_no)
        kind = _CODES.get(fields[0])
        if kind is None:
            raise ManifestError(f"unknown change code {fields[0]!r}", line_no)
        try:
            path = normalize_path(urllib.parse.unquote(fields[1], errors="strict"))
        except (UnicodeDecodeError, PathError) as exc:
            raise ManifestError(f"bad path field: {exc}", line_no)
        if kind in _PATCH_KINDS:
            if len(fields) != 3:
                raise ManifestError("patch line needs an op field", line_no, path)
            ops = _parse_ops(
                fields[2], kind is ChangeKind.CHUNK_PATCH, line_no, path
            )
            changes.append(FileChange(path, kind, ops))
        else:
            if len(fields) != 2:
                raise ManifestError("unexpected extra fields", line_no, path)
            changes.append(FileChange(path, kind))
    if text and not text.endswith("\n"):
        raise ManifestError("manifest not newline-terminated", len(changes) + 1)
    return changes


def encode_package(changeset: ChangeSet) -> bytes:
    """Serialize and compress a ChangeSet. Deterministic."""
    spec = changeset.chunk_spec
    manifest = _encode_manifest(changeset.changes)
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack(">B", PACKAGE_VERSION))
    out.write(
        struct.pack(">IIII", spec.window, spec.mask_bits, spec.min_size, spec.max_size)
    )
    out.write(changeset.source_digest)
    out.write(changeset.target_digest)
    out.write(struct.pack(">Q", len(manifest)))
    out.write(manifest)
    records = []
    for change in changeset.changes:
        for run, segment in enumerate(change.segments):
            records.append((change.path.encode("utf-8"), run, segment))
    records.sort(key=lambda r: (r[0], r[1]))
    out.write(struct.pack(">I", len(records)))
    for path_bytes, run, segment in records:
        out.write(struct.pack(">H", len(path_bytes)))
        out.write(path_bytes)
        out.write(struct.pack(">IQ", run, len(segment)))
        out.write(segment)
    buf = io.BytesIO()
    with gzip.GzipFile(fileobj=buf, mode="wb", compresslevel=9, mtime=0) as gz:
        gz.write(out.getvalue())
    return buf.getvalue()


class _Cursor:
    """Bounds-checked reader over the decompressed container."""

    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise TruncatedPackageError(
                f"package ends inside {what} "
                f"(need {n} bytes at offset {self.pos}, have {len(self.blob) - self.pos})"
            )
        piece = self.blob[self.pos : self.pos + n]
        self.pos += n
        return piece

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def done(self) -> bool:
        return self.pos == len(self.blob)


def decode_package(blob: bytes) -> ChangeSet:
    """Parse and validate a package; raises a PackageError subclass."""
    try:
        container = gzip.decompress(blob)
    except EOFError as exc:
        raise TruncatedPackageError(f"compressed stream truncated: {exc}") from exc
    except (OSError, zlib.error) as exc:
        raise CorruptPackageError(f"compressed stream damaged: {exc}") from exc
    cur = _Cursor(container)
    if cur.take(len(MAGIC), "magic") != MAGIC:
        raise BadMagicError("not a satpatch package")
    (version,) = cur.unpack(">B", "version")
    if version != PACKAGE_VERSION:
        raise UnsupportedVersionError(f"package version {version} not supported")
    window, mask_bits, min_size, max_size = cur.unpack(">IIII", "chunk spec")
    try:
        spec = ChunkSpec(window, mask_bits, min_size, max_size)
    except ValueError as exc:
        raise CorruptPackageError(f"invalid chunk spec: {exc}") from exc
    source_digest = cur.take(_DIGEST_LEN, "source digest")
    target_digest = cur.take(_DIGEST_LEN, "target digest")
    (manifest_len,) = cur.unpack(">Q", "manifest length")
    changes = _decode_manifest(cur.take(manifest_len, "manifest"))
    (record_count,) = cur.unpack(">I", "segment count")
    segments: dict[tuple[str, int], bytes] = {}
    for _ in range(record_count):
        (path_len,) = cur.unpack(">H", "segment path length")
        try:
            path = cur.take(path_len, "segment path").decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorruptPackageError(f"segment path not UTF-8: {exc}") from exc
        run, seg_len = cur.unpack(">IQ", "segment header")
        data = cur.take(seg_len, "segment data")
        if (path, run) in segments:
            raise PackageInconsistencyError(
                f"duplicate segment record run {run}", path
            )
        segments[(path, run)] = data
    if not cur.done():
        raise CorruptPackageError(
            f"{len(container) - cur.pos} trailing bytes after last segment"
        )
    changes = _attach_segments(changes, segments)
    return ChangeSet(source_digest, target_digest, spec, tuple(changes))


def _attach_segments(
    changes: list[FileChange], segments: dict[tuple[str, int], bytes]
) -> list[FileChange]:
    """Join manifest entries with their payloads and cross-validate."""
    out = []
    claimed = set()
    for change in changes:
        if change.kind is ChangeKind.FILE_INSERT:
            needed = 1
        elif change.kind in _PATCH_KINDS:
            needed = sum(1 for op in change.ops if op.kind == INSERT)
        else:
            needed = 0
        attached = []
        for run in range(needed):
            key = (change.path, run)
            if key not in segments:
                raise PackageInconsistencyError(
                    f"missing segment for insert run {run}", change.path
                )
            if key in claimed:
                raise PackageInconsistencyError(
                    f"segment run {run} claimed twice", change.path
                )
            claimed.add(key)
            attached.append(segments[key])
        _check_segment_shapes(change, attached)
        out.append(
            FileChange(change.path, change.kind, change.ops, tuple(attached))
        )
    orphans = set(segments) - claimed
    if orphans:
        path, run = sorted(orphans)[0]
        raise PackageInconsistencyError(
            f"segment run {run} matches no manifest insert", path
        )
    return out


def _check_segment_shapes(change: FileChange, attached: list[bytes]):
    """Structural checks that do not require the old content."""
    if change.kind not in _PATCH_KINDS:
        return
    run = 0
    for op in change.ops:
        if op.kind != INSERT:
            continue
        segment = attached[run]
        if change.kind is ChangeKind.CHUNK_PATCH:
            if len(segment) != sum(op.unit_sizes):
                raise PackageInconsistencyError(
                    f"insert run {run} holds {len(segment)} bytes, "
                    f"op sizes sum to {sum(op.unit_sizes)}",
                    change.path,
                )
        else:
            if len(split_lines(segment)) != op.count:
                raise PackageInconsistencyError(
                    f"insert run {run} splits into {len(split_lines(segment))} "
                    f"lines, op covers {op.count}",
                    change.path,
                )
        run += 1


def package_size(changeset: ChangeSet) -> int:
    """Compressed byte size of the encoded package."""
    return len(encode_package(changeset))
