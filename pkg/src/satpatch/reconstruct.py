"""Onboard reconstruction: replay a ChangeSet against the installed tree.

Apply is transactional. The input FileTree is never mutated; the updated
tree is built on the side and only returned once every edit script
replayed cleanly and the result's digest equals the packaged target
digest. Any failure raises an ApplyError subclass and leaves the caller's
tree exactly as it was.

Chunk-mode scripts are replayed by byte counts taken from the op
annotations, so the receiver never re-chunks its local content.
"""

from __future__ import annotations

import os
import shutil
from dataclasses import dataclass
from pathlib import Path

from .diffgen import (
    ChangeKind,
    ChangeSet,
    DELETE,
    FileChange,
    INSERT,
    RETAIN,
    split_lines,
)
from .errors import (
    BaseVersionMismatchError,
    DigestMismatchError,
    EditScriptError,
    SegmentCountError,
    TreeError,
)
from .fstree import Entry, FileTree, materialize, tree_digest
from .package import decode_package


@dataclass(frozen=True)
class ApplyReport:
    """What an apply did: entry counts, payload size, resulting digest.

    ``verified`` records whether the result digest equals the packaged
    target digest. ``mismatch`` lists offending paths; the wire format
    only carries a whole-tree expectation, so it is empty today and the
    tree digest is the verdict.
    """

    files_added: int = 0
    files_deleted: int = 0
    files_patched: int = 0
    dirs_added: int = 0
    dirs_deleted: int = 0
    bytes_received: int = 0
    bytes_written: int = 0
    target_digest: bytes = b""
    verified: bool = False
    mismatch: tuple[str, ...] = ()

    @property
    def changes_applied(self) -> int:
        return (
            self.files_added
            + self.files_deleted
            + self.files_patched
            + self.dirs_added
            + self.dirs_deleted
        )


def _check_segments(change: FileChange) -> None:
    inserts = sum(1 for op in change.ops if op.kind == INSERT)
    if inserts != len(change.segments):
        raise SegmentCountError(
            f"{change.path!r}: {inserts} insert runs but "
            f"{len(change.segments)} segments"
        )


def _replay_lines(old: bytes, change: FileChange) -> bytes:
    _check_segments(change)
    lines = split_lines(old)
    out: list[bytes] = []
    pos = 0
    seg = iter(change.segments)
    for op in change.ops:
        if op.kind == INSERT:
            segment = next(seg)
            if len(split_lines(segment)) != op.count:
                raise EditScriptError(
                    f"{change.path!r}: insert run is not {op.count} lines"
                )
            out.append(segment)
            continue
        if pos + op.count > len(lines):
            raise EditScriptError(
                f"{change.path!r}: script walks past line {len(lines)}"
            )
        if op.kind == RETAIN:
            out.extend(lines[pos : pos + op.count])
        pos += op.count
    if pos != len(lines):
        raise EditScriptError(
            f"{change.path!r}: script consumed {pos} of {len(lines)} lines"
        )
    return b"".join(out)


def _replay_chunks(old: bytes, change: FileChange) -> bytes:
    _check_segments(change)
    out: list[bytes] = []
    pos = 0
    seg = iter(change.segments)
    for op in change.ops:
        if op.unit_sizes is None:
            raise EditScriptError(f"{change.path!r}: chunk op lacks unit sizes")
        span = sum(op.unit_sizes)
        if op.kind == INSERT:
            segment = next(seg)
            if len(segment) != span:
                raise EditScriptError(
                    f"{change.path!r}: segment is {len(segment)} bytes, "
                    f"op spans {span}"
                )
            out.append(segment)
            continue
        if pos + span > len(old):
            raise EditScriptError(
                f"{change.path!r}: script walks past byte {len(old)}"
            )
        if op.kind == RETAIN:
            out.append(old[pos : pos + span])
        pos += span
    if pos != len(old):
        raise EditScriptError(
            f"{change.path!r}: script consumed {pos} of {len(old)} bytes"
        )
    return b"".join(out)


def apply_file(old: bytes, change: FileChange) -> bytes:
    """Replay a single patch against old file content."""
    if change.kind is ChangeKind.TEXT_PATCH:
        return _replay_lines(old, change)
    if change.kind is ChangeKind.CHUNK_PATCH:
        return _replay_chunks(old, change)
    raise EditScriptError(f"{change.path!r}: not a patch change ({change.kind})")


def apply_changeset(
    tree: FileTree,
    changeset: ChangeSet,
    *,
    verify_source: bool = True,
    verify_target: bool = True,
) -> tuple[FileTree, ApplyReport]:
    """Apply a ChangeSet, returning the new tree and a report.

    ``verify_source`` rejects a delta built against a different base up
    front; ``verify_target`` compares the result digest with the packaged
    one. Both default on; disabling them is for tooling that patches
    unrelated trees on purpose.
    """
    if verify_source and tree_digest(tree) != changeset.source_digest:
        raise BaseVersionMismatchError(
            f"package was built against source {changeset.source_digest.hex()[:16]}, "
            f"tree digest is {tree_digest(tree).hex()[:16]}"
        )
    entries = dict(tree.items())
    added_f = deleted_f = patched = added_d = deleted_d = written = 0
    for change in changeset.changes:
        path = change.path
        entry = entries.get(path)
        kind = change.kind
        if kind is ChangeKind.FILE_DELETE:
            if entry is None or not entry.is_file:
                raise EditScriptError(f"{path!r}: no such file to delete")
            del entries[path]
            deleted_f += 1
        elif kind is ChangeKind.DIR_DELETE:
            if entry is None or not entry.is_dir:
                raise EditScriptError(f"{path!r}: no such directory to delete")
            prefix = path + "/"
            if any(p.startswith(prefix) for p in entries):
                raise EditScriptError(f"{path!r}: directory still has children")
            del entries[path]
            deleted_d += 1
        elif kind is ChangeKind.DIR_INSERT:
            if entry is not None:
                raise EditScriptError(f"{path!r}: insert over existing entry")
            entries[path] = Entry.directory()
            added_d += 1
        elif kind is ChangeKind.FILE_INSERT:
            if entry is not None:
                raise EditScriptError(f"{path!r}: insert over existing entry")
            if len(change.segments) != 1:
                raise SegmentCountError(
                    f"{path!r}: file insert needs exactly one segment"
                )
            entries[path] = Entry.file(change.segments[0])
            written += len(change.segments[0])
            added_f += 1
        else:
            if entry is None or not entry.is_file:
                raise EditScriptError(f"{path!r}: no such file to patch")
            content = apply_file(entry.content, change)
            entries[path] = Entry.file(content)
            written += len(content)
            patched += 1
    try:
        new_tree = FileTree(tree.root_label, entries)
    except TreeError as exc:
        raise EditScriptError(f"result is not a valid tree: {exc}") from exc
    result_digest = tree_digest(new_tree)
    if verify_target and result_digest != changeset.target_digest:
        raise DigestMismatchError(
            changeset.target_digest.hex(), result_digest.hex()
        )
    report = ApplyReport(
        files_added=added_f,
        files_deleted=deleted_f,
        files_patched=patched,
        dirs_added=added_d,
        dirs_deleted=deleted_d,
        bytes_received=changeset.segment_bytes(),
        bytes_written=written,
        target_digest=result_digest,
        verified=result_digest == changeset.target_digest,
    )
    return new_tree, report


def apply_package(
    tree: FileTree, blob: bytes, **kwargs
) -> tuple[FileTree, ApplyReport]:
    """Decode a package and apply it. Decode errors surface before any
    replay work starts, so a damaged package can never half-apply.
    """
    return apply_changeset(tree, decode_package(blob), **kwargs)


def replace_directory(tree: FileTree, dest: str | Path) -> None:
    """Swap ``dest`` to hold ``tree``, building the new copy on the side.

    The new tree is materialized next to ``dest`` and moved into place
    with two renames. A crash can leave a ``.old``/``.new`` sibling
    behind but never a half-written ``dest``.
    """
    dest = Path(dest)
    if not dest.is_dir():
        raise TreeError(f"not a directory: {dest}")
    staging = dest.parent / (dest.name + ".satpatch-new")
    retired = dest.parent / (dest.name + ".satpatch-old")
    for leftover in (staging, retired):
        if leftover.exists():
            shutil.rmtree(leftover)
    materialize(tree, staging)
    os.rename(dest, retired)
    os.rename(staging, dest)
    shutil.rmtree(retired)
