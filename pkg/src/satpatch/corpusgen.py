"""Synthetic update variants at controlled modification ratios.

Variants are built from a seed tree by stacking semantically neutral
textual edits (inserted comments, log statements, inactive conditionals,
unused variables; deleted comment/log/import lines) until the
modification ratio crosses the target, plus occasional chunk-local byte
flips in binary files. Existing non-comment, non-log lines are never
reordered or rewritten, only surrounded or removed, which is the proxy
for task-goal equivalence here.

Every inserted line carries a unique serial marker. That keeps inserted
lines distinct from all original lines, so the generator can track the
preserved-byte count incrementally and only needs a full metric pass to
confirm the final tree.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from fractions import Fraction

from .diffgen import ChunkSpec, DEFAULT_CHUNK_SPEC, chunk_diff, chunk_lengths
from .errors import VariantError
from .fstree import FileTree
from .linksim import modification_ratio

INSERTION_KINDS = ("comments", "logging", "inactive_conditionals", "unused_variables")
DELETION_KINDS = ("redundant_comments", "unused_imports", "logs")

_WORDS = (
    "telemetry frame sensor gain offset buffer cache probe flight orbit "
    "attitude thermal payload packet filter window margin clock sync state"
).split()


@dataclass(frozen=True)
class VariantSpec:
    """Recipe for one variant: target, seed, and the edit taxonomy mix."""

    target_ratio: float
    seed: int
    edit_mix: tuple[float, float] = (0.7, 0.3)  # insertions, deletions
    textual_edit_kinds: tuple[str, ...] = INSERTION_KINDS
    deletion_kinds: tuple[str, ...] = DELETION_KINDS

    def __post_init__(self):
        if not 0 <= self.target_ratio < 1:
            raise ValueError("target_ratio must be in [0, 1)")
        if len(self.edit_mix) != 2 or min(self.edit_mix) < 0:
            raise ValueError("edit_mix is (insertions, deletions), both >= 0")
        if abs(sum(self.edit_mix) - 1.0) > 1e-9:
            raise ValueError("edit_mix proportions must sum to 1")
        if not self.textual_edit_kinds or not set(self.textual_edit_kinds) <= set(
            INSERTION_KINDS
        ):
            raise ValueError(f"textual_edit_kinds must be drawn from {INSERTION_KINDS}")
        if not set(self.deletion_kinds) <= set(DELETION_KINDS):
            raise ValueError(f"deletion_kinds must be drawn from {DELETION_KINDS}")


class _TextFile:
    """Line list tagged by origin, with exact preserved/updated byte counts."""

    __slots__ = ("lines", "preserved", "size")

    def __init__(self, content: bytes):
        self.lines: list[tuple[bytes, bool]] = [
            (line, True) for line in _split_keepends(content)
        ]
        self.preserved = len(content)
        self.size = len(content)

    def insert(self, pos: int, line: bytes) -> None:
        self.lines.insert(pos, (line, False))
        self.size += len(line)

    def delete(self, pos: int) -> None:
        line, is_orig = self.lines.pop(pos)
        self.size -= len(line)
        if is_orig:
            self.preserved -= len(line)

    def content(self) -> bytes:
        return b"".join(line for line, _ in self.lines)


def _split_keepends(content: bytes) -> list[bytes]:
    out = []
    start = 0
    while True:
        idx = content.find(b"\n", start)
        if idx < 0:
            break
        out.append(content[start : idx + 1])
        start = idx + 1
    if start < len(content):
        out.append(content[start:])
    return out


def _indent_of(lines: list[tuple[bytes, bool]], pos: int) -> bytes:
    for probe in (pos, pos - 1):
        if 0 <= probe < len(lines):
            text = lines[probe][0]
            return text[: len(text) - len(text.lstrip(b" "))]
    return b""


def _make_insertion(kind: str, rng: random.Random, serial: int, indent: bytes) -> list[bytes]:
    word = rng.choice(_WORDS)
    word2 = rng.choice(_WORDS)
    if kind == "comments":
        return [indent + b"# %s %s note n%05d\n" % (word.encode(), word2.encode(), serial)]
    if kind == "logging":
        return [
            indent
            + b'logging.debug("%s %s n%05d: %%s", %s)\n'
            % (word.encode(), word2.encode(), serial, word.encode())
        ]
    if kind == "inactive_conditionals":
        return [
            indent + b"if False:  # n%05d\n" % serial,
            indent + b"    pass  # %s\n" % word.encode(),
        ]
    return [indent + b"_unused_%s_n%05d = %d\n" % (word.encode(), serial, serial)]


def _deletable(line: bytes, kinds: tuple[str, ...]) -> bool:
    stripped = line.strip()
    if "redundant_comments" in kinds and stripped.startswith(b"#"):
        return True
    if "unused_imports" in kinds and (
        stripped.startswith(b"import ") or stripped.startswith(b"from ")
    ):
        return True
    if "logs" in kinds and (
        stripped.startswith(b"logging.") or stripped.startswith(b"print(")
    ):
        return True
    return False


def _flip_chunk_bytes(content: bytes, rng: random.Random, spec: ChunkSpec) -> bytes:
    """Flip a few bytes well inside one chunk. Keeping the flip at least
    a hash window away from both chunk edges leaves other chunks intact.
    Returns the content unmodified when no chunk is big enough.
    """
    lengths = chunk_lengths(content, spec)
    margin = spec.window + 8
    starts = []
    offset = 0
    for length in lengths:
        if length > 2 * margin + 8:
            starts.append((offset, length))
        offset += length
    if not starts:
        return content
    start, length = starts[rng.randrange(len(starts))]
    pos = start + rng.randrange(margin, length - margin - 4)
    mutated = bytearray(content)
    for i in range(rng.randint(1, 4)):
        mutated[pos + i] ^= 1 + rng.randrange(255)
    return bytes(mutated)


def _chunk_retained(orig: bytes, current: bytes, spec: ChunkSpec) -> int:
    ops, _ = chunk_diff(orig, current, spec)
    return sum(sum(op.unit_sizes) for op in ops if op.kind == "R")


def generate_variant(
    orig: FileTree,
    spec: VariantSpec,
    scope_prefix: str | None = None,
    chunk_spec: ChunkSpec = DEFAULT_CHUNK_SPEC,
    max_rounds: int = 6,
) -> FileTree:
    """Build a variant of ``orig`` whose modification ratio lands within
    0.05 of ``spec.target_ratio``. Deterministic per (tree, spec).

    ``scope_prefix`` confines edits to one subtree (the application
    directory in fixtures); the ratio is still measured over the whole
    tree. Raises VariantError when the target cannot be reached, with the
    achieved ratio attached.
    """
    if spec.target_ratio == 0:
        return orig
    rng = random.Random(spec.seed)

    def in_scope(path: str) -> bool:
        if scope_prefix is None:
            return True
        return path == scope_prefix or path.startswith(scope_prefix + "/")

    text_files: dict[str, _TextFile] = {}
    binary_files: dict[str, bytes] = {}
    binary_preserved: dict[str, int] = {}
    for path, entry in orig.files():
        if not in_scope(path):
            continue
        if entry.textual:
            text_files[path] = _TextFile(entry.content)
        else:
            binary_files[path] = entry.content
            binary_preserved[path] = len(entry.content)
    if not text_files:
        raise VariantError("no textual files to edit", achieved_ratio=0.0)
    text_paths = sorted(text_files)
    binary_paths = sorted(binary_files)

    total_size = orig.total_file_bytes()
    outside = total_size - sum(t.size for t in text_files.values()) - sum(
        len(b) for b in binary_files.values()
    )

    def estimate() -> float:
        upd = (
            outside
            + sum(t.size for t in text_files.values())
            + sum(len(b) for b in binary_files.values())
        )
        preserved = (
            outside
            + sum(t.preserved for t in text_files.values())
            + sum(binary_preserved.values())
        )
        return 1 - preserved / upd if upd else 0.0

    serial = 0
    insert_share = spec.edit_mix[0]

    def try_flip(goal: float) -> bool:
        """One chunk flip, reverted if it jumps the ratio past the band.

        A max-size chunk can be a large slice of a small tree, so each
        flip is priced exactly before it is kept.
        """
        path = rng.choice(binary_paths)
        before_content = binary_files[path]
        before_preserved = binary_preserved[path]
        mutated = _flip_chunk_bytes(before_content, rng, chunk_spec)
        if mutated == before_content:
            return False
        binary_files[path] = mutated
        binary_preserved[path] = _chunk_retained(
            orig[path].content, mutated, chunk_spec
        )
        if estimate() > goal + 0.02:
            binary_files[path] = before_content
            binary_preserved[path] = before_preserved
            return False
        return True

    def one_edit(goal: float) -> None:
        nonlocal serial
        if binary_paths and rng.random() < 0.08 and try_flip(goal):
            return
        path = rng.choice(text_paths)
        record = text_files[path]
        if rng.random() < insert_share:
            kind = rng.choice(spec.textual_edit_kinds)
            pos = rng.randint(0, len(record.lines))
            serial += 1
            for i, line in enumerate(
                _make_insertion(kind, rng, serial, _indent_of(record.lines, pos))
            ):
                record.insert(pos + i, line)
        else:
            candidates = [
                i
                for i, (line, _) in enumerate(record.lines)
                if _deletable(line, spec.deletion_kinds)
            ]
            if not candidates:
                serial += 1
                for i, line in enumerate(
                    _make_insertion(
                        rng.choice(spec.textual_edit_kinds),
                        rng,
                        serial,
                        _indent_of(record.lines, 0),
                    )
                ):
                    record.insert(i, line)
                return
            record.delete(rng.choice(candidates))

    def build() -> FileTree:
        mapping: dict[str, bytes | None] = {}
        for path, entry in orig.items():
            if entry.is_dir:
                mapping[path] = None
            elif path in text_files:
                mapping[path] = text_files[path].content()
            elif path in binary_files:
                mapping[path] = binary_files[path]
            else:
                mapping[path] = entry.content
        return FileTree.from_dict(orig.root_label, mapping)

    goal = spec.target_ratio
    achieved = 0.0
    for _ in range(max_rounds):
        steps = 0
        cap = 200_000
        while estimate() < goal and steps < cap:
            one_edit(goal)
            steps += 1
        variant = build()
        achieved = float(modification_ratio(orig, variant, chunk_spec).ratio)
        if abs(achieved - spec.target_ratio) <= 0.05:
            return variant
        if achieved > spec.target_ratio + 0.05:
            break  # overshot: single edits are too coarse for this tree
        # Estimation fell short of the real metric; push the goal up by
        # the observed gap and keep editing the same state.
        goal += spec.target_ratio - achieved
    raise VariantError(
        f"could not land within 0.05 of {spec.target_ratio}",
        achieved_ratio=achieved,
    )


def sample_app_tree(seed: int = 0, text_scale: int = 1) -> FileTree:
    """Deterministic application-shaped fixture tree.

    A Python-style payload app under ``app/`` (modules with imports,
    comments, and log lines, a JSON config, two binary assets) plus an
    untouched binary runtime blob outside the app prefix.
    """
    rng = random.Random(seed)

    def module(lines: int) -> bytes:
        out = [
            b"import logging\n",
            b"import struct\n",
            b"from collections import deque\n",
            b"\n",
        ]
        indent = b""
        for i in range(lines):
            word = rng.choice(_WORDS).encode()
            word2 = rng.choice(_WORDS).encode()
            roll = rng.random()
            if roll < 0.08:
                out.append(b"\n")
                out.append(b"def %s_%d(%s):\n" % (word, i, word2))
                indent = b"    "
            elif roll < 0.16:
                out.append(indent + b"# %s for %s\n" % (word, word2))
            elif roll < 0.24:
                out.append(indent + b'logging.info("%s=%%s", %s)\n' % (word, word2))
            elif roll < 0.3:
                out.append(indent + b"print(\"%s\")\n" % word)
            else:
                out.append(
                    indent + b"%s = %s(%d) + %d\n" % (word, word2, i, rng.randrange(97))
                )
        return b"".join(out)

    mapping: dict[str, bytes | None] = {
        "app/main.py": module(220 * text_scale),
        "app/sensors/imu.py": module(150 * text_scale),
        "app/sensors/camera.py": module(180 * text_scale),
        "app/utils/telemetry.py": module(120 * text_scale),
        "app/utils/params.py": module(90 * text_scale),
        "app/config.json": (
            b'{\n' + b"".join(
                b'  "%s": %d,\n' % (w.encode(), rng.randrange(1000)) for w in _WORDS
            ) + b'  "version": 1\n}\n'
        ),
        "app/assets/calib.bin": rng.randbytes(24 * 1024),
        "app/assets/weights.bin": rng.randbytes(40 * 1024),
        "runtime/interp.bin": rng.randbytes(96 * 1024),
        "README.md": b"# payload\n\nsensor payload application\n",
    }
    return FileTree.from_dict("payload", mapping)
