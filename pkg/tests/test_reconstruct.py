"""Apply path: end-to-end round trips, typed failures, transactionality."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from satpatch.diffgen import (
    ChangeKind,
    ChangeSet,
    ChunkSpec,
    EditOp,
    FileChange,
    chunk_diff,
    compare_trees,
    line_diff,
)
from satpatch.errors import (
    ApplyError,
    BaseVersionMismatchError,
    DigestMismatchError,
    EditScriptError,
    SegmentCountError,
)
from satpatch.fstree import FileTree, load_tree, tree_digest
from satpatch.package import decode_package, encode_package
from satpatch.reconstruct import (
    apply_changeset,
    apply_file,
    apply_package,
    replace_directory,
)
from treegen import random_pair


def round_trip(old: FileTree, new: FileTree, spec=None) -> FileTree:
    cs = compare_trees(old, new, spec) if spec else compare_trees(old, new)
    applied, report = apply_package(old, encode_package(cs))
    assert report.target_digest == tree_digest(new)
    assert report.verified is True
    return applied


class TestApplyFile:
    def test_text(self):
        ops, segments = line_diff(b"a\nb\nc\n", b"a\nX\nc\n")
        change = FileChange("f", ChangeKind.TEXT_PATCH, ops, segments)
        assert apply_file(b"a\nb\nc\n", change) == b"a\nX\nc\n"

    def test_chunks(self):
        rng = random.Random(0)
        old = rng.randbytes(50_000)
        new = old[:20_000] + rng.randbytes(333) + old[21_000:]
        ops, segments = chunk_diff(old, new)
        change = FileChange("f", ChangeKind.CHUNK_PATCH, ops, segments)
        assert apply_file(old, change) == new

    def test_wrong_old_content_caught_by_length(self):
        ops, segments = chunk_diff(b"A" * 1000, b"A" * 500)
        change = FileChange("f", ChangeKind.CHUNK_PATCH, ops, segments)
        with pytest.raises(EditScriptError):
            apply_file(b"B" * 10, change)

    def test_segment_count_mismatch(self):
        change = FileChange(
            "f", ChangeKind.TEXT_PATCH, (EditOp("I", 1),), segments=()
        )
        with pytest.raises(SegmentCountError):
            apply_file(b"", change)

    def test_insert_line_count_mismatch(self):
        change = FileChange(
            "f", ChangeKind.TEXT_PATCH, (EditOp("I", 2),), segments=(b"one\n",)
        )
        with pytest.raises(EditScriptError):
            apply_file(b"", change)

    def test_script_overrun(self):
        change = FileChange("f", ChangeKind.TEXT_PATCH, (EditOp("R", 5),))
        with pytest.raises(EditScriptError):
            apply_file(b"a\n", change)

    def test_script_underrun(self):
        change = FileChange("f", ChangeKind.TEXT_PATCH, (EditOp("R", 1),))
        with pytest.raises(EditScriptError):
            apply_file(b"a\nb\n", change)


class TestApplyChangeset:
    def test_mixed_update(self):
        old = FileTree.from_dict(
            "app",
            {
                "main.py": b"import os\nrun()\n",
                "gone.txt": b"x\n",
                "unchanged.bin": b"\x00\x01",
                "pkg/mod.py": b"a\nb\n",
            },
        )
        new = FileTree.from_dict(
            "app",
            {
                "main.py": b"import sys\nrun()\n",
                "unchanged.bin": b"\x00\x01",
                "pkg/mod.py": b"a\nb\n",
                "pkg/new.py": b"fresh\n",
            },
        )
        applied = round_trip(old, new)
        assert applied == new
        assert old.get("gone.txt") is not None  # source tree untouched

    def test_report_counts(self):
        old = FileTree.from_dict("app", {"a.py": b"1\n", "b.txt": b"x\n"})
        new = FileTree.from_dict("app", {"a.py": b"2\n", "c/d.txt": b"y\n"})
        cs = compare_trees(old, new)
        _, report = apply_changeset(old, cs)
        assert report.files_patched == 1
        assert report.files_deleted == 1
        assert report.files_added == 1
        assert report.dirs_added == 1
        assert report.changes_applied == 4
        assert report.bytes_received == cs.segment_bytes()

    def test_empty_to_empty(self):
        empty = FileTree.from_dict("a", {})
        assert round_trip(empty, empty) == empty

    def test_everything_deleted(self):
        old = FileTree.from_dict("a", {"x/y/z.txt": b"1", "w.bin": b"\x00"})
        new = FileTree.from_dict("a", {})
        assert round_trip(old, new) == new

    def test_kind_swaps(self):
        old = FileTree.from_dict("a", {"p": b"file content", "q/r": b"2"})
        new = FileTree.from_dict("a", {"p/s": b"3", "q": b"now a file"})
        assert round_trip(old, new) == new

    def test_base_version_mismatch(self):
        old = FileTree.from_dict("a", {"f": b"1\n"})
        new = FileTree.from_dict("a", {"f": b"2\n"})
        cs = compare_trees(old, new)
        wrong_base = FileTree.from_dict("a", {"f": b"other\n"})
        with pytest.raises(BaseVersionMismatchError):
            apply_changeset(wrong_base, cs)

    def test_verify_source_off_allows_compatible_base(self):
        old = FileTree.from_dict("a", {"f": b"1\n", "extra": b"e\n"})
        new_f = FileTree.from_dict("a", {"f": b"2\n", "extra": b"e\n"})
        cs = compare_trees(old, new_f)
        other = FileTree.from_dict("a", {"f": b"1\n", "extra": b"e\n", "more": b"m\n"})
        with pytest.raises(DigestMismatchError):
            apply_changeset(other, cs, verify_source=False)
        applied, report = apply_changeset(
            other, cs, verify_source=False, verify_target=False
        )
        assert applied.get("f").content == b"2\n"
        assert applied.get("more").content == b"m\n"
        # off-target result is returned but flagged
        assert report.verified is False
        assert report.mismatch == ()

    def test_delete_missing_file(self):
        base = FileTree.from_dict("a", {})
        cs = ChangeSet(
            tree_digest(base),
            b"\x00" * 32,
            ChunkSpec(),
            (FileChange("ghost", ChangeKind.FILE_DELETE),),
        )
        with pytest.raises(EditScriptError):
            apply_changeset(base, cs)

    def test_delete_nonempty_directory(self):
        base = FileTree.from_dict("a", {"d/f.txt": b"x"})
        cs = ChangeSet(
            tree_digest(base),
            b"\x00" * 32,
            ChunkSpec(),
            (FileChange("d", ChangeKind.DIR_DELETE),),
        )
        with pytest.raises(EditScriptError):
            apply_changeset(base, cs)

    def test_insert_over_existing(self):
        base = FileTree.from_dict("a", {"f": b"x"})
        cs = ChangeSet(
            tree_digest(base),
            b"\x00" * 32,
            ChunkSpec(),
            (FileChange("f", ChangeKind.FILE_INSERT, segments=(b"y",)),),
        )
        with pytest.raises(EditScriptError):
            apply_changeset(base, cs)

    def test_insert_without_parent(self):
        base = FileTree.from_dict("a", {})
        cs = ChangeSet(
            tree_digest(base),
            b"\x00" * 32,
            ChunkSpec(),
            (FileChange("no_dir/f", ChangeKind.FILE_INSERT, segments=(b"y",)),),
        )
        with pytest.raises(EditScriptError):
            apply_changeset(base, cs)

    def test_digest_mismatch_on_tampered_target(self):
        old = FileTree.from_dict("a", {"f": b"1\n"})
        new = FileTree.from_dict("a", {"f": b"2\n"})
        cs = compare_trees(old, new)
        tampered = ChangeSet(cs.source_digest, b"\xff" * 32, cs.chunk_spec, cs.changes)
        with pytest.raises(DigestMismatchError):
            apply_changeset(old, tampered)

    def test_failure_leaves_input_intact(self):
        old = FileTree.from_dict("a", {"f": b"1\n", "g": b"2\n"})
        snapshot = dict(old.items())
        cs = ChangeSet(
            tree_digest(old),
            b"\x00" * 32,
            ChunkSpec(),
            (
                FileChange("f", ChangeKind.FILE_DELETE),
                FileChange("ghost", ChangeKind.FILE_DELETE),
            ),
        )
        with pytest.raises(ApplyError):
            apply_changeset(old, cs)
        assert dict(old.items()) == snapshot


class TestEndToEnd:
    def test_random_pairs_byte_exact(self):
        rng = random.Random(7)
        for _ in range(40):
            old, new = random_pair(rng, max_files=30, max_file_size=32 * 1024)
            assert round_trip(old, new) == new

    def test_custom_chunk_spec_round_trip(self):
        spec = ChunkSpec(window=16, mask_bits=6, min_size=32, max_size=1024)
        rng = random.Random(11)
        old = FileTree.from_dict("a", {"b": rng.randbytes(20_000)})
        new = FileTree.from_dict(
            "a", {"b": b"".join([rng.randbytes(100), old["b"].content])}
        )
        assert round_trip(old, new, spec) == new

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**9))
    def test_seeded_pairs_property(self, seed):
        rng = random.Random(seed)
        old, new = random_pair(rng, max_files=12, max_file_size=8 * 1024)
        assert round_trip(old, new) == new


class TestReplaceDirectory:
    def test_swap(self, tmp_path):
        old = FileTree.from_dict("app", {"f.txt": b"old\n", "d/g.txt": b"keep\n"})
        new = FileTree.from_dict("app", {"f.txt": b"new\n", "d/g.txt": b"keep\n"})
        target = tmp_path / "app"
        from satpatch.fstree import materialize

        materialize(old, target)
        replace_directory(new, target)
        assert load_tree(target) == new
        assert not (tmp_path / "app.satpatch-old").exists()
        assert not (tmp_path / "app.satpatch-new").exists()

    def test_missing_target(self, tmp_path):
        from satpatch.errors import TreeError

        with pytest.raises(TreeError):
            replace_directory(FileTree("a", {}), tmp_path / "nope")
