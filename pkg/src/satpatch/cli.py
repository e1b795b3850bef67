"""Command-line front end.

Exit codes: 0 success, 1 usage, 2 bad input or state, 3 apply or verify
failure, 4 rollback performed. Machine consumers pass ``--json`` after
any subcommand and get one object on stdout with a versioned ``schema``
field. File outputs are written to a temp sibling and renamed into
place, so an interrupted run never leaves a half-written artifact.

The chunking geometry can be overridden for experiments with
``SATPATCH_CHUNK_SPEC=window,mask_bits,min,max`` (bytes, bits, bytes,
bytes); packages record their geometry, so apply never needs it.
"""

from __future__ import annotations

import argparse
import json
import os
import shutil
import sys
from fractions import Fraction
from pathlib import Path

from . import corpusgen, layerstore, linksim
from .diffgen import ChunkSpec, DEFAULT_CHUNK_SPEC, compare_trees
from .errors import (
    ApplyError,
    LayerStoreError,
    LinkError,
    PackageError,
    PathError,
    SatpatchError,
    TreeError,
    VariantError,
)
from .fstree import FileTree, load_tree, materialize, tree_digest, write_tar
from .package import decode_package, encode_package
from .reconstruct import apply_changeset, replace_directory

SCHEMA = "satpatch-cli/1"
ENV_CHUNK_SPEC = "SATPATCH_CHUNK_SPEC"

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_APPLY = 3
EXIT_ROLLED_BACK = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code
        self.message = message


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; this tool reserves 2
    # for bad input files
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _chunk_spec_from_env() -> ChunkSpec:
    raw = os.environ.get(ENV_CHUNK_SPEC)
    if not raw:
        return DEFAULT_CHUNK_SPEC
    parts = raw.split(",")
    if len(parts) != 4:
        raise CliError(
            EXIT_INPUT,
            f"{ENV_CHUNK_SPEC} must be window,mask_bits,min,max (got {raw!r})",
        )
    try:
        window, mask_bits, min_size, max_size = (int(p) for p in parts)
        return ChunkSpec(window, mask_bits, min_size, max_size)
    except ValueError as exc:
        raise CliError(EXIT_INPUT, f"bad {ENV_CHUNK_SPEC}: {exc}") from exc


def _load(path: str) -> FileTree:
    try:
        return load_tree(path)
    except (TreeError, PathError) as exc:
        raise CliError(EXIT_INPUT, f"cannot load tree {path!r}: {exc}") from exc
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path!r}: {exc}") from exc


def _read_bytes(path: str) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path!r}: {exc}") from exc


def _write_bytes(path: str, data: bytes) -> None:
    target = Path(path)
    tmp = target.parent / f"{target.name}.tmp-{os.getpid()}"
    try:
        tmp.write_bytes(data)
        os.replace(tmp, target)
    finally:
        if tmp.exists():
            tmp.unlink()


def _write_tree(tree: FileTree, out: str) -> None:
    if out.endswith(".tar"):
        _write_bytes(out, write_tar(tree))
        return
    target = Path(out)
    if target.exists():
        raise CliError(EXIT_INPUT, f"output path {out!r} already exists")
    tmp = target.parent / f"{target.name}.satpatch-tmp-{os.getpid()}"
    try:
        materialize(tree, tmp)
        os.rename(tmp, target)
    finally:
        if tmp.exists():
            shutil.rmtree(tmp, ignore_errors=True)


def _emit(args, human: str, payload: dict) -> None:
    if args.json:
        record = {"schema": SCHEMA, "command": args.command}
        record.update(payload)
        print(json.dumps(record, sort_keys=True))
    else:
        print(human)


def _bandwidth(args) -> linksim.LinkModel:
    return linksim.LinkModel(uplink_bandwidth_bps=args.bandwidth_kbps * 1000)


def _kb(nbytes: int) -> str:
    return linksim.format_quantity(Fraction(nbytes, 1024))


def _latency_str(nbytes: int, link: linksim.LinkModel) -> str:
    return linksim.format_quantity(linksim.transmission_latency(nbytes, link))


# -- subcommand handlers -------------------------------------------------------


def _cmd_diff(args) -> int:
    spec = _chunk_spec_from_env()
    orig = _load(args.orig)
    upd = _load(args.upd)
    changeset = compare_trees(orig, upd, spec)
    blob = encode_package(changeset)
    _write_bytes(args.output, blob)
    _emit(
        args,
        f"wrote {args.output} ({_kb(len(blob))} KB, {len(changeset.changes)} changes)",
        {
            "package": args.output,
            "bytes": len(blob),
            "changes": len(changeset.changes),
            "source_digest": changeset.source_digest.hex(),
            "target_digest": changeset.target_digest.hex(),
        },
    )
    return EXIT_OK


def _cmd_apply(args) -> int:
    orig = _load(args.orig)
    blob = _read_bytes(args.package)
    try:
        changeset = decode_package(blob)
    except PackageError as exc:
        raise CliError(EXIT_INPUT, f"bad package: {exc}") from exc
    try:
        new_tree, report = apply_changeset(orig, changeset)
    except ApplyError as exc:
        raise CliError(EXIT_APPLY, f"apply failed, tree untouched: {exc}") from exc
    out = args.output
    if out is None:
        if not Path(args.orig).is_dir():
            raise CliError(
                EXIT_USAGE, "in-place apply needs a directory tree; use -o"
            )
        replace_directory(new_tree, args.orig)
        out = args.orig
    else:
        _write_tree(new_tree, out)
    _emit(
        args,
        f"applied {report.changes_applied} changes to {out} "
        f"(digest {report.target_digest.hex()[:12]})",
        {
            "output": out,
            "files_added": report.files_added,
            "files_deleted": report.files_deleted,
            "files_patched": report.files_patched,
            "dirs_added": report.dirs_added,
            "dirs_deleted": report.dirs_deleted,
            "bytes_received": report.bytes_received,
            "bytes_written": report.bytes_written,
            "target_digest": report.target_digest.hex(),
        },
    )
    return EXIT_OK


def _cmd_verify(args) -> int:
    digest = tree_digest(_load(args.tree)).hex()
    expected = args.digest.lower() if args.digest else None
    match = None if expected is None else digest == expected
    _emit(
        args,
        digest if match is None else f"digest {'matches' if match else 'MISMATCH'}: {digest}",
        {"digest": digest, "expected": expected, "match": match},
    )
    return EXIT_OK if match in (None, True) else EXIT_APPLY


def _parse_windows(path: str) -> list[tuple[Fraction, Fraction]]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        return [(Fraction(str(a)), Fraction(str(b))) for a, b in raw]
    except OSError as exc:
        raise CliError(EXIT_INPUT, f"cannot read {path!r}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise CliError(
            EXIT_INPUT, f"windows file must be a JSON list of [start, end]: {exc}"
        ) from exc


def _cmd_estimate(args) -> int:
    blob = _read_bytes(args.package)
    try:
        decode_package(blob)  # integrity gate before quoting numbers
    except PackageError as exc:
        raise CliError(EXIT_INPUT, f"bad package: {exc}") from exc
    windows = _parse_windows(args.windows) if args.windows else None
    try:
        link = linksim.LinkModel(
            uplink_bandwidth_bps=args.bandwidth_kbps * 1000,
            contact_windows=windows,
        )
    except (ValueError, LinkError) as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    size = len(blob)
    payload = {
        "bytes": size,
        "kb": _kb(size),
        "latency_s": _latency_str(size, link),
        "bandwidth_bps": link.uplink_bandwidth_bps,
        "schedule": None,
    }
    lines = [
        f"package: {payload['kb']} KB",
        f"latency: {payload['latency_s']} s at {link.uplink_bandwidth_bps} bps",
    ]
    if windows is not None:
        sched = linksim.schedule_upload(size, link)
        if sched.undeliverable:
            payload["schedule"] = {"undeliverable": True}
            lines.append("undeliverable: exceeds total contact window capacity")
        else:
            payload["schedule"] = {
                "undeliverable": False,
                "passes": sched.passes_used,
                "completion_s": linksim.format_quantity(sched.completion_time_s),
            }
            lines.append(
                f"passes: {sched.passes_used}, completes at "
                f"{payload['schedule']['completion_s']} s"
            )
    _emit(args, "\n".join(lines), payload)
    return EXIT_OK


def _cmd_bench(args) -> int:
    spec = _chunk_spec_from_env()
    orig = _load(args.orig)
    upd = _load(args.upd)
    changeset = compare_trees(orig, upd, spec)
    blob = encode_package(changeset)
    try:
        base = linksim.baseline_sizes(orig, upd, changeset, args.app_prefix)
    except LinkError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    link = _bandwidth(args)
    rows = [
        ("full-image", base.b1_bytes),
        ("app-dir", base.b2_bytes),
        ("changed-files", base.b3_bytes),
        ("delta", len(blob)),
    ]
    width = max(len(name) for name, _ in rows)
    lines = [f"{'strategy'.ljust(width)}  {'size KB':>12}  {'latency s':>12}"]
    for name, nbytes in rows:
        lines.append(
            f"{name.ljust(width)}  {_kb(nbytes):>12}  {_latency_str(nbytes, link):>12}"
        )
    _emit(
        args,
        "\n".join(lines),
        {
            "bandwidth_bps": link.uplink_bandwidth_bps,
            "rows": [
                {
                    "strategy": name,
                    "bytes": nbytes,
                    "kb": _kb(nbytes),
                    "latency_s": _latency_str(nbytes, link),
                }
                for name, nbytes in rows
            ],
        },
    )
    return EXIT_OK


def _open_store(args) -> layerstore.LayerStore:
    try:
        return layerstore.LayerStore(args.store)
    except LayerStoreError as exc:
        raise CliError(EXIT_INPUT, f"cannot open store: {exc}") from exc


def _cmd_commit(args) -> int:
    store = _open_store(args)
    tree = _load(args.tree)
    try:
        store.commit(tree, args.tag)
    except (LayerStoreError, ValueError) as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    digest = tree_digest(tree).hex()
    _emit(
        args,
        f"committed {args.tag} (active, digest {digest[:12]})",
        {"tag": args.tag, "digest": digest, "active": args.tag},
    )
    return EXIT_OK


def _cmd_mark_stable(args) -> int:
    store = _open_store(args)
    try:
        store.mark_stable(args.tag)
    except LayerStoreError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    _emit(args, f"marked {args.tag} stable", {"tag": args.tag, "stable": True})
    return EXIT_OK


_PHASES = {
    "update-process": layerstore.FailurePhase.UPDATE_PROCESS,
    "post-update": layerstore.FailurePhase.POST_UPDATE_EXECUTION,
}


def _cmd_rollback(args) -> int:
    store = _open_store(args)
    try:
        event = layerstore.FailureEvent(_PHASES[args.phase], args.exit_code)
        record = store.on_failure(event)
    except (LayerStoreError, ValueError) as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    payload = {
        "rolled_back": not record.noop,
        "from": record.from_tag,
        "to": record.to_tag,
        "phase": record.phase.value,
    }
    if record.noop:
        _emit(args, f"active layer {record.to_tag} is stable; nothing to do", payload)
        return EXIT_OK
    _emit(
        args,
        f"rolled back {record.from_tag} -> {record.to_tag} "
        f"after {record.phase.value} failure (exit {args.exit_code})",
        payload,
    )
    return EXIT_ROLLED_BACK


def _cmd_gen_variant(args) -> int:
    spec_env = _chunk_spec_from_env()
    orig = _load(args.orig)
    try:
        vspec = corpusgen.VariantSpec(args.ratio, seed=args.seed)
        variant = corpusgen.generate_variant(
            orig, vspec, scope_prefix=args.scope, chunk_spec=spec_env
        )
    except ValueError as exc:
        raise CliError(EXIT_INPUT, str(exc)) from exc
    except VariantError as exc:
        detail = (
            f" (achieved {exc.achieved_ratio:.4f})"
            if exc.achieved_ratio is not None
            else ""
        )
        raise CliError(EXIT_INPUT, f"variant generation failed: {exc}{detail}") from exc
    achieved = float(linksim.modification_ratio(orig, variant, spec_env).ratio)
    _write_tree(variant, args.output)
    _emit(
        args,
        f"wrote {args.output} (ratio {achieved:.4f}, target {args.ratio})",
        {
            "output": args.output,
            "achieved_ratio": achieved,
            "target_ratio": args.ratio,
            "digest": tree_digest(variant).hex(),
        },
    )
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="satpatch", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="machine-readable output")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("diff", parents=[common], help="build an update package")
    p.add_argument("orig", help="source tree (directory or tar)")
    p.add_argument("upd", help="target tree (directory or tar)")
    p.add_argument("-o", "--output", required=True, help="package file to write")
    p.set_defaults(handler=_cmd_diff)

    p = sub.add_parser("apply", parents=[common], help="apply a package to a tree")
    p.add_argument("orig", help="base tree (directory or tar)")
    p.add_argument("package", help="update package")
    p.add_argument(
        "-o", "--output", help="write result here instead of updating in place"
    )
    p.set_defaults(handler=_cmd_apply)

    p = sub.add_parser("verify", parents=[common], help="print or check a tree digest")
    p.add_argument("tree")
    p.add_argument("--digest", help="expected digest (hex)")
    p.set_defaults(handler=_cmd_verify)

    p = sub.add_parser("estimate", parents=[common], help="size and uplink latency")
    p.add_argument("package")
    p.add_argument("--bandwidth-kbps", type=int, default=200)
    p.add_argument("--windows", help="JSON file of [start, end] contact windows (s)")
    p.set_defaults(handler=_cmd_estimate)

    p = sub.add_parser(
        "bench", parents=[common], help="compare against whole-artifact uploads"
    )
    p.add_argument("orig")
    p.add_argument("upd")
    p.add_argument("--app-prefix", default="", help="subtree for the app-dir baseline")
    p.add_argument("--bandwidth-kbps", type=int, default=200)
    p.set_defaults(handler=_cmd_bench)

    p = sub.add_parser("commit", parents=[common], help="record a tree as a new layer")
    p.add_argument("tree")
    p.add_argument("--store", required=True, help="layer store directory")
    p.add_argument("--tag", required=True)
    p.set_defaults(handler=_cmd_commit)

    p = sub.add_parser("mark-stable", parents=[common], help="mark the active layer stable")
    p.add_argument("--store", required=True)
    p.add_argument("--tag", required=True)
    p.set_defaults(handler=_cmd_mark_stable)

    p = sub.add_parser(
        "rollback", parents=[common], help="react to a failure event (exit 4 if rolled back)"
    )
    p.add_argument("--store", required=True)
    p.add_argument("--exit-code", type=int, default=1, help="observed process exit code")
    p.add_argument("--phase", choices=sorted(_PHASES), default="post-update")
    p.set_defaults(handler=_cmd_rollback)

    p = sub.add_parser(
        "gen-variant", parents=[common], help="synthesize an update at a target ratio"
    )
    p.add_argument("orig")
    p.add_argument("output", help="directory or .tar to write")
    p.add_argument("--ratio", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--scope", help="confine edits to this subtree prefix")
    p.set_defaults(handler=_cmd_gen_variant)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except CliError as exc:
        code, message = exc.code, exc.message
    except SatpatchError as exc:  # anything a handler did not translate
        code, message = EXIT_INPUT, str(exc)
    if args.json:
        print(json.dumps({"schema": SCHEMA, "command": args.command, "error": message}))
    else:
        print(f"satpatch {args.command}: {message}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
