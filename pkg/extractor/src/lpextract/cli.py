"""Command line front end: extract and verify.

extract writes the store plus <store>.manifest.json recording input and
artifact hashes and a truncation warning count.  verify prints its report
as JSON and exits non-zero when any sampled row is off.  Errors are
reported as one-line JSON on stdout: input-level problems exit 2,
mismatches and unexpected failures exit 1.
"""

import argparse
import hashlib
import json
import os
import sys

from .extraction import (ExtractionConfig, ExtractionError, extract, verify)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _emit_error(kind: str, detail: str) -> None:
    print(json.dumps({"error": kind, "detail": detail}, sort_keys=True))


def _write_manifest(config: ExtractionConfig, truncated: int) -> str:
    manifest = {
        "command": "extract",
        "inputs": {
            "input": {"path": str(config.input_path),
                      "sha256": _sha256(config.input_path)},
            "model": {"path": str(config.model)},
        },
        "artifacts": [{"path": os.path.basename(config.out_path),
                       "sha256": _sha256(config.out_path)}],
        "warnings": {"truncated_sentences": truncated},
    }
    path = str(config.out_path) + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return path


def _cmd_extract(args) -> int:
    config = ExtractionConfig(model=args.model, input_path=args.input,
                              out_path=args.out, max_len=args.max_len,
                              batch_size=args.batch_size, device=args.device)
    _, truncated = extract(config)
    _write_manifest(config, truncated)
    return 0


def _cmd_verify(args) -> int:
    report = verify(args.store, args.model, k=args.k, seed=args.seed,
                    batch_size=args.batch_size, device=args.device)
    print(json.dumps({
        "checked": report.checked,
        "tolerance": report.tolerance,
        "max_abs_err": report.max_abs_err,
        "mismatches": report.mismatches,
        "ok": report.ok,
    }, sort_keys=True))
    return 0 if report.ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lpextract",
        description="Dump per-layer transformer hidden states to an LPRS "
                    "store, or verify an existing one.")
    sub = parser.add_subparsers(dest="command", required=True)

    ext = sub.add_parser("extract", help="run a checkpoint over a sentence "
                                         "file and write a store")
    ext.add_argument("--model", required=True,
                     help="checkpoint identifier or local path")
    ext.add_argument("--input", required=True,
                     help="text file, one sentence per line")
    ext.add_argument("--out", required=True, help="output store path")
    ext.add_argument("--max-len", type=int, default=128)
    ext.add_argument("--batch-size", type=int, default=32)
    ext.add_argument("--device", default="cpu")
    ext.set_defaults(func=_cmd_extract)

    ver = sub.add_parser("verify", help="recompute sampled token vectors "
                                        "against a stored payload")
    ver.add_argument("--store", required=True)
    ver.add_argument("--model", required=True)
    ver.add_argument("--k", type=int, default=100,
                     help="rows to sample; 0 checks nothing")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--batch-size", type=int, default=32,
                     help="must match the extraction batch size")
    ver.add_argument("--device", default="cpu")
    ver.set_defaults(func=_cmd_verify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ExtractionError as exc:
        _emit_error(exc.kind, str(exc))
        return 2
    except Exception as exc:  # pragma: no cover - defensive
        _emit_error("Internal", f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
