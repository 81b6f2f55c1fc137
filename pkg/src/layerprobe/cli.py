"""Command-line entry point.

Subcommands: probe-mdl, probe-edge, norms, rsa, cog, downstream, synth.
Every run writes its artifacts into --out plus a manifest.json recording
input and artifact SHA-256 hashes; no timestamps appear anywhere, so
reruns with identical inputs and seeds are byte-identical.  Failures of
individual (layer, seed) cells are recorded in the manifest and surface as
exit code 1; input problems (missing or malformed files, bad selections)
exit 2 with a one-line error JSON on stdout.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import hashlib
import json
import os
import sys
from dataclasses import replace

import numpy as np

from . import svg
from .analysis import (center_of_gravity, downstream_layer_eval, layer_norms,
                       rsa_bootstrap)
from .edge import mix_weights, train_edge_probe
from .errors import LayerprobeError, StoreFormatError, TaskFormatError
from .mdl import DEFAULT_FRACTIONS, run_mdl
from .probe import ProbeConfig, make_span_batch
from .store import (ReprStore, layer_f64, mean_pool_sentences, read_store,
                    write_store)
from .synth import SynthTaskSpec, generate_synthetic
from .tasks import load_task, write_task


class InputError(Exception):
    """User-input problem carrying a machine-readable error kind."""

    def __init__(self, kind: str, detail: str):
        super().__init__(detail)
        self.kind = kind


# ---------------------------------------------------------------------------
# small helpers


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _require_file(path, kind: str):
    if path is None or not os.path.isfile(path):
        raise InputError(kind, f"missing file: {path}")
    return path


def _parse_int_list(text: str, what: str) -> list[int]:
    try:
        values = [int(v) for v in str(text).split(",") if v != ""]
    except ValueError:
        raise InputError("BadSelection", f"cannot parse {what}: {text!r}")
    if not values:
        raise InputError("BadSelection", f"empty {what} selection")
    return values


def _parse_layers(text: str, num_layers: int) -> list[int]:
    if text == "all":
        return list(range(num_layers))
    layers = _parse_int_list(text, "--layers")
    for layer in layers:
        if not 0 <= layer < num_layers:
            raise InputError(
                "LayerOutOfRange",
                f"layer {layer} outside [0, {num_layers})")
    if not layers:
        raise InputError("BadSelection", "empty layer selection")
    return layers


def _write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def _write_manifest(out_dir, command: str, inputs: dict,
                    artifacts: list[str], failures: list[dict]) -> None:
    manifest = {
        "command": command,
        "inputs": {name: {"path": str(p), "sha256": _sha256(p)}
                   for name, p in sorted(inputs.items())},
        "artifacts": [{"path": rel, "sha256": _sha256(os.path.join(out_dir, rel))}
                      for rel in sorted(artifacts)],
        "failures": sorted(failures,
                           key=lambda f: json.dumps(f, sort_keys=True)),
    }
    _write_json(os.path.join(out_dir, "manifest.json"), manifest)


def _emit_error(kind: str, detail: str) -> None:
    print(json.dumps({"error": kind, "detail": detail}, sort_keys=True))


def _load_store(path) -> ReprStore:
    _require_file(path, "StoreNotFound")
    return read_store(path)


def _load_task(path):
    _require_file(path, "TaskNotFound")
    return load_task(path)


def _probe_config_from_args(args, store, task) -> ProbeConfig:
    return ProbeConfig(
        input_dim=store.hidden_size,
        num_classes=task.num_classes,
        num_spans=task.num_spans,
        proj_dim=args.proj_dim,
        mlp_hidden=args.mlp_hidden,
        learning_rate=args.lr,
        batch_size=args.batch_size,
        max_epochs=args.max_epochs,
        patience=args.patience,
        optimizer=args.optimizer,
    )


def _run_cells(cells, worker, args_for_cell, jobs: int):
    """Run worker over cells, inline or in a process pool.

    Returns (results keyed by cell, failures list).  Result ordering is
    normalized afterwards, so jobs only affects wall time.
    """
    results = {}
    failures = []
    if jobs <= 1 or len(cells) <= 1:
        for cell in cells:
            try:
                results[cell] = worker(*args_for_cell(cell))
            except Exception as exc:  # cell isolation: record and continue
                failures.append(_failure_record(cell, exc))
        return results, failures
    with concurrent.futures.ProcessPoolExecutor(
            max_workers=min(jobs, len(cells))) as pool:
        futures = {pool.submit(worker, *args_for_cell(cell)): cell
                   for cell in cells}
        for fut in concurrent.futures.as_completed(futures):
            cell = futures[fut]
            try:
                results[cell] = fut.result()
            except Exception as exc:
                failures.append(_failure_record(cell, exc))
    return results, failures


def _failure_record(cell, exc: Exception) -> dict:
    return {"cell": list(cell), "error": type(exc).__name__,
            "detail": str(exc)}


# ---------------------------------------------------------------------------
# cell workers (module level so process pools can pickle them)


def _mdl_cell(store_path, task_path, layer, seed, cfg_kwargs, fractions):
    store = read_store(store_path)
    task = load_task(task_path)
    batch = make_span_batch(store, task.splits["train"], task.num_spans)
    cfg = ProbeConfig(input_dim=store.hidden_size,
                      num_classes=task.num_classes,
                      num_spans=task.num_spans, **cfg_kwargs)
    x = layer_f64(store, layer)
    result = run_mdl(cfg, x, batch, task.name, layer, seed,
                     tuple(fractions))
    return result.to_json_dict()


def _edge_cell(store_path, task_path, normalize, seed, cfg_kwargs):
    store = read_store(store_path)
    task = load_task(task_path)
    cfg = ProbeConfig(input_dim=store.hidden_size,
                      num_classes=task.num_classes,
                      num_spans=task.num_spans, **cfg_kwargs)
    cfg = replace(cfg, seed=seed)
    result = train_edge_probe(store, task, cfg, normalize)
    return {
        "task": task.name,
        "normalize": bool(normalize),
        "weights": [float(v) for v in mix_weights(result.mix)],
        "gamma": float(result.mix.gamma),
        "micro_f1": float(result.micro_f1),
        "seed": int(seed),
    }


# ---------------------------------------------------------------------------
# subcommands


def cmd_probe_mdl(args) -> int:
    store_path = _require_file(args.store, "StoreNotFound")
    task_path = _require_file(args.task, "TaskNotFound")
    store = read_store(store_path)
    task = load_task(task_path)
    layers = _parse_layers(args.layers, store.num_layers)
    seeds = _parse_int_list(args.seeds, "--seeds")
    if args.fractions:
        try:
            fractions = [float(v) for v in args.fractions.split(",")]
        except ValueError:
            raise InputError("BadSelection",
                             f"cannot parse --fractions: {args.fractions!r}")
    else:
        fractions = list(DEFAULT_FRACTIONS)
    cfg_kwargs = dict(proj_dim=args.proj_dim, mlp_hidden=args.mlp_hidden,
                      learning_rate=args.lr, batch_size=args.batch_size,
                      max_epochs=args.max_epochs, patience=args.patience,
                      optimizer=args.optimizer)
    os.makedirs(args.out, exist_ok=True)

    cells = [(layer, seed) for layer in layers for seed in seeds]
    results, failures = _run_cells(
        cells, _mdl_cell,
        lambda cell: (store_path, task_path, cell[0], cell[1], cfg_kwargs,
                      fractions),
        args.jobs)

    artifacts = []
    for (layer, seed) in sorted(results):
        rec = results[(layer, seed)]
        name = f"mdl_{task.name}_layer{layer:02d}_seed{seed}.json"
        _write_json(os.path.join(args.out, name), rec)
        artifacts.append(name)

    by_layer: dict[int, list[float]] = {}
    for (layer, seed), rec in results.items():
        by_layer.setdefault(layer, []).append(rec["compression"])
    rows = []
    for layer in sorted(by_layer):
        vals = np.asarray(sorted(by_layer[layer]))
        rows.append([layer, float(vals.mean()), float(vals.std())])
    if rows:
        _write_csv(os.path.join(args.out, "compression.csv"),
                   ["layer", "mean_compression", "std_compression"], rows)
        artifacts.append("compression.csv")
    if args.svg and rows:
        chart = svg.line_chart(
            {"mean compression": [(r[0], r[1]) for r in rows]},
            title=f"MDL compression: {task.name}",
            xlabel="layer", ylabel="compression")
        with open(os.path.join(args.out, "compression.svg"), "w",
                  encoding="utf-8") as fh:
            fh.write(chart)
        artifacts.append("compression.svg")

    _write_manifest(args.out, "probe-mdl",
                    {"store": store_path, "task": task_path},
                    artifacts, failures)
    return 1 if failures else 0


def cmd_probe_edge(args) -> int:
    store_path = _require_file(args.store, "StoreNotFound")
    task_path = _require_file(args.task, "TaskNotFound")
    read_store(store_path)  # validate before scheduling cells
    task = load_task(task_path)
    seeds = _parse_int_list(args.seeds, "--seeds")
    mode = "both" if args.both else args.mode
    modes = {"normalized": [True], "raw": [False],
             "both": [True, False]}[mode]
    cfg_kwargs = dict(proj_dim=args.proj_dim, mlp_hidden=args.mlp_hidden,
                      learning_rate=args.lr, batch_size=args.batch_size,
                      max_epochs=args.max_epochs, patience=args.patience,
                      optimizer=args.optimizer)
    os.makedirs(args.out, exist_ok=True)

    cells = [(normalize, seed) for normalize in modes for seed in seeds]
    results, failures = _run_cells(
        cells, _edge_cell,
        lambda cell: (store_path, task_path, cell[0], cell[1], cfg_kwargs),
        args.jobs)

    artifacts = []
    for (normalize, seed) in sorted(results, key=lambda c: (not c[0], c[1])):
        rec = results[(normalize, seed)]
        mode = "normalized" if normalize else "raw"
        stem = f"edge_{task.name}_{mode}_seed{seed}"
        _write_json(os.path.join(args.out, f"{stem}.json"), rec)
        artifacts.append(f"{stem}.json")
        rows = [[layer, w] for layer, w in enumerate(rec["weights"])]
        _write_csv(os.path.join(args.out, f"{stem}.csv"),
                   ["layer", "weight"], rows)
        artifacts.append(f"{stem}.csv")

    _write_manifest(args.out, "probe-edge",
                    {"store": store_path, "task": task_path},
                    artifacts, failures)
    return 1 if failures else 0


def cmd_norms(args) -> int:
    store_path = _require_file(args.store, "StoreNotFound")
    store = read_store(store_path)
    os.makedirs(args.out, exist_ok=True)
    stats = layer_norms(store, n=args.n, runs=args.runs, seed=args.seed)
    rows = [[layer, float(stats.means[layer]), float(stats.stds[layer]),
             stats.n, stats.runs]
            for layer in range(store.num_layers)]
    _write_csv(os.path.join(args.out, "norms.csv"),
               ["layer", "mean", "std", "n", "runs"], rows)
    _write_manifest(args.out, "norms", {"store": store_path},
                    ["norms.csv"], [])
    return 0


def cmd_rsa(args) -> int:
    path_a = _require_file(args.store, "StoreNotFound")
    path_b = _require_file(args.store_b, "StoreNotFound")
    store_a = read_store(path_a)
    store_b = read_store(path_b)
    if store_a.num_layers != store_b.num_layers:
        raise InputError("StoreMismatch", "stores differ in num_layers")
    if store_a.num_sentences != store_b.num_sentences:
        raise InputError("StoreMismatch", "stores differ in sentence count")
    layers = _parse_layers(args.layers, store_a.num_layers)
    os.makedirs(args.out, exist_ok=True)
    rows = []
    for layer in layers:
        pooled_a = mean_pool_sentences(store_a, layer)
        pooled_b = mean_pool_sentences(store_b, layer)
        res = rsa_bootstrap(pooled_a, pooled_b, resamples=args.resamples,
                            seed=args.seed)
        rows.append([layer, res.r, res.ci_low, res.ci_high])
    _write_csv(os.path.join(args.out, "rsa.csv"),
               ["layer", "r", "ci_low", "ci_high"], rows)
    _write_manifest(args.out, "rsa", {"store": path_a, "store_b": path_b},
                    ["rsa.csv"], [])
    return 0


def _read_scores_csv(path) -> np.ndarray:
    """Layer-indexed score vector from a (layer, score, ...) CSV."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or len(header) < 2:
            raise InputError("ScoresMalformed", f"{path}: need 2+ columns")
        by_layer = {}
        for row in reader:
            if not row:
                continue
            try:
                layer = int(row[0])
                score = float(row[1])
            except ValueError:
                raise InputError("ScoresMalformed",
                                 f"{path}: bad row {row!r}")
            by_layer[layer] = score
    if not by_layer or sorted(by_layer) != list(range(len(by_layer))):
        raise InputError("ScoresMalformed",
                         f"{path}: layers must be contiguous from 0")
    return np.asarray([by_layer[i] for i in range(len(by_layer))])


def cmd_cog(args) -> int:
    path_a = _require_file(args.scores, "ScoresNotFound")
    scores_a = _read_scores_csv(path_a)
    os.makedirs(args.out, exist_ok=True)
    inputs = {"scores": path_a}
    rows = [[args.model, args.task_name, center_of_gravity(scores_a)]]
    artifacts = ["cog.csv"]
    if args.scores_b:
        path_b = _require_file(args.scores_b, "ScoresNotFound")
        scores_b = _read_scores_csv(path_b)
        if scores_b.size != scores_a.size:
            raise InputError("ScoresMalformed",
                             "score files differ in layer count")
        inputs["scores_b"] = path_b
        cog_a = center_of_gravity(scores_a)
        cog_b = center_of_gravity(scores_b)
        rows.append([args.model_b, args.task_name, cog_b])
        _write_json(os.path.join(args.out, "delta_cog.json"),
                    {"cog_a": cog_a, "cog_b": cog_b,
                     "delta_cog": cog_b - cog_a})
        artifacts.append("delta_cog.json")
    _write_csv(os.path.join(args.out, "cog.csv"),
               ["model", "task", "cog"], rows)
    _write_manifest(args.out, "cog", inputs, artifacts, [])
    return 0


def cmd_downstream(args) -> int:
    store_path = _require_file(args.store, "StoreNotFound")
    task_path = _require_file(args.task, "TaskNotFound")
    store = read_store(store_path)
    task = load_task(task_path)
    split_rows = {}
    split_labels = {}
    for split in ("train", "dev", "test"):
        sids = []
        labels = []
        seen = set()
        for t in task.splits[split]:
            if t.sentence_id in seen:
                raise InputError(
                    "DownstreamNeedsSentenceLabels",
                    f"{split}: sentence {t.sentence_id} has several targets; "
                    "downstream evaluation needs one label per sentence")
            seen.add(t.sentence_id)
            sids.append(t.sentence_id)
            labels.append(t.label_id)
        split_rows[split] = np.asarray(sids, dtype=np.int64)
        split_labels[split] = np.asarray(labels, dtype=np.int64)
    os.makedirs(args.out, exist_ok=True)

    train_mats, dev_mats, test_mats = [], [], []
    for layer in range(store.num_layers):
        pooled = mean_pool_sentences(store, layer)
        train_mats.append(pooled[split_rows["train"]])
        dev_mats.append(pooled[split_rows["dev"]])
        test_mats.append(pooled[split_rows["test"]])
    scores = downstream_layer_eval(
        train_mats, dev_mats, test_mats, split_labels["train"],
        split_labels["dev"], split_labels["test"], metric=args.metric,
        learning_rate=args.lr, batch_size=args.batch_size,
        max_epochs=args.max_epochs, patience=args.patience, seed=args.seed)
    rows = [[layer, args.metric, float(scores[layer])]
            for layer in range(store.num_layers)]
    _write_csv(os.path.join(args.out, "downstream.csv"),
               ["layer", "metric", "value"], rows)
    _write_manifest(args.out, "downstream",
                    {"store": store_path, "task": task_path},
                    ["downstream.csv"], [])
    return 0


def cmd_synth(args) -> int:
    spec = SynthTaskSpec(
        num_classes=args.classes, num_spans=args.spans, train=args.train,
        dev=args.dev, test=args.test, signal_layer=args.signal_layer,
        cluster_sep=args.cluster_sep, cluster_std=args.cluster_std,
        layer_noise=args.layer_noise, shuffle_labels=args.shuffle_labels,
        name=args.name)
    try:
        store, task = generate_synthetic(args.seed, args.num_layers,
                                         args.hidden, args.sentences, spec)
    except ValueError as exc:
        raise InputError("InfeasibleSpec", str(exc))
    os.makedirs(args.out, exist_ok=True)
    store_path = os.path.join(args.out, "store.lprs")
    write_store(store, store_path)
    write_task(task, args.out)
    artifacts = ["store.lprs", f"{task.name}.task.json"]
    artifacts += [f"{task.name}.{split}.jsonl"
                  for split in ("train", "dev", "test")]
    _write_manifest(args.out, "synth", {}, artifacts, [])
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_probe_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--proj-dim", type=int, default=256)
    parser.add_argument("--mlp-hidden", type=int, default=256)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--batch-size", type=int, default=64)
    parser.add_argument("--max-epochs", type=int, default=50)
    parser.add_argument("--patience", type=int, default=5)
    parser.add_argument("--optimizer", choices=("adam", "sgd"),
                        default="adam")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--config", default=None,
                        help="JSON file of flag defaults; explicit flags win")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="layerprobe",
        description="Layer-wise probing of encoder representations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("probe-mdl", help="online-coding MDL probe per layer")
    p.add_argument("--store", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--layers", default="all")
    p.add_argument("--seeds", default="0")
    p.add_argument("--fractions", default=None,
                   help="comma list of schedule fractions ending at 1.0")
    p.add_argument("--svg", action="store_true",
                   help="also emit compression.svg")
    _add_probe_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_probe_mdl)

    p = sub.add_parser("probe-edge", help="scalar-mix edge probe")
    p.add_argument("--store", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--seeds", default="0")
    p.add_argument("--mode", choices=("normalized", "raw", "both"),
                   default="normalized")
    p.add_argument("--both", action="store_true",
                   help="shorthand for --mode both")
    _add_probe_flags(p)
    _add_common(p)
    p.set_defaults(func=cmd_probe_edge)

    p = sub.add_parser("norms", help="per-layer norm statistics")
    p.add_argument("--store", required=True)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--runs", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_norms)

    p = sub.add_parser("rsa", help="global RSA between two stores")
    p.add_argument("--store", required=True)
    p.add_argument("--store-b", required=True)
    p.add_argument("--layers", default="all")
    p.add_argument("--resamples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p)
    p.set_defaults(func=cmd_rsa)

    p = sub.add_parser("cog", help="center of gravity of layer scores")
    p.add_argument("--scores", required=True,
                   help="CSV with layer column then score column")
    p.add_argument("--scores-b", default=None)
    p.add_argument("--model", default="a")
    p.add_argument("--model-b", default="b")
    p.add_argument("--task-name", default="")
    _add_common(p)
    p.set_defaults(func=cmd_cog)

    p = sub.add_parser("downstream", help="per-layer linear-head evaluation")
    p.add_argument("--store", required=True)
    p.add_argument("--task", required=True)
    p.add_argument("--metric", choices=("accuracy", "mcc"),
                   default="accuracy")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lr", type=float, default=5e-4)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--max-epochs", type=int, default=50)
    p.add_argument("--patience", type=int, default=5)
    _add_common(p)
    p.set_defaults(func=cmd_downstream)

    p = sub.add_parser("synth", help="generate a synthetic store + task")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-layers", type=int, default=5)
    p.add_argument("--hidden", type=int, default=32)
    p.add_argument("--sentences", type=int, default=200)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--spans", type=int, default=1)
    p.add_argument("--train", type=int, default=400)
    p.add_argument("--dev", type=int, default=100)
    p.add_argument("--test", type=int, default=100)
    p.add_argument("--signal-layer", type=int, default=2)
    p.add_argument("--cluster-sep", type=float, default=8.0)
    p.add_argument("--cluster-std", type=float, default=0.0)
    p.add_argument("--layer-noise", type=float, default=1.0)
    p.add_argument("--shuffle-labels", action="store_true")
    p.add_argument("--name", default="synthetic")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    """Fill flag values from --config JSON; explicitly passed flags win."""
    if not getattr(args, "config", None):
        return
    path = _require_file(args.config, "ConfigNotFound")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            overrides = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError("ConfigMalformed", f"{path}: {exc}")
    if not isinstance(overrides, dict):
        raise InputError("ConfigMalformed", f"{path}: expected an object")
    explicit = set()
    for token in argv:
        if token.startswith("--"):
            explicit.add(token[2:].split("=", 1)[0].replace("-", "_"))
    for key, value in overrides.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr) or attr in ("func", "command", "config"):
            raise InputError("ConfigMalformed",
                             f"{path}: unknown option {key!r}")
        if attr not in explicit:
            setattr(args, attr, value)


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_config_file(args, list(argv))
        return args.func(args)
    except InputError as exc:
        _emit_error(exc.kind, str(exc))
        return 2
    except (StoreFormatError, TaskFormatError) as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 2
    except LayerprobeError as exc:
        _emit_error(type(exc).__name__, str(exc))
        return 1
    except Exception as exc:  # keep the CLI contract: JSON + exit 1
        _emit_error("Internal", f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
