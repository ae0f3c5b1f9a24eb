"""Command-line pipeline: gen -> encode -> train -> infer -> eval -> plot.

Every subcommand is deterministic given its inputs and --seed, writes a
manifest next to its outputs (tool version, arguments, input hashes), and
uses the exit-code contract: 0 success, 2 usage error, 3 data error,
4 numeric failure. ATLASBENCH_THREADS caps torch worker threads (default 1,
which also keeps runs bit-reproducible across machines).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, load_config, planner_config_from, scene_config_from
from .metrics import EgoFootprint, EvaluationError, MetricReport, evaluate_predictions, load_predictions
from .qa_codec import ChainSpec, TASKS, build_dataset, read_qa_jsonl, write_qa_jsonl
from .scene_sim import SceneConfigError, SceneFileError, export_scenes, generate_scenes, import_scenes

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_manifest(
    manifest_path: str,
    subcommand: str,
    args: dict,
    inputs: list[str],
    outputs: list[str],
) -> None:
    manifest = {
        "tool": "atlasbench",
        "version": __version__,
        "subcommand": subcommand,
        "args": {k: v for k, v in sorted(args.items())},
        "inputs": {p: _sha256(p) for p in sorted(inputs)},
        "outputs": sorted(outputs),
    }
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _args_dict(ns: argparse.Namespace) -> dict:
    return {k: v for k, v in vars(ns).items() if k != "func"}


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_gen(ns: argparse.Namespace) -> int:
    parser = load_config(ns.config)
    config = scene_config_from(parser)
    scenes = generate_scenes(ns.seed, ns.n, config)
    export_scenes(scenes, ns.out)
    write_manifest(
        ns.out + ".manifest.json", "gen", _args_dict(ns), [ns.config] if ns.config else [], [ns.out]
    )
    print(f"wrote {len(scenes)} scenes to {ns.out}")
    return EXIT_OK


def cmd_encode(ns: argparse.Namespace) -> int:
    scenes = import_scenes(ns.scenes)
    tasks = tuple(t.strip() for t in ns.tasks.split(",") if t.strip())
    for t in tasks:
        if t not in TASKS:
            raise EvaluationError(f"unknown task {t!r}; known: {', '.join(TASKS)}")
    chain = ChainSpec.from_string(ns.chain)
    pairs = build_dataset(scenes, tasks=tasks, chain=chain, seed=ns.seed)
    write_qa_jsonl(pairs, ns.out)
    write_manifest(ns.out + ".manifest.json", "encode", _args_dict(ns), [ns.scenes], [ns.out])
    print(f"wrote {len(pairs)} QA pairs to {ns.out}")
    return EXIT_OK


def cmd_train(ns: argparse.Namespace) -> int:
    from .planner import build_vocab, prepare_samples, save_checkpoint, train

    pairs = read_qa_jsonl(ns.dataset)
    if not pairs:
        raise EvaluationError(f"dataset {ns.dataset!r} is empty")
    scenes = import_scenes(ns.scenes)
    parser = load_config(ns.config)
    chain = next((p.meta.get("chain") for p in pairs if p.meta.get("chain")), "V-A-P")
    config = planner_config_from(
        parser,
        chain=chain,
        rp_embedding=ns.rp_embedding,
        use_queries=False if ns.text_only else None,
        epochs=ns.epochs,
        lr=ns.lr,
    )
    vocab = build_vocab()
    samples = prepare_samples(pairs, scenes, config, vocab, dataset_seed=ns.seed)
    ckpt = train(samples, config, vocab, seed=ns.seed, log_every=ns.log_every)
    save_checkpoint(ckpt, ns.out)
    inputs = [ns.dataset, ns.scenes] + ([ns.config] if ns.config else [])
    write_manifest(ns.out + ".manifest.json", "train", _args_dict(ns), inputs, [ns.out])
    print(f"trained {ckpt.step_count} steps; checkpoint at {ns.out}")
    return EXIT_OK


def cmd_infer(ns: argparse.Namespace) -> int:
    from .planner import generate, load_checkpoint, model_from_checkpoint, prepare_samples

    pairs = read_qa_jsonl(ns.dataset)
    if not pairs:
        raise EvaluationError(f"dataset {ns.dataset!r} is empty")
    scenes = import_scenes(ns.scenes)
    ckpt = load_checkpoint(ns.checkpoint)
    model = model_from_checkpoint(ckpt)
    samples = prepare_samples(pairs, scenes, ckpt.config, model.vocab, dataset_seed=ns.seed)
    with open(ns.out, "w", encoding="utf-8") as fh:
        for pair, sample in zip(pairs, samples):
            result = generate(
                model,
                sample,
                mode=ns.mode,
                temperature=ns.temperature,
                seed=ns.seed,
            )
            record = {
                "scene_id": pair.meta["scene_id"],
                "frame": pair.meta["frame"],
                "task": pair.task,
                "answer_text": result.text,
                "chain": pair.meta.get("chain"),
                "truncated": result.truncated,
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")
    write_manifest(
        ns.out + ".manifest.json", "infer", _args_dict(ns), [ns.dataset, ns.scenes, ns.checkpoint], [ns.out]
    )
    print(f"wrote {len(samples)} predictions to {ns.out}")
    return EXIT_OK


def _parse_ego_dims(text: str) -> EgoFootprint:
    try:
        length, width = (float(part) for part in text.lower().split("x"))
        return EgoFootprint(length=length, width=width)
    except (ValueError, TypeError) as exc:
        raise EvaluationError(f"--ego-dims expects LENGTHxWIDTH, got {text!r}") from exc


def cmd_eval(ns: argparse.Namespace) -> int:
    records = load_predictions(ns.preds)
    scenes = import_scenes(ns.scenes)
    report = evaluate_predictions(
        records,
        scenes,
        chain=ChainSpec.from_string(ns.chain),
        footprint=_parse_ego_dims(ns.ego_dims),
        l2_convention=ns.l2_convention,
        method=ns.method,
    )
    json_path, csv_path = ns.out + ".json", ns.out + ".csv"
    report.write_json(json_path)
    report.write_csv(csv_path)
    write_manifest(
        ns.out + ".manifest.json", "eval", _args_dict(ns), [ns.preds, ns.scenes], [json_path, csv_path]
    )
    if report.l2:
        print(
            f"L2 avg {report.l2['avg']:.3f} m | collision avg "
            f"{report.collision['avg']:.3f} % over {report.counts['planning_samples']} samples"
        )
    print(f"report at {json_path} / {csv_path}")
    return EXIT_OK


def cmd_plot(ns: argparse.Namespace) -> int:
    from .plots import plot_bev_sample, plot_pr_curves

    if ns.report is None and (ns.preds is None or ns.scenes is None):
        print("plot needs either --report or both --preds and --scenes", file=sys.stderr)
        return EXIT_USAGE
    out_dir = Path(ns.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    inputs: list[str] = []
    outputs: list[str] = []

    if ns.report is not None:
        with open(ns.report, "r", encoding="utf-8") as fh:
            report = MetricReport.from_obj(json.load(fh))
        inputs.append(ns.report)
    else:
        records = load_predictions(ns.preds)
        scenes = import_scenes(ns.scenes)
        report = evaluate_predictions(records, scenes, chain=ChainSpec.from_string(ns.chain), method=ns.method)
        inputs += [ns.preds, ns.scenes]

    csv_path = str(out_dir / "planning_table.csv")
    report.write_csv(csv_path)
    outputs.append(csv_path)
    pr_path = str(out_dir / "pr_curves.svg")
    plot_pr_curves(report, pr_path)
    outputs.append(pr_path)

    if ns.report is None:
        from .metrics import _planning_trajectory  # internal reuse for the overlay
        from .qa_codec import DEFAULT_CHAIN
        from .scene_sim import ground_truth_plan

        by_id = {s.scene_id: s for s in scenes}
        count = 0
        for record in records:
            if record["task"] != "planning" or count >= ns.max_bev:
                continue
            scene = by_id[record["scene_id"]]
            t0 = int(record["frame"])
            chain = ChainSpec.from_string(record["chain"]) if record.get("chain") else DEFAULT_CHAIN
            traj, bad = _planning_trajectory(record, chain)
            gt = ground_truth_plan(scene, t0)
            path = str(out_dir / f"bev_{scene.scene_id}_f{t0}.svg")
            plot_bev_sample(scene, t0, gt, None if bad else traj, path)
            outputs.append(path)
            count += 1

    write_manifest(str(out_dir / "manifest.json"), "plot", _args_dict(ns), inputs, outputs)
    print(f"wrote {len(outputs)} report files to {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atlasbench", description=__doc__)
    parser.add_argument("--version", action="version", version=f"atlasbench {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic scenes as JSONL")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("encode", help="build the QA dataset from scenes")
    p.add_argument("--scenes", required=True)
    p.add_argument("--tasks", default="planning")
    p.add_argument("--chain", default="V-A-P")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("train", help="train the toy planner")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rp-embedding", choices=("none", "sincos", "learned", "rp"), default=None)
    p.add_argument("--text-only", action="store_true", help="ablation: no 3D-token injection")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--log-every", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="decode answers for a QA dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mode", choices=("greedy", "sample"), default="greedy")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predictions against scenes")
    p.add_argument("--preds", required=True)
    p.add_argument("--scenes", required=True)
    p.add_argument("--chain", default="V-A-P")
    p.add_argument("--ego-dims", default="4.084x1.85")
    p.add_argument("--l2-convention", choices=("stp3", "at-horizon"), default="stp3")
    p.add_argument("--method", default="model")
    p.add_argument("--out", required=True, help="output prefix for .json/.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render SVG figures and the planning-table CSV")
    p.add_argument("--report", default=None, help="metric report JSON from eval")
    p.add_argument("--preds", default=None)
    p.add_argument("--scenes", default=None)
    p.add_argument("--chain", default="V-A-P")
    p.add_argument("--method", default="model")
    p.add_argument("--max-bev", type=int, default=8)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv: list[str] | None = None) -> int:
    threads = os.environ.get("ATLASBENCH_THREADS")
    try:
        import torch

        torch.set_num_threads(max(1, int(threads)) if threads else 1)
    except (ImportError, ValueError):
        pass

    parser = build_parser()
    ns = parser.parse_args(argv)
    try:
        return ns.func(ns)
    except (
        SceneFileError,
        SceneConfigError,
        ConfigError,
        EvaluationError,
        FileNotFoundError,
        IsADirectoryError,
    ) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RuntimeError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
