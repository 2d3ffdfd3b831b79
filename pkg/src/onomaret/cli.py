"""Command-line pipeline: ingest, synth, train, eval, baseline, retrieve, analyze.

All commands are deterministic given their inputs and flags; every random
choice flows from an explicit seed. Configuration is one flat JSON document
whose values individual flags override. The CLI only formats what the
library computes; it adds no arithmetic of its own.
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import embstore, metrics, model, retrieval

_CONFIG_KEYS = {
    "image_pack": str,
    "audio_pack": str,
    "out_dir": str,
    "split_manifest": str,
    "seeds": list,
    "lr": float,
    "weight_decay": float,
    "dropout_rate": float,
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "align_weight": float,
    "cls_weight": float,
    "hidden_dim": int,
    "joint_dim": int,
}

_TRAIN_FIELDS = (
    "lr", "weight_decay", "dropout_rate", "batch_size",
    "max_epochs", "patience", "align_weight", "cls_weight",
)


class CliError(ValueError):
    """Bad command-line inputs (missing paths, malformed config, unknown ids)."""


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise CliError(f"config file not found: {path}")
    try:
        cfg = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CliError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(f"config {path} must be a flat JSON object")
    unknown = set(cfg) - set(_CONFIG_KEYS)
    if unknown:
        raise CliError(f"config {path} has unknown keys: {sorted(unknown)}")
    return cfg


def parse_seeds(text: str) -> list[int]:
    """Accept '3', '0,1,4' or an inclusive range '0-9'."""
    text = text.strip()
    m = re.fullmatch(r"(-?\d+)-(-?\d+)", text)
    if m and "," not in text:
        lo, hi = int(m.group(1)), int(m.group(2))
        if hi < lo:
            raise CliError(f"empty seed range '{text}'")
        return list(range(lo, hi + 1))
    try:
        seeds = [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise CliError(f"cannot parse seed list '{text}'") from exc
    if not seeds:
        raise CliError("seed list is empty")
    return seeds


def _require_stem(stem: str | None, what: str) -> str:
    if stem is None:
        raise CliError(f"missing required {what}")
    for suffix in (".meta.jsonl", ".vec"):
        if not Path(stem + suffix).exists():
            raise CliError(f"{what} file not found: {stem}{suffix}")
    return stem


def _directions(flag: str) -> list[str]:
    return {
        "i2a": [retrieval.I2A],
        "a2i": [retrieval.A2I],
        "both": [retrieval.I2A, retrieval.A2I],
    }[flag]


def _class_names(pack: embstore.EmbeddingPack) -> dict[int, str]:
    return {rec.class_id: rec.class_name for rec in pack.records}


# ---------------------------------------------------------------------------
# ingest

def cmd_ingest(args: argparse.Namespace) -> int:
    image = embstore.load_pack(_require_stem(args.image_pack, "--image-pack"))
    audio = embstore.load_pack(_require_stem(args.audio_pack, "--audio-pack"))
    manifest = embstore.load_split_manifest(args.manifest)
    image = embstore.split_by_illustrator(
        image, manifest["train"], manifest["val"], manifest["test"]
    )
    audio = embstore.splits_from_pairs(audio, image)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    embstore.save_pack(image, out_dir / "image")
    embstore.save_pack(audio, out_dir / "audio")
    counts = {split: 0 for split in embstore.SPLITS}
    for rec in image.records:
        counts[rec.split] += 1
    illustrators = {rec.illustrator_id for rec in image.records if rec.illustrator_id}
    print(
        f"{counts['train']} train / {counts['val']} val / {counts['test']} test pairs; "
        f"{len(image)} image + {len(audio)} audio records, "
        f"{image.class_count} classes, {len(illustrators)} illustrators"
    )
    return 0


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args: argparse.Namespace) -> int:
    spec = embstore.SyntheticSpec(
        class_count=args.classes,
        dim=args.dim,
        pairs_per_class=args.pairs_per_class,
        intra_class_audio_spread=args.audio_spread,
        intra_class_image_spread=args.image_spread,
        cross_modal_rotation_seed=args.rotation_seed,
        noise_seed=args.noise_seed,
        identity_rotation=args.identity_rotation,
    )
    image, audio = embstore.generate_synthetic(spec)
    if args.split_fractions is not None:
        fractions = tuple(float(x) for x in args.split_fractions.split(","))
        if len(fractions) != 3:
            raise CliError("--split-fractions must be train,val,test")
        image, audio = embstore.assign_random_splits(image, audio, fractions, args.split_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    embstore.save_pack(image, f"{out}_image")
    embstore.save_pack(audio, f"{out}_audio")
    print(
        f"wrote {out}_image and {out}_audio: {len(image)} pairs, "
        f"{image.class_count} classes, dim {image.dim}"
    )
    return 0


# ---------------------------------------------------------------------------
# train

def _train_one_seed(
    image_stem: str,
    audio_stem: str,
    cfg: dict,
    seed: int,
    out_dir: str,
) -> dict:
    image = embstore.load_pack(image_stem)
    audio = embstore.load_pack(audio_stem)
    train_pairs = embstore.make_pairs(image, audio, split="train")
    val_pairs = embstore.make_pairs(image, audio, split="val")
    train_config = model.TrainConfig(
        seed=seed, **{k: cfg[k] for k in _TRAIN_FIELDS if k in cfg}
    )
    dims = model.ModelDims(
        input_dim=image.dim,
        hidden_dim=cfg.get("hidden_dim", 512),
        joint_dim=cfg.get("joint_dim", 256),
        class_count=image.class_count,
    )
    trained, report = model.train(train_pairs, val_pairs, train_config, dims)
    model.save_checkpoint(trained, Path(out_dir) / f"seed_{seed}")
    return {
        "seed": seed,
        "config": {k: getattr(train_config, k) for k in _TRAIN_FIELDS},
        "dims": {
            "input_dim": dims.input_dim,
            "hidden_dim": dims.hidden_dim,
            "joint_dim": dims.joint_dim,
            "class_count": dims.class_count,
        },
        "report": report.to_json_dict(),
    }


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    if args.seeds is not None:
        seeds = parse_seeds(args.seeds)
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = [int(s) for s in cfg.get("seeds", [])]
    if not seeds:
        raise CliError("no seeds given (use --seed/--seeds or 'seeds' in the config)")
    image_stem = _require_stem(args.image_pack or cfg.get("image_pack"), "image pack stem")
    audio_stem = _require_stem(args.audio_pack or cfg.get("audio_pack"), "audio pack stem")
    out_dir = args.out or cfg.get("out_dir")
    if out_dir is None:
        raise CliError("no output directory (use --out or 'out_dir' in the config)")
    Path(out_dir).mkdir(parents=True, exist_ok=True)

    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            futures = [
                pool.submit(_train_one_seed, image_stem, audio_stem, cfg, seed, str(out_dir))
                for seed in seeds
            ]
            results = [f.result() for f in futures]
    else:
        results = [
            _train_one_seed(image_stem, audio_stem, cfg, seed, str(out_dir))
            for seed in seeds
        ]
    # Report writing stays in the parent process, in seed order.
    for seed, result in zip(seeds, results):
        path = Path(out_dir) / f"seed_{seed}.report.json"
        path.write_text(json.dumps(result, indent=2) + "\n", encoding="utf-8")
        best = result["report"]["best_epoch"]
        epochs = len(result["report"]["train_loss"])
        print(f"seed {seed}: {epochs} epochs, best epoch {best}, checkpoint seed_{seed}")
    return 0


# ---------------------------------------------------------------------------
# eval / baseline / analyze

def _checkpoint_seed(stem: str, fallback: int) -> int:
    m = re.search(r"seed_(\d+)$", stem)
    return int(m.group(1)) if m else fallback


def _projected_dispersion(
    trained: model.AlignmentModel,
    image: embstore.EmbeddingPack,
    audio: embstore.EmbeddingPack,
    space: str,
) -> tuple[dict[int, float], dict[int, float]]:
    imat = embstore.vector_matrix(image)
    amat = embstore.vector_matrix(audio)
    if space == "projected":
        imat = model.project_image(trained, imat)
        amat = model.project_audio(trained, amat)
    ilabels = [rec.class_id for rec in image.records]
    alabels = [rec.class_id for rec in audio.records]
    return metrics.centroid_dispersion(amat, alabels), metrics.centroid_dispersion(imat, ilabels)


def _dispersion_rows(
    checkpoints: list[model.AlignmentModel],
    image: embstore.EmbeddingPack,
    audio: embstore.EmbeddingPack,
    space: str,
    class_names: dict[int, str],
) -> list[dict]:
    audio_runs, image_runs = [], []
    for trained in checkpoints:
        aud, img = _projected_dispersion(trained, image, audio, space)
        audio_runs.append(aud)
        image_runs.append(img)
    rows = []
    for cid in sorted(audio_runs[0]):
        avals = np.array([run[cid] for run in audio_runs])
        ivals = np.array([run[cid] for run in image_runs])
        rows.append(
            {
                "class_id": cid,
                "class_name": class_names.get(cid),
                "space": space,
                "audio_mean": float(avals.mean()),
                "audio_std": float(np.std(avals, ddof=1)) if avals.size > 1 else 0.0,
                "image_mean": float(ivals.mean()),
                "image_std": float(np.std(ivals, ddof=1)) if ivals.size > 1 else 0.0,
            }
        )
    return rows


def _evaluate_checkpoints(
    args: argparse.Namespace,
) -> tuple[list[metrics.ExperimentReport], dict[int, str]]:
    image = embstore.load_pack(_require_stem(args.image_pack, "--image-pack"))
    audio = embstore.load_pack(_require_stem(args.audio_pack, "--audio-pack"))
    if args.split is not None:
        image = embstore.subset_by_split(image, args.split)
        audio = embstore.subset_by_split(audio, args.split)
    names = _class_names(image) | _class_names(audio)
    stems = args.checkpoint
    models = [model.load_checkpoint(stem) for stem in stems]
    seeds = [_checkpoint_seed(stem, i) for i, stem in enumerate(stems)]
    reports = []
    for direction in _directions(args.direction):
        runs = [retrieval.retrieve(m, *(
            (image, audio) if direction == retrieval.I2A else (audio, image)
        ), direction) for m in models]
        report = metrics.build_report(direction, seeds, runs, names)
        report.dispersion = _dispersion_rows(models, image, audio, args.dispersion_space, names)
        reports.append(report)
    return reports, names


def cmd_eval(args: argparse.Namespace) -> int:
    reports, _ = _evaluate_checkpoints(args)
    rows = [(f"trained/{r.direction}", r.aggregate) for r in reports]
    print(metrics.format_metrics_table(rows))
    if args.out:
        metrics.write_report_json(reports, args.out)
        print(f"report written to {args.out}")
    return 0


def cmd_analyze(args: argparse.Namespace) -> int:
    reports, _ = _evaluate_checkpoints(args)
    for report in reports:
        print(f"== {report.direction}: lowest-AP classes ==")
        print(metrics.format_class_table(report.per_class, args.bottom_n))
        print()
    bottom_ids = {
        row["class_id"]
        for report in reports
        for row in sorted(report.per_class, key=lambda r: r["ap_mean"])[: args.bottom_n]
    }
    disp = [row for row in reports[0].dispersion if row["class_id"] in bottom_ids]
    print(f"== centroid dispersion ({args.dispersion_space} space) ==")
    print(metrics.format_dispersion_table(disp))
    if args.out:
        metrics.write_report_json(reports, args.out)
        print(f"report written to {args.out}")
    return 0


def cmd_baseline(args: argparse.Namespace) -> int:
    image = embstore.load_pack(_require_stem(args.image_pack, "--image-pack"))
    audio = embstore.load_pack(_require_stem(args.audio_pack, "--audio-pack"))
    if args.split is not None:
        image = embstore.subset_by_split(image, args.split)
        audio = embstore.subset_by_split(audio, args.split)
    names = _class_names(image) | _class_names(audio)
    reports = []
    for direction in _directions(args.direction):
        run = retrieval.zero_shot_retrieve(image, audio, direction)
        with warnings.catch_warnings():
            # The baseline has no trainable parts: one run is the whole story.
            warnings.simplefilter("ignore")
            report = metrics.build_report(direction, [0], [run], names)
        reports.append(report)
    rows = [(f"baseline/{r.direction}", r.aggregate) for r in reports]
    print(metrics.format_metrics_table(rows))
    if args.out:
        metrics.write_report_json(reports, args.out)
        print(f"report written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# retrieve

def cmd_retrieve(args: argparse.Namespace) -> int:
    image = embstore.load_pack(_require_stem(args.image_pack, "--image-pack"))
    audio = embstore.load_pack(_require_stem(args.audio_pack, "--audio-pack"))
    trained = model.load_checkpoint(args.checkpoint)
    direction = _directions(args.direction)[0]
    if args.direction == "both":
        raise CliError("retrieve needs a single direction (i2a or a2i)")
    query_pack, cand_pack = (image, audio) if direction == retrieval.I2A else (audio, image)
    matches = [rec for rec in query_pack.records if rec.id == args.query_id]
    if not matches:
        raise CliError(f"query id '{args.query_id}' not found in the query pack")
    query = matches[0]
    if args.split is not None:
        cand_pack = embstore.subset_by_split(cand_pack, args.split)
    query_only = embstore.make_pack(
        query_pack.dim, query_pack.class_count, [query], query_pack.provenance
    )
    ranked = retrieval.retrieve(trained, query_only, cand_pack, direction)[0]
    top = ranked.candidates[: args.top_n]
    print(f"query {ranked.query_id} ({direction}), class {ranked.query_class}")
    for rank, cand in enumerate(top, 1):
        print(f"{rank:>3}  {cand.id:<24} class {cand.class_id:<4} score {cand.score:+.6f}")
    if args.out:
        trimmed = retrieval.RankedList(
            ranked.query_id, ranked.query_class, ranked.direction, top
        )
        retrieval.write_ranked_jsonl([trimmed], args.out)
        print(f"ranking written to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# parser plumbing

def _add_pack_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--image-pack", help="stem of the image pack files")
    p.add_argument("--audio-pack", help="stem of the audio pack files")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="onomaret",
        description="Cross-modal alignment and retrieval over embedding packs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate packs and apply an illustrator split")
    _add_pack_args(p)
    p.add_argument("--manifest", required=True, help="JSON split manifest")
    p.add_argument("--out", required=True, help="output directory for the split packs")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("synth", help="generate a synthetic pack pair")
    p.add_argument("--out", required=True, help="output stem prefix")
    p.add_argument("--classes", type=int, default=50)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--pairs-per-class", type=int, default=8)
    p.add_argument("--audio-spread", type=float, default=0.01)
    p.add_argument("--image-spread", type=float, default=0.05)
    p.add_argument("--rotation-seed", type=int, default=0)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--identity-rotation", action="store_true")
    p.add_argument("--split-fractions", default="0.8,0.1,0.1",
                   help="train,val,test fractions; use 'none' to skip splitting")
    p.add_argument("--split-seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one checkpoint per seed")
    p.add_argument("--config", help="flat JSON config file")
    _add_pack_args(p)
    p.add_argument("--seed", type=int, help="single training seed")
    p.add_argument("--seeds", help="comma list or inclusive range, e.g. 0-9")
    p.add_argument("--out", help="output directory for checkpoints and reports")
    p.add_argument("--jobs", type=int, default=1, help="train seeds in parallel")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate checkpoints on a split")
    _add_pack_args(p)
    p.add_argument("--checkpoint", action="append", required=True,
                   help="checkpoint stem; repeat for multi-seed aggregation")
    p.add_argument("--split", default="test", choices=list(embstore.SPLITS))
    p.add_argument("--direction", default="both", choices=["i2a", "a2i", "both"])
    p.add_argument("--dispersion-space", default="projected", choices=["projected", "raw"])
    p.add_argument("--out", help="write the ExperimentReport JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("baseline", help="zero-shot retrieval on raw embeddings")
    _add_pack_args(p)
    p.add_argument("--split", default="test", choices=list(embstore.SPLITS))
    p.add_argument("--direction", default="both", choices=["i2a", "a2i", "both"])
    p.add_argument("--out", help="write the ExperimentReport JSON here")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("retrieve", help="rank candidates for one query id")
    _add_pack_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--direction", default="i2a", choices=["i2a", "a2i", "both"])
    p.add_argument("--split", help="restrict candidates to one split")
    p.add_argument("--top-n", type=int, default=5)
    p.add_argument("--out", help="write the top-n ranking as JSON lines")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("analyze", help="per-class AP, confusion and dispersion tables")
    _add_pack_args(p)
    p.add_argument("--checkpoint", action="append", required=True)
    p.add_argument("--split", default="test", choices=list(embstore.SPLITS))
    p.add_argument("--direction", default="both", choices=["i2a", "a2i", "both"])
    p.add_argument("--dispersion-space", default="projected", choices=["projected", "raw"])
    p.add_argument("--bottom-n", type=int, default=5)
    p.add_argument("--out", help="write the ExperimentReport JSON here")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "split_fractions", None) == "none":
        args.split_fractions = None
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
