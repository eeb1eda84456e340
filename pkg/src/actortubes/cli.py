"""Command-line front end: ingestion -> linking/viterbi -> training -> evaluation.

All settings live in one JSON config file (unknown keys rejected); CLI flags
win over file values. Every run writes a resolved-config snapshot next to its
outputs, and all randomness flows from the single configured seed.

Exit codes: 0 success, 2 validation failure, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import attention, evaluate, linking, synth, viterbi
from .attention import AttentionConfig, TrainConfig, TrainVideo
from .errors import ValidationError
from .ingest import (
    FeatureTensor,
    Manifest,
    VideoFrames,
    load_detections,
    load_ground_truth,
    load_manifest,
    load_tensor,
)
from .linking import LinkingConfig
from .tracking import TrackerConfig
from .viterbi import ViterbiConfig

logger = logging.getLogger("actortubes")

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_RUNTIME = 3


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = (0.2, 0.5)
    budgets: tuple[int, ...] = (1, 5, 10, 20)
    map_iou: float = 0.5


@dataclass(frozen=True)
class SynthSuiteConfig:
    mode: str = "classification"  # "classification" | "deformation"
    num_classes: int = 3
    train_per_class: int = 8
    test_per_class: int = 4
    num_frames: int = 24
    frame_size: int = 48
    n_videos: int = 50  # deformation mode only

    def __post_init__(self) -> None:
        if self.mode not in ("classification", "deformation"):
            raise ValidationError(f"unknown synth mode {self.mode!r}")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    jobs: int = 1
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    linking: LinkingConfig = field(default_factory=LinkingConfig)
    viterbi: ViterbiConfig = field(default_factory=ViterbiConfig)
    attention: AttentionConfig = field(default_factory=lambda: AttentionConfig(num_classes=3))
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SynthSuiteConfig = field(default_factory=SynthSuiteConfig)


def _coerce(value):
    if isinstance(value, list):
        return tuple(_coerce(v) for v in value)
    return value


def _build_dataclass(cls, data: dict, where: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ValidationError(f"{where}: unknown config keys {unknown}")
    return cls(**{k: _coerce(v) for k, v in data.items()})


_SECTIONS = {
    "tracker": TrackerConfig,
    "linking": LinkingConfig,
    "viterbi": ViterbiConfig,
    "attention": AttentionConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "synth": SynthSuiteConfig,
}


def load_run_config(path: Path | str | None) -> RunConfig:
    doc: dict = {}
    if path is not None:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict):
            raise ValidationError(f"{path}: config root must be an object")
    known = {"seed", "jobs"} | set(_SECTIONS)
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"config: unknown top-level keys {unknown}")
    kwargs: dict = {}
    if "seed" in doc:
        kwargs["seed"] = int(doc["seed"])
    if "jobs" in doc:
        kwargs["jobs"] = int(doc["jobs"])
    for name, cls in _SECTIONS.items():
        if name in doc:
            section = doc[name]
            if not isinstance(section, dict):
                raise ValidationError(f"config: section {name!r} must be an object")
            kwargs[name] = _build_dataclass(cls, section, f"config.{name}")
    return RunConfig(**kwargs)


def _apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "jobs", None) is not None:
        cfg = dataclasses.replace(cfg, jobs=args.jobs)
    if getattr(args, "max_proposals", None) is not None:
        cfg = dataclasses.replace(
            cfg,
            linking=dataclasses.replace(cfg.linking, max_proposals=args.max_proposals),
            viterbi=dataclasses.replace(cfg.viterbi, num_tubes=args.max_proposals),
        )
    if getattr(args, "filter_threshold", None) is not None:
        cfg = dataclasses.replace(
            cfg, linking=dataclasses.replace(cfg.linking, filter_threshold=args.filter_threshold)
        )
    if getattr(args, "topk", None) is not None:
        cfg = dataclasses.replace(
            cfg, attention=dataclasses.replace(cfg.attention, top_k=args.topk)
        )
    if getattr(args, "iou", None):
        cfg = dataclasses.replace(
            cfg, eval=dataclasses.replace(cfg.eval, iou_thresholds=tuple(args.iou))
        )
    if getattr(args, "budget", None):
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, budgets=tuple(args.budget)))
    if getattr(args, "map_iou", None) is not None:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(cfg.eval, map_iou=args.map_iou))
    return cfg


def _write_snapshot(out_dir: Path, cfg: RunConfig, command: str, inputs: dict) -> None:
    doc = {
        "command": command,
        "inputs": {k: str(v) for k, v in inputs.items() if v is not None},
        "config": dataclasses.asdict(cfg),
    }
    (out_dir / "config.resolved.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )


def _run_per_video(tasks, jobs: int):
    """Run (video_id, fn) tasks, serially or on a thread pool; returns
    (results, failures)."""
    results = []
    failures = []

    def _invoke(item):
        vid, fn = item
        try:
            return vid, fn(), None
        except Exception as exc:  # noqa: BLE001 - per-video isolation
            return vid, None, exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_invoke, tasks))
    else:
        outcomes = [_invoke(t) for t in tasks]
    for vid, value, exc in outcomes:
        if exc is None:
            results.append((vid, value))
        else:
            logger.error("video %s failed: %s", vid, exc)
            failures.append(vid)
    return results, failures


def _prepare_out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_features_entry(entry) -> tuple[np.ndarray, tuple[float, float], float, bool]:
    """Features array, pixel->feature scale, pixel width, and whether the
    channel normalization applies (3-channel pixel-like inputs)."""
    if entry.features is None:
        raise ValidationError(f"entry {entry.video_id!r} has no features path")
    tensor = load_tensor(entry.features)
    if isinstance(tensor, VideoFrames):
        tensor = synth.frames_as_features(tensor)
    assert isinstance(tensor, FeatureTensor)
    data = np.asarray(tensor.data, dtype=np.float64)
    scale = tensor.grid_scale()
    width = data.shape[2] * tensor.spatial_scale[0]  # W' * (W/W') = pixel width
    normalize = data.shape[1] == 3
    return data, scale, width, normalize


def _proposal_path(proposals_dir: Path, video_id: str) -> Path:
    path = proposals_dir / f"{video_id}.json"
    if not path.exists():
        raise ValidationError(f"no proposal file for video {video_id!r}: {path}")
    return path


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_link(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    manifest = load_manifest(args.manifest)
    out = _prepare_out(args)
    _write_snapshot(out, cfg, "link", {"manifest": args.manifest})
    prop_dir = out / "proposals"
    prop_dir.mkdir(exist_ok=True)

    def make_task(entry):
        def run():
            if entry.detections is None or entry.frames is None:
                raise ValidationError(
                    f"entry {entry.video_id!r} needs detections and frames paths"
                )
            dets = load_detections(entry.detections)
            frames = load_tensor(entry.frames)
            if not isinstance(frames, VideoFrames):
                raise ValidationError(f"{entry.frames} does not hold pixel frames")
            proposals = linking.generate_actor_proposals(
                dets, frames, cfg.tracker, cfg.linking
            )
            linking.save_proposals(
                prop_dir / f"{entry.video_id}.json", entry.video_id, dets.num_frames, proposals
            )
            return len(proposals)

        return entry.video_id, run

    results, failures = _run_per_video([make_task(e) for e in manifest.entries], cfg.jobs)
    total_tubes = sum(v for _, v in results)
    print(f"link: {len(results)} videos processed, {total_tubes} tubes, {len(failures)} failures")
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_viterbi(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    manifest = load_manifest(args.manifest)
    out = _prepare_out(args)
    _write_snapshot(out, cfg, "viterbi", {"manifest": args.manifest})
    prop_dir = out / "proposals"
    prop_dir.mkdir(exist_ok=True)

    def make_task(entry):
        def run():
            if entry.detections is None:
                raise ValidationError(f"entry {entry.video_id!r} needs a detections path")
            dets = load_detections(entry.detections)
            proposals = viterbi.extract_k_tubes(dets, cfg.viterbi)
            linking.save_proposals(
                prop_dir / f"{entry.video_id}.json", entry.video_id, dets.num_frames, proposals
            )
            return len(proposals)

        return entry.video_id, run

    results, failures = _run_per_video([make_task(e) for e in manifest.entries], cfg.jobs)
    total_tubes = sum(v for _, v in results)
    print(
        f"viterbi: {len(results)} videos processed, {total_tubes} tubes, {len(failures)} failures"
    )
    return EXIT_RUNTIME if failures else EXIT_OK


def cmd_synth(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    out = _prepare_out(args)
    _write_snapshot(out, cfg, "synth", {})
    sc = cfg.synth
    if sc.mode == "classification":
        class_names = [f"action-{c}" for c in range(sc.num_classes)]
        train_set = synth.make_classification_suite(
            sc.train_per_class,
            sc.num_classes,
            seed=cfg.seed,
            num_frames=sc.num_frames,
            frame_size=sc.frame_size,
            id_prefix="train",
        )
        test_set = synth.make_classification_suite(
            sc.test_per_class,
            sc.num_classes,
            seed=cfg.seed + 1,
            num_frames=sc.num_frames,
            frame_size=sc.frame_size,
            id_prefix="test",
        )
        train_manifest = synth.write_suite(out / "train", train_set, class_names, "train")
        test_manifest = synth.write_suite(out / "test", test_set, class_names, "test")
        print(
            f"synth: wrote {len(train_set)} train / {len(test_set)} test videos "
            f"({train_manifest}, {test_manifest})"
        )
    else:
        videos = synth.deformation_benchmark(sc.n_videos, seed=cfg.seed)
        manifest = synth.write_suite(
            out / "videos", [(v, 0) for v in videos], ["actor"], "test"
        )
        print(f"synth: wrote {len(videos)} deformation videos ({manifest})")
    return EXIT_OK


def _load_train_videos(manifest: Manifest, proposals_dir: Path) -> list[TrainVideo]:
    videos = []
    for entry in manifest.entries:
        _, _, proposal_set = linking.load_proposals(_proposal_path(proposals_dir, entry.video_id))
        if len(proposal_set) == 0:
            raise ValidationError(f"video {entry.video_id!r} has no proposals")
        data, scale, width, normalize = _load_features_entry(entry)
        videos.append(
            TrainVideo(
                video_id=entry.video_id,
                label=int(entry.label),  # manifest validation guarantees presence
                features=data,
                grid_scale=scale,
                tubes=proposal_set.tubes,
                frame_width=width,
                normalize=normalize,
            )
        )
    return videos


def cmd_train(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    manifest = load_manifest(args.manifest)
    if manifest.split != "train":
        raise ValidationError(f"training expects a train manifest, got split {manifest.split!r}")
    if not manifest.entries:
        raise ValidationError("training manifest is empty")
    out = _prepare_out(args)
    _write_snapshot(out, cfg, "train", {"manifest": args.manifest, "proposals": args.proposals})
    videos = _load_train_videos(manifest, Path(args.proposals))
    max_label = max(v.label for v in videos)
    if max_label >= cfg.attention.num_classes:
        raise ValidationError(
            f"label {max_label} needs num_classes > {max_label}; "
            f"config says {cfg.attention.num_classes}"
        )
    params, history = attention.train(videos, cfg.attention, cfg.train, seed=cfg.seed)
    attention.save_checkpoint(out / "checkpoint.json", params, cfg.attention)
    lines = ["epoch\tmean_loss"] + [f"{i}\t{v:.8f}" for i, v in enumerate(history)]
    (out / "loss_history.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    final = history[-1] if history else float("nan")
    print(f"train: {len(videos)} videos, {cfg.train.epochs} epochs, final loss {final:.4f}")
    return EXIT_OK


def cmd_rank(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    manifest = load_manifest(args.manifest)
    params, acfg = attention.load_checkpoint(args.checkpoint)
    out = _prepare_out(args)
    _write_snapshot(
        out,
        cfg,
        "rank",
        {"manifest": args.manifest, "proposals": args.proposals, "checkpoint": args.checkpoint},
    )
    rank_dir = out / "rankings"
    rank_dir.mkdir(exist_ok=True)
    proposals_dir = Path(args.proposals)

    def make_task(entry):
        def run():
            _, num_frames, proposal_set = linking.load_proposals(
                _proposal_path(proposals_dir, entry.video_id)
            )
            data, scale, _, normalize = _load_features_entry(entry)
            logits = attention.score_proposals(
                data, proposal_set.tubes, params, acfg, scale, normalize=normalize
            )
            attention.save_rankings(
                rank_dir / f"{entry.video_id}.json",
                entry.video_id,
                num_frames,
                proposal_set.tubes,
                logits,
            )
            return len(proposal_set)

        return entry.video_id, run

    results, failures = _run_per_video([make_task(e) for e in manifest.entries], cfg.jobs)
    print(f"rank: {len(results)} videos ranked, {len(failures)} failures")
    return EXIT_RUNTIME if failures else EXIT_OK


def _collect_proposal_tubes(proposals_dir: Path) -> dict[str, list]:
    out: dict[str, list] = {}
    for path in sorted(proposals_dir.glob("*.json")):
        video_id, _, proposal_set = linking.load_proposals(path)
        out[video_id] = list(proposal_set.tubes)
    return out


def cmd_eval_recall(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    gt = load_ground_truth(args.gt)
    proposals = _collect_proposal_tubes(Path(args.proposals))
    out = _prepare_out(args)
    _write_snapshot(out, cfg, "eval-recall", {"proposals": args.proposals, "gt": args.gt})
    report = evaluate.recall_curve(proposals, gt, cfg.eval.iou_thresholds, cfg.eval.budgets)
    evaluate.emit_recall(report, out / "recall")
    for ti, theta in enumerate(report.thetas):
        row = ", ".join(
            f"n={b}: {report.values[ti, bi]:.3f}" for bi, b in enumerate(report.budgets)
        )
        print(f"recall@{theta:g}: {row}")
    return EXIT_OK


def cmd_eval_map(args) -> int:
    cfg = _apply_overrides(load_run_config(args.config), args)
    gt = load_ground_truth(args.gt)
    out = _prepare_out(args)
    _write_snapshot(
        out,
        cfg,
        "eval-map",
        {
            "gt": args.gt,
            "rankings": args.rankings,
            "proposals": args.proposals,
            "checkpoint": args.checkpoint,
            "manifest": args.manifest,
        },
    )
    scored: dict[int, list] = {c: [] for c in gt.classes}
    if args.rankings is not None:
        ranking_files = sorted(Path(args.rankings).glob("*.json"))
        if not ranking_files:
            raise ValidationError(f"no ranking files under {args.rankings}")
        for path in ranking_files:
            video_id, tubes, logits = attention.load_rankings(path)
            for t, tube in enumerate(tubes):
                for c in gt.classes:
                    if c < logits.shape[1]:
                        scored[c].append((video_id, float(logits[t, c]), tube))
    else:
        if args.proposals is None or args.checkpoint is None or args.manifest is None:
            raise ValidationError(
                "eval-map needs either --rankings or all of --proposals, --checkpoint, --manifest"
            )
        manifest = load_manifest(args.manifest)
        params, acfg = attention.load_checkpoint(args.checkpoint)
        proposals_dir = Path(args.proposals)
        for entry in manifest.entries:
            _, _, proposal_set = linking.load_proposals(
                _proposal_path(proposals_dir, entry.video_id)
            )
            data, scale, _, normalize = _load_features_entry(entry)
            logits = attention.score_proposals(
                data, proposal_set.tubes, params, acfg, scale, normalize=normalize
            )
            for t, tube in enumerate(proposal_set.tubes):
                for c in gt.classes:
                    if c < logits.shape[1]:
                        scored[c].append((entry.video_id, float(logits[t, c]), tube))
    report = evaluate.mean_average_precision(scored, gt, cfg.eval.map_iou)
    evaluate.emit_ap(report, out / "ap")
    for c in report.per_class:
        print(f"AP@{report.theta:g} {c.class_name}: {c.ap:.3f} ({c.matched}/{c.num_gt} matched)")
    print(f"mAP@{report.theta:g}: {report.mean_ap:.3f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=Path, default=None, help="JSON run config")
    sub.add_argument("--out", type=Path, required=True, help="output directory")
    sub.add_argument("--seed", type=int, default=None, help="override the config seed")
    sub.add_argument("--jobs", type=int, default=None, help="per-video parallelism")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="actortubes",
        description="Actor-tube proposal generation, weakly-supervised "
        "classification, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("link", help="greedy tracker-based actor proposals")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--max-proposals", type=int, default=None)
    p.add_argument("--filter-threshold", type=float, default=None)
    p.set_defaults(func=cmd_link)

    p = sub.add_parser("viterbi", help="dynamic-programming linking baseline")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--max-proposals", type=int, default=None)
    p.set_defaults(func=cmd_viterbi)

    p = sub.add_parser("synth", help="generate a synthetic benchmark suite")
    _add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the actor-attention classifier")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--proposals", type=Path, required=True, help="proposal files directory")
    p.add_argument("--topk", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rank", help="score and rank proposals per class")
    _add_common(p)
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--proposals", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--topk", type=int, default=None)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("eval-recall", help="recall at IoU thresholds and budgets")
    _add_common(p)
    p.add_argument("--proposals", type=Path, required=True)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--iou", type=float, action="append", default=None)
    p.add_argument("--budget", type=int, action="append", default=None)
    p.set_defaults(func=cmd_eval_recall)

    p = sub.add_parser("eval-map", help="per-class AP and mAP of scored tubes")
    _add_common(p)
    p.add_argument("--gt", type=Path, required=True)
    p.add_argument("--rankings", type=Path, default=None)
    p.add_argument("--proposals", type=Path, default=None)
    p.add_argument("--checkpoint", type=Path, default=None)
    p.add_argument("--manifest", type=Path, default=None)
    p.add_argument("--map-iou", type=float, default=None)
    p.set_defaults(func=cmd_eval_map)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValidationError, FileNotFoundError) as exc:
        logger.error("%s", exc)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.error("%s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
