"""Command line entry point: generate, train, predict, eval and ablate.

Every command reads one JSON run configuration::

    {
      "seed": 0,
      "output_dir": "runs/demo",
      "data": {"synth": {...SynthConfig...}} or {"manifest": "path/manifest.json"},
      "fusion": {"mode": "proj_cat", "proj_dims": [386, 386, 256]},
      "model": {...ModelConfig...},
      "train": {...TrainConfig...},
      "decode": {...DecodeConfig...},
      "eval": {"thresholds": [0.1, 0.2, 0.3, 0.4, 0.5], "k": 1, "detections": null},
      "predict": {"checkpoint": null, "batch_size": 4}
    }

Any field can be overridden from the environment as TALKIT_<SECTION>_<FIELD>
(for example TALKIT_TRAIN_EPOCHS=3) or TALKIT_SEED / TALKIT_OUTPUT_DIR.
Values are parsed as JSON and fall back to plain strings.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_USAGE = 64

COMMANDS = ("generate", "train", "predict", "eval", "ablate")
SECTIONS = ("data", "fusion", "model", "train", "decode", "eval", "predict")
FUSION_MODES = ("cat", "proj_cat")

logger = logging.getLogger("talkit")


class RunConfigError(ValueError):
    pass


class UsageError(Exception):
    pass


_DATA_FIELDS = {"manifest", "synth", "align", "train_subset", "eval_subset"}
_FUSION_FIELDS = {"mode", "proj_dims"}
_EVAL_FIELDS = {"thresholds", "k", "recall_tiou", "detections"}
_PREDICT_FIELDS = {"checkpoint", "batch_size"}


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: Path = Path("runs/default")
    data: dict = field(default_factory=dict)
    fusion: dict = field(default_factory=dict)
    model: dict = field(default_factory=dict)
    train: dict = field(default_factory=dict)
    decode: dict = field(default_factory=dict)
    eval: dict = field(default_factory=dict)
    predict: dict = field(default_factory=dict)

    @property
    def fusion_mode(self) -> str:
        return self.fusion.get("mode", "proj_cat")


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(doc: dict, env: Mapping[str, str]) -> dict:
    doc = json.loads(json.dumps(doc))
    for key in sorted(env):
        if not key.startswith("TALKIT_"):
            continue
        rest = key[len("TALKIT_"):].lower()
        value = _parse_env_value(env[key])
        if rest in ("seed", "output_dir"):
            doc[rest] = value
            continue
        for section in SECTIONS:
            if rest.startswith(section + "_"):
                doc.setdefault(section, {})[rest[len(section) + 1:]] = value
                break
    return doc


def _check_fields(section: str, given: dict, allowed) -> None:
    if not isinstance(given, dict):
        raise RunConfigError(f"{section}: expected an object, got {type(given).__name__}")
    unknown = sorted(set(given) - set(allowed))
    if unknown:
        raise RunConfigError(f"{section}: unknown field(s) {', '.join(unknown)}")


def _dataclass_fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def parse_run_config(doc: dict) -> RunConfig:
    """Structural validation; paths and cross-section checks happen later."""
    from talkit.decode import DecodeConfig
    from talkit.model import ModelConfig
    from talkit.synthdata import SynthConfig
    from talkit.train import TrainConfig

    if not isinstance(doc, dict):
        raise RunConfigError("config must be a JSON object")
    _check_fields("config", doc, {"seed", "output_dir", *SECTIONS})
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
        raise RunConfigError(f"seed: expected a non-negative integer, got {seed!r}")
    rc = RunConfig(seed=seed, output_dir=Path(doc.get("output_dir", "runs/default")))
    for name in SECTIONS:
        setattr(rc, name, dict(doc.get(name) or {}))
    _check_fields("data", rc.data, _DATA_FIELDS)
    _check_fields("fusion", rc.fusion, _FUSION_FIELDS)
    _check_fields("eval", rc.eval, _EVAL_FIELDS)
    _check_fields("predict", rc.predict, _PREDICT_FIELDS)
    _check_fields("model", rc.model, _dataclass_fields(ModelConfig))
    _check_fields("train", rc.train, _dataclass_fields(TrainConfig) - {"seed"})
    _check_fields("decode", rc.decode, _dataclass_fields(DecodeConfig))
    if "synth" in rc.data:
        _check_fields("data.synth", rc.data["synth"], _dataclass_fields(SynthConfig) - {"seed"})
    if ("manifest" in rc.data) == ("synth" in rc.data):
        raise RunConfigError("data: give exactly one of 'manifest' or 'synth'")
    if rc.fusion_mode not in FUSION_MODES:
        raise RunConfigError(f"fusion.mode: must be one of {FUSION_MODES}, got {rc.fusion_mode!r}")
    if rc.data.get("align", "nearest") not in ("nearest", "linear"):
        raise RunConfigError(f"data.align: must be 'nearest' or 'linear', got {rc.data['align']!r}")
    # build once so bad values fail before any work starts
    _section("train", lambda: TrainConfig(**rc.train, seed=rc.seed))
    _section("decode", lambda: DecodeConfig(**rc.decode))
    if "synth" in rc.data:
        _section("data.synth", lambda: SynthConfig(**rc.data["synth"], seed=rc.seed))
    thresholds = rc.eval.get("thresholds", [0.1, 0.2, 0.3, 0.4, 0.5])
    if not thresholds or not all(isinstance(t, (int, float)) and 0 < t <= 1 for t in thresholds):
        raise RunConfigError(f"eval.thresholds: need values in (0, 1], got {thresholds!r}")
    k = rc.eval.get("k", 1)
    if not isinstance(k, (int, float)) or k <= 0:
        raise RunConfigError(f"eval.k: must be positive, got {k!r}")
    return rc


def _section(name, build):
    try:
        return build()
    except (TypeError, ValueError) as exc:
        raise RunConfigError(f"{name}: {exc}") from exc


def load_run_config(path, env: Mapping[str, str] | None = None) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise RunConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RunConfigError(f"{path}: invalid JSON ({exc})") from exc
    return parse_run_config(apply_env_overrides(doc, os.environ if env is None else env))


# ------------------------------------------------------------------- data


@dataclass
class Data:
    source_names: list[str]
    source_dims: list[int]
    num_classes: int
    videos: list  # VideoRecord
    subsets: dict[str, str]
    _samples: object  # callable(subset) -> list[VideoSample]

    def samples(self, subset):
        return self._samples(subset)

    def videos_in(self, subset):
        return [v for v in self.videos if subset is None or self.subsets.get(v.video_id) == subset]


def _synth_config(rc: RunConfig):
    from talkit.synthdata import SynthConfig

    return _section("data.synth", lambda: SynthConfig(**rc.data["synth"], seed=rc.seed))


def load_data(rc: RunConfig) -> Data:
    from talkit import io
    from talkit.pipeline import samples_from_manifest, samples_from_synth
    from talkit.synthdata import generate

    align = rc.data.get("align", "nearest")
    if "synth" in rc.data:
        ds = generate(_synth_config(rc))
        names = list(ds.config.sources)
        return Data(
            names,
            [ds.config.sources[n].dim for n in names],
            ds.config.num_classes,
            ds.videos,
            ds.subsets,
            lambda subset: samples_from_synth(ds, subset, align),
        )
    path = Path(rc.data["manifest"])
    if not path.is_file():
        raise RunConfigError(f"data.manifest: file not found: {path}")
    manifest = io.read_manifest(path)
    if not manifest.videos:
        raise RunConfigError("data.manifest: no videos")
    first = manifest.videos[0].sources
    names = list(first)
    if manifest.annotations is None:
        raise RunConfigError("data.manifest: no annotations file referenced")
    videos, num_classes = io.read_annotations_with_classes(manifest.resolve(manifest.annotations))
    subsets = {e.video_id: e.subset for e in manifest.videos}
    return Data(
        names,
        [first[n].dim for n in names],
        num_classes,
        videos,
        subsets,
        lambda subset: samples_from_manifest(manifest, videos, subset, align),
    )


# ------------------------------------------------------------------ model


def _proj_dims(rc: RunConfig, data: Data):
    from talkit.fusion import DEFAULT_PROJ_DIMS, DEFAULT_SOURCES

    dims = rc.fusion.get("proj_dims")
    if dims is None:
        if data.source_names != list(DEFAULT_SOURCES):
            raise RunConfigError("fusion.proj_dims: required for non-default sources")
        dims = list(DEFAULT_PROJ_DIMS)
    if len(dims) != len(data.source_dims) or not all(isinstance(d, int) and d > 0 for d in dims):
        raise RunConfigError(
            f"fusion.proj_dims: need {len(data.source_dims)} positive integers, got {dims!r}"
        )
    return list(dims)


def model_spec(rc: RunConfig, data: Data, mode: str) -> dict:
    """Everything needed to rebuild the network; stored in checkpoint metadata."""
    from talkit.model import ModelConfig

    proj = _proj_dims(rc, data) if mode == "proj_cat" else None
    width = sum(proj) if proj else sum(data.source_dims)
    given = dict(rc.model)
    if "input_width" in given and given["input_width"] != width:
        raise RunConfigError(f"model.input_width: {given['input_width']} does not match fused width {width}")
    given["input_width"] = width
    given.setdefault("num_classes", data.num_classes)
    cfg = _section("model", lambda: ModelConfig.from_dict(given))
    return {
        "model": cfg.to_dict(),
        "fusion": mode,
        "sources": data.source_names,
        "source_dims": data.source_dims,
        "proj_dims": proj,
    }


def build_from_spec(spec: dict, seed: int):
    from talkit.model import ModelConfig
    from talkit.pipeline import build_model

    cfg = ModelConfig.from_dict(spec["model"])
    return build_model(cfg, spec["source_dims"], spec["fusion"], spec["proj_dims"], seed=seed)


# --------------------------------------------------------------- commands


def cmd_generate(rc: RunConfig) -> dict:
    from talkit.synthdata import generate, write_dataset

    if "synth" not in rc.data:
        raise RunConfigError("generate: data.synth is required")
    ds = generate(_synth_config(rc))
    manifest = write_dataset(ds, rc.output_dir / "dataset")
    print(f"wrote {len(ds.videos)} videos; manifest: {manifest}")
    return {"manifest": str(manifest)}


def _train_one(rc: RunConfig, data: Data, mode: str, out: Path) -> Path:
    from talkit.checkpoint import save_checkpoint
    from talkit.train import TrainConfig, train

    spec = model_spec(rc, data, mode)
    samples = data.samples(rc.data.get("train_subset"))
    if not samples:
        raise RunConfigError(f"data.train_subset: no videos in subset {rc.data.get('train_subset')!r}")
    model = build_from_spec(spec, rc.seed)
    tcfg = TrainConfig(**rc.train, seed=rc.seed)
    ckpt_dir = out / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = out / "train_log.jsonl"
    log_path.unlink(missing_ok=True)
    records = train(samples, model, tcfg, out_dir=ckpt_dir, log_path=log_path, checkpoint_meta=spec)
    final = ckpt_dir / "final.ckpt"
    save_checkpoint(final, model, {**spec, "epoch": records[-1].epoch, "seed": rc.seed})
    print(f"{mode}: trained {tcfg.epochs} epochs on {len(samples)} videos, final loss {records[-1].mean_loss:.4f}")
    return final


def cmd_train(rc: RunConfig) -> dict:
    data = load_data(rc)
    return {"checkpoint": str(_train_one(rc, data, rc.fusion_mode, rc.output_dir))}


def _predict_one(rc: RunConfig, data: Data, checkpoint: Path, out_path: Path):
    from talkit import io
    from talkit.checkpoint import load_checkpoint, load_state_into
    from talkit.decode import DecodeConfig
    from talkit.pipeline import predict

    if not checkpoint.is_file():
        raise RunConfigError(f"predict.checkpoint: file not found: {checkpoint}")
    meta, tensors = load_checkpoint(checkpoint)
    if meta.get("sources") != data.source_names or meta.get("source_dims") != data.source_dims:
        raise RunConfigError(
            f"predict.checkpoint: trained on sources {meta.get('sources')} {meta.get('source_dims')}, "
            f"data has {data.source_names} {data.source_dims}"
        )
    model = build_from_spec(meta, rc.seed)
    load_state_into(model, tensors)
    dcfg = DecodeConfig(**rc.decode)
    samples = data.samples(rc.data.get("eval_subset"))
    results = predict(model, samples, dcfg, batch_size=int(rc.predict.get("batch_size", 4)))
    io.write_detections(out_path, results, cap=dcfg.max_predictions)
    n = sum(len(v) for v in results.values())
    print(f"wrote {n} detections for {len(results)} videos to {out_path}")
    return out_path


def cmd_predict(rc: RunConfig) -> dict:
    data = load_data(rc)
    ckpt = Path(rc.predict.get("checkpoint") or rc.output_dir / "checkpoints" / "final.ckpt")
    rc.output_dir.mkdir(parents=True, exist_ok=True)
    return {"detections": str(_predict_one(rc, data, ckpt, rc.output_dir / "detections.json"))}


def _evaluate_file(rc: RunConfig, data: Data, det_path: Path, out_dir: Path):
    from talkit import io
    from talkit.metrics import evaluate

    if not det_path.is_file():
        raise RunConfigError(f"eval.detections: file not found: {det_path}")
    dets = io.read_detections(det_path)
    videos = data.videos_in(rc.data.get("eval_subset"))
    gts = {v.video_id: list(v.instances) for v in videos}
    dets = {vid: ds for vid, ds in dets.items() if vid in gts}
    report = evaluate(
        dets,
        gts,
        rc.eval.get("thresholds", (0.1, 0.2, 0.3, 0.4, 0.5)),
        k=rc.eval.get("k", 1),
        recall_tiou=rc.eval.get("recall_tiou", 0.5),
        num_classes=data.num_classes,
    )
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "eval.json").write_text(report.to_json() + "\n", encoding="utf-8")
    table = report.format_table()
    (out_dir / "eval.txt").write_text(table + "\n", encoding="utf-8")
    print(table)
    return report


def cmd_eval(rc: RunConfig) -> dict:
    data = load_data(rc)
    det_path = Path(rc.eval.get("detections") or rc.output_dir / "detections.json")
    report = _evaluate_file(rc, data, det_path, rc.output_dir)
    return {"average_mAP": report.average_mAP, "recall_at_1x_tiou05": report.recall_at_1x_tiou05}


def cmd_ablate(rc: RunConfig) -> dict:
    data = load_data(rc)
    reports = {}
    for mode in FUSION_MODES:
        out = rc.output_dir / "ablate" / mode
        ckpt = _train_one(rc, data, mode, out)
        dets = _predict_one(rc, data, ckpt, out / "detections.json")
        print(f"-- {mode}")
        reports[mode] = _evaluate_file(rc, data, dets, out)
    cat, proj = reports["cat"], reports["proj_cat"]
    summary = {
        "modes": {
            m: {"average_mAP": r.average_mAP, "recall_at_1x_tiou05": r.recall_at_1x_tiou05}
            for m, r in reports.items()
        },
        "delta_proj_cat_minus_cat": {
            "average_mAP": proj.average_mAP - cat.average_mAP,
            "recall_at_1x_tiou05": proj.recall_at_1x_tiou05 - cat.recall_at_1x_tiou05,
            "mAP": {f"{t:.2f}": proj.mAP[t] - cat.mAP[t] for t in proj.thresholds},
        },
    }
    (rc.output_dir / "ablation.json").write_text(json.dumps(summary, indent=1) + "\n", encoding="utf-8")
    d = summary["delta_proj_cat_minus_cat"]
    print(
        f"proj_cat - cat: average mAP {100 * d['average_mAP']:+.2f}, "
        f"Recall@1x {100 * d['recall_at_1x_tiou05']:+.2f} (points)"
    )
    return summary


HANDLERS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


# -------------------------------------------------------------------- main


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="talkit", description="Temporal action localization toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    helps = {
        "generate": "write a seeded synthetic dataset",
        "train": "train a model and write checkpoints",
        "predict": "decode detections from a checkpoint",
        "eval": "score a detections file",
        "ablate": "train and score both fusion modes",
    }
    for name in COMMANDS:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="run configuration JSON")
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("missing command")
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"talkit: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        rc = load_run_config(args.config)
        HANDLERS[args.command](rc)
    except (RunConfigError, ValueError) as exc:
        print(f"talkit {args.command}: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except Exception as exc:  # noqa: BLE001
        logger.debug("failure", exc_info=True)
        print(f"talkit {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
