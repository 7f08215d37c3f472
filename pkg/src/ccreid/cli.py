"""Command-line entry point: ``ccreid <command> [options]``.

Commands
    generate-data   render a synthetic dataset into ``--out``
    train-teacher   pretrain the face teacher on clean crops
    train           joint training of the global stream and face student
    evaluate        rank query against gallery and write ``report.json``
    ablate          run ablation presets over several seeds, write ``ablation.json`` / ``ablation.md``
    plot            CMC curves from reports, attention heatmaps from a checkpoint

A config file is YAML. Top-level keys are training options; an optional
``data:`` mapping holds dataset generator options. ``--set KEY=VALUE``
overrides either (``--set data.num_identities=60`` for the generator).

Exit codes: 0 success, 1 unexpected error, 2 config, 3 I/O, 4 data,
5 batch composition, 6 protocol, 7 numeric, 8 state, 9 shape, 10 at least
one ablation row failed.
"""

from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from multiprocessing import get_context
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from . import checkpoint as ckpt
from .config import PRESETS, TrainConfig, apply_overrides, from_mapping, preset
from .errors import ABLATION_ROW_FAILED, ConfigError, ReIDError, ReIDIOError
from .synth import GenConfig, generate_dataset, load_manifest

log = logging.getLogger("ccreid")

ABLATION_SCHEMA_VERSION = 1
PROBE_ROWS = 64


# --------------------------------------------------------------------------- config plumbing


def _read_yaml(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ReIDIOError(f"cannot read config {path}: {exc}") from exc
    raw = yaml.safe_load(text) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: expected a key-value document")
    return raw


def _split_sets(items: Sequence[str]) -> tuple[list[str], dict[str, str]]:
    train, data = [], {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        if key.startswith("data."):
            data[key[len("data."):]] = value
        else:
            train.append(item)
    return train, data


def gen_config(raw: dict[str, Any], seed: int | None = None) -> GenConfig:
    names = {f.name for f in fields(GenConfig)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown data keys: {sorted(unknown)}")
    values = {}
    for k, v in raw.items():
        if isinstance(v, str):
            v = yaml.safe_load(v)
        if k in ("image_dims", "face_dims"):
            if not isinstance(v, (list, tuple)) or len(v) != 2:
                raise ConfigError(f"{k} expects two integers, got {v!r}")
            v = (int(v[0]), int(v[1]))
        values[k] = v
    cfg = replace(GenConfig(), **values)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    cfg.validate()
    return cfg


def resolve(args: argparse.Namespace) -> tuple[TrainConfig, GenConfig]:
    """Training and generator configs from ``--config``, ``--set`` and ``--seed``."""
    raw = _read_yaml(args.config)
    data_raw = raw.pop("data", None) or {}
    if not isinstance(data_raw, dict):
        raise ConfigError("data: must be a mapping")
    train_sets, data_sets = _split_sets(args.set or [])
    cfg = apply_overrides(from_mapping(raw), train_sets)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    gen = gen_config({**data_raw, **data_sets}, args.seed)
    return cfg, gen


def _write_json(path: Path, payload: Any) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise ReIDIOError(f"cannot write {path}: {exc}") from exc


def _read_json(path: str | Path) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ReIDIOError(f"cannot read {path}: {exc}") from exc


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ReIDIOError(f"cannot create {out}: {exc}") from exc
    return out


# --------------------------------------------------------------------------- pipeline steps


def run_teacher(cfg: TrainConfig, out: Path) -> Path:
    from .trainer import pretrain_teacher

    result = pretrain_teacher(cfg.data_root, cfg, metrics_path=out / "teacher_metrics.jsonl")
    path = result.checkpoint.save(out / "teacher.ckpt")
    log.info("teacher checkpoint %s", path)
    return path


def run_train(cfg: TrainConfig, out: Path, teacher: str | Path | None = None) -> dict[str, Any]:
    """Joint training; pretrains a teacher into ``out`` first when one is needed and none is given.

    Writes ``model.ckpt``, ``metrics.jsonl``, ``config.yaml`` and, for a
    distilled student, ``kl_probe.json`` with the probe KL before and after.
    """
    from .trainer import distillation_kl, load_teacher, load_tensors, train_joint

    cfg.validate()
    teacher = teacher if teacher is not None else cfg.teacher_checkpoint
    if cfg.needs_teacher and teacher is None:
        teacher = run_teacher(cfg, out)
    manifest = load_manifest(cfg.data_root)

    kl: dict[str, float] = {}
    probe = None
    if cfg.use_face_stream and cfg.face_variant == "student_distilled":
        probe_teacher = load_teacher(teacher)
        pool = [r for r in manifest.by_split("train") if r.has_face][:PROBE_ROWS]
        probe_data = load_tensors(cfg.data_root, manifest, pool)

        def probe(step, _global, face):
            kl["start" if step == 0 else "end"] = distillation_kl(probe_teacher, face, probe_data,
                                                                  cfg.temperature)

    result = train_joint(cfg.data_root, cfg, teacher, manifest, metrics_path=out / "metrics.jsonl", probe=probe)
    path = result.checkpoint.save(out / "model.ckpt")
    (out / "config.yaml").write_text(cfg.to_yaml(), encoding="utf-8")
    summary = {"checkpoint": str(path), "steps": cfg.steps}
    if kl:
        kl["temperature"] = cfg.temperature
        _write_json(out / "kl_probe.json", kl)
        summary["kl_probe"] = kl
    return summary


def run_evaluate(checkpoint: str | Path, out: Path, overrides: Sequence[str] = (),
                 protocol: str | None = None, dump_rankings: bool = False) -> dict[str, Any]:
    from .retrieval import evaluate_models
    from .trainer import load_joint

    global_model, face_model, meta = load_joint(checkpoint)
    cfg = apply_overrides(from_mapping(meta["config"]), overrides)
    protocol = protocol or cfg.protocol
    face_input = "clean" if cfg.face_variant == "teacher" and face_model is not None else "degraded"
    manifest = load_manifest(cfg.data_root)
    report = evaluate_models(cfg.data_root, manifest, global_model, face_model, protocol,
                             cfg.normalize_streams, dump_rankings, face_input=face_input)
    report.checkpoint_id = ckpt.file_digest(checkpoint)
    report.seed = cfg.seed
    report.preset = _preset_name(cfg)
    payload = report.to_dict()
    _write_json(out / "report.json", payload)
    return payload


def _preset_name(cfg: TrainConfig) -> str | None:
    for name, values in PRESETS.items():
        if all(getattr(cfg, k) == v for k, v in values.items()):
            return name
    return None


# --------------------------------------------------------------------------- ablation


def _ablation_job(job: dict[str, Any]) -> dict[str, Any]:
    """One (seed, grid point, preset) run. Never raises: failures are reported in the row."""
    cfg = from_mapping(job["config"])
    out = Path(job["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
        train = run_train(cfg, out, job["teacher"])
        rep = run_evaluate(out / "model.ckpt", out)
        return {"status": "ok", "seed": cfg.seed, "rank1": rep["cmc"]["1"], "mAP": rep["mAP"],
                "report": str(out / "report.json"), "kl_probe": train.get("kl_probe")}
    except Exception as exc:  # a failed row must not abort the sweep
        log.exception("ablation run %s failed", out)
        return {"status": "failed", "seed": cfg.seed, "error": f"{type(exc).__name__}: {exc}"}


def _teacher_job(job: dict[str, Any]) -> str | None:
    try:
        return str(run_teacher(from_mapping(job["config"]), _out_dir(job["out"])))
    except Exception:
        log.exception("teacher pretraining in %s failed", job["out"])
        return None


def _map(fn, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers, mp_context=get_context("spawn")) as pool:
        return list(pool.map(fn, jobs))


def parse_grid(items: Sequence[str]) -> list[dict[str, str]]:
    """``["temperature=1,5", "alpha=0.5"]`` -> cartesian product of assignments."""
    axes = []
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--grid expects KEY=V1,V2,..., got {item!r}")
        key, values = item.split("=", 1)
        axes.append([(key.strip(), v.strip()) for v in values.split(",") if v.strip()])
    return [dict(combo) for combo in itertools.product(*axes)] if axes else [{}]


def _grid_tag(point: dict[str, str]) -> str:
    return "_".join(f"{k}-{v}" for k, v in point.items()) or "base"


def run_ablate(cfg: TrainConfig, out: Path, seeds: Sequence[int], presets: Sequence[str],
               grid: Sequence[dict[str, str]] = ({},), workers: int = 1) -> dict[str, Any]:
    """Train and evaluate every preset for every seed and grid point; merge into one report.

    Layout: ``out/<grid>/seed_<s>/teacher.ckpt`` (shared by the presets that
    need one) and ``out/<grid>/seed_<s>/<preset>/``. The merged report is
    written by this process only.
    """
    for name in presets:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; expected one of {list(PRESETS)}")
    points = [(g, apply_overrides(cfg, [f"{k}={v}" for k, v in g.items()])) for g in grid]

    teacher_jobs, keys = [], []
    for g, base in points:
        if any(preset(base, p).needs_teacher for p in presets):
            for s in seeds:
                keys.append((_grid_tag(g), s))
                teacher_jobs.append({"config": replace(base, seed=s).to_dict(),
                                     "out": str(out / _grid_tag(g) / f"seed_{s}")})
    teachers = dict(zip(keys, _map(_teacher_job, teacher_jobs, workers)))

    jobs, slots = [], []
    for g, base in points:
        tag = _grid_tag(g)
        for p in presets:
            for s in seeds:
                c = replace(preset(base, p), seed=s)
                teacher = teachers.get((tag, s)) if c.needs_teacher else None
                slots.append((tag, p, s, c.needs_teacher and teacher is None))
                jobs.append({"config": c.to_dict(), "out": str(out / tag / f"seed_{s}" / p), "teacher": teacher})
    runnable = [j for j, slot in zip(jobs, slots) if not slot[3]]
    done = iter(_map(_ablation_job, runnable, workers))
    results = [{"status": "failed", "seed": s, "error": "teacher pretraining failed"} if missing else next(done)
               for _, _, s, missing in slots]

    rows = []
    for g, _ in points:
        tag = _grid_tag(g)
        for p in presets:
            runs = [r for r, (t, q, _, _) in zip(results, slots) if t == tag and q == p]
            ok = [r for r in runs if r["status"] == "ok"]
            row: dict[str, Any] = {"preset": p, "grid": g, "runs": runs,
                                   "status": "ok" if len(ok) == len(runs) else "failed"}
            if row["status"] == "ok":
                r1 = np.array([r["rank1"] for r in ok])
                ap = np.array([r["mAP"] for r in ok])
                row.update(rank1_mean=float(r1.mean()), rank1_std=float(r1.std()),
                           mAP_mean=float(ap.mean()), mAP_std=float(ap.std()))
            rows.append(row)
    report = {"schema_version": ABLATION_SCHEMA_VERSION, "seeds": list(seeds), "presets": list(presets),
              "config": cfg.to_dict(), "grid": list(grid), "rows": rows}
    _write_json(out / "ablation.json", report)
    (out / "ablation.md").write_text(format_table(report), encoding="utf-8")
    return report


def format_table(report: dict[str, Any]) -> str:
    lines = ["| preset | grid | R-1 | mAP |", "|---|---|---|---|"]
    for row in report["rows"]:
        grid = ", ".join(f"{k}={v}" for k, v in row["grid"].items()) or "-"
        if row["status"] != "ok":
            lines.append(f"| {row['preset']} | {grid} | FAILED | FAILED |")
            continue
        lines.append(f"| {row['preset']} | {grid} | {100 * row['rank1_mean']:.1f} ± {100 * row['rank1_std']:.1f} "
                     f"| {100 * row['mAP_mean']:.1f} ± {100 * row['mAP_std']:.1f} |")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------- plotting


def run_plot(reports: Sequence[str], out: Path, checkpoint: str | None = None,
             num_images: int = 8) -> list[Path]:
    from .plots import plot_attention, plot_cmc

    evals, labels = [], []
    for path in reports:
        doc = _read_json(path)
        if "rows" in doc:  # ablation report: first successful run of every row
            for row in doc["rows"]:
                ok = [r for r in row["runs"] if r["status"] == "ok"]
                if ok:
                    evals.append(_read_json(ok[0]["report"]))
                    labels.append(f"{row['preset']} {_grid_tag(row['grid'])}".strip())
        else:
            evals.append(doc)
            labels.append(doc.get("preset") or Path(path).parent.name)
    written = []
    if evals:
        written.append(plot_cmc(evals, labels, out / "cmc.png"))
    if checkpoint is not None:
        written.extend(_plot_attention(checkpoint, out, num_images))
    return written


def _plot_attention(checkpoint: str, out: Path, num_images: int) -> list[Path]:
    import torch

    from .plots import plot_attention
    from .trainer import load_joint, load_tensors

    global_model, _, meta = load_joint(checkpoint)
    if global_model is None or not global_model.use_cam:
        raise ConfigError("checkpoint has no attention module to plot")
    root = meta["config"]["data_root"]
    manifest = load_manifest(root)
    recs = manifest.by_split("query")[:num_images]
    data = load_tensors(root, manifest, recs)
    with torch.no_grad():
        att = global_model.attention(data.images)[:, 0].double().numpy()
    np.save(out / "attention.npy", att)
    images = data.images.permute(0, 2, 3, 1).numpy()
    return [plot_attention(images, att, out / "attention.png", titles=[r.image[:7] for r in recs]),
            out / "attention.npy"]


# --------------------------------------------------------------------------- argparse


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML config file")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--seed", type=int, help="seed override (dataset seed for generate-data)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="config override; repeatable; data.KEY targets the generator")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ccreid", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate-data", parents=[common], help="render a synthetic dataset")
    sub.add_parser("train-teacher", parents=[common], help="pretrain the face teacher")
    p = sub.add_parser("train", parents=[common], help="joint training")
    p.add_argument("--preset", choices=list(PRESETS), help="ablation preset applied on top of the config")
    p.add_argument("--teacher", help="teacher checkpoint (pretrained into --out when omitted)")
    p = sub.add_parser("evaluate", parents=[common], help="retrieval evaluation of a joint checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--protocol", choices=["cross_clothes", "same_clothes"])
    p.add_argument("--dump-rankings", action="store_true", help="include top-10 rankings per query")
    p = sub.add_parser("ablate", parents=[common], help="preset sweep over seeds")
    p.add_argument("--seeds", type=int, default=3, help="number of seeds, starting at --seed (default 0)")
    p.add_argument("--presets", default=",".join(PRESETS), help="comma-separated preset names")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2",
                   help="sweep axis, e.g. temperature=1,5; repeatable (cartesian product)")
    p.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    p = sub.add_parser("plot", parents=[common], help="CMC curves and attention heatmaps")
    p.add_argument("--report", action="append", default=[], help="report.json or ablation.json; repeatable")
    p.add_argument("--checkpoint", help="joint checkpoint for attention heatmaps")
    p.add_argument("--num-images", type=int, default=8)
    return parser


def dispatch(args: argparse.Namespace) -> int:
    out = _out_dir(args.out)
    cfg, gen = resolve(args)
    if args.command == "generate-data":
        manifest = generate_dataset(gen, out)
        print(f"wrote {len(manifest.samples)} samples to {out}")
    elif args.command == "train-teacher":
        print(run_teacher(cfg, out))
    elif args.command == "train":
        if args.preset:
            cfg = preset(cfg, args.preset)
        print(json.dumps(run_train(cfg, out, args.teacher), sort_keys=True))
    elif args.command == "evaluate":
        train_sets, _ = _split_sets(args.set)
        rep = run_evaluate(args.checkpoint, out, train_sets, args.protocol, args.dump_rankings)
        print(f"R-1 {rep['cmc']['1']:.4f}  R-5 {rep['cmc']['5']:.4f}  R-10 {rep['cmc']['10']:.4f}  "
              f"mAP {rep['mAP']:.4f}")
    elif args.command == "ablate":
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        start = args.seed if args.seed is not None else 0
        presets = [p.strip() for p in args.presets.split(",") if p.strip()]
        report = run_ablate(cfg, out, list(range(start, start + args.seeds)), presets,
                            parse_grid(args.grid), args.workers)
        print(format_table(report), end="")
        if any(row["status"] != "ok" for row in report["rows"]):
            return ABLATION_ROW_FAILED
    elif args.command == "plot":
        if not args.report and not args.checkpoint:
            raise ConfigError("plot needs --report and/or --checkpoint")
        for path in run_plot(args.report, out, args.checkpoint, args.num_images):
            print(path)
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except ReIDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ReIDIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
