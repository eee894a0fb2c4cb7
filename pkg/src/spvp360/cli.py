"""Command-line entry point.

Every verb reads an optional flat ``key=value`` config file; ``--set
key=value`` and the dedicated flags override it.  Outputs land in ``--out``
together with a ``run.json`` manifest (settings, seed, checkpoint hashes).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import checkpoint
from .harness import io
from .harness.session import SessionConfig
from .harness.synthetic import SyntheticScene, generate_scene

log = logging.getLogger("spvp360")

VERBS = ("saliency", "predict", "fuse", "train", "simulate", "eval", "gradcheck")

SCENE_KEYS = {f.name for f in fields(SyntheticScene)} - {"grid", "seed"}
SESSION_KEYS = {f.name for f in fields(SessionConfig)}
TRAIN_KEYS = {"saliency_steps", "fov_steps", "saliency_lr", "fov_lr", "batch_size", "momentum", "weight_decay",
              "saliency_frames", "fov_samples", "train_offset", "max_train_feedback"}
PATH_KEYS = {"manifest", "traces", "saliency_checkpoint", "fov_checkpoint"}
OTHER_KEYS = {"save_heatmaps", "frame_list", "max_coords"}
KNOWN_KEYS = SCENE_KEYS | SESSION_KEYS | TRAIN_KEYS | PATH_KEYS | OTHER_KEYS


class UsageError(Exception):
    pass


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="spvp360", description="Saliency + limited-feedback viewport prediction on ERP video.")
    p.add_argument("verb", choices=VERBS)
    p.add_argument("--config", help="flat key=value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one setting")
    p.add_argument("--out", default="spvp360_out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-feedback", type=int, dest="n_feedback")
    p.add_argument("--interval", type=float)
    p.add_argument("--manifest", help="frame manifest (index,timestamp_s,image_path)")
    p.add_argument("--traces", help="gaze trace CSV")
    p.add_argument("--saliency-checkpoint", dest="saliency_checkpoint")
    p.add_argument("--fov-checkpoint", dest="fov_checkpoint")
    p.add_argument("--saliency-map", dest="saliency_map", help="raw heatmap (fuse)")
    p.add_argument("--fov-map", dest="fov_map", help="raw heatmap (fuse)")
    p.add_argument("--pred", help="raw heatmap file or directory (eval)")
    p.add_argument("--gt", help="raw heatmap file or directory (eval)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def collect_settings(args) -> dict[str, str]:
    settings: dict[str, str] = {}
    if args.config:
        settings.update(io.read_config(args.config))
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        settings[k.strip()] = v.strip()
    for key in ("seed", "n_feedback", "interval", "manifest", "traces", "saliency_checkpoint", "fov_checkpoint"):
        val = getattr(args, key)
        if val is not None:
            settings[key] = str(val)
    unknown = sorted(set(settings) - KNOWN_KEYS)
    if unknown:
        raise UsageError(f"unknown setting(s): {', '.join(unknown)}")
    return settings


def session_config(settings: dict[str, str]) -> SessionConfig:
    return SessionConfig.from_strings({k: v for k, v in settings.items() if k in SESSION_KEYS})


def _flag(settings, key, default=False) -> bool:
    return settings.get(key, str(default)).lower() in ("1", "true", "yes", "on")


def load_scene(settings: dict[str, str], cfg: SessionConfig):
    from .harness.dataset import load_scene as load_files

    if "manifest" in settings or "traces" in settings:
        if not ("manifest" in settings and "traces" in settings):
            raise UsageError("file-backed scenes need both --manifest and --traces")
        return load_files(settings["manifest"], settings["traces"])
    base = SyntheticScene(grid=tuple(cfg.grid), seed=cfg.seed)
    kw = {}
    for k in SCENE_KEYS & set(settings):
        kw[k] = type(getattr(base, k))(settings[k])
    return generate_scene(replace(base, **kw))


def toy_config(settings: dict[str, str], cfg: SessionConfig, scene_spec):
    from .harness.pipeline import ToyConfig

    toy = ToyConfig().with_seed(cfg.seed)
    toy = replace(toy, scene=scene_spec, saliency=replace(toy.saliency, motion_mode=cfg.motion_mode),
                  fov=replace(toy.fov, aggregation=cfg.aggregation))
    st, ft = toy.saliency_train, toy.fov_train
    g = settings.get
    st = replace(st, max_steps=int(g("saliency_steps", st.max_steps)), lr=float(g("saliency_lr", st.lr)),
                 batch_size=int(g("batch_size", st.batch_size)), momentum=float(g("momentum", st.momentum)),
                 weight_decay=float(g("weight_decay", st.weight_decay)), seq_len=cfg.seq_len)
    ft = replace(ft, max_steps=int(g("fov_steps", ft.max_steps)), lr=float(g("fov_lr", ft.lr)),
                 batch_size=int(g("batch_size", ft.batch_size)), momentum=float(g("momentum", ft.momentum)),
                 weight_decay=float(g("weight_decay", ft.weight_decay)), seq_len=cfg.seq_len)
    return replace(toy, saliency_train=st, fov_train=ft,
                   saliency_frames=int(g("saliency_frames", toy.saliency_frames)),
                   fov_samples=int(g("fov_samples", toy.fov_samples)),
                   train_offset=int(g("train_offset", toy.train_offset)),
                   max_train_feedback=int(g("max_train_feedback", toy.max_train_feedback)))


def load_models(settings: dict[str, str], cfg: SessionConfig, need=("saliency", "fov")):
    """Networks from checkpoints; without one, a freshly seeded network is used."""
    from .fovgru import FovPredictor
    from .harness.pipeline import ToyConfig, load_fov, load_saliency
    from .saliency import SaliencyNet

    toy = ToyConfig().with_seed(cfg.seed)
    hashes, sal, fov = {}, None, None
    if "saliency" in need:
        path = settings.get("saliency_checkpoint")
        if path:
            sal, hashes["saliency"] = load_saliency(path), checkpoint.file_hash(path)
        else:
            log.warning("no saliency checkpoint given; using an untrained network")
            sal = SaliencyNet(replace(toy.saliency, motion_mode=cfg.motion_mode)).eval()
    if "fov" in need:
        path = settings.get("fov_checkpoint")
        if path:
            fov, hashes["fov"] = load_fov(path), checkpoint.file_hash(path)
        else:
            log.warning("no FoV checkpoint given; using an untrained network")
            fov = FovPredictor(replace(toy.fov, aggregation=cfg.aggregation)).eval()
    return sal, fov, hashes


def write_run_manifest(out: Path, verb: str, settings: dict, seed, hashes: dict, outputs: list) -> Path:
    path = out / "run.json"
    doc = {"verb": verb, "settings": dict(sorted(settings.items())), "seed": seed,
           "checkpoints": hashes, "outputs": sorted(str(Path(o).relative_to(out)) for o in outputs),
           "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _frame_selection(settings, n_frames) -> list[int]:
    if "frame_list" not in settings:
        return list(range(n_frames))
    frames = [int(x) for x in settings["frame_list"].split(",") if x.strip()]
    bad = [f for f in frames if not 0 <= f < n_frames]
    if bad:
        raise UsageError(f"frame indices out of range: {bad}")
    return frames


def cmd_gradcheck(args, settings, out):
    from .trainer import gradient_suite

    t0 = time.perf_counter()
    reports = gradient_suite(seed=int(settings.get("seed", 0)), max_coords=int(settings.get("max_coords", 24)))
    lines = [str(r) for r in reports]
    for line in lines:
        print(line)
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} gradient checks passed in {time.perf_counter() - t0:.1f}s")
    out.mkdir(parents=True, exist_ok=True)
    (out / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    return 0 if not failed else 1


def cmd_train(args, settings, out):
    from .harness.pipeline import train_toy

    cfg = session_config(settings)
    scene = load_scene(settings, cfg)
    if scene.spec is None:
        raise UsageError("training needs a synthetic scene (saliency targets are generated)")
    toy = toy_config(settings, cfg, scene.spec)
    out.mkdir(parents=True, exist_ok=True)
    models = train_toy(toy, out)
    rows = [{"net": "saliency", **r} for r in models.saliency_log] + [{"net": "fov", **r} for r in models.fov_log]
    io.write_metrics(out / "train_log.csv", rows, ["net", "step", "loss", "lr"])
    outputs = [out / "saliency.ckpt", out / "fov.ckpt", out / "train_log.csv"]
    write_run_manifest(out, "train", settings, cfg.seed, models.checkpoint_hashes, outputs)
    print(f"saliency loss {models.saliency_log[0]['loss']:.4g} -> {models.saliency_log[-1]['loss']:.4g}; "
          f"fov loss {models.fov_log[0]['loss']:.4g} -> {models.fov_log[-1]['loss']:.4g}")
    return 0


def cmd_simulate(args, settings, out):
    from .harness.report import write_report
    from .harness.session import simulate_session

    cfg = session_config(settings)
    scene = load_scene(settings, cfg)
    sal, fov, hashes = load_models(settings, cfg)
    res = simulate_session(scene, cfg, sal, fov, keep_predictions=_flag(settings, "save_heatmaps", True))
    out.mkdir(parents=True, exist_ok=True)
    outputs = [out / "metrics.csv"]
    io.write_metrics(out / "metrics.csv", res.records)
    for j, m in sorted(res.predictions.items()):
        outputs += io.write_heatmap(out / f"pred_{j:05d}", m)
    outputs += write_report(res.records, out)
    write_run_manifest(out, "simulate", settings, cfg.seed, hashes, outputs)
    print(f"N={cfg.n_feedback} interval={cfg.interval}s offset={res.offset} frames: "
          f"mean accuracy {res.mean('accuracy'):.4f} over {len(res.records)} frames")
    return 0


def cmd_predict(args, settings, out):
    from .harness.session import predict_frames, select_feedback_users

    cfg = session_config(settings)
    scene = load_scene(settings, cfg)
    sal, fov, hashes = load_models(settings, cfg)
    feedback = select_feedback_users(cfg.population, cfg.n_feedback, cfg.seed)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for p in predict_frames(scene, cfg, feedback, sal, fov):
        outputs += io.write_heatmap(out / f"fov_{p.frame:05d}", p.fov)
        outputs += io.write_heatmap(out / f"pred_{p.frame:05d}", p.fused)
    write_run_manifest(out, "predict", {**settings, "feedback_users": ",".join(map(str, feedback))},
                       cfg.seed, hashes, outputs)
    print(f"wrote {len(outputs) // 4} predictions to {out}")
    return 0


def cmd_saliency(args, settings, out):
    from .harness.session import SaliencyCache

    cfg = session_config(settings)
    scene = load_scene(settings, cfg)
    sal, _, hashes = load_models(settings, cfg, need=("saliency",))
    cache = SaliencyCache(sal, scene, cfg.motion_mode)
    out.mkdir(parents=True, exist_ok=True)
    outputs = []
    for j in _frame_selection(settings, len(scene)):
        outputs += io.write_heatmap(out / f"saliency_{j:05d}", cache(j))
    write_run_manifest(out, "saliency", settings, cfg.seed, hashes, outputs)
    print(f"wrote {len(outputs) // 2} saliency maps to {out}")
    return 0


def cmd_fuse(args, settings, out):
    from .fusion import fuse

    if not (args.saliency_map and args.fov_map):
        raise UsageError("fuse needs --saliency-map and --fov-map")
    cfg = session_config(settings)
    p = fuse(io.read_heatmap_raw(args.saliency_map), io.read_heatmap_raw(args.fov_map), cfg.regions)
    out.mkdir(parents=True, exist_ok=True)
    outputs = list(io.write_heatmap(out / "fused", p))
    write_run_manifest(out, "fuse", settings, cfg.seed, {}, outputs)
    print(f"fused map written to {outputs[0]}")
    return 0


def _heatmap_files(spec: str) -> dict[str, Path]:
    path = Path(spec)
    files = sorted(path.glob("*.f64")) if path.is_dir() else [path]
    return {f.stem: f for f in files}


def cmd_eval(args, settings, out):
    from .harness.session import score

    if not (args.pred and args.gt):
        raise UsageError("eval needs --pred and --gt")
    cfg = session_config(settings)
    preds, gts = _heatmap_files(args.pred), _heatmap_files(args.gt)
    if len(preds) == 1 and len(gts) == 1:
        pairs = [(next(iter(preds.values())), next(iter(gts.values())))]
    else:
        common = sorted(set(preds) & set(gts))
        if not common:
            raise UsageError("no matching heatmap names between --pred and --gt")
        pairs = [(preds[k], gts[k]) for k in common]
    records = []
    for i, (pf, gf) in enumerate(pairs):
        rec = {"frame": i, "timestamp_s": float("nan"), "interval_s": cfg.interval, "offset_frames": "",
               "n_feedback": cfg.n_feedback}
        rec.update(score(io.read_heatmap_raw(pf), io.read_heatmap_raw(gf), [], cfg.tiles))
        records.append(rec)
    out.mkdir(parents=True, exist_ok=True)
    io.write_metrics(out / "metrics.csv", records)
    write_run_manifest(out, "eval", settings, cfg.seed, {}, [out / "metrics.csv"])
    acc = np.nanmean([r["accuracy"] for r in records])
    print(f"evaluated {len(records)} map pairs: mean accuracy {acc:.4f}")
    return 0


COMMANDS = {"gradcheck": cmd_gradcheck, "train": cmd_train, "simulate": cmd_simulate, "predict": cmd_predict,
            "saliency": cmd_saliency, "fuse": cmd_fuse, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:  # argparse already printed usage
        return int(e.code or 0) if e.code in (0, None) else 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        settings = collect_settings(args)
        return COMMANDS[args.verb](args, settings, Path(args.out))
    except (UsageError, KeyError) as e:
        parser.print_usage(sys.stderr)
        print(f"spvp360: error: {e}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as e:
        print(f"spvp360: {args.verb} failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
