"""Command-line entry point: ``ambipose {generate,train,evaluate,sample,bench}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import cvae, scenes
from . import evaluate as ev
from . import io
from .config import OUTPUT_ENV, RunConfig
from .errors import AmbiposeError, ArchitectureMismatch, DegenerateMean, ParseError

log = logging.getLogger("ambipose")

SCENE_MANIFEST = "scene.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------- config


def _config_flags(parser):
    group = parser.add_argument_group("run configuration (overrides --config)")
    for f in fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "output_dir":
            group.add_argument("--out", "-o", dest="output_dir", default=None,
                               help=f"output directory (default ${OUTPUT_ENV} or ./runs)")
        elif isinstance(f.default, tuple) or f.default is None:
            group.add_argument(flag, dest=f.name, default=None, metavar="A,B,...")
        else:
            group.add_argument(flag, dest=f.name, default=None, type=type(f.default))


def _parse_list(name, text):
    items = [x.strip() for x in text.split(",") if x.strip()]
    if name == "pattern":
        return items
    if name == "thresholds":
        # "0.1:10,0.2:15"
        return [tuple(float(v) for v in x.split(":")) for x in items]
    if name == "feature_widths":
        return [int(x) for x in items]
    return [float(x) for x in items]


def build_config(args):
    base = RunConfig.load(args.config).to_dict() if args.config else {}
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is None:
            continue
        if isinstance(v, str) and (isinstance(f.default, tuple) or f.name == "segment_yaw"):
            try:
                v = _parse_list(f.name, v)
            except ValueError as exc:
                raise ParseError(f"--{f.name.replace('_', '-')}: {exc}") from None
        base[f.name] = v
    output_dir = base.pop("output_dir", None)
    cfg = RunConfig.from_dict(base)
    if output_dir is not None:
        cfg.output_dir = output_dir
    return cfg


def _out(cfg):
    path = Path(cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _meta(cfg, **extra):
    return {"config": cfg.to_dict(), "seeds": cfg.seeds(), **extra}


def _file_ref(path):
    """Location-independent reference to an input file: name and content hash."""
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"name": Path(path).name, "sha256": digest}


def _write(path, text):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _scene_for(data_path, explicit=None):
    path = Path(explicit) if explicit else Path(data_path).with_name(SCENE_MANIFEST)
    if not path.exists():
        return None, None
    with open(path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    return scenes.SceneSpec.from_dict(manifest["scene"]), manifest


def _build_scene(cfg):
    return scenes.build_tricolor_scene(
        seed=cfg.scene_seed, pattern=cfg.pattern, length=cfg.length, segment_yaw=cfg.segment_yaw
    )


# ----------------------------------------------------------------- commands


def cmd_generate(cfg):
    """Write train/test dataset files and the scene manifest."""
    out = _out(cfg)
    scene = _build_scene(cfg)
    kw = dict(sigma=cfg.sigma_obs, n_features=cfg.n_features)
    train = scenes.generate_dataset(scene, cfg.n_train, seed=cfg.data_seed, split="train", **kw)
    test = scenes.generate_dataset(scene, cfg.n_test, seed=cfg.data_seed + 1, split="test", **kw)
    scenes.write_dataset(train, out / "train.txt")
    scenes.write_dataset(test, out / "test.txt")
    manifest = _meta(cfg, scene=scene.to_dict(), files={"train": len(train), "test": len(test)})
    io.dump_json(manifest, out / SCENE_MANIFEST)
    return {"train": str(out / "train.txt"), "test": str(out / "test.txt"), "records": [len(train), len(test)]}


def cmd_train(cfg, data_path):
    """Train from a dataset file; write checkpoint.json and losses.tsv."""
    out = _out(cfg)
    data = scenes.read_dataset(data_path)
    if data.features.shape[1] != cfg.n_features:
        cfg.n_features = data.features.shape[1]
    tc = cfg.train_config()
    params = cvae.init_params(cfg.model_spec(), cfg.init_seed)
    t0 = time.perf_counter()
    params, history = cvae.train(data, tc, params)
    elapsed = time.perf_counter() - t0
    io.save_checkpoint(out / "checkpoint.json", params, tc.to_dict(), tc.iterations, cfg.seeds(), cfg.to_dict())
    _write(out / "losses.tsv", io.format_loss_log(history, _meta(cfg, data=_file_ref(data_path))))
    log.info("trained %d iterations in %.1f s", tc.iterations, elapsed)
    return {"checkpoint": str(out / "checkpoint.json"), "iterations": tc.iterations, "seconds": elapsed}


def evaluate_dataset(params, data, cfg, scene=None):
    """Per-query recall rows, mode-coverage rows and the aggregate summary."""
    spec = cfg.recall_spec()
    n_obs = cvae.spec_from_params(params).obs_dim
    if data.features.shape[1] != n_obs:
        raise ArchitectureMismatch(f"model expects {n_obs} features, dataset has {data.features.shape[1]}")
    rows, mode_rows, flags, estimates = [], [], [], []
    n_amb = n_amb_ok = n_uni = n_uni_ok = 0
    for i in range(len(data)):
        R, t, _ = cvae.draw_samples(params, data.features[i], cfg.samples, seed=[cfg.eval_seed, i])
        gt = data.pose(i)
        qflags = []
        for k, th in enumerate(spec.thresholds):
            within = int(ev.within_threshold((R, t), gt, th).sum())
            tp = within >= spec.gamma * cfg.samples
            qflags.append(tp)
            rows.append({"query": i, "threshold": k, "within": within, "samples": cfg.samples, "tp": tp})
        flags.append(qflags)
        try:
            estimates.append(ev.point_estimate((R, t)))
        except DegenerateMean:
            estimates.append(None)
        if scene is not None:
            modes = scenes.true_mode_set(scene, data.observation(i))
            covered, masses = ev.mode_coverage((R, t), modes, spec.thresholds[0], cfg.gamma_mode)
            mode_rows.append({"query": i, "modes": len(modes), "covered": covered, "masses": masses})
            if len(modes) > 1:
                n_amb += 1
                n_amb_ok += covered == len(modes)
            else:
                n_uni += 1
                n_uni_ok += masses[0] >= 0.9
    recall = ev.recall_aggregate(flags)
    valid = [(e, data.pose(i)) for i, e in enumerate(estimates) if e is not None]
    med = ev.median_errors(*map(list, zip(*valid))) if valid else None
    summary = {
        "queries": len(data),
        "thresholds": [list(th) for th in spec.thresholds],
        "gamma": spec.gamma,
        "recall": recall,
        "recall_monotone": all(a <= b for a, b in zip(recall, recall[1:])),
        "median_errors": med,
        "degenerate_means": sum(e is None for e in estimates),
    }
    if scene is not None:
        summary["ambiguous_queries"] = n_amb
        summary["ambiguous_all_modes_covered"] = n_amb_ok / n_amb if n_amb else None
        summary["unambiguous_queries"] = n_uni
        summary["unambiguous_mass_at_mode"] = n_uni_ok / n_uni if n_uni else None
    return rows, mode_rows, summary


def cmd_evaluate(cfg, checkpoint, data_path, scene_path=None):
    out = _out(cfg)
    params, doc = io.load_checkpoint(checkpoint)
    data = scenes.read_dataset(data_path)
    scene, _ = _scene_for(data_path, scene_path)
    rows, mode_rows, summary = evaluate_dataset(params, data, cfg, scene)
    meta = _meta(cfg, checkpoint=_file_ref(checkpoint), checkpoint_seeds=doc.get("seeds"), data=_file_ref(data_path))
    _write(out / "report.tsv", io.format_report(rows, summary, meta))
    if scene is not None:
        _write(out / "modes.tsv", io.format_mode_table(mode_rows, meta))
    io.dump_json({**meta, "summary": summary}, out / "summary.json")
    return summary


def cmd_sample(cfg, checkpoint, data_path=None, query=None, features=None, seed=0, plot_axis=None):
    out = _out(cfg)
    params, doc = io.load_checkpoint(checkpoint)
    truth = None
    if features is not None:
        obs = np.asarray(features, dtype=np.float64)
    elif data_path is not None and query is not None:
        data = scenes.read_dataset(data_path)
        if not 0 <= query < len(data):
            raise ParseError(f"query index {query} out of range (dataset has {len(data)} records)")
        obs = data.features[query]
        truth = data.pose(query)
    else:
        raise UsageError("sample needs --features or both --data and --query")
    R, t, n_bad = cvae.draw_samples(params, obs, cfg.samples, seed=seed)
    samples = scenes.Dataset("sample", seed, np.arange(len(t), dtype=np.float64), R, t, np.repeat(obs[None], len(t), 0))
    scenes.write_dataset(samples, out / "samples.txt")
    result = {"samples": str(out / "samples.txt"), "count": len(t), "resampled": n_bad}
    if plot_axis is not None:
        curve = ev.kde_marginal((R, t), axis=plot_axis)
        _write(out / "kde.tsv", io.format_curve(curve))
        _write(out / "kde.svg", io.curve_svg(curve, None if truth is None else truth.translation[plot_axis],
                                             label=f"translation axis {plot_axis}"))
        result["kde"] = str(out / "kde.tsv")
        result["peaks"] = curve.local_maxima().tolist()
    return result


def bench(params, obs, M, repetitions, seed=0):
    """Wall time in ms for drawing ``M`` samples, ``repetitions`` times."""
    times = []
    for r in range(repetitions):
        t0 = time.perf_counter()
        cvae.draw_samples(params, obs, M, seed=[seed, r])
        times.append((time.perf_counter() - t0) * 1e3)
    times = np.array(times)
    return {"M": M, "repetitions": repetitions, "mean_ms": float(times.mean()),
            "std_ms": float(times.std()), "min_ms": float(times.min())}


def cmd_bench(cfg, checkpoint, repetitions, features=None):
    params, _ = io.load_checkpoint(checkpoint)
    n_obs = cvae.spec_from_params(params).obs_dim
    obs = np.resize([1.0, 0.0, 0.0], n_obs) if features is None else np.asarray(features, dtype=np.float64)
    cvae.draw_samples(params, obs, cfg.samples, seed=0)  # warm-up
    return bench(params, obs, cfg.samples, repetitions, seed=cfg.eval_seed)


# ---------------------------------------------------------------------- main


def build_parser():
    p = _Parser(prog="ambipose", description="Multimodal camera-pose posteriors with a conditional VAE.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def command(name, help):
        sp = sub.add_parser(name, help=help)
        sp.add_argument("--config", help="flat JSON run configuration")
        _config_flags(sp)
        return sp

    command("generate", "write a synthetic scene's train/test datasets")
    sp = command("train", "train a model on a dataset file")
    sp.add_argument("--data", required=True, help="training dataset file")
    sp = command("evaluate", "recall, median errors and mode coverage on a dataset")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True, help="test dataset file")
    sp.add_argument("--scene", help="scene manifest (default: scene.json next to --data)")
    sp = command("sample", "draw posterior samples for one query")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data")
    sp.add_argument("--query", type=int)
    sp.add_argument("--features", help="explicit observation, comma-separated")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--plot", type=int, dest="plot_axis", choices=(0, 1, 2),
                    help="also write a KDE of this translation axis (kde.tsv, kde.svg)")
    sp = command("bench", "time posterior sampling")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--repetitions", type=int, default=100)
    sp.add_argument("--features")
    return p


def _floats(text):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse feature vector {text!r}") from None


def run(argv=None):
    args = build_parser().parse_args(argv)
    cfg = build_config(args)
    if args.command == "generate":
        return cmd_generate(cfg)
    if args.command == "train":
        return cmd_train(cfg, args.data)
    if args.command == "evaluate":
        return cmd_evaluate(cfg, args.checkpoint, args.data, args.scene)
    if args.command == "sample":
        feats = None if args.features is None else _floats(args.features)
        return cmd_sample(cfg, args.checkpoint, args.data, args.query, feats, args.seed, args.plot_axis)
    if args.command == "bench":
        if args.repetitions < 1:
            raise UsageError("--repetitions must be at least 1")
        feats = None if args.features is None else _floats(args.features)
        return cmd_bench(cfg, args.checkpoint, args.repetitions, feats)
    raise UsageError(f"unknown command {args.command}")


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    verbose = "-v" in argv or "--verbose" in argv
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        result = run(argv)
    except UsageError as exc:
        print(f"UsageError: {exc}", file=sys.stderr)
        return 1
    except AmbiposeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, json.JSONDecodeError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=1, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
