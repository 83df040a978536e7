"""Command-line surface tying the pipeline together.

Subcommands: train, detect, evaluate, occlude, forecast, interpolate, synth,
baseline. Every command accepts --config FILE (flat `key = value` lines) and
per-key override flags; the fully resolved configuration and seed are logged
to stderr before any work starts. Exit codes: 0 success, 1 usage/config
error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import baseline_knn, baseline_mean_deviation
from .checkpoint import load_model, save_model
from .config import (EXECUTION_ONLY, RunConfig, config_text, load_config,
                     parse_value, resolve_config)
from .data import (SeriesFrame, apply_standardize, destandardize, downsample,
                   load_dataset, load_series, standardize_stats, write_series)
from .detect import (ScoreSeries, best_f1, normalize_scores, report_at_threshold,
                     reconstruct_stream, detection_rng)
from .errors import ConfigError, DataError, LatentADError, NumericError, ValidationError
from .langevin import LangevinConfig
from .tasks import (OcclusionSpec, SynthSpec, forecast, interpolate_latents,
                    occlude_series, synth_generate)
from .training import TrainConfig, abp_train, make_windows

SCORE_SUFFIX = ".scores.csv"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise ConfigError(message)


def _fmt(x: float) -> str:
    return repr(float(x))


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _log_config(cfg: RunConfig) -> None:
    for line in config_text(cfg).splitlines():
        _log(f"config: {line}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key = value config file")
    for f in dataclasses.fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f"cfg_{f.name}",
                       metavar="V", help=argparse.SUPPRESS)


def _resolve(args) -> RunConfig:
    file_values = load_config(args.config) if args.config else {}
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = parse_value(f.name, raw)
    cfg = resolve_config(file_values, overrides)
    cfg.validate()
    _log_config(cfg)
    return cfg


def _write_rows(path: Path, header: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------- train

def _prepare_train_frame(frame: SeriesFrame, cfg: RunConfig, entity_index: int):
    frame = downsample(frame, cfg.downsample_factor)
    stats = standardize_stats(frame)
    frame = apply_standardize(frame, stats)
    if cfg.occlusion_p > 0.0:
        # Occlusion masks what the model sees; standardization stats come
        # from the unoccluded series so heavily occluded runs stay defined.
        frame = occlude_series(frame, OcclusionSpec(cfg.occlusion_r, cfg.occlusion_p,
                                                    cfg.seed), entity_index)
    return frame, stats


def _train_entity(frame: SeriesFrame, cfg: RunConfig, out_dir: str, entity_index: int) -> str:
    out = Path(out_dir)
    spec = cfg.hierarchy_spec()
    frame, stats = _prepare_train_frame(frame, cfg, entity_index)
    windows = make_windows(frame, spec.window_len, cfg.step)
    tc = TrainConfig(cfg.iterations, cfg.batch_size, cfg.learning_rate, cfg.lr_decay,
                     cfg.langevin_train(), n_decays=cfg.n_decays,
                     masks_enabled=cfg.masks_enabled, seed=cfg.seed,
                     checkpoint_every=cfg.checkpoint_every)
    run = abp_train(windows, spec, cfg.arch(frame.n_features), tc,
                    checkpoint_dir=out / f"{frame.entity_id}.states")
    pipeline = {"entity": frame.entity_id,
                "config": config_text(cfg, exclude=EXECUTION_ONLY)}
    save_model(out / f"{frame.entity_id}.ckpt", run.params, spec, stats, pipeline)
    rows = []
    for i, (loss, lr) in enumerate(zip(run.loss_history, run.lr_history), start=1):
        seconds = run.iter_seconds[i - 1] if cfg.timing else 0.0
        rows.append([i, _fmt(loss), _fmt(lr), _fmt(seconds)])
    _write_rows(out / f"{frame.entity_id}.loss.csv", ["iteration", "loss", "lr", "seconds"], rows)
    _log(f"trained {frame.entity_id}: {len(windows)} windows, "
         f"final loss {run.loss_history[-1]:.6g}, "
         f"wall {run.wall_clock['total']:.1f}s")
    return frame.entity_id


def cmd_train(args) -> int:
    cfg = _resolve(args)
    frames = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(config_text(cfg))
    if cfg.workers > 1 and len(frames) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_train_entity, f, cfg, str(out), i)
                       for i, f in enumerate(frames)]
            for fut in futures:
                fut.result()
    else:
        for i, frame in enumerate(frames):
            _train_entity(frame, cfg, str(out), i)
    return 0


# ---------------------------------------------------------------- detect

def _model_for(model_path: Path, entity_id: str):
    if model_path.is_dir():
        path = model_path / f"{entity_id}.ckpt"
        if not path.exists():
            raise DataError(f"{model_path}: no checkpoint for entity {entity_id!r}")
        return load_model(path)
    return load_model(model_path)


def _detect_entity(frame: SeriesFrame, model_path: str, cfg: RunConfig,
                   out_dir: str, entity_index: int) -> str:
    params, spec, stats, _ = _model_for(Path(model_path), frame.entity_id)
    frame = downsample(frame, cfg.downsample_factor)
    if stats is not None:
        frame = apply_standardize(frame, stats)
    if cfg.occlusion_p > 0.0:
        frame = occlude_series(frame, OcclusionSpec(cfg.occlusion_r, cfg.occlusion_p,
                                                    cfg.seed), entity_index)
    _, raw = reconstruct_stream(frame, params, spec, cfg.step, cfg.langevin_infer_cfg(),
                                cfg.channel_select, seed=cfg.seed)
    norm = normalize_scores(raw, spec.window_len, cfg.step)
    header = ["timestamp", "raw_score", "normalized_score"]
    m = frame.n_features
    if cfg.per_feature_scores:
        header += [f"feature_{i}" for i in range(m)]
    rows = []
    for t in range(frame.n_timestamps):
        row = [t, _fmt(raw.scores[t]), _fmt(norm.scores[t])]
        if cfg.per_feature_scores:
            row += [_fmt(v) for v in raw.per_feature[:, t]]
        rows.append(row)
    _write_rows(Path(out_dir) / f"{frame.entity_id}{SCORE_SUFFIX}", header, rows)
    _log(f"scored {frame.entity_id}: {frame.n_timestamps} timestamps")
    return frame.entity_id


def cmd_detect(args) -> int:
    cfg = _resolve_with_ckpt(args)
    frames = load_dataset(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(config_text(cfg))
    if cfg.workers > 1 and len(frames) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(_detect_entity, f, args.model, cfg, str(out), i)
                       for i, f in enumerate(frames)]
            for fut in futures:
                fut.result()
    else:
        for i, frame in enumerate(frames):
            _detect_entity(frame, args.model, cfg, str(out), i)
    return 0


# ---------------------------------------------------------------- evaluate

def read_score_csv(path, column: str) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such score file")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or column not in header:
            raise DataError(f"{path}: missing column {column!r}")
        idx = header.index(column)
        try:
            values = [float(row[idx]) for row in reader if row]
        except (ValueError, IndexError):
            raise DataError(f"{path}: malformed score rows") from None
    return np.array(values)


def _read_labels_file(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: no such label file")
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise DataError(f"{path}:{lineno}: labels must be 0 or 1")
            out.append(line == "1")
    return np.array(out, dtype=bool)


def _gather_eval_pairs(score_args: list[str], label_args: list[str]):
    scores = []
    for arg in score_args:
        p = Path(arg)
        if p.is_dir():
            scores.extend(sorted(p.glob(f"*{SCORE_SUFFIX}")))
        else:
            scores.append(p)
    labels = []
    for arg in label_args:
        p = Path(arg)
        if p.is_dir():
            for s in scores:
                entity = s.name[: -len(SCORE_SUFFIX)]
                labels.append(p / f"{entity}.labels.csv")
        else:
            labels.append(p)
    if len(labels) != len(scores):
        raise DataError(f"{len(scores)} score files but {len(labels)} label files")
    return list(zip(scores, labels))


def cmd_evaluate(args) -> int:
    pairs = _gather_eval_pairs(args.scores, args.labels)
    entities = []
    for score_path, label_path in pairs:
        s = read_score_csv(score_path, args.column)
        l = _read_labels_file(label_path)
        if len(s) != len(l):
            raise DataError(f"{score_path}: {len(s)} scores but {len(l)} labels")
        name = score_path.name
        entity = name[: -len(SCORE_SUFFIX)] if name.endswith(SCORE_SUFFIX) else score_path.stem
        entities.append((entity, s, l))

    lines = []
    if args.single_threshold or len(entities) == 1:
        all_scores = np.concatenate([s for _, s, _ in entities])
        all_labels = np.concatenate([l for _, _, l in entities])
        report = best_f1(all_scores, all_labels, args.adjusted)
        lines.append(_report_line("overall", report))
        if len(entities) > 1:
            for entity, s, l in entities:
                lines.append(_report_line(entity, report_at_threshold(s, l, report.threshold,
                                                                      args.adjusted)))
    else:
        f1s = []
        for entity, s, l in entities:
            report = best_f1(s, l, args.adjusted)
            f1s.append(report.f1)
            lines.append(_report_line(entity, report))
        lines.insert(0, f"mean_f1 {_fmt(float(np.mean(f1s)))} adjusted={str(args.adjusted).lower()}")
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def _report_line(name: str, r) -> str:
    return (f"{name} precision={_fmt(r.precision)} recall={_fmt(r.recall)} "
            f"f1={_fmt(r.f1)} threshold={_fmt(r.threshold)} adjusted={str(r.adjusted).lower()}")


# ---------------------------------------------------------------- other commands

def cmd_occlude(args) -> int:
    spec = OcclusionSpec(args.r, args.p, args.seed)
    out = Path(args.out)
    for i, frame in enumerate(load_dataset(args.data)):
        occluded = occlude_series(frame, spec, i)
        write_series(occluded, out / f"{frame.entity_id}.csv")
        _log(f"occluded {frame.entity_id}: "
             f"{(~occluded.mask).mean():.3f} of cells hidden")
    return 0


def cmd_forecast(args) -> int:
    cfg, params, spec, stats, frame = _load_model_and_frame(args)
    windows = make_windows(frame, spec.window_len, cfg.step)
    if not 0 <= args.window_index < len(windows):
        raise DataError(f"window index {args.window_index} out of range "
                        f"[0, {len(windows)})")
    window = windows[args.window_index]
    observed_len = args.observed_len if args.observed_len else spec.window_len // 2
    out = forecast(window, observed_len, params, spec, cfg.langevin_infer_cfg(),
                   detection_rng(cfg.seed, window.index))
    if stats is not None:
        out = destandardize(out, stats)
    header = ["timestamp", "observed"] + [f"feature_{i}" for i in range(out.shape[0])]
    rows = []
    for c in range(spec.window_len):
        rows.append([window.offset + c, 1 if c < observed_len else 0] +
                    [_fmt(v) for v in out[:, c]])
    _write_rows(Path(args.out), header, rows)
    _log(f"forecast window {args.window_index}: observed {observed_len} of {spec.window_len}")
    return 0


def cmd_interpolate(args) -> int:
    from .detect import infer_window
    cfg, params, spec, stats, frame = _load_model_and_frame(args)
    windows = make_windows(frame, spec.window_len, cfg.step)
    for idx in (args.window_a, args.window_b):
        if not 0 <= idx < len(windows):
            raise DataError(f"window index {idx} out of range [0, {len(windows)})")
    lcfg = cfg.langevin_infer_cfg()
    z_a, _ = infer_window(windows[args.window_a], params, spec, lcfg,
                          detection_rng(cfg.seed, args.window_a))
    z_b, _ = infer_window(windows[args.window_b], params, spec, lcfg,
                          detection_rng(cfg.seed, args.window_b))
    try:
        alphas = [float(v) for v in args.alphas.split(",") if v.strip() != ""]
    except ValueError:
        raise ConfigError(f"cannot parse alphas {args.alphas!r}") from None
    outs = interpolate_latents(z_a, z_b, alphas, params, spec)
    header = ["alpha", "step"] + [f"feature_{i}" for i in range(frame.n_features)]
    rows = []
    for a, out in zip(alphas, outs):
        if stats is not None:
            out = destandardize(out, stats)
        for c in range(spec.window_len):
            rows.append([_fmt(a), c] + [_fmt(v) for v in out[:, c]])
    _write_rows(Path(args.out), header, rows)
    _log(f"interpolated windows {args.window_a} and {args.window_b} at {len(alphas)} alphas")
    return 0


def _load_model_and_frame(args):
    if Path(args.model).is_dir():
        raise DataError(f"{args.model}: this command needs a single checkpoint file")
    cfg = _resolve_with_ckpt(args)
    params, spec, stats, _ = load_model(Path(args.model))
    frame = load_series(args.data) if Path(args.data).is_file() else load_dataset(args.data)[0]
    frame = downsample(frame, cfg.downsample_factor)
    if stats is not None:
        frame = apply_standardize(frame, stats)
    return cfg, params, spec, stats, frame


def _resolve_with_ckpt(args) -> RunConfig:
    """Config precedence for commands that start from a checkpoint:
    defaults < checkpointed training config < config file < flags."""
    file_values = load_config(args.config) if args.config else {}
    model_path = Path(args.model)
    probe = model_path
    if model_path.is_dir():
        candidates = sorted(model_path.glob("*.ckpt"))
        if not candidates:
            raise DataError(f"{model_path}: no checkpoints")
        probe = candidates[0]
    _, _, _, meta = load_model(probe)
    ckpt_values = {}
    for line in meta.get("pipeline", {}).get("config", "").splitlines():
        key, raw = line.split("=", 1)
        ckpt_values[key.strip()] = parse_value(key.strip(), raw)
    overrides = {}
    for f in dataclasses.fields(RunConfig):
        raw = getattr(args, f"cfg_{f.name}", None)
        if raw is not None:
            overrides[f.name] = parse_value(f.name, raw)
    merged = dict(ckpt_values)
    merged.update(file_values)
    cfg = resolve_config(merged, overrides)
    # inference-time occlusion is opt-in, never inherited from training
    if "occlusion_p" not in overrides and "occlusion_p" not in file_values:
        cfg.occlusion_p = 0.0
    cfg.validate()
    _log_config(cfg)
    return cfg


def cmd_synth(args) -> int:
    spec = SynthSpec(m=args.features, t_train=args.train_len, t_test=args.test_len,
                     noise_std=args.noise_std, n_spikes=args.spikes,
                     n_level_shifts=args.shifts, seed=args.seed)
    train, test = synth_generate(spec)
    out = Path(args.out)
    write_series(train, out / "train" / "synthetic.csv")
    write_series(test, out / "test" / "synthetic.csv")
    _log(f"synthetic dataset: m={spec.m} train={spec.t_train} test={spec.t_test} "
         f"anomalies={spec.n_spikes}+{spec.n_level_shifts}")
    return 0


def cmd_baseline(args) -> int:
    cfg = _resolve(args)
    train_frames = load_dataset(args.train)
    test_frames = load_dataset(args.test)
    if len(train_frames) != len(test_frames):
        raise DataError(f"{len(train_frames)} train entities but {len(test_frames)} test entities")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.hierarchy_spec()
    for train, test in zip(train_frames, test_frames):
        train = downsample(train, cfg.downsample_factor)
        test = downsample(test, cfg.downsample_factor)
        stats = standardize_stats(train) if args.method == "knn" else None
        if args.method == "knn":
            train = apply_standardize(train, stats)
            test = apply_standardize(test, stats)
            scores = baseline_knn(make_windows(train, spec.window_len, cfg.step),
                                  make_windows(test, spec.window_len, cfg.step),
                                  args.k, test.n_timestamps)
        else:
            scores = baseline_mean_deviation(train, test)
        rows = [[t, _fmt(scores.scores[t]), _fmt(scores.scores[t])]
                for t in range(test.n_timestamps)]
        _write_rows(out / f"{test.entity_id}{SCORE_SUFFIX}",
                    ["timestamp", "raw_score", "normalized_score"], rows)
        _log(f"baseline {args.method} scored {test.entity_id}")
    return 0


# ---------------------------------------------------------------- wiring

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="latentad",
                description="Generative latent-variable anomaly detection for "
                            "multivariate time series")
    p.add_argument("--version", action="version", version=f"latentad {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("train", parents=[], help="train one model per entity")
    sp.add_argument("--data", required=True, help="entity CSV or dataset directory")
    sp.add_argument("--out", required=True, help="output directory")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("detect", help="score a test stream with a trained model")
    sp.add_argument("--model", required=True, help="checkpoint file or directory")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_detect)

    sp = sub.add_parser("evaluate", help="best-F1 report from scores and labels")
    sp.add_argument("--scores", nargs="+", required=True,
                    help="score CSV files or directories")
    sp.add_argument("--labels", nargs="+", required=True,
                    help="label files or directories")
    sp.add_argument("--adjusted", action="store_true",
                    help="apply point adjustment over labeled segments")
    sp.add_argument("--single-threshold-across-entities", dest="single_threshold",
                    action="store_true",
                    help="sweep one threshold over all entities' scores")
    sp.add_argument("--column", choices=("raw_score", "normalized_score"),
                    default="normalized_score")
    sp.add_argument("--out", help="also write the report to this file")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("occlude", help="write an occluded copy of a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--r", type=int, required=True, help="number of equal segments")
    sp.add_argument("--p", type=float, required=True, help="occlusion probability")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_occlude)

    sp = sub.add_parser("forecast", help="forecast the tail of one window")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--window-index", type=int, required=True)
    sp.add_argument("--observed-len", type=int, default=0,
                    help="observed prefix length (default: half the window)")
    sp.add_argument("--out", required=True)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_forecast)

    sp = sub.add_parser("interpolate", help="generate windows between two latent states")
    sp.add_argument("--model", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--window-a", type=int, required=True)
    sp.add_argument("--window-b", type=int, required=True)
    sp.add_argument("--alphas", default="0,0.25,0.5,0.75,1")
    sp.add_argument("--out", required=True)
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_interpolate)

    sp = sub.add_parser("synth", help="generate the labeled synthetic benchmark")
    sp.add_argument("--out", required=True)
    sp.add_argument("--features", type=int, default=5)
    sp.add_argument("--train-len", type=int, default=10_000)
    sp.add_argument("--test-len", type=int, default=5_000)
    sp.add_argument("--spikes", type=int, default=10)
    sp.add_argument("--shifts", type=int, default=10)
    sp.add_argument("--noise-std", type=float, default=0.1)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("baseline", help="simple reference scorers")
    sp.add_argument("--method", choices=("mean-deviation", "knn"), required=True)
    sp.add_argument("--train", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--k", type=int, default=5, help="neighbors for knn")
    _add_config_flags(sp)
    sp.set_defaults(func=cmd_baseline)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except LatentADError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
