"""Command-line entry point: ``avfusion {synth,preprocess,train,evaluate,report}``.

Every subcommand exits 0 only on full success. Messages go to stderr,
summaries to stdout. ``--threads`` above 1 lets BLAS use several cores,
which can change floating-point summation order and so breaks bitwise
reproducibility.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2


def _fail(msg: str, code: int = EXIT_FAIL) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _limit_threads(n: int) -> None:
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


# -- sidecar metadata -------------------------------------------------------------
def meta_path(checkpoint: Path) -> Path:
    return checkpoint.with_name(checkpoint.name + ".meta")


def write_meta(checkpoint: Path, model_cfg, task: str, extra: Optional[dict] = None) -> None:
    from .config import write_kv
    from .models import config_to_dict

    values = {f"model.{k}": v for k, v in config_to_dict(model_cfg).items()}
    values["task"] = task
    values.update(extra or {})
    write_kv(meta_path(checkpoint), values)


def read_meta(checkpoint: Path):
    from .config import read_kv
    from .models import config_from_dict

    path = meta_path(checkpoint)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint metadata missing: {path}")
    raw = {k: v for _, k, v in read_kv(path)}
    model = config_from_dict({k[6:]: v for k, v in raw.items() if k.startswith("model.")})
    return model, {k: v for k, v in raw.items() if not k.startswith("model.")}


def load_model(checkpoint: Path):
    from .checkpoint import load_params

    if not checkpoint.is_file():
        raise FileNotFoundError(f"no such checkpoint: {checkpoint}")
    cfg, meta = read_meta(checkpoint)
    return cfg, load_params(checkpoint), meta


# -- subcommands -----------------------------------------------------------------
def cmd_synth(args, cfg) -> int:
    from .datagen import MANIFEST_NAME, generate_dataset, split_dataset, summarize, write_manifest

    out = Path(args.out)
    try:
        synth = cfg.synth()
        manifest = generate_dataset(synth, out)
        manifest = split_dataset(manifest, cfg["split.ratio"], seed=cfg["seed"])
        write_manifest(manifest, out / MANIFEST_NAME)
    except (OSError, ValueError) as exc:
        return _fail(f"synth failed: {exc}")
    print(f"wrote {len(manifest)} samples ({synth.task}) to {out / MANIFEST_NAME}")
    for split, info in summarize(manifest).items():
        extra = f", {info['positives']} positive" if synth.task == "classification" else ""
        print(f"  {split:5s} {info['n']:4d}{extra}")
    return EXIT_OK


def _manifest(path):
    from .datagen import check_files, read_manifest

    manifest = read_manifest(path)
    missing = check_files(manifest)
    if missing:
        raise FileNotFoundError("missing corpus files: " + "; ".join(missing[:5]))
    return manifest


def cmd_preprocess(args, cfg) -> int:
    from .preprocess import preprocess_corpus

    try:
        manifest = _manifest(args.manifest)
        failures = preprocess_corpus(manifest, args.out, cfg.preprocess(), args.emit_spectrograms)
    except (OSError, ValueError) as exc:
        return _fail(f"preprocess failed: {exc}")
    for f in failures:
        print(f"error: sample {f.sample_id}: {f.reason}", file=sys.stderr)
    if failures:
        return _fail(f"{len(failures)} of {len(manifest)} samples failed")
    print(f"preprocessed {len(manifest)} samples into {args.out}")
    return EXIT_OK


def _corpus(args, cfg):
    from .preprocess import infer_task, load_corpus

    manifest = _manifest(args.manifest)
    task = cfg["task"] if cfg["task"] != "auto" else infer_task(manifest)
    return load_corpus(manifest, args.data, task, cfg.preprocess())


def cmd_train(args, cfg) -> int:
    from . import training as T
    from .checkpoint import save_params
    from .config import write_kv

    ckpt = Path(args.checkpoint_out)
    history_out = Path(args.history_out) if args.history_out else ckpt.with_name(ckpt.stem + "_history.csv")
    if args.stage == "fusion":
        if not args.audio_checkpoint or not Path(args.audio_checkpoint).is_file():
            return _fail("fusion stage needs a frozen audio checkpoint; run 'train --stage audio' first and pass it with --audio-checkpoint", EXIT_USAGE)
    try:
        corpus = _corpus(args, cfg)
        schedule = cfg.schedule()
        extra = {}
        if args.stage == "audio":
            net = cfg.audio_net(corpus.task)
            result = T.pretrain_audio(corpus, net, schedule)
        elif args.stage == "video":
            net = cfg.video_net(corpus.task)
            result = T.train_video_only(corpus, net, schedule, cfg.video_options())
            extra = {"fusion.alpha": 0.0, "fusion.beta": 1.0}
        else:
            audio_cfg, audio_params, _ = load_model(Path(args.audio_checkpoint))
            if not audio_params.frozen:
                return _fail(f"{args.audio_checkpoint} is not frozen; only a finished audio stage can be fused", EXIT_USAGE)
            net = cfg.video_net(corpus.task)
            options = cfg.video_options()
            if cfg["fusion.grid"]:
                metric = cfg["fusion.grid_metric"]
                if metric == "auto":
                    metric = "accuracy" if corpus.task == "classification" else "mae"
                runs = {}

                def evaluate(fcfg):
                    run = T.train_fusion(corpus, audio_cfg, audio_params, net, fcfg, schedule, options)
                    runs[fcfg.alpha] = run
                    row = min(run.val_rows(), key=lambda r: (r.loss_b, r.epoch))
                    return row.mae if metric == "mae" else row.accuracy

                best, scores = T.grid_search_alpha_beta(cfg["fusion.grid"], evaluate, metric)
                result = runs[best.alpha]
                write_kv(ckpt.with_name(ckpt.stem + "_grid.cfg"), {f"alpha.{a!r}": s for a, s in scores.items()})
                print(f"grid search ({metric}): selected alpha={best.alpha} beta={best.beta}")
            else:
                result = T.train_fusion(corpus, audio_cfg, audio_params, net, cfg.fusion(), schedule, options)
            extra = {"fusion.alpha": result.config.alpha, "fusion.beta": result.config.beta}
        if args.stage != "audio":
            extra["video.clip_len"] = cfg["video.clip_len"]
        ckpt.parent.mkdir(parents=True, exist_ok=True)
        save_params(ckpt, result.params)
        write_meta(ckpt, net, corpus.task, extra)
        T.write_history(result.history, history_out)
    except T.NonFiniteLossError as exc:
        return _fail(f"training aborted: {exc}")
    except (OSError, ValueError) as exc:
        return _fail(f"train failed: {exc}")
    print(f"{args.stage} stage: best epoch {result.best_epoch}; checkpoint {ckpt}; history {history_out}")
    return EXIT_OK


def cmd_evaluate(args, cfg) -> int:
    from . import evaluation as E
    from .datagen import BDI_MAX
    from .models import AudioNetConfig

    try:
        corpus = _corpus(args, cfg)
        samples = corpus.split(args.split)
        if not samples:
            return _fail(f"the {args.split} split is empty")
        audio_model = video_model = None
        alpha = beta = None
        clip_len = cfg["video.clip_len"]
        for path in args.checkpoints:
            model_cfg, params, meta = load_model(Path(path))
            if isinstance(model_cfg, AudioNetConfig):
                audio_model = (model_cfg, params)
            else:
                video_model = (model_cfg, params)
                alpha, beta = float(meta.get("fusion.alpha", cfg["fusion.alpha"])), float(meta.get("fusion.beta", cfg["fusion.beta"]))
                clip_len = int(meta.get("video.clip_len", clip_len))
        mode = args.mode
        if mode == "audio":
            alpha, beta = 1.0, 0.0
        elif mode == "video":
            alpha, beta = 0.0, 1.0
        elif alpha is None:
            alpha, beta = cfg["fusion.alpha"], cfg["fusion.beta"]
        if alpha > 0 and audio_model is None:
            return _fail(f"mode {mode} needs an audio checkpoint", EXIT_USAGE)
        if beta > 0 and video_model is None:
            return _fail(f"mode {mode} needs a video checkpoint", EXIT_USAGE)
        proto = E.ProtocolConfig(clip_len, corpus.frame_rate, corpus.segment_seconds)
        scores = [E.evaluate_recording(s.video, s.audio, alpha, beta, proto, video_model if beta > 0 else None, audio_model).fused for s in samples]
        scale = BDI_MAX if corpus.task == "regression" else 1.0
        report = E.build_report(corpus.task, mode, args.split, [s.id for s in samples], [s.label for s in samples], scores, cfg["eval.threshold"], scale)
        out = Path(args.report_out)
        out.mkdir(parents=True, exist_ok=True)
        E.write_report_csv(report, out / "metrics.csv")
        E.write_recordings_csv(report, out / "recordings.csv")
        (out / "metrics.txt").write_text(E.report_text(report))
        if report.roc:
            E.write_roc_csv(report.roc, out / "roc.csv")
            if args.svg:
                (out / "roc.svg").write_text(E.roc_svg(report.roc, report.auc))
    except (OSError, ValueError) as exc:
        return _fail(f"evaluate failed: {exc}")
    print(E.report_text(report), end="")
    return EXIT_OK


def _table(rows: list[dict], columns: Sequence[str]) -> str:
    cells = [[c for c in columns]] + [[r.get(c, "") for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(columns))]
    lines = ["  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


MODE_ORDER = {"audio": 0, "video": 1, "fusion": 2}


def cmd_report(args, cfg) -> int:
    from . import evaluation as E
    from .training import read_history

    if not args.history and not args.report:
        return _fail("nothing to report; pass --history and/or --report", EXIT_USAGE)
    out = Path(args.out) if args.out else None
    text = []
    try:
        if args.report:
            reports = []
            for path in args.report:
                p = Path(path)
                rep = E.read_report_csv(p / "metrics.csv" if p.is_dir() else p)
                if "mode" not in rep or "task" not in rep:
                    raise E.CsvFormatError(f"{path}: not a metrics report")
                reports.append(rep)
            reports.sort(key=lambda r: (MODE_ORDER.get(r["mode"], 9), r["mode"], r.get("split", "")))
            task = reports[0]["task"]
            metrics = ["precision", "accuracy", "auc"] if task == "classification" else ["mae", "rmse"]
            rows = []
            for rep in reports:
                row = {"model": f"{rep['mode']}-only" if rep["mode"] != "fusion" else "fusion", "split": rep.get("split", ""), "n": rep.get("n", "")}
                for m in metrics:
                    row[m] = f"{float(rep[m]):.4f}" if rep.get(m, "") not in ("", None) else "-"
                rows.append(row)
            text.append(_table(rows, ["model", "split", "n"] + metrics))
        if args.history:
            series = {}
            for path in args.history:
                hist = read_history(path)
                stem = Path(path).stem
                for split in ("train", "val"):
                    for col in ("loss_s", "loss_v", "loss_b"):
                        pts = [(float(r.epoch), getattr(r, col)) for r in hist if r.split == split and getattr(r, col) is not None]
                        if pts:
                            series[f"{stem} {split} {col}"] = pts
                best = min((r for r in hist if r.split == "val"), key=lambda r: (r.loss_b if r.loss_b is not None else r.loss_s, r.epoch), default=None)
                if best is not None:
                    text.append(f"{stem}: {len([r for r in hist if r.split == 'val'])} evaluated epochs, best validation epoch {best.epoch}\n")
            if not series:
                raise E.CsvFormatError("histories contain no loss values")
            if out:
                out.mkdir(parents=True, exist_ok=True)
                (out / "loss_curves.svg").write_text(E.curves_svg(series, "training curves"))
    except (OSError, ValueError) as exc:
        return _fail(f"report failed: {exc}")
    body = "".join(text)
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "tables.txt").write_text(body)
    print(body, end="")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="avfusion", description="Audio-visual fusion pipeline on synthetic or prepared corpora.")
    parser.add_argument("--config", help="key = value config file")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (values > 1 void bitwise reproducibility)")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key (repeatable)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic corpus and its manifest")
    p.add_argument("--out", required=True)

    p = sub.add_parser("preprocess", help="denoise, segment and featurize audio; align frames")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-spectrograms", action="store_true")

    p = sub.add_parser("train", help="train one stage")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data", required=True, help="preprocessed tensor directory")
    p.add_argument("--stage", choices=("audio", "fusion", "video"), required=True)
    p.add_argument("--checkpoint-out", required=True)
    p.add_argument("--audio-checkpoint")
    p.add_argument("--history-out")

    p = sub.add_parser("evaluate", help="score a split with trained checkpoints")
    p.add_argument("--manifest", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.add_argument("--checkpoints", nargs="+", required=True)
    p.add_argument("--mode", choices=("fusion", "audio", "video"), default="fusion")
    p.add_argument("--report-out", required=True)
    p.add_argument("--svg", action="store_true", help="also draw the ROC curve")

    p = sub.add_parser("report", help="tables and loss curves from evaluation/training CSVs")
    p.add_argument("--history", nargs="*", default=[])
    p.add_argument("--report", nargs="*", default=[])
    p.add_argument("--out")
    return parser


COMMANDS = {"synth": cmd_synth, "preprocess": cmd_preprocess, "train": cmd_train, "evaluate": cmd_evaluate, "report": cmd_report}


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        return _fail("--threads must be >= 1", EXIT_USAGE)
    _limit_threads(args.threads)
    from .config import CliConfig, ConfigError

    try:
        overrides = list(args.set)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("--seed must be non-negative")
            overrides.append(f"seed={args.seed}")
        cfg = CliConfig.load(args.config, overrides)
    except ConfigError as exc:
        return _fail(str(exc), EXIT_USAGE)
    return COMMANDS[args.command](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
