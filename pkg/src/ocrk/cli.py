"""``ocrk`` command line: data generation, training, evaluation, serving.

Exit codes: 0 ok, 1 usage, 2 data error, 3 internal error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import signal
import sys
import time
import uuid
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3

log = logging.getLogger("ocrk")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _emit(report, fmt: str, out=None) -> None:
    """Print a dict (one record) or a list of dicts as a table, JSON or CSV."""
    out = out or sys.stdout
    rows = report if isinstance(report, list) else [report]
    if fmt == "json":
        print(json.dumps(report, indent=2, sort_keys=False), file=out)
    elif fmt == "csv":
        buf = io.StringIO()
        fields = list(dict.fromkeys(k for r in rows for k in r))
        writer = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        out.write(buf.getvalue())
    else:
        if isinstance(report, dict):
            width = max((len(k) for k in report), default=0)
            for k, v in report.items():
                print(f"{k:<{width}}  {_fmt(v)}", file=out)
        else:
            fields = list(dict.fromkeys(k for r in rows for k in r))
            cells = [[_fmt(r.get(f, "")) for f in fields] for r in rows]
            widths = [max(len(f), *(len(c[i]) for c in cells)) for i, f in enumerate(fields)]
            print("  ".join(f.ljust(w) for f, w in zip(fields, widths)), file=out)
            for c in cells:
                print("  ".join(v.ljust(w) for v, w in zip(c, widths)), file=out)


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _load_config_file(path) -> dict:
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _recognition_manifest(data: str, split: str) -> Path:
    p = Path(data)
    if p.is_file():
        return p
    manifest = p / split / "recognition.txt"
    if not manifest.exists():
        raise FileNotFoundError(f"no recognition manifest at {manifest}")
    return manifest


# subcommands ---------------------------------------------------------------

def cmd_gen_data(args) -> dict:
    from .synthdata import AUGMENTED_MIX, DEFAULT_DICTIONARY, SynthConfig, generate_corpus

    words = DEFAULT_DICTIONARY
    if args.dictionary:
        words = tuple(w.strip() for w in Path(args.dictionary).read_text(encoding="utf-8").splitlines() if w.strip())
    cfg = SynthConfig(dictionary=words, train_count=args.train, test_count=args.test, seed=args.seed,
                      mix=AUGMENTED_MIX if args.augment else (1.0, 0.0, 0.0, 0.0),
                      disjoint_vocab=args.disjoint_vocab)
    result = generate_corpus(cfg, args.out)
    return {
        "out": str(args.out),
        "train_words": result["train"].n_words,
        "train_pages": result["train"].n_pages,
        "test_words": result["test"].n_words,
        "test_pages": result["test"].n_pages,
        "train_manifest": str(result["train"].recognition),
        "test_manifest": str(result["test"].recognition),
    }


def cmd_train(args) -> dict:
    from .recognizer import (
        ConvRecognizer,
        CurriculumConfig,
        TrainConfig,
        curriculum_schedule,
        flat_schedule,
        load_dataset,
        load_model,
        save_checkpoint,
        train_char,
        train_with_schedule,
        write_trace,
    )
    from .types import Alphabet

    alphabet = Alphabet.load(args.alphabet) if args.alphabet else Alphabet.default()
    data = load_dataset(_recognition_manifest(args.data, "train"), alphabet)
    tcfg = TrainConfig(batch_size=args.batch_size, momentum=args.momentum, seed=args.seed)
    started = time.perf_counter()
    if args.mode == "char":
        if args.init_from_char:
            raise UsageError("--init-from-char only applies to --mode ctc")
        model = train_char(data, args.warmup + args.epochs, args.beta, alphabet, tcfg, decay_period=args.decay_period)
    else:
        model = ConvRecognizer(alphabet, seed=args.seed)
        if args.init_from_char:
            char_model = load_model(args.init_from_char)
            if char_model.kind != "char":
                raise ValueError(f"{args.init_from_char} is not a CHAR checkpoint")
            if char_model.alphabet != alphabet:
                raise ValueError("CHAR checkpoint uses a different alphabet")
            model.copy_body_from(char_model)
        if args.schedule == "curriculum":
            plans = curriculum_schedule(CurriculumConfig(
                warmup_epochs=args.warmup, epochs=args.epochs, initial_max_len=args.initial_max_len,
                warmup_width=args.warmup_width, initial_width=args.initial_width, alpha=args.alpha,
                beta=args.beta, decay_period=args.decay_period, schedule_mode=args.schedule_mode))
        else:
            plans = flat_schedule(args.warmup + args.epochs, args.beta, width=args.train_width,
                                  decay_period=args.decay_period)
        model.history = train_with_schedule(model, data, plans, tcfg)
    elapsed = time.perf_counter() - started
    last = model.history[-1]
    save_checkpoint(model, args.out, {"epoch": last.epoch, "lr": last.lr, "mode": args.mode,
                                      "schedule": args.schedule, "seed": args.seed})
    trace = Path(args.trace) if args.trace else Path(str(args.out) + ".trace.csv")
    write_trace(trace, model.history)
    report = {"model": str(args.out), "mode": args.mode, "schedule": args.schedule, "epochs": len(model.history),
              "final_loss": last.loss, "seconds": elapsed, "trace": str(trace)}
    if not args.no_plot:
        from .plotting import plot_curriculum_trace

        figure = trace.with_suffix(".png")
        plot_curriculum_trace(model.history, figure)
        report["figure"] = str(figure)
    return report


def cmd_eval_rec(args) -> dict:
    from .rec_metrics import write_prediction_file
    from .recognizer import load_model
    from .recognizer.training import load_dataset, predict
    from .rec_metrics import evaluate_pairs

    model = load_model(args.model)
    data = load_dataset(_recognition_manifest(args.data, args.split), model.alphabet)
    pairs = predict(model, data)
    if args.predictions:
        write_prediction_file(args.predictions, pairs)
    stats = evaluate_pairs(pairs, case_sensitive=not args.case_insensitive)
    return {"model": str(args.model), "mode": model.kind, "case_sensitive": not args.case_insensitive,
            **stats.as_dict()}


def cmd_eval_det(args) -> dict:
    from .det_metrics import (
        IOU_RANGE,
        build_eval_items,
        f1_at,
        map_at,
        map_per_threshold,
        pr_curve,
        precision_recall_at,
        read_detections,
        read_ground_truth,
    )

    gt = Path(args.gt)
    if gt.is_dir():
        gt = gt / args.split / "detection_gt.txt"
    items = build_eval_items(read_detections(args.pred), read_ground_truth(gt))
    report = {"images": len(items), "ground_truth": sum(len(i.ground_truth) for i in items),
              "predictions": sum(len(i.predictions) for i in items)}
    if args.range:
        per = map_per_threshold(items, per_image=args.per_image)
        report["map_0.5:0.95"] = sum(per.values()) / len(per)
        for thr, value in per.items():
            report[f"map@{thr:.2f}"] = value
        thresholds = IOU_RANGE
    else:
        report[f"map@{args.iou:g}"] = map_at(items, args.iou, per_image=args.per_image)
        thresholds = (args.iou,)
    p, r = precision_recall_at(items, args.iou, args.score_threshold)
    report.update({"score_threshold": args.score_threshold, "precision": p, "recall": r,
                   "f1": f1_at(items, args.iou, args.score_threshold)})
    if args.figure:
        from .plotting import plot_pr_curves

        plot_pr_curves({t: pr_curve(items, t) for t in thresholds}, args.figure)
        report["figure"] = str(args.figure)
    return report


def cmd_detect(args) -> dict:
    from .det_metrics import write_detections
    from .det_post import HeuristicWordDetector, PostprocessConfig, postprocess
    from .preprocess import detection_scale, read_pgm, resize_for_detection
    from .synthdata import read_detection_manifest

    manifest = Path(args.data)
    if manifest.is_dir():
        manifest = manifest / args.split / "detection.txt"
    detector = HeuristicWordDetector()
    post = PostprocessConfig(soft_mode=args.soft_mode)
    records = []
    pages = read_detection_manifest(manifest)
    for page_path, _ in pages:
        img = read_pgm(page_path)
        scale = detection_scale(img)
        for sb in postprocess(detector.detect(resize_for_detection(img)), post):
            records.append((page_path.stem, type(sb)(sb.box.scaled(1 / scale, 1 / scale), sb.score)))
    write_detections(args.out, records)
    return {"pages": len(pages), "detections": len(records), "out": str(args.out)}


def cmd_bench(args) -> dict | list:
    from threadpoolctl import threadpool_limits

    from .recognizer import load_model
    from .service.pipeline import Pipeline

    model = load_model(args.model)
    pipeline = Pipeline(model)
    images = sorted(Path(args.images).glob("*.pgm")) if Path(args.images).is_dir() else [Path(args.images)]
    if not images:
        raise FileNotFoundError(f"no .pgm images under {args.images}")
    rows = []
    with threadpool_limits(limits=args.cores):
        for path in images:
            best = None
            for _ in range(args.repeat):
                res = pipeline.process_image(path)
                if best is None or res.detect_ms + res.recognize_ms < best.detect_ms + best.recognize_ms:
                    best = res
            rows.append({"image": path.name, "status": best.status, "words": len(best.words),
                         "detect_ms": best.detect_ms, "recognize_ms": best.recognize_ms,
                         "recognize_ms_per_word": best.recognize_ms / len(best.words) if best.words else 0.0})
    if args.figure:
        from .plotting import plot_stage_timings

        plot_stage_timings(rows, args.figure)
    if args.summary:
        n = len(rows)
        return {"images": n, "cores": args.cores, "words": sum(r["words"] for r in rows),
                "mean_detect_ms": sum(r["detect_ms"] for r in rows) / n,
                "mean_recognize_ms": sum(r["recognize_ms"] for r in rows) / n}
    return rows


def cmd_serve(args) -> dict:
    from .recognizer import load_model
    from .service import JobQueue, Pipeline, Service, TokenBucket, default_data_dir

    data_dir = Path(args.data_dir) if args.data_dir else default_data_dir()
    if args.noop:
        processor = _noop_processor
    elif args.model:
        processor = Pipeline(load_model(args.model))
    else:
        raise UsageError("--model is required unless --noop is given")
    queue = JobQueue.in_dir(data_dir, limiter=TokenBucket(args.rate) if args.rate else None)
    service = Service(queue, processor, args.host, args.port, args.workers, args.visibility_timeout)
    stop = {"flag": False}

    def _stop(signum, frame):
        stop["flag"] = True

    signal.signal(signal.SIGTERM, _stop)
    signal.signal(signal.SIGINT, _stop)
    service.start()
    print(json.dumps({"listening": service.address, "data_dir": str(data_dir), **queue.stats()}), flush=True)
    while not stop["flag"]:
        time.sleep(0.1)
    service.stop()
    return {"stopped": True}


def _noop_processor(job):
    from .service import JobResult

    return JobResult(job.job_id, "done")


def cmd_enqueue(args) -> dict:
    from .service import request

    reply = request(args.addr, {"op": "enqueue", "job_id": args.job_id or uuid.uuid4().hex,
                                "image_path": str(Path(args.image).resolve()), "callback": args.callback})
    if not reply.get("ok"):
        raise ValueError(reply.get("error", "enqueue failed"))
    return reply


def cmd_result(args) -> dict:
    from .service import request

    reply = request(args.addr, {"op": args.op, "job_id": args.job_id})
    if not reply.get("ok"):
        raise ValueError(reply.get("error", f"{args.op} failed"))
    return reply


# parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value file; flags on the command line win")
    common.add_argument("--verbose", "-v", action="store_true", help="log progress and print the resolved config")
    common.add_argument("--format", choices=("table", "json", "csv"), default="table")

    parser = _Parser(prog="ocrk", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--train", type=int, default=2000)
    p.add_argument("--test", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dictionary", help="word list, one per line")
    p.add_argument("--augment", action="store_true", help="mix in URLs, e-mail addresses and phone numbers")
    p.add_argument("--disjoint-vocab", action="store_true")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a recognizer")
    p.add_argument("--data", required=True, help="corpus directory or recognition manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("ctc", "char"), default="ctc")
    p.add_argument("--schedule", choices=("curriculum", "flat"), default="curriculum")
    p.add_argument("--schedule-mode", choices=("geometric", "faithful"), default="geometric")
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--decay-period", type=int, default=10)
    p.add_argument("--initial-max-len", type=int, default=3)
    p.add_argument("--warmup-width", type=int, default=64)
    p.add_argument("--initial-width", type=int, default=96)
    p.add_argument("--train-width", type=int, default=128, help="width for the flat schedule")
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--momentum", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alphabet", help="alphabet file (default: built-in)")
    p.add_argument("--init-from-char", metavar="CKPT", help="copy the conv body from a CHAR checkpoint")
    p.add_argument("--trace", help="per-epoch CSV (default: <out>.trace.csv)")
    p.add_argument("--no-plot", action="store_true", help="skip the trace figure")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-rec", parents=[common], help="word accuracy and edit distance")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True, help="corpus directory or recognition manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--case-insensitive", action="store_true")
    p.add_argument("--predictions", help="also write predicted<TAB>truth lines here")
    p.set_defaults(func=cmd_eval_rec)

    p = sub.add_parser("eval-det", parents=[common], help="mAP / F1 for detections")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True, help="corpus directory or ground-truth box file")
    p.add_argument("--split", default="test", help="split used when --gt is a corpus directory")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--iou", type=float, default=0.5)
    g.add_argument("--range", action="store_true", help="mAP@0.5:0.95")
    p.add_argument("--score-threshold", type=float, default=0.0, help="operating point for F1")
    p.add_argument("--per-image", action="store_true", help="average per-image AP instead of pooling")
    p.add_argument("--figure", help="write precision/recall curves here")
    p.set_defaults(func=cmd_eval_det)

    p = sub.add_parser("detect", parents=[common], help="run the stand-in detector over corpus pages")
    p.add_argument("--data", required=True, help="corpus directory or detection manifest")
    p.add_argument("--split", default="test")
    p.add_argument("--out", required=True)
    p.add_argument("--soft-mode", choices=("hard", "linear", "gaussian"), default="hard")
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("bench", parents=[common], help="per-stage inference timing")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True, help="directory of .pgm pages or one page")
    p.add_argument("--cores", type=int, default=1)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--summary", action="store_true")
    p.add_argument("--figure", help="write a timing scatter plot here")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("serve", parents=[common], help="run the queue service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7700)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--rate", type=float, default=0.0, help="max job starts per second (0: unlimited)")
    p.add_argument("--model")
    p.add_argument("--noop", action="store_true", help="complete jobs without processing (load testing)")
    p.add_argument("--data-dir", help="storage root (default: $OCRK_DATA_DIR)")
    p.add_argument("--visibility-timeout", type=float, default=30.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("enqueue", parents=[common], help="submit an image to a running service")
    p.add_argument("--addr", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--callback", help="HOST:PORT notified when the job finishes")
    p.add_argument("--job-id")
    p.set_defaults(func=cmd_enqueue)

    for name in ("result", "status"):
        p = sub.add_parser(name, parents=[common], help=f"fetch a job {name}")
        p.add_argument("--addr", required=True)
        p.add_argument("--job-id", required=True)
        p.set_defaults(func=cmd_result, op=name)
    return parser


def _apply_config_file(parser, argv) -> None:
    """Turn ``--config`` key=value lines into subcommand defaults so flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    choices = parser._subparsers._group_actions[0].choices
    if known.command not in choices:
        return
    subparser = choices[known.command]
    values = _load_config_file(known.config)
    actions = {a.dest: a for a in subparser._actions if a.dest not in ("help", "config")}
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    typed = {}
    for dest, raw in values.items():
        action = actions[dest]
        try:
            if action.nargs == 0:
                typed[dest] = raw.lower() in ("1", "true", "yes", "on")
            else:
                typed[dest] = action.type(raw) if action.type else raw
        except ValueError:
            raise UsageError(f"config key {dest}: invalid value {raw!r}") from None
        if action.choices is not None and typed[dest] not in action.choices:
            raise UsageError(f"config key {dest}: {raw!r} is not one of {sorted(action.choices)}")
        action.required = False
    subparser.set_defaults(**typed)


def parse_args(argv=None):
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    _apply_config_file(parser, argv)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    try:
        args = parse_args(argv)
    except (UsageError, OSError) as exc:
        print(f"ocrk: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    if args.verbose:
        resolved = {k: v for k, v in vars(args).items() if k != "func"}
        print(json.dumps({"config": resolved}, default=str), file=sys.stderr)

    from .errors import OcrkError

    try:
        report = args.func(args)
    except UsageError as exc:
        print(f"ocrk {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OcrkError, OSError, ValueError, KeyError) as exc:
        print(f"ocrk {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # reported as an internal failure with a one-line message
        print(f"ocrk {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_INTERNAL
    if report is not None:
        _emit(report, args.format)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
