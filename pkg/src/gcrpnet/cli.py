"""Command-line entry point: ``gcrpnet <subcommand> ...`` or ``python -m gcrpnet``.

Exit codes: 0 success, 2 validation error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from contextlib import nullcontext
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("gcrpnet")


def _thread_limit():
    value = os.environ.get("GCRP_THREADS")
    if not value:
        return nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=max(1, int(value)))


def _shape(text: str) -> tuple[int, ...]:
    try:
        dims = tuple(int(v) for v in text.replace("x", ",").split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}") from exc
    if not dims or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"bad shape {text!r}")
    return dims


def cmd_train(args) -> int:
    from .data import open_dataset
    from .training import read_flat_config, split_config, train

    values = read_flat_config(args.config) if args.config else {}
    model_cfg, train_cfg = split_config(values)
    dataset = open_dataset(args.data, args.split)
    log.info("training on %d samples from %s", len(dataset), args.data)

    def report(step, loss, _model):
        if step % args.log_every == 0:
            log.info("step %d loss %.6f", step, loss)

    result = train(model_cfg, train_cfg, dataset, args.out, resume=args.resume, callback=report)
    print(f"wrote {result.checkpoint} after {result.steps} steps")
    return EXIT_OK


def cmd_infer(args) -> int:
    from .training import infer

    written = infer(args.ckpt, args.images, args.out)
    print(f"wrote {len(written)} saliency maps to {args.out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from .training import evaluate

    report = evaluate(args.pred, args.gt)
    text = report.to_text()
    print(text)
    if args.targets:
        from .metrics import REFERENCE_SCORES, EvalReport

        if args.targets.upper() in REFERENCE_SCORES:
            label, targets = args.targets.upper(), REFERENCE_SCORES[args.targets.upper()]
        else:
            label, targets = "target", EvalReport.parse_text(Path(args.targets).read_text())
        print(report.comparison_text(targets, label))
    if args.report:
        out = Path(args.report)
        out.parent.mkdir(parents=True, exist_ok=True)
        if out.suffix == ".csv":
            out.write_text(report.csv_header() + "\n" + report.csv_row() + "\n")
        else:
            out.write_text(text + "\n")
        out.with_name(out.stem + "_curves.csv").write_text(report.curves_csv())
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import synth_dataset

    spec = synth_dataset(args.out, args.n, args.size, args.seed)
    print(f"wrote {len(spec)} synthetic samples to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_scope

    results = run_scope(args.scope, args.seed)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_scan_dump(args) -> int:
    from .scan import DIRECTIONS, format_order, less2d_orders

    orders = less2d_orders(args.h, args.w, args.grid)
    wanted = DIRECTIONS if args.dir == "all" else (args.dir,)
    for order in orders:
        if order.direction in wanted:
            prefix = f"{order.direction}: " if args.dir == "all" else ""
            print(prefix + format_order(order))
    return EXIT_OK


def _bench_case(op: str, shape: tuple[int, ...], rng: np.random.Generator):
    from . import functional as F
    from .graph import GATLayer, build_grid_graph, gat_forward
    from .model import GCRPNet, ModelConfig
    from .scan import less2d_orders, scan_gather
    from .ssm import SSMParams, selective_scan
    from .tensor import Tensor

    def t(*s):
        return Tensor(rng.standard_normal(s).astype(np.float32), requires_grad=True)

    if op in ("conv2d", "depthwise_conv2d"):
        if len(shape) != 4:
            raise ValueError(f"{op} expects N,C,H,W")
        n, c, h, w = shape
        x = t(n, c, h, w)
        if op == "conv2d":
            wt = t(c, c, 3, 3)
            return lambda: F.conv2d(x, wt, padding=1)
        wt = t(c, 1, 3, 3)
        return lambda: F.depthwise_conv2d(x, wt)
    if op in ("selective_scan", "parallel_scan"):
        if len(shape) != 3:
            raise ValueError(f"{op} expects B,L,D")
        b, L, d = shape
        x = t(b, L, d)
        p = SSMParams.init(d, 8, rng)
        method = "parallel" if op == "parallel_scan" else "sequential"
        return lambda: selective_scan(x, p, method=method)
    if op == "scan_gather":
        if len(shape) != 4:
            raise ValueError("scan_gather expects B,H,W,D")
        b, h, w, d = shape
        x = t(b, h * w, d)
        orders = less2d_orders(h, w, 2 if h % 2 == 0 and w % 2 == 0 else 1)
        return lambda: scan_gather(x, orders, axis=1)
    if op == "gat":
        if len(shape) != 4:
            raise ValueError("gat expects B,H,W,D")
        b, h, w, d = shape
        x = t(b, h * w, d)
        layer, graph = GATLayer(d, rng), build_grid_graph(h, w)
        return lambda: gat_forward(x, layer, graph)
    if op == "model":
        if len(shape) != 4:
            raise ValueError("model expects N,3,S,S")
        model = GCRPNet(ModelConfig.micro(input_size=shape[-1]))
        x = Tensor(rng.standard_normal(shape).astype(np.float32))
        return lambda: model(x).p1
    raise ValueError(f"unknown bench op {op!r}")


BENCH_OPS = ("conv2d", "depthwise_conv2d", "selective_scan", "parallel_scan", "scan_gather", "gat", "model")


def cmd_bench(args) -> int:
    from .tensor import tsum

    fn = _bench_case(args.op, args.shape, np.random.default_rng(0))
    timings = []
    for _ in range(args.repeat):
        start = time.perf_counter()
        out = fn()
        tsum(out).backward()
        timings.append(time.perf_counter() - start)
    timings = np.array(timings) * 1e3
    print(f"{args.op} {'x'.join(map(str, args.shape))}: forward+backward "
          f"median {np.median(timings):.2f} ms, min {timings.min():.2f} ms over {args.repeat} runs")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcrpnet", description="Salient object detection with graph and state-space blocks.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train", help="train a model from a flat key=value config")
    s.add_argument("--config", help="key=value config file (model and training keys)")
    s.add_argument("--data", required=True, help="dataset root with images/ and GT/")
    s.add_argument("--out", required=True, help="output directory for checkpoints and loss_log.csv")
    s.add_argument("--split", default=None, help="optional split list name, e.g. train")
    s.add_argument("--resume", default=None, help="checkpoint to continue from")
    s.add_argument("--log-every", type=int, default=10)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="write saliency PNGs for a directory of images")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--images", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="score prediction PNGs against ground-truth masks")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--report", default=None, help="write the report here (.csv for one CSV row)")
    s.add_argument("--targets", default=None,
                   help="compare with published scores (EORSSD, ORSSD) or a key=value file")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic saliency dataset")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    s.add_argument("--scope", choices=("op", "block", "model"), required=True)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("scan-dump", help="print a LESS2D scan permutation")
    s.add_argument("--h", type=int, required=True)
    s.add_argument("--w", type=int, required=True)
    s.add_argument("--grid", type=int, default=1)
    s.add_argument("--dir", default="all", choices=("rightward", "downward", "leftward", "upward", "all"))
    s.set_defaults(func=cmd_scan_dump)

    s = sub.add_parser("bench", help="time forward+backward of one op")
    s.add_argument("--op", choices=BENCH_OPS, required=True)
    s.add_argument("--shape", type=_shape, required=True, help="comma-separated dims, e.g. 2,16,32,32")
    s.add_argument("--repeat", type=int, default=5)
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "train" else logging.WARNING,
                        format="%(levelname)s %(message)s")
    from .checkpoint import CheckpointError
    from .data import IngestionError
    from .optim import NumericalError
    from .scan import PartitionError

    try:
        with _thread_limit():
            return args.func(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except IngestionError as exc:
        print("ingestion failed:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_VALIDATION
    except (CheckpointError, PartitionError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
