"""Command-line entry point: ``ustvsr {train,infer,eval,gradcheck,bench,synth}``.

CSV results go to stdout and diagnostics to stderr.  Exit codes: 0 success,
1 runtime failure, 2 bad usage.  Every subcommand accepts ``--config FILE``
holding ``key = value`` lines; explicit flags take precedence.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import torch

from .checkpoint import Checkpoint
from .errors import FormatError, UsageError

log = logging.getLogger("ustvsr")


class CliUsageError(Exception):
    pass


def _floats(values):
    out = []
    for v in values:
        for part in str(v).split(","):
            if part.strip():
                try:
                    out.append(float(part))
                except ValueError:
                    raise argparse.ArgumentTypeError(f"not a number: {part!r}") from None
    return out


def read_config_file(path) -> list:
    """Parse ``key = value`` lines (``#`` starts a comment) into ``[(key, value)]``."""
    entries = []
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliUsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliUsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        entries.append((key, value))
    return entries


def config_argv(sub: argparse.ArgumentParser, entries) -> list:
    """Translate config entries into flags for ``sub``, rejecting unknown keys."""
    actions = {}
    for action in sub._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                actions[opt[2:]] = (opt, action)
    argv = []
    for key, value in entries:
        norm = key.replace("_", "-")
        if norm not in actions or norm in ("config", "help"):
            raise CliUsageError(f"unknown config key {key!r}")
        opt, action = actions[norm]
        if action.nargs == 0:
            if value.lower() in ("1", "true", "yes", "on"):
                argv.append(opt)
        elif action.nargs in ("+", "*"):
            argv += [opt] + value.replace(",", " ").split()
        else:
            argv += [opt, value]
    return argv


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ustvsr", description="Space-time video super-resolution toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = subs.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="file of 'key = value' lines; explicit flags override it")
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        return p

    p = add("infer", "synthesize the high-resolution frame at time t between two frames")
    p.add_argument("--frame0", required=True, help="first input frame (PNG)")
    p.add_argument("--frame1", required=True, help="second input frame (PNG)")
    p.add_argument("--t", type=float, required=True, help="target time in [0, 1]")
    p.add_argument("--out-h", type=int, required=True, help="output height in pixels")
    p.add_argument("--out-w", type=int, required=True, help="output width in pixels")
    p.add_argument("--out", required=True, help="output image path (PNG)")
    p.add_argument("--checkpoint", help="trained checkpoint; omitted = freshly initialised model")
    p.add_argument("--model", choices=("default", "toy"), default="default",
                   help="architecture when no checkpoint is given")
    p.add_argument("--flow01", help="precomputed .flo flow from frame0 to frame1")
    p.add_argument("--flow10", help="precomputed .flo flow from frame1 to frame0")

    p = add("eval", "print mean PSNR/SSIM per (t, s) as CSV")
    p.add_argument("--dataset", required=True, help="directory of 9-frame sequences, or synthetic:N[:SEED]")
    p.add_argument("--checkpoint", help="model checkpoint; omitted = blended-warp + bicubic baseline")
    p.add_argument("--t", nargs="+", default=["0.5"], help="target times (space or comma separated)")
    p.add_argument("--s", nargs="+", default=["2", "4"], help="scale factors in [1, 4]")
    p.add_argument("--plot", help="also write a PSNR-vs-t figure to this path")

    p = add("train", "train a model and write checkpoints, loss.csv and loss.png")
    p.add_argument("--dataset", default="synthetic:64",
                   help="directory of sequences, or synthetic:N[:SEED] (frames sized to fit the patch at s=4)")
    p.add_argument("--out-dir", default="runs/latest", help="output directory")
    p.add_argument("--iterations", type=int, default=2000, help="number of iterations (0 = save initial model)")
    p.add_argument("--batch-size", type=int, default=4, help="batch size")
    p.add_argument("--patch", type=int, default=56, help="LR patch size")
    p.add_argument("--lr", type=float, default=1e-4, help="initial learning rate")
    p.add_argument("--mode", choices=("unconstrained", "fixed"), default="unconstrained", help="training mode")
    p.add_argument("--model", choices=("default", "toy"), default="default", help="architecture size")
    p.add_argument("--no-offsets", action="store_true", help="force zero channel offsets in the GPL head")
    p.add_argument("--checkpoint-every", type=int, default=500, help="checkpoint interval in iterations")
    p.add_argument("--resume", help="continue from this checkpoint")

    add("gradcheck", "run the finite-difference gradient suite")

    p = add("bench", "time SPL, GPL and bicubic feature upsampling")
    p.add_argument("--scales", nargs="+", default=["2", "3", "4"], help="scale factors (>= 1)")
    p.add_argument("--channels", type=int, default=64, help="output feature channels")
    p.add_argument("--size", type=int, default=32, help="input feature height and width")
    p.add_argument("--repeats", type=int, default=10, help="timed calls per method")
    p.add_argument("--plot", help="also write a timing figure to this path")

    p = add("synth", "write a synthetic translation dataset as PNG sequences")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--sequences", type=int, default=5, help="number of sequences")
    p.add_argument("--size", type=int, default=96, help="frame size (>= 96)")
    return parser


def parse_args(argv=None):
    """Parse ``argv``; entries of a ``--config`` file are spliced in ahead of the explicit flags."""
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    subs = parser._subparsers._group_actions[0].choices
    if argv and argv[0] in subs:
        pre = argparse.ArgumentParser(add_help=False)
        pre.add_argument("--config")
        known, _ = pre.parse_known_args(argv[1:])
        if known.config:
            try:
                extra = config_argv(subs[argv[0]], read_config_file(known.config))
            except CliUsageError as exc:
                parser.exit(2, f"ustvsr: error: {exc}\n")
            argv = argv[:1] + extra + argv[1:]
    return parser, parser.parse_args(argv)


def load_dataset(source: str, min_size: int = 96):
    """``synthetic:N[:SEED]`` builds frames of at least ``min_size`` pixels; anything else is a directory."""
    from .training import DirectoryDataset, SyntheticDataset

    if source.startswith("synthetic:"):
        parts = source.split(":")[1:]
        try:
            n = int(parts[0])
            seed = int(parts[1]) if len(parts) > 1 else 0
        except (ValueError, IndexError):
            raise UsageError(f"bad synthetic dataset source {source!r}") from None
        return SyntheticDataset(n, max(96, min_size), seed=seed)
    return DirectoryDataset(source)


def _model_for(args):
    from .network import NetConfig, USTVSRNet
    from .training import model_from_checkpoint

    if args.checkpoint:
        model = model_from_checkpoint(Checkpoint.load(args.checkpoint))
    else:
        torch.manual_seed(args.seed)
        model = USTVSRNet(NetConfig.toy() if args.model == "toy" else NetConfig())
    return model.eval()


def cmd_infer(args) -> int:
    from .imaging import read_image, write_image
    from .motion import read_flo
    from .network import ScaleTimeQuery

    if not 0.0 <= args.t <= 1.0:
        raise CliUsageError(f"--t must lie in [0, 1], got {args.t}")
    if bool(args.flow01) != bool(args.flow10):
        raise CliUsageError("--flow01 and --flow10 must be given together")
    i0, i1 = read_image(args.frame0), read_image(args.frame1)
    if i0.shape != i1.shape:
        raise CliUsageError("--frame0 and --frame1 differ in size")
    h, w = i0.shape[-2:]
    if args.out_h < h or args.out_w < w:
        raise CliUsageError("--out-h/--out-w must be at least the input size")
    s = args.out_h / h
    if abs(s - args.out_w / w) > 1e-6:
        raise CliUsageError("--out-h/--out-w imply different scales along the two axes")
    flows = None
    if args.flow01:
        flows = (read_flo(args.flow01), read_flo(args.flow10))
        for f in flows:
            if f.shape[-2:] != (h, w):
                raise OSError("precomputed flow resolution does not match the frames")
    model = _model_for(args)
    with torch.no_grad():
        out = model(i0, i1, ScaleTimeQuery(args.t, args.out_h, args.out_w), flows=flows)
    write_image(args.out, out)
    print(f"s={s:.4f}")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import evaluate
    from .training import model_from_checkpoint

    ts, ss = _floats(args.t), _floats(args.s)
    for t in ts:
        if not 0.0 <= t <= 1.0:
            raise CliUsageError(f"--t values must lie in [0, 1], got {t}")
    for s in ss:
        if not 1.0 <= s <= 4.0:
            raise CliUsageError(f"--s values must lie in [1, 4], got {s}")
    dataset = load_dataset(args.dataset)
    if len(dataset) == 0:
        print(f"ustvsr: dataset {args.dataset} is empty", file=sys.stderr)
        return 1
    if not getattr(dataset, "continuous_time", False):
        grid = dataset.times
        for t in ts:
            if min(abs(t - g) for g in grid) > 1e-9:
                raise CliUsageError(f"--t {t} has no ground-truth frame in {args.dataset}")
    model = model_from_checkpoint(Checkpoint.load(args.checkpoint)) if args.checkpoint else None
    rows = evaluate(model, dataset, ts, ss)
    print("t,s,psnr,ssim")
    for r in rows:
        print(f"{r.t:.4f},{r.s:.4f},{r.psnr:.4f},{r.ssim:.4f}")
    if args.plot:
        from .plotting import plot_eval

        plot_eval(rows, args.plot)
    return 0


def cmd_train(args) -> int:
    from .network import NetConfig
    from .plotting import plot_loss_curve
    from .training import TrainConfig, train

    dataset = load_dataset(args.dataset, min_size=round(args.patch * 4))
    if len(dataset) == 0:
        print(f"ustvsr: dataset {args.dataset} is empty", file=sys.stderr)
        return 1
    cfg = TrainConfig(mode=args.mode, batch_size=args.batch_size, patch=args.patch, lr=args.lr,
                      iterations=args.iterations, seed=args.seed, checkpoint_every=args.checkpoint_every)
    net_cfg = NetConfig.toy() if args.model == "toy" else NetConfig()
    net_cfg.learn_offsets = not args.no_offsets
    resume = Checkpoint.load(args.resume) if args.resume else None

    def progress(step, loss):
        if step % 50 == 0:
            log.info("step %d loss %.6f", step, loss)

    result = train(cfg, dataset, net_cfg, resume=resume, out_dir=args.out_dir, progress=progress)
    if result.losses:
        plot_loss_curve(result.losses, Path(args.out_dir) / "loss.png")
    print("step,loss")
    for step, loss in result.losses:
        print(f"{step},{loss:.6f}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradsuite import run_suite

    failed = 0
    for name, report in run_suite(seed=args.seed):
        print(f"{name},{report}")
        failed += not report.passed
    if failed:
        print(f"ustvsr: {failed} gradient check(s) failed", file=sys.stderr)
    return 1 if failed else 0


def cmd_bench(args) -> int:
    from .gpl import GplConfig, OffsetNet, gpl_sample, spl
    from .imaging import bicubic_resize

    scales = _floats(args.scales)
    for s in scales:
        if s < 1:
            raise CliUsageError(f"--scales values must be >= 1, got {s}")
    torch.manual_seed(args.seed)
    c, n = args.channels, args.size
    rows = []

    def timed(fn):
        fn()
        start = time.perf_counter()
        for _ in range(args.repeats):
            fn()
        return (time.perf_counter() - start) * 1000 / args.repeats

    print("s,method,ms_per_call")
    with torch.no_grad():
        for s in scales:
            out = int(round(n * s))
            feat = torch.randn(1, c, n, n)
            cfg = GplConfig(c, 5 * c, c, 64)
            T = torch.randn(1, cfg.c_inter, n, n)
            net = OffsetNet(c, 64)
            results = {
                "gpl": timed(lambda: gpl_sample(T, out, out, cfg, net)),
                "bicubic": timed(lambda: bicubic_resize(feat, out, out)),
            }
            if float(s).is_integer():
                Ts = torch.randn(1, int(s) ** 2 * c, n, n)
                results["spl"] = timed(lambda: spl(Ts, int(s)))
            else:
                results["spl"] = None
            for method in ("spl", "gpl", "bicubic"):
                ms = results[method]
                rows.append((s, method, ms))
                print(f"{s:.4f},{method}," + ("n/a" if ms is None else f"{ms:.4f}"))
    if args.plot:
        from .plotting import plot_bench

        plot_bench(rows, args.plot)
    return 0


def cmd_synth(args) -> int:
    from .training import SyntheticDataset

    SyntheticDataset(args.sequences, args.size, seed=args.seed).write(args.out)
    print(f"wrote {args.sequences} sequences to {args.out}", file=sys.stderr)
    return 0


COMMANDS = {"infer": cmd_infer, "eval": cmd_eval, "train": cmd_train, "gradcheck": cmd_gradcheck,
            "bench": cmd_bench, "synth": cmd_synth}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    threads = os.environ.get("USTVSR_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    try:
        _, args = parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors (and --help) this way
        return exc.code if isinstance(exc.code, int) else 2
    try:
        return COMMANDS[args.command](args)
    except (CliUsageError, UsageError) as exc:
        print(f"ustvsr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, FormatError, RuntimeError) as exc:
        print(f"ustvsr {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
