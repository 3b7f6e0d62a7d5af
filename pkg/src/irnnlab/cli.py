"""Command-line entry point: dataset generation, training, evaluation, grid search.

Commands: ``gen-adding``, ``train``, ``eval``, ``grid-search``, ``gradcheck``,
``make-perm``. Every run directory receives a ``manifest.json`` echoing the
resolved flags plus SHA-256 checksums of the input data files; ``train
--manifest FILE`` replays a previous run exactly (only ``--out-dir`` may be
overridden).

Exit codes: 0 success, 1 usage error, 2 runtime/data error (including a
failed gradcheck bound), 3 divergence (train only).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import harness, tasks
from .gradcheck import check_model
from .init import parse_scheme
from .ndcore import DivergenceError, make_rng
from .network import ModelSpec, load_checkpoint, save_checkpoint
from .optim import TrainConfig
from .tasks import DataFormatError

MNIST_CLASSES = 10

# Documented step budgets per task when --steps is omitted.
DEFAULT_STEPS = {"adding": 100_000, "mnist": 1_000_000}
DEFAULT_EVAL_EVERY = {"adding": 200, "mnist": 1000}

GRADCHECK_BOUNDS = {"relu": 1e-4, "tanh": 1e-4, "linear": 1e-6}


class UsageError(Exception):
    """Invalid flag combination or value (exit code 1)."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's default 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _parse_float_list(text: str) -> list[float]:
    values = [float(tok) for tok in text.split(",") if tok.strip()]
    if not values:
        raise UsageError(f"empty list {text!r}")
    if any(not v > 0 for v in values):
        raise UsageError(f"list values must be positive, got {text!r}")
    return values


def _build_parser() -> _Parser:
    parser = _Parser(prog="irnnlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-adding", help="generate adding-problem train/test files")
    p.add_argument("--t", type=int, required=True, help="sequence length (>= 2)")
    p.add_argument("--n-train", type=int, default=100_000)
    p.add_argument("--n-test", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output directory (train.addp, test.addp)")
    p.set_defaults(handler=cmd_gen_adding)

    p = sub.add_parser("train", help="train one model configuration")
    _add_model_flags(p, required=False)  # a --manifest replay supplies them
    p.add_argument("--lr", type=float)
    p.add_argument("--clip", type=float)
    p.add_argument("--steps", type=int, help=f"update budget (default per task: {DEFAULT_STEPS})")
    p.add_argument("--eval-every", type=int)
    p.add_argument("--manifest", help="replay a previous run from its manifest")
    p.add_argument("--out-dir")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("grid-search", help="train every cell of a hyperparameter grid")
    _add_model_flags(p)
    p.add_argument("--lrs", default=",".join(f"{v:g}" for v in harness.DEFAULT_LRS))
    p.add_argument("--clips", default=",".join(f"{v:g}" for v in harness.DEFAULT_CLIPS))
    p.add_argument(
        "--forget-biases", default=",".join(f"{v:g}" for v in harness.DEFAULT_FORGET_BIASES)
    )
    p.add_argument("--steps-per-cell", type=int, required=True)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_grid_search)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test set")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--permute-seed", type=int)
    p.add_argument("--downsample", type=int)
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    p.add_argument("--cell", choices=("rnn", "lstm"), required=True)
    p.add_argument("--activation", choices=("relu", "tanh", "linear"), default="relu")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--forget-bias", type=float)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("make-perm", help="write a fixed pixel permutation")
    p.add_argument("--side", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_make_perm)

    return parser


def _add_model_flags(p, required: bool = True) -> None:
    p.add_argument("--task", choices=("adding", "mnist"), required=required)
    p.add_argument("--cell", choices=("rnn", "lstm"), required=required)
    p.add_argument("--activation", choices=("relu", "tanh", "linear"))
    p.add_argument("--init", help="identity | iscale:<s> | gauss:<std> | baseline (rnn only)")
    p.add_argument("--hidden", type=int, default=100)
    p.add_argument("--forget-bias", type=float, help="LSTM forget-gate bias (lstm only)")
    p.add_argument("--input-init-std", type=float, default=0.001)
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data", nargs="+", required=required, help="adding: train.addp test.addp; mnist: train-images train-labels test-images test-labels")
    p.add_argument("--permute-seed", type=int, help="fixed pixel permutation seed (mnist only)")
    p.add_argument("--downsample", type=int, help="average-pool images to this side (mnist only)")


def _resolve_model(args) -> ModelSpec:
    """Validate flag combinations and produce the ModelSpec."""
    if args.cell == "lstm":
        conflicts = [
            name
            for name, value in (("--activation", args.activation), ("--init", args.init))
            if value is not None
        ]
        if conflicts:
            raise UsageError(f"{' and '.join(conflicts)} only apply to --cell rnn")
    else:
        if args.forget_bias is not None:
            raise UsageError("--forget-bias only applies to --cell lstm")
    if args.task == "adding":
        for flag, value in (("--permute-seed", args.permute_seed), ("--downsample", args.downsample)):
            if value is not None:
                raise UsageError(f"{flag} only applies to --task mnist")

    activation = args.activation or "relu"
    if args.cell == "rnn":
        if args.init is None:
            init = None if activation == "tanh" else parse_scheme("identity")
        elif args.init == "baseline":
            init = None
        else:
            init = parse_scheme(args.init)
    else:
        init = None

    if args.task == "adding":
        head, input_dim, classes = "regression", 2, 0
    else:
        head, input_dim, classes = "softmax", 1, MNIST_CLASSES
    return ModelSpec(
        cell=args.cell,
        hidden=args.hidden,
        input_dim=input_dim,
        head=head,
        activation=activation,
        classes=classes,
        init=init,
        input_init_std=args.input_init_std,
        forget_bias=args.forget_bias if args.forget_bias is not None else 1.0,
    )


def _load_datasets(args):
    """Datasets for training plus the permutation actually applied (or None)."""
    paths = [Path(p) for p in args.data]
    if args.task == "adding":
        if len(paths) != 2:
            raise UsageError("--task adding needs --data TRAIN.addp TEST.addp")
        return tasks.load_adding(paths[0]), tasks.load_adding(paths[1]), None
    if len(paths) != 4:
        raise UsageError(
            "--task mnist needs --data TRAIN_IMAGES TRAIN_LABELS TEST_IMAGES TEST_LABELS"
        )
    train_raw = tasks.load_mnist(paths[0], paths[1])
    test_raw = tasks.load_mnist(paths[2], paths[3])
    side = args.downsample if args.downsample is not None else train_raw.side
    perm = None
    if args.permute_seed is not None:
        perm = tasks.make_permutation(side * side, args.permute_seed)
    train_ds = tasks.prepare_pixel_sequences(train_raw, perm, args.downsample)
    test_ds = tasks.prepare_pixel_sequences(test_raw, perm, args.downsample)
    return train_ds, test_ds, perm


def _write_manifest(out_dir: Path, command: str, flags: dict, data_paths) -> None:
    manifest = {
        "command": command,
        "flags": flags,
        "data_sha256": {str(p): _sha256(p) for p in data_paths},
    }
    with open(out_dir / "manifest.json", "w", encoding="ascii", newline="\n") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def cmd_gen_adding(args) -> int:
    if args.t < 2:
        raise ValueError(f"--t must be >= 2, got {args.t}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = make_rng(args.seed)
    train_ds = tasks.gen_adding(args.t, args.n_train, rng)
    test_ds = tasks.gen_adding(args.t, args.n_test, rng)
    tasks.save_adding(train_ds, out / "train.addp")
    tasks.save_adding(test_ds, out / "test.addp")
    flags = {"t": args.t, "n_train": args.n_train, "n_test": args.n_test, "seed": args.seed, "out": str(out)}
    _write_manifest(out, "gen-adding", flags, [out / "train.addp", out / "test.addp"])
    print(f"wrote {out / 'train.addp'} ({args.n_train} examples, T={args.t})")
    print(f"wrote {out / 'test.addp'} ({args.n_test} examples, T={args.t})")
    print(f"constant-1 baseline MSE: train {tasks.baseline_mse(train_ds):.6f}, test {tasks.baseline_mse(test_ds):.6f}")
    print(f"(analytic value 1/6 = {tasks.ANALYTIC_CONSTANT_BASELINE_MSE:.6f};"
          f" commonly quoted figure {tasks.REPORTED_CONSTANT_BASELINE_MSE})")
    return 0


_TRAIN_FLAG_NAMES = (
    "task", "cell", "activation", "init", "hidden", "forget_bias", "input_init_std",
    "batch", "seed", "data", "permute_seed", "downsample", "lr", "clip", "steps",
    "eval_every", "out_dir",
)


def _train_flags(args) -> dict:
    return {name: getattr(args, name) for name in _TRAIN_FLAG_NAMES}


def cmd_train(args) -> int:
    if args.manifest is not None:
        with open(args.manifest, "r", encoding="ascii") as fh:
            manifest = json.load(fh)
        if manifest.get("command") != "train":
            raise ValueError(f"{args.manifest} is not a train manifest")
        override_out = args.out_dir
        for name, value in manifest["flags"].items():
            setattr(args, name, value)
        if override_out is not None:
            args.out_dir = override_out
        for path, digest in manifest["data_sha256"].items():
            actual = _sha256(path)
            if actual != digest:
                raise ValueError(f"data file {path} changed since the manifest (sha256 {actual} != {digest})")
    for flag in ("task", "cell", "data", "lr", "clip", "out_dir"):
        if getattr(args, flag) is None:
            raise UsageError(f"--{flag.replace('_', '-')} is required (or use --manifest)")
    if args.steps is None:
        args.steps = DEFAULT_STEPS[args.task]
    if args.eval_every is None:
        args.eval_every = DEFAULT_EVAL_EVERY[args.task]

    spec = _resolve_model(args)
    train_ds, test_ds, perm = _load_datasets(args)
    cfg = TrainConfig(
        lr=args.lr,
        clip=args.clip,
        max_steps=args.steps,
        eval_every=args.eval_every,
        batch_size=args.batch,
        seed=args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_manifest(out_dir, "train", _train_flags(args), args.data)
    if perm is not None:
        tasks.save_permutation(perm, out_dir / "permutation.txt")

    def log(row):
        print(
            f"step {row.step}: train_loss {row.train_loss:.6g} test_loss {row.test_loss:.6g}"
            f" task_metric {row.task_metric:.6g} grad_norm {row.grad_norm:.6g}"
        )

    result = harness.train(
        spec, cfg, train_ds, test_ds, metrics_path=out_dir / "metrics.csv", log=log
    )
    save_checkpoint(out_dir / "checkpoint.irnn", spec, result.params, result.head)
    print(f"metrics: {out_dir / 'metrics.csv'}")
    print(f"checkpoint: {out_dir / 'checkpoint.irnn'}")
    if result.diverged:
        print(f"run diverged at step {result.diverged_at}", file=sys.stderr)
        return 3
    return 0


def cmd_grid_search(args) -> int:
    if args.eval_every is None:
        args.eval_every = DEFAULT_EVAL_EVERY[args.task]
    spec = _resolve_model(args)
    grid = harness.GridSpec(
        lrs=tuple(_parse_float_list(args.lrs)),
        clips=tuple(_parse_float_list(args.clips)),
        forget_biases=tuple(_parse_float_list(args.forget_biases)),
    )
    if args.workers < 1:
        raise UsageError(f"--workers must be >= 1, got {args.workers}")
    train_ds, test_ds, _ = _load_datasets(args)
    budget = TrainConfig(
        lr=1.0,  # placeholder; each cell overrides lr/clip
        clip=1.0,
        max_steps=args.steps_per_cell,
        eval_every=args.eval_every,
        batch_size=args.batch,
        seed=args.seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    flags = {
        name: getattr(args, name)
        for name in (
            "task", "cell", "activation", "init", "hidden", "input_init_std", "batch", "seed",
            "data", "permute_seed", "downsample", "lrs", "clips", "forget_biases",
            "steps_per_cell", "eval_every", "workers", "out_dir",
        )
    }
    _write_manifest(out_dir, "grid-search", flags, args.data)
    ranked = harness.grid_search(
        spec, grid, budget, train_ds, test_ds, out_dir, workers=args.workers
    )
    best = ranked[0]
    print(f"summary: {out_dir / 'summary.json'} ({len(ranked)} cells)")
    print(f"best cell: {json.dumps(best)}")
    return 0


def cmd_eval(args) -> int:
    spec, params, head = load_checkpoint(args.checkpoint)
    paths = [Path(p) for p in args.data]
    if spec.head == "regression":
        if len(paths) != 1:
            raise UsageError("regression checkpoints need --data TEST.addp")
        ds = tasks.load_adding(paths[0])
    else:
        if len(paths) != 2:
            raise UsageError("softmax checkpoints need --data TEST_IMAGES TEST_LABELS")
        raw = tasks.load_mnist(paths[0], paths[1])
        side = args.downsample if args.downsample is not None else raw.side
        perm = None
        if args.permute_seed is not None:
            perm = tasks.make_permutation(side * side, args.permute_seed)
        ds = tasks.prepare_pixel_sequences(raw, perm, args.downsample)
    loss, metric = harness.evaluate(spec, params, head, ds)
    metric_name = "rmse" if spec.head == "regression" else "accuracy"
    print(f"test_loss {loss!r} {metric_name} {metric!r}")
    return 0


def cmd_gradcheck(args) -> int:
    if args.forget_bias is not None and args.cell != "lstm":
        raise UsageError("--forget-bias only applies to --cell lstm")
    bound = GRADCHECK_BOUNDS[args.activation]
    ok = True
    for head, classes in (("regression", 0), ("softmax", 10)):
        spec = ModelSpec(
            cell=args.cell,
            hidden=5,
            input_dim=2,
            head=head,
            activation=args.activation,
            classes=classes,
            forget_bias=args.forget_bias if args.forget_bias is not None else 1.0,
        )
        report = check_model(spec, trials=args.trials, seed=args.seed)
        status = "ok" if report.max_rel_err < bound else "FAIL"
        ok = ok and report.max_rel_err < bound
        print(
            f"{args.cell}/{args.activation}/{head}: max_rel_err {report.max_rel_err:.3e}"
            f" (bound {bound:g}, worst block {report.worst_block()},"
            f" {report.trials} trials, {report.redrawn} redrawn) {status}"
        )
    return 0 if ok else 2


def cmd_make_perm(args) -> int:
    if args.side < 1:
        raise ValueError(f"--side must be >= 1, got {args.side}")
    perm = tasks.make_permutation(args.side * args.side, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tasks.save_permutation(perm, out)
    print(f"wrote {out} ({args.side}x{args.side} -> {perm.size} indices)")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except UsageError as exc:
        print(f"irnnlab: error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, OSError, ValueError) as exc:
        print(f"irnnlab: error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"irnnlab: divergence: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
