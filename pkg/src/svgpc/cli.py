"""Command-line front end: gen-data, train, predict, evaluate, grid.

Every command accepts ``--seed``, ``--config FILE`` and ``--out PATH``.
Config files hold one ``key = value`` per line (keys are the long flag
names, dashes or underscores), with '#' comments; flags given on the
command line win. The resolved configuration is written into the header of
every artifact.

Failures print a single ``error: <kind>: <message>`` line to stderr and
exit nonzero (2 for invalid arguments, 1 otherwise).
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import data as data_io
from .kernels import KernelSpec, canonical_family
from .metrics import evaluate_probs
from .model import ModelState, NonFiniteELBOError, build_model, predict
from .numerics import DEFAULT_QUADRATURE_ORDER, FactorizationError, gauss_hermite
from .softmax import DEFAULT_PREDICT_SAMPLES
from .training import TrainConfig, config_dict, fit, full_elbo
from .unified import DEFAULT_DELTA, NOISE_VARIANCES

log = logging.getLogger("svgpc")

DEFAULT_SEED = 0


class CLIError(Exception):
    """One-line failure reported as ``error: <kind>: <message>``."""

    def __init__(self, kind: str, message: str, code: int = 1):
        super().__init__(message)
        self.kind, self.code = kind, code


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CLIError("invalid-args", message, 2)


# -- config files -------------------------------------------------------------

def read_config(path) -> dict:
    values = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise CLIError("config", f"cannot read {path}: {exc.strerror}") from None
    for lineno, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CLIError("config", f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser: argparse.ArgumentParser, values: dict) -> None:
    """Install config-file values as parser defaults (converted like the flags)."""
    actions = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise CLIError("config", f"unknown config key {key!r}", 2)
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            flag = raw.lower() in ("1", "true", "yes", "on")
            if raw.lower() not in ("1", "0", "true", "false", "yes", "no", "on", "off"):
                raise CLIError("config", f"{key}: expected a boolean, got {raw!r}", 2)
            defaults[key] = flag
            continue
        try:
            value = action.type(raw) if action.type else raw
        except (TypeError, ValueError) as exc:
            raise CLIError("config", f"{key}: {exc}", 2) from None
        if action.choices is not None and value not in action.choices:
            raise CLIError("config", f"{key}: {value!r} not in {sorted(action.choices)}", 2)
        defaults[key] = value
    parser.set_defaults(**defaults)


def resolved(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k != "func"}


def header_lines(args, extra=()) -> list[str]:
    lines = [f"svgpc {args.command}"]
    lines += [f"{k} = {_show(v)}" for k, v in resolved(args).items()]
    return lines + list(extra)


def _show(v) -> str:
    return "" if v is None else str(v)


# -- shared helpers ---------------------------------------------------------------

def positive_int(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def positive_float(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text}")
    return v


def parse_kernel(text: str, input_dim: int, lengthscale=None, variance=None) -> KernelSpec:
    """'matern32', 'rbf:0.5:2' or a '+'-joined sum of such leaves.

    Leaves without explicit values get ``lengthscale`` / ``variance`` or the
    defaults 0.1 sqrt(d) and 5.0.
    """
    leaves = []
    for part in text.split("+"):
        fields = part.strip().split(":")
        family = canonical_family(fields[0])
        if family == "sum" or len(fields) > 3:
            raise ValueError(f"bad kernel term {part!r}")
        ls = float(fields[1]) if len(fields) > 1 and fields[1] else lengthscale or 0.1 * np.sqrt(input_dim)
        var = float(fields[2]) if len(fields) > 2 and fields[2] else variance or 5.0
        leaves.append(KernelSpec(family, ls, var))
    return leaves[0] if len(leaves) == 1 else KernelSpec.sum(*leaves)


def noise_variance(name: str) -> float | None:
    if name == "softmax":
        return None
    if name in NOISE_VARIANCES:
        return NOISE_VARIANCES[name]
    a = float(name)
    if a < 0:
        raise ValueError("noise variance must be nonnegative")
    return a


def likelihood_name(text: str) -> str:
    text = text.strip().lower()
    if text in ("softmax", *NOISE_VARIANCES):
        return text
    try:
        if float(text) >= 0:
            return text
    except ValueError:
        pass
    raise argparse.ArgumentTypeError(f"expected step, probit, logit, softmax or a variance, got {text!r}")


def require_out(args) -> Path:
    if not args.out:
        raise CLIError("invalid-args", "--out is required for this command", 2)
    return Path(args.out)


def load_dataset(path, label_column: int):
    try:
        return data_io.load_csv(path, label_column)
    except FileNotFoundError:
        raise CLIError("io", f"no such file: {path}") from None
    except data_io.DataError as exc:
        raise CLIError("data", f"{path}: {exc}") from None


def load_model(path) -> ModelState:
    try:
        return ModelState.load(path)
    except FileNotFoundError:
        raise CLIError("io", f"no such file: {path}") from None
    except (ValueError, KeyError) as exc:
        raise CLIError("checkpoint", f"{path}: {exc}") from None


def feature_stats(state: ModelState):
    norm = state.metadata.get("normalization")
    if not norm:
        return None
    return np.asarray(norm["mean"], dtype=float), np.asarray(norm["std"], dtype=float)


def to_model_space(state: ModelState, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[1] != state.input_dim:
        raise CLIError("shape", f"model expects {state.input_dim} feature columns, data has {X.shape[1]}")
    stats = feature_stats(state)
    return X if stats is None else (X - stats[0]) / stats[1]


def label_values(state: ModelState) -> list[float]:
    """Original label value of each probability column, in column order."""
    mapping = {int(k): v for k, v in state.metadata.get("label_map", {}).items()}
    internal = (-1, 1) if state.num_classes == 2 else range(1, state.num_classes + 1)
    return [mapping.get(i, float(i)) for i in internal]


def _fmt_label(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_features(state: ModelState, path, label_column: int):
    """Features (and original labels when the file has an extra column) from a CSV."""
    try:
        _, table = data_io.read_table(path)
    except FileNotFoundError:
        raise CLIError("io", f"no such file: {path}") from None
    except data_io.DataError as exc:
        raise CLIError("data", f"{path}: {exc}") from None
    if table.shape[1] == state.input_dim:
        return table, None
    if table.shape[1] == state.input_dim + 1:
        col = label_column % table.shape[1]
        return np.delete(table, col, axis=1), table[:, col]
    raise CLIError("shape", f"model expects {state.input_dim} feature columns, "
                            f"data has {table.shape[1]} columns")


def model_probs(state: ModelState, X, args):
    probs, _ = predict(state, to_model_space(state, X), n_samples=args.samples, seed=args.seed,
                       rule=gauss_hermite(state.metadata.get("config", {}).get(
                           "quadrature_order", DEFAULT_QUADRATURE_ORDER)))
    return probs


def write_rows(path, header, columns, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header:
            fh.write(f"# {line}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["%.17g" % v for v in row])


# -- commands ----------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    out = require_out(args)
    if args.generator == "two-moons":
        ds = data_io.gen_two_cluster_binary(args.n, args.noise, args.seed)
        note = "two-moons surrogate for the banana toy dataset (not the original data)"
    else:
        kernel = KernelSpec("rbf", args.lengthscale, 1.0)
        ds = data_io.gen_gp_multiclass(args.n, args.classes, kernel, args.seed)
        note = "labels are the argmax of independent GP draws"
    data_io.save_csv(ds, out, header_lines(args, [note]))
    print(f"wrote {out}: n={ds.n} d={ds.d} C={ds.C} seed={args.seed} ({note})")
    return 0


def _train_config(args, n: int) -> TrainConfig:
    return TrainConfig(
        iterations=args.iterations, batch_size=min(args.batch_size, n), learning_rate=args.learning_rate,
        adam_beta1=args.adam_beta1, adam_beta2=args.adam_beta2, adam_eps=args.adam_eps,
        seed=args.seed, quadrature_order=args.quadrature_order, trace_every=args.trace_every,
        record_wall_time=args.wall_time,
    )


def cmd_train(args) -> int:
    out = require_out(args)
    trace_path = Path(args.trace) if args.trace else out.with_suffix(".trace.csv")
    ds = load_dataset(args.data, args.label_column)
    if args.likelihood == "softmax" and ds.C == 2:
        raise CLIError("invalid-config", "the softmax likelihood needs multi-class data (found 2 classes)", 2)
    task = "softmax" if args.likelihood == "softmax" else ("binary" if ds.C == 2 else "multiclass")
    if args.normalize:
        ds = data_io.normalize(ds)
    try:
        kernel = parse_kernel(args.kernel, ds.d, args.lengthscale, args.variance)
        cfg = _train_config(args, ds.n)
    except ValueError as exc:
        raise CLIError("invalid-config", str(exc), 2) from None

    state = build_model(task, ds.X, ds.C, kernel, num_inducing=min(args.inducing, ds.n), seed=args.seed,
                        noise_a=noise_variance(args.likelihood), delta=args.delta,
                        trainable_delta=not args.fixed_delta, shared_kernel=not args.per_class_kernels)
    log.info("training %s (%s) on %d points, m=%d, seed=%d", task, args.likelihood, ds.n,
             state.num_inducing, args.seed)
    start = time.perf_counter()
    state, trace = fit(state, ds.X, ds.y, cfg)
    runtime = time.perf_counter() - start
    final = full_elbo(state, ds.X, ds.y, cfg.quadrature_order)

    state.metadata = {
        "config": {**resolved(args), **config_dict(cfg)},
        "seed": args.seed,
        "label_map": {str(k): v for k, v in sorted(ds.label_map.items())},
        "normalization": None if ds.normalization is None else {
            "mean": [float(v) for v in ds.normalization[0]],
            "std": [float(v) for v in ds.normalization[1]],
        },
        "feature_names": ds.feature_names,
        "final_elbo": final,
    }
    state.save(out)
    trace.write_csv(trace_path, header_lines(args, [f"task = {task}"]))
    print(f"final elbo {final:.6f} after {cfg.iterations} iterations "
          f"({runtime:.1f}s); wrote {out} and {trace_path}")
    return 0


def cmd_predict(args) -> int:
    out = require_out(args)
    state = load_model(args.model)
    X, _ = read_features(state, args.data, args.label_column)
    probs = model_probs(state, X, args)
    names = state.metadata.get("feature_names") or [f"x{j + 1}" for j in range(X.shape[1])]
    columns = [*names, *(f"p_{_fmt_label(v)}" for v in label_values(state))]
    write_rows(out, header_lines(args), columns, np.column_stack([X, probs]))
    print(f"wrote {out}: {X.shape[0]} rows")
    return 0


def cmd_evaluate(args) -> int:
    state = load_model(args.model)
    X, raw = read_features(state, args.data, args.label_column)
    if raw is None:
        raise CLIError("data", f"{args.data}: no label column")
    values = label_values(state)
    lookup = {float(v): i for i, v in enumerate(values)}
    unknown = sorted({float(v) for v in raw} - set(lookup))
    if unknown:
        raise CLIError("data", f"labels not seen in training: {unknown}")
    start = time.perf_counter()
    probs = model_probs(state, X, args)
    runtime = time.perf_counter() - start
    report = evaluate_probs(probs, [lookup[float(v)] for v in raw], values, runtime, args.seed,
                            extra={"config": resolved(args), "task": state.task})
    text = report.dumps()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    print(f"accuracy {report.accuracy:.6f} mean_nll {report.mean_nll:.6f} n_test {report.n_test}")
    return 0


def _bounds(text: str):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4 or parts[0] >= parts[1] or parts[2] >= parts[3]:
        raise argparse.ArgumentTypeError("expected x1min,x1max,x2min,x2max with min < max")
    return tuple(parts)


def cmd_grid(args) -> int:
    out = require_out(args)
    state = load_model(args.model)
    if state.input_dim != 2:
        raise CLIError("shape", f"grid export needs a 2-D model, this one has d = {state.input_dim}")
    x1 = np.linspace(args.bounds[0], args.bounds[1], args.resolution)
    x2 = np.linspace(args.bounds[2], args.bounds[3], args.resolution)
    # row-major: x1 varies fastest
    G = np.column_stack([np.tile(x1, x2.size), np.repeat(x2, x1.size)])
    probs = model_probs(state, G, args)
    columns = ["x1", "x2", *(f"p_{_fmt_label(v)}" for v in label_values(state))]
    header = header_lines(args)
    write_rows(out, header, columns, np.column_stack([G, probs]))

    inducing_path = Path(args.inducing_out) if args.inducing_out else out.with_suffix(".inducing.csv")
    Z = state.params["Z"]
    stats = feature_stats(state)
    if stats is not None:
        Z = Z * stats[1] + stats[0]
    write_rows(inducing_path, header + ["optimized inducing locations, input coordinates"], ["x1", "x2"], Z)
    print(f"wrote {out} ({G.shape[0]} rows) and {inducing_path} ({Z.shape[0]} rows)")
    return 0


# -- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help=f"random seed (default {DEFAULT_SEED})")
    common.add_argument("--config", help="key = value file; command-line flags override it")
    common.add_argument("--out", "-o", help="output file")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging on stderr")

    parser = Parser(prog="svgpc", description="Sparse variational GP classification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=Parser)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic toy dataset")
    p.add_argument("generator", choices=["two-moons", "gp-multiclass"])
    p.add_argument("--n", type=positive_int, required=True, help="number of points")
    p.add_argument("--classes", type=positive_int, default=3)
    p.add_argument("--noise", type=float, default=0.25, help="two-moons jitter scale")
    p.add_argument("--lengthscale", type=positive_float, default=data_io.GP_TOY_LENGTHSCALE,
                   help="RBF lengthscale of the latent GP draws")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="fit a classifier and write a checkpoint")
    p.add_argument("--data", required=True, help="training CSV")
    p.add_argument("--label-column", type=int, default=-1)
    p.add_argument("--likelihood", type=likelihood_name, default="probit",
                   help="step | probit | logit | softmax | explicit noise variance")
    p.add_argument("--kernel", default="rbf", help="e.g. matern32, rbf:0.5:2, rbf+matern52")
    p.add_argument("--lengthscale", type=positive_float, default=None, help="default 0.1 sqrt(d)")
    p.add_argument("--variance", type=positive_float, default=None, help="default 5.0")
    p.add_argument("--per-class-kernels", action="store_true")
    p.add_argument("--inducing", "-m", type=positive_int, default=300)
    p.add_argument("--iterations", type=int, default=10000)
    p.add_argument("--batch-size", type=positive_int, default=1024)
    p.add_argument("--learning-rate", type=positive_float, default=0.01)
    p.add_argument("--adam-beta1", type=float, default=0.9)
    p.add_argument("--adam-beta2", type=float, default=0.999)
    p.add_argument("--adam-eps", type=float, default=1e-8)
    p.add_argument("--quadrature-order", type=positive_int, default=DEFAULT_QUADRATURE_ORDER)
    p.add_argument("--trace-every", type=positive_int, default=100)
    p.add_argument("--delta", type=positive_float, default=DEFAULT_DELTA)
    p.add_argument("--fixed-delta", action="store_true", help="do not optimize delta")
    p.add_argument("--no-normalize", dest="normalize", action="store_false",
                   help="train on raw features")
    p.add_argument("--trace", help="trace CSV (default: <out>.trace.csv)")
    p.add_argument("--wall-time", action="store_true",
                   help="record elapsed seconds in the trace (makes traces run-dependent)")
    p.set_defaults(func=cmd_train)

    for name, func, helptext in (("predict", cmd_predict, "class probabilities for a CSV"),
                                 ("evaluate", cmd_evaluate, "accuracy and NLL on a labelled CSV")):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--model", required=True, help="checkpoint written by train")
        p.add_argument("--data", required=True)
        p.add_argument("--label-column", type=int, default=-1)
        p.add_argument("--samples", type=positive_int, default=DEFAULT_PREDICT_SAMPLES,
                       help="Monte Carlo draws for softmax prediction")
        p.set_defaults(func=func)

    p = sub.add_parser("grid", parents=[common], help="probabilities on a 2-D grid plus inducing locations")
    p.add_argument("--model", required=True)
    p.add_argument("--bounds", type=_bounds, default=(-3.0, 3.0, -3.0, 3.0), help="x1min,x1max,x2min,x2max")
    p.add_argument("--resolution", type=positive_int, default=50)
    p.add_argument("--samples", type=positive_int, default=DEFAULT_PREDICT_SAMPLES)
    p.add_argument("--inducing-out", help="inducing-location CSV (default: <out>.inducing.csv)")
    p.set_defaults(func=cmd_grid)
    return parser


def _subparser(parser, command):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def parse_args(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        sub = _subparser(parser, args.command)
        _apply_config(sub, read_config(args.config))
        args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = DEFAULT_SEED
        log.info("no --seed given, using default %d", DEFAULT_SEED)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=logging.DEBUG if ("-v" in argv or "--verbose" in argv) else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        args = parse_args(argv)
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc.kind}: {exc}", file=sys.stderr)
        return exc.code
    except NonFiniteELBOError as exc:
        print(f"error: non-finite-elbo: {exc}", file=sys.stderr)
        return 1
    except FactorizationError as exc:
        print(f"error: factorization: {exc}", file=sys.stderr)
        return 1
    except (data_io.DataError, ValueError) as exc:
        print(f"error: invalid-input: {' '.join(str(exc).split())}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: io: {exc.strerror or exc}: {getattr(exc, 'filename', '') or ''}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
