"""The `mismm` command line

```
mismm simulate  --scenario mean_diff --bags 50 --instances 3 --samples 50 --out d.csv
mismm fit       --data d.csv --method mismm-heuristic --grid --out model.json
mismm predict   --model model.json --data test.csv --out scores.csv
mismm benchmark --config bench.json --out report.csv
mismm summarize --data d.csv --spec univ1,univ2 --out summaries.csv
```

Exit codes: 0 on success, 1 when a computation fails, 2 on invalid input or
usage, 130 when interrupted.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from importlib import metadata
from pathlib import Path
from typing import List, Optional, Sequence

import cvxopt
import numpy as np
import pandas as pd
import scipy
import sklearn

from mismm.baselines import SummaryModel, SummarySpec, export_summaries
from mismm.benchmark import BenchmarkConfig, format_summary, run_benchmark
from mismm.data import (
    BAG_COLUMN,
    Dataset,
    apply_scaler,
    fit_scaler,
    load_dataset,
    log_transform,
)
from mismm.errors import InputError, MismmException
from mismm.evaluate import DEFAULT_C_GRID, CvPlan, sigma_grid
from mismm.heuristic import SELECTION_CRITERIA, predict_bags
from mismm.kernels import KernelSpec, dump_gram, gram
from mismm.methods import (
    FitOptions,
    MethodSpec,
    fit_method,
    kernel_inputs,
    tune_method,
)
from mismm.parallel import set_default_threads
from mismm.persist import ModelFile, load_model, save_model
from mismm.simgen import RNG_NAME, SCENARIOS, ScenarioConfig, generate, save_labeled

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERRUPTED = 130


def version_text() -> str:
    try:
        own = metadata.version("mismm")
    except metadata.PackageNotFoundError:
        own = "unknown"
    libs = ", ".join(
        f"{name} {mod.__version__}"
        for name, mod in (
            ("numpy", np),
            ("scipy", scipy),
            ("scikit-learn", sklearn),
            ("pandas", pd),
            ("cvxopt", cvxopt),
        )
    )
    return f"mismm {own} (rng {RNG_NAME}; {libs})"


def _floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text}")


def _columns(text: str) -> List[str]:
    return [c.strip() for c in text.split(",") if c.strip()]


def _method(text: str) -> MethodSpec:
    try:
        return MethodSpec.parse(text)
    except InputError as e:
        raise argparse.ArgumentTypeError(str(e))


def _summary_spec(text: str) -> SummarySpec:
    try:
        return SummarySpec.parse(text)
    except InputError as e:
        raise argparse.ArgumentTypeError(str(e))


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected an integer >= 1, got {text}")
    return value


###########
# PARSERS #
###########


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mismm",
        description="Multiple-instance support measure machines for bags of "
        "distributional instances",
    )
    parser.add_argument("--version", action="version", version=version_text())
    _add_common(parser, defaults=True)
    common = argparse.ArgumentParser(add_help=False)
    _add_common(common, defaults=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser(
        "simulate", parents=[common], help="generate a simulated data set"
    )
    sim.add_argument("--scenario", required=True, choices=SCENARIOS)
    sim.add_argument("--bags", type=_positive_int, required=True)
    sim.add_argument("--instances", type=_positive_int, required=True)
    sim.add_argument("--samples", type=_positive_int, required=True)
    sim.add_argument("--p-pos", type=float, default=0.15)
    sim.add_argument("--dim", type=int, default=10)
    sim.add_argument("--out", type=Path, required=True)
    sim.set_defaults(handler=cmd_simulate)

    fit = sub.add_parser("fit", parents=[common], help="train a model")
    fit.add_argument("--data", type=Path, required=True)
    fit.add_argument("--method", type=_method, required=True)
    fit.add_argument("--out", type=Path, required=True)
    fit.add_argument("--C", dest="C", type=float, default=1.0)
    fit.add_argument(
        "--sigma",
        type=float,
        default=None,
        help="gaussian kernel width (default: median heuristic)",
    )
    fit.add_argument(
        "--grid",
        action="store_true",
        help="choose C and sigma by cross-validated grid search",
    )
    fit.add_argument("--C-grid", dest="C_grid", type=_floats, default=None)
    fit.add_argument("--sigma-grid", type=_floats, default=None)
    fit.add_argument("--inner-k", type=_positive_int, default=5)
    fit.add_argument(
        "--unweighted",
        action="store_true",
        help="use the same C for both classes",
    )
    fit.add_argument("--max-selector-updates", type=_positive_int, default=50)
    fit.add_argument("--restarts", type=_positive_int, default=1)
    fit.add_argument(
        "--select-by",
        choices=SELECTION_CRITERIA,
        default="objective",
        help="choose among restarts by training objective or hold-out AUROC",
    )
    fit.add_argument("--m1", type=_positive_int, default=None)
    fit.add_argument("--m2", type=_positive_int, default=None)
    fit.add_argument("--L", dest="L", type=float, default=100.0)
    fit.add_argument("--time-limit", type=float, default=60.0)
    fit.add_argument("--node-limit", type=_positive_int, default=None)
    _add_preprocessing(fit)
    fit.add_argument(
        "--dump-gram",
        type=Path,
        default=None,
        help="write the training Gram matrix to this CSV",
    )
    fit.set_defaults(handler=cmd_fit)

    pred = sub.add_parser(
        "predict", parents=[common], help="score the bags of a data set"
    )
    pred.add_argument("--model", type=Path, required=True)
    pred.add_argument("--data", type=Path, required=True)
    pred.add_argument("--threshold", type=float, default=0.0)
    pred.add_argument("--out", type=Path, default=None, help="default: stdout")
    pred.set_defaults(handler=cmd_predict)

    bench = sub.add_parser(
        "benchmark", parents=[common], help="run a benchmark from a JSON config"
    )
    bench.add_argument("--config", type=Path, required=True)
    bench.add_argument("--out", type=Path, default=Path("report.csv"))
    bench.set_defaults(handler=cmd_benchmark)

    summ = sub.add_parser(
        "summarize", parents=[common], help="export summary-statistic vectors"
    )
    summ.add_argument("--data", type=Path, required=True)
    summ.add_argument("--spec", type=_summary_spec, default=SummarySpec())
    summ.add_argument("--out", type=Path, required=True)
    _add_preprocessing(summ, scaling=False)
    summ.set_defaults(handler=cmd_summarize)
    return parser


def _add_common(p: argparse.ArgumentParser, defaults: bool) -> None:
    """The global flags, also accepted after the subcommand"""

    def default(value):
        return value if defaults else argparse.SUPPRESS

    p.add_argument(
        "--seed", type=int, default=default(None), help="master random seed"
    )
    p.add_argument(
        "--threads",
        type=_positive_int,
        default=default(None),
        help="cap on parallel threads (default: all cores)",
    )
    p.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=default(0),
        help="-v for progress, -vv for solver detail",
    )


def _add_preprocessing(p: argparse.ArgumentParser, scaling: bool = True) -> None:
    p.add_argument(
        "--log-transform",
        type=_columns,
        default=[],
        metavar="COL[,COL...]",
        help="take the natural log of these feature columns",
    )
    if scaling:
        p.add_argument(
            "--no-standardize",
            dest="standardize",
            action="store_false",
            help="do not centre and scale the features",
        )
        p.add_argument(
            "--drop-constant",
            action="store_true",
            help="drop zero-variance features instead of failing",
        )


###############
# SUBCOMMANDS #
###############


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = ScenarioConfig(
        scenario=args.scenario,
        n_bags=args.bags,
        instances_per_bag=args.instances,
        samples_per_instance=args.samples,
        p_pos=args.p_pos,
        seed=args.seed,
        d=args.dim,
    )
    labeled = generate(cfg)
    sidecar = save_labeled(labeled, args.out)
    ds = labeled.dataset
    print(
        f"{ds.n_bags} bags ({len(ds.positive_bags)} positive), "
        f"{ds.n_instances} instances, {ds.n_samples} samples -> {args.out}"
    )
    print(f"instance labels -> {sidecar}")
    return EXIT_OK


def _training_data(args: argparse.Namespace):
    ds = load_dataset(args.data)
    if args.log_transform:
        ds = log_transform(ds, args.log_transform)
    scaler = None
    if args.standardize:
        scaler = fit_scaler(ds, drop_constant=args.drop_constant)
        ds = apply_scaler(ds, scaler)
    return ds, scaler


def cmd_fit(args: argparse.Namespace) -> int:
    ds, scaler = _training_data(args)
    ds.require_both_classes()
    options = FitOptions(
        class_weighted=not args.unweighted,
        max_selector_updates=args.max_selector_updates,
        n_restarts=args.restarts,
        select_by=args.select_by,
        m1=args.m1,
        m2=args.m2,
        L=args.L,
        miqp_time_limit=args.time_limit,
        node_limit=args.node_limit,
        seed=args.seed,
    )
    method: MethodSpec = args.method
    if args.grid:
        plan = CvPlan(
            seed=args.seed,
            C_grid=tuple(args.C_grid or DEFAULT_C_GRID),
            sigma_grid=None if args.sigma_grid is None else tuple(args.sigma_grid),
            inner_k=args.inner_k,
        )
        tuned = tune_method(method, ds, plan, options, args.threads)
        model, C, sigma = tuned.model, tuned.C, tuned.sigma
        for (c, s), score in tuned.scores.items():
            logger.info("C=%g sigma=%g: inner AUROC %.4f", c, s, score)
    else:
        C = args.C
        sigma = args.sigma
        if sigma is None:
            inputs = kernel_inputs(method, ds, args.threads)
            sigma = sigma_grid(inputs, (1.0,))[0]
        model = fit_method(method, ds, C, sigma, options, args.threads)

    if args.dump_gram is not None:
        inputs = kernel_inputs(method, ds, args.threads)
        gm = gram(inputs, KernelSpec.gaussian(sigma), args.threads)
        dump_gram(gm, args.dump_gram, [i.instance_id for i in inputs])

    save_model(
        ModelFile(
            method=str(method),
            model=model,
            C=C,
            sigma=sigma,
            log_columns=tuple(args.log_transform),
            scaler=scaler,
        ),
        args.out,
    )
    print(f"{method}: C={C:g}, sigma={sigma:g} -> {args.out}")
    if isinstance(model, SummaryModel):
        print(f"summary features: {model.n_features}")
    solution = getattr(model, "solution", None) or getattr(
        getattr(model, "inner", None), "solution", None
    )
    if solution:
        print(
            f"MIQP status {solution['status']}, objective {solution['objective']:.6g}, "
            f"gap {solution['gap']:.3g}"
        )
    return EXIT_OK


def _bag_table(ds: Dataset, scores: np.ndarray, labels: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame(
        {
            BAG_COLUMN: [bag.bag_id for bag in ds.bags],
            "score": scores,
            "label": labels,
        }
    )


def cmd_predict(args: argparse.Namespace) -> int:
    mf = load_model(args.model)
    ds = mf.preprocess(load_dataset(args.data))
    labels, scores = predict_bags(mf.model, ds, args.threshold, args.threads)
    table = _bag_table(ds, scores, labels)
    if args.out is None:
        table.to_csv(sys.stdout, index=False, float_format="%.17g")
    else:
        table.to_csv(args.out, index=False, float_format="%.17g")
    return EXIT_OK


def cmd_benchmark(args: argparse.Namespace) -> int:
    cfg = BenchmarkConfig.load(args.config)
    if args.seed is not None:
        plan = dataclasses.replace(cfg.plan, seed=args.seed)
        cfg = dataclasses.replace(cfg, seed=args.seed, plan=plan)
    report = run_benchmark(cfg, args.out, args.threads)
    summary_path = args.out.with_name(args.out.stem + ".summary.csv")
    report.summary.to_csv(summary_path, index=False, float_format="%.6g")
    print(format_summary(report, cfg))
    print(f"rows -> {args.out}; summary -> {summary_path}")
    return EXIT_OK


def cmd_summarize(args: argparse.Namespace) -> int:
    ds = load_dataset(args.data)
    if args.log_transform:
        ds = log_transform(ds, args.log_transform)
    out = export_summaries(ds, args.spec, args.out)
    print(f"{out.n_instances} instances x {out.dim} summary features -> {args.out}")
    return EXIT_OK


########
# MAIN #
########


def _configure_logging(verbosity: int) -> None:
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbosity, logging.DEBUG)
    logging.basicConfig(
        level=level,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run the command line and return its exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _configure_logging(args.verbose)
    set_default_threads(args.threads)
    try:
        return args.handler(args)
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_INTERRUPTED
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MismmException as e:
        print(f"failed: {e}", file=sys.stderr)
        return EXIT_FAILURE
    finally:
        set_default_threads(None)


def run() -> None:
    sys.exit(main())
