"""Command-line driver.

    kmslift w2-table        two-point functions on a (dU, dV) grid
    kmslift images-converge image sum against the closed cylinder kernel
    kmslift kms-verify      detailed balance + complex-time continuation
    kmslift functor-check   covariance laws on seeded random inputs

Exit status: 0 pass, 1 verification failure, 2 usage or configuration error.
Artifacts go to ``--out`` or, failing that, to ``$KMSLIFT_OUTPUT_DIR``
(default: the working directory) as ``<command>.<format>``.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from .correlators import (
    SeriesSpec,
    CorrelatorKernel,
    dd_cylinder_closed,
    dd_image_sum,
    w2_cylinder_vacuum,
    w2_plane_vacuum,
)
from .covariance import (
    AlgebraElement,
    EmbeddingMorphism,
    QuasiFreeState,
    alpha_apply,
    commutation_check,
    compose,
    generator_deviation,
    state_pullback,
)
from .errors import KMSLiftError
from .geometry import TWO_PI, Chart, Diamond, SpacetimePoint
from .kms import (
    bandwidth_cutoff,
    correlator_timeseries,
    kms_check,
    lifted_kms_check,
    positive_frequency_check,
    time_grid,
)
from .smearing import bump_pair_in

OUTPUT_ENV = "KMSLIFT_OUTPUT_DIR"
DEFAULT_FORMAT = {"w2-table": "csv", "images-converge": "csv",
                  "kms-verify": "json", "functor-check": "json"}
W2_KERNELS = ("plane-vacuum", "cylinder-vacuum")
KMS_KERNELS = ("plane-thermal", "plane-vacuum")
BRANCH_TOLERANCE = 1e-10
PIPELINE_TOLERANCE = 1e-12
LAW_TOLERANCE = 1e-10
FUNCTOR_SAMPLES = 50


# ---------------------------------------------------------------------------
# serialisation


def _num(x) -> str:
    return format(float(x), ".17g")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (complex, np.complexfloating)):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        # JSON has no infinities; spell them out
        return x if math.isfinite(x) else repr(x)
    return obj


def render_json(config: dict, results: dict, passed: bool) -> str:
    doc = {"config": config, "results": results, "pass": bool(passed)}
    return json.dumps(_jsonable(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def render_csv(config: dict, header, rows, passed: bool) -> str:
    """Config and verdict as leading '#' lines, then a header row and data."""
    lines = [f"# config {k}={json.dumps(_jsonable(config[k]))}" for k in sorted(config)]
    lines.append(f"# pass={'true' if passed else 'false'}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(_num(v) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


def write_atomic(path: str, text: str):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".kmslift-", dir=directory)
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def output_path(args) -> str:
    if args.out:
        return args.out
    base = os.environ.get(OUTPUT_ENV) or "."
    return os.path.join(base, f"{args.command}.{args.format}")


# ---------------------------------------------------------------------------
# argument handling


def parse_grid(text: str):
    """'lo:hi:n' -> (lo, hi, n)."""
    try:
        lo, hi, n = text.split(":")
        lo, hi, n = float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like lo:hi:n, got {text!r}") from None
    if n < 2 or not (math.isfinite(lo) and math.isfinite(hi) and hi > lo):
        raise argparse.ArgumentTypeError(f"grid needs finite lo < hi and n >= 2, got {text!r}")
    return lo, hi, n


def _positive(text: str) -> float:
    x = float(text)
    if not x > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return x


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--period", type=_positive, default=TWO_PI, help="cylinder circumference L")
    common.add_argument("--beta", type=_positive, default=None, help="inverse temperature (inf allowed)")
    common.add_argument("--epsilon", type=_positive, default=1e-8, help="i-epsilon regulator")
    common.add_argument("--series-n", type=int, default=10_000, help="image-sum truncation N")
    common.add_argument("--tail-correction", action="store_true", help="add the Euler-Maclaurin tail")
    common.add_argument("--lifted", action="store_true", help="verify the pulled-back cylinder state")
    common.add_argument("--branch", type=int, default=0, help="deck branch of the inverse covering map")
    common.add_argument("--grid", type=parse_grid, default=None, help="lo:hi:n")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="artifact path")
    common.add_argument("--format", choices=("csv", "json"), default=None)
    common.add_argument("--kernel", default=None)

    parser = argparse.ArgumentParser(prog="kmslift", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("w2-table", parents=[common], help="tabulate W on a (dU, dV) grid")
    p = sub.add_parser("images-converge", parents=[common], help="image-sum convergence study")
    p.add_argument("--delta", type=float, default=None, help="separation (default: seeded random)")
    sub.add_parser("kms-verify", parents=[common], help="KMS verification")
    sub.add_parser("functor-check", parents=[common], help="covariance law suite")
    return parser


def _validate(parser, args):
    if args.format is None:
        args.format = DEFAULT_FORMAT[args.command]
    if args.series_n < 1:
        parser.error("--series-n must be >= 1")
    if args.command == "w2-table":
        if args.kernel is not None and args.kernel not in W2_KERNELS + ("both",):
            parser.error(f"--kernel for w2-table must be one of {W2_KERNELS + ('both',)}")
    if args.command == "kms-verify":
        if args.lifted:
            if args.kernel not in (None, "plane-thermal"):
                parser.error("--lifted pulls back the plane thermal state; drop --kernel")
            args.kernel = "plane-thermal"
        args.kernel = args.kernel or "plane-thermal"
        if args.kernel not in KMS_KERNELS:
            parser.error(f"--kernel for kms-verify must be one of {KMS_KERNELS}")
        if args.kernel == "plane-thermal" and (args.beta is None or math.isinf(args.beta)):
            parser.error("a thermal kernel needs a finite --beta")


def config_of(args) -> dict:
    """Everything that determines the artifact; the output location does not."""
    cfg = {k: v for k, v in vars(args).items() if k not in ("out",)}
    if cfg.get("grid") is not None:
        cfg["grid"] = list(cfg["grid"])
    return cfg


# ---------------------------------------------------------------------------
# commands


def _random_pair(rng, region: Diamond):
    """Two bump test functions inside ``region``; radii keep supports inside."""
    fs = []
    for _ in range(2):
        du, dv = rng.uniform(-0.1, 0.1, size=2)
        ru, rv = rng.uniform(0.2, 0.35, size=2)
        fs.append(bump_pair_in(region, float(du), float(dv), float(ru), float(rv)))
    return fs


def cmd_w2_table(args):
    L, eps = args.period, args.epsilon
    lo, hi, n = args.grid or (-0.5 * L, 0.5 * L, 9)
    axis = np.linspace(lo, hi, n)
    kernels = W2_KERNELS if args.kernel in (None, "both") else (args.kernel,)
    rows = []
    for kind in kernels:
        for dU in axis:
            for dV in axis:
                if kind == "plane-vacuum":
                    w = complex(w2_plane_vacuum(dU, dV, eps))
                    # the eps -> 0 limit diverges on the light cone
                    singular = dU == 0 or dV == 0
                else:
                    w = complex(w2_cylinder_vacuum(dU, dV, L, eps))
                    singular = any(abs(d / L - round(d / L)) < 1e-12 for d in (dU, dV))
                rows.append((kind, float(dU), float(dV), float(eps), w.real, w.imag, int(singular)))
    header = ("kernel", "dU", "dV", "eps", "re_w", "im_w", "singular")
    results = {"columns": list(header), "rows": [list(r) for r in rows]}
    return header, rows, results, True


def cmd_images_converge(args):
    L, eps = args.period, args.epsilon
    rng = np.random.default_rng(args.seed)
    delta = args.delta if args.delta is not None else float(rng.uniform(0.05, 0.95) * L)
    if abs(delta / L - round(delta / L)) < 1e-12:
        raise ValueError(f"delta = {delta} lies on the image lattice {L} Z")
    lo, hi, n = args.grid or (2.0, 5.0, 7)
    Ns = sorted(set(int(round(10.0**k)) for k in np.linspace(lo, hi, n)))
    exact = complex(dd_cylinder_closed(delta, L, eps))
    rows = []
    for N in Ns:
        raw = complex(dd_image_sum(delta, L, eps, SeriesSpec(N, "none")))
        cor = complex(dd_image_sum(delta, L, eps, SeriesSpec(N, "integral")))
        rows.append((N, abs(raw - exact) / abs(exact), abs(cor - exact) / abs(exact)))
    logN = np.log([r[0] for r in rows])
    slope = float(np.polyfit(logN, np.log([r[1] for r in rows]), 1)[0])
    tail = "integral" if args.tail_correction else "none"
    head = complex(dd_image_sum(delta, L, eps, SeriesSpec(args.series_n, tail)))
    head_err = abs(head - exact) / abs(exact)
    ok = abs(slope + 1.0) <= 0.1 and (not args.tail_correction or head_err < 1e-8)
    header = ("N", "raw_error", "corrected_error")
    results = {
        "delta": delta, "exact": exact, "rawExponent": slope,
        "headline": {"N": args.series_n, "tail": tail, "relativeError": head_err},
        "rows": [list(r) for r in rows],
    }
    return header, rows, results, ok


def _kms_rows(report):
    return [(float(w), float(r)) for w, r in zip(report.frequencies, report.residuals)]


def cmd_kms_verify(args):
    rng = np.random.default_rng(args.seed)
    beta = args.beta
    times = None
    if args.grid is not None:
        lo, hi, n = args.grid
        times = np.linspace(lo, hi, n)
    header = ("omega", "residual")

    if args.lifted:
        cyl = Chart.cylinder(args.period)
        region = Diamond(SpacetimePoint(0.0, float(rng.uniform(0.0, args.period)), cyl), 0.5, 0.5)
        f, g = _random_pair(rng, region)
        report, pipeline = lifted_kms_check(f, g, beta, args.branch, times=times)
        results = report.to_dict()
        results["pipelineDeviation"] = pipeline
        ok = report.passed and pipeline <= PIPELINE_TOLERANCE
        if args.branch != 0:
            ref, _ = lifted_kms_check(f, g, beta, 0, times=times)
            diff = max(abs(report.max_residual - ref.max_residual),
                       float(np.max(np.abs(report.residuals - ref.residuals)))
                       if report.residuals.shape == ref.residuals.shape else math.inf)
            results["branchAgreement"] = {"reference": 0, "deviation": diff,
                                          "tolerance": BRANCH_TOLERANCE,
                                          "pass": diff <= BRANCH_TOLERANCE}
        return header, _kms_rows(report), results, ok

    region = Diamond(SpacetimePoint(0.0, 1.0), 0.5, 0.5)
    f, g = _random_pair(rng, region)
    if args.kernel == "plane-vacuum":
        state = QuasiFreeState.plane(CorrelatorKernel.plane_vacuum(epsilon=args.epsilon))
        times = time_grid(30.0, 0.01) if times is None else times
        C, _ = correlator_timeseries(state, f, g, times, decay_tol=1e-3)
        cutoff = bandwidth_cutoff(f, g)
        value = positive_frequency_check(times, C, cutoff)
        results = {"negativeFrequencyLeak": value, "cutoff": cutoff, "tolerance": 1e-4,
                   "f": f.describe(), "g": g.describe()}
        return ("quantity", "value"), [("negative_frequency_leak", value)], results, value < 1e-4

    state = QuasiFreeState.plane(CorrelatorKernel.plane_thermal(beta, epsilon=args.epsilon))
    times = time_grid(2.0 + 4.0 * beta, 0.005) if times is None else times
    report = kms_check(state, f, g, times)
    return header, _kms_rows(report), report.to_dict(), report.passed


def cmd_functor_check(args):
    rng = np.random.default_rng(args.seed)
    L = args.period
    cyl = Chart.cylinder(L)
    laws = {}

    def record(name, value):
        laws[name] = max(laws.get(name, 0.0), float(value))

    def cyl_pair():
        region = Diamond(SpacetimePoint(float(rng.uniform(-1, 1)), float(rng.uniform(0, L)), cyl), 0.5, 0.5)
        return _random_pair(rng, region)

    def plane_pair():
        region = Diamond(SpacetimePoint(float(rng.uniform(-1, 1)), float(rng.uniform(-3, 3))), 0.5, 0.5)
        return _random_pair(rng, region)

    beta = args.beta if args.beta is not None and math.isfinite(args.beta) else 1.0
    omega_p = QuasiFreeState.plane(CorrelatorKernel.plane_thermal(beta))
    for _ in range(FUNCTOR_SAMPLES):
        fp, gp = plane_pair()
        fc, gc = cyl_pair()
        a_p = AlgebraElement.field(fp) * AlgebraElement.field(gp)
        a_c = AlgebraElement.field(fc) * AlgebraElement.field(gc)
        n1, n2 = (int(k) for k in rng.integers(-2, 3, size=2))
        t1, t2 = (float(t) for t in rng.uniform(-2.0, 2.0, size=2))

        record("identity", max(
            generator_deviation(alpha_apply(EmbeddingMorphism.identity(), a_p), a_p),
            generator_deviation(alpha_apply(EmbeddingMorphism.identity(cyl), a_c), a_c)))
        p1 = EmbeddingMorphism.plane_map(n1, t1, L)
        p2 = EmbeddingMorphism.plane_map(n2, t2, L)
        record("composition_plane", generator_deviation(
            alpha_apply(compose(p2, p1), a_p), alpha_apply(p2, alpha_apply(p1, a_p))))
        c1 = EmbeddingMorphism.cylinder_shift(t1, L)
        lift = EmbeddingMorphism.lift(L, n2, t2)
        record("composition_lift", generator_deviation(
            alpha_apply(compose(lift, c1), a_c), alpha_apply(lift, alpha_apply(c1, a_c))))
        record("unit_law", 0.0 if compose(EmbeddingMorphism.identity(), p1) == p1 else math.inf)
        record("commutation_diagram", commutation_check(fc, t1, n1)[1])
        record("commutation_tau0", commutation_check(fc, 0.0, n1)[1])

        via_composite = state_pullback(omega_p, compose(lift, c1)).evaluate(a_c)
        stepwise = state_pullback(state_pullback(omega_p, lift), c1).evaluate(a_c)
        record("pullback_contravariance", abs(via_composite - stepwise))
        omega_c = state_pullback(omega_p, EmbeddingMorphism.lift(L, 0))
        omega_c1 = state_pullback(omega_p, EmbeddingMorphism.lift(L, 1))
        record("pullback_branch_independence", abs(omega_c.evaluate(a_c) - omega_c1.evaluate(a_c)))
        record("positivity_transport", max(0.0, -omega_c.positivity(fc)))

    rows = [(name, laws[name], "true" if laws[name] <= LAW_TOLERANCE else "false") for name in sorted(laws)]
    results = {"samples": FUNCTOR_SAMPLES, "tolerance": LAW_TOLERANCE,
               "laws": {name: {"maxDeviation": v, "pass": v <= LAW_TOLERANCE} for name, v in laws.items()}}
    ok = all(v <= LAW_TOLERANCE for v in laws.values())
    return ("law", "max_deviation", "pass"), rows, results, ok


COMMANDS = {
    "w2-table": cmd_w2_table,
    "images-converge": cmd_images_converge,
    "kms-verify": cmd_kms_verify,
    "functor-check": cmd_functor_check,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    config = config_of(args)
    try:
        header, rows, results, ok = COMMANDS[args.command](args)
    except (ValueError, KMSLiftError) as exc:
        print(f"kmslift {args.command}: error: {exc}", file=sys.stderr)
        return 2
    if args.format == "json":
        text = render_json(config, results, ok)
    else:
        text = render_csv(config, header, rows, ok)
    path = output_path(args)
    write_atomic(path, text)
    print(f"{args.command}: {'pass' if ok else 'FAIL'} -> {path}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
