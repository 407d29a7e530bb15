"""Command-line interface: ``deconvolve estimate | simulate | bandwidth``.

Exit codes: 0 success, 2 input or validation error, 3 numerical failure,
4 internal invariant breach. Failures print one line to stderr of the form
``deconvolve: error[<category>]: <detail>``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import math
import os
import sys
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .bandwidth import (
    ROT_DERIVATION,
    ROT_PRINTED,
    LambdaSearchSpec,
    build_lambda_grid,
    rot_bandwidth_y,
    rot_inflation,
    rot_lambda1,
    select_lambda1_mise,
)
from .errors import (
    BoundaryWarning,
    DeconvolveError,
    ExperimentFailedError,
    IllConditionedError,
    InvalidInputError,
    KernelOverflowError,
)
from .fourier import (
    DEFAULT_C0,
    Bandwidth,
    adjusted_dke_estimate,
    dke_estimate,
    dke_plugin_bandwidth,
    naive_kde,
)
from .model import (
    ContaminatedSample,
    DensityEstimate,
    EvaluationGrid,
    harmonic_mean_sigma,
    is_homoscedastic,
    mean_sigma,
)
from .simex import (
    build_plan,
    clip_nonnegative,
    simex_confidence_band,
    simex_estimate,
    simex_variance,
)
from .simlab import LAMBDA_RULES, ExperimentPlan, run_experiment

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3
EXIT_INTERNAL = 4

METHODS = ("simex", "dke", "adjusted-dke", "naive")


class CliError(Exception):
    def __init__(self, category, message, code):
        super().__init__(message)
        self.category = category
        self.code = code


def input_error(message):
    return CliError("input", message, EXIT_INPUT)


# --------------------------------------------------------------------------- IO


def _is_number(text):
    try:
        float(text)
    except ValueError:
        return False
    return True


def read_sample(path, sigma: Optional[float] = None) -> ContaminatedSample:
    """Read ``y,sigma`` rows from a CSV file.

    A first row that is not numeric is taken as a header; blank lines and
    lines starting with ``#`` are skipped. A single-column file needs a
    global ``sigma``.

    Raises
    ------
    InvalidInputError
        With the offending line number for malformed rows or ``sigma <= 0``.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from None
    ys: List[float] = []
    sigmas: List[float] = []
    columns = None
    y_col, s_col = 0, 1
    header_seen = False
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        cells = [c.strip() for c in row]
        if not cells or all(c == "" for c in cells) or cells[0].startswith("#"):
            continue
        if not ys and not header_seen and not _is_number(cells[0]):
            header_seen = True
            names = [c.lower() for c in cells]
            if "y" in names:
                y_col = names.index("y")
            if "sigma" in names:
                s_col = names.index("sigma")
            elif len(names) == 1:
                s_col = None
            continue
        if columns is None:
            columns = len(cells)
            if columns == 1:
                s_col = None
        if len(cells) != columns:
            raise InvalidInputError(
                f"{path}:{lineno}: expected {columns} columns, found {len(cells)}"
            )
        try:
            y = float(cells[y_col])
        except (ValueError, IndexError):
            raise InvalidInputError(f"{path}:{lineno}: y value {cells[y_col]!r} is not a number") from None
        if not math.isfinite(y):
            raise InvalidInputError(f"{path}:{lineno}: y value must be finite")
        if s_col is None or s_col >= len(cells):
            if sigma is None:
                raise InvalidInputError(
                    f"{path}:{lineno}: no sigma column; pass a global --sigma for single-column files"
                )
            s = float(sigma)
        else:
            try:
                s = float(cells[s_col])
            except ValueError:
                raise InvalidInputError(
                    f"{path}:{lineno}: sigma value {cells[s_col]!r} is not a number"
                ) from None
        if not (math.isfinite(s) and s > 0):
            raise InvalidInputError(f"{path}:{lineno}: sigma must be > 0 (got {s!r})")
        ys.append(y)
        sigmas.append(s)
    if not ys:
        raise InvalidInputError(f"{path}: no data rows")
    if sigma is not None and s_col is not None and columns and columns > 1:
        raise InvalidInputError(f"{path}: file has a sigma column; drop the global --sigma")
    return ContaminatedSample(np.array(ys), np.array(sigmas))


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def atomic_write(path, text: str) -> None:
    """Write ``text`` to a temp file next to ``path`` and rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def estimate_to_csv(est: DensityEstimate) -> str:
    lines = ["t,fhat,variance,lo,hi"]
    var = est.variance
    lo, hi = est.band if est.band is not None else (None, None)
    for i, t in enumerate(est.grid.points):
        lines.append(
            ",".join(
                [
                    _fmt(t),
                    _fmt(est.values[i]),
                    _fmt(None if var is None else var[i]),
                    _fmt(None if lo is None else lo[i]),
                    _fmt(None if hi is None else hi[i]),
                ]
            )
        )
    return "\n".join(lines) + "\n"


def manifest_path(output) -> Path:
    return Path(str(output) + ".manifest.json")


def write_manifest(output, doc: dict) -> None:
    atomic_write(manifest_path(output), json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# ----------------------------------------------------------------------- config


@dataclass
class RunConfig:
    """Resolved options for one CLI run (defaults < ``--config`` file < flags)."""

    command: str
    input: Optional[str] = None
    output: Optional[str] = None
    method: str = "simex"
    sigma: Optional[float] = None
    grid_points: int = 512
    grid_range: Optional[List[float]] = None
    lambda_rule: str = "rot"
    lambda1: Optional[float] = None
    s: int = 50
    span: float = 3.0
    lambda_lower: float = 1e-3
    lambda_upper: float = 20.0
    lambda_tol: float = 1e-4
    level: float = 0.95
    seed: int = 0
    a0: float = 1.06
    c0: float = DEFAULT_C0
    bandwidth: Optional[float] = None
    clip: bool = False
    threads: int = 1
    replicates: Optional[int] = None
    text_output: Optional[str] = None

    def validate(self) -> None:
        problems = []
        if self.method not in METHODS:
            problems.append(f"method must be one of {list(METHODS)}")
        if self.lambda_rule not in LAMBDA_RULES:
            problems.append(f"lambda rule must be one of {list(LAMBDA_RULES)}")
        if self.lambda_rule == "explicit" and not (self.lambda1 is not None and self.lambda1 > 0):
            problems.append("--lambda-rule explicit needs --lambda1 > 0")
        if self.grid_points < 2:
            problems.append("--grid-points must be >= 2")
        if self.grid_range is not None and not (
            len(self.grid_range) == 2 and self.grid_range[0] < self.grid_range[1]
        ):
            problems.append("--grid-range needs LO < HI")
        if self.s < 3:
            problems.append("--s must be >= 3")
        if not self.span > 0:
            problems.append("--span must be > 0")
        if not 0 < self.level < 1:
            problems.append("--level must lie in (0, 1)")
        if not self.a0 > 0:
            problems.append("--a0 must be > 0")
        if not self.c0 > 0:
            problems.append("--c0 must be > 0")
        if self.bandwidth is not None and not self.bandwidth > 0:
            problems.append("--bandwidth must be > 0")
        if self.sigma is not None and not self.sigma > 0:
            problems.append("--sigma must be > 0")
        if self.threads < 1:
            problems.append("--threads must be >= 1")
        if self.input is None:
            problems.append("--input is required")
        elif not Path(self.input).exists():
            problems.append(f"input file {self.input} does not exist")
        if self.command in ("estimate", "simulate") and self.output is None:
            problems.append("--output is required")
        if problems:
            raise input_error("; ".join(problems))

    def search_spec(self) -> LambdaSearchSpec:
        try:
            return LambdaSearchSpec(
                lower=self.lambda_lower,
                upper=self.lambda_upper,
                tol=self.lambda_tol,
                s=self.s,
                span=self.span,
            )
        except InvalidInputError as exc:
            raise input_error(str(exc)) from None


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}


def resolve_config(args: argparse.Namespace) -> RunConfig:
    values = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise input_error(f"cannot load config {args.config}: {exc}") from None
        unknown = sorted(set(doc) - _FIELDS)
        if unknown:
            raise input_error(f"unknown config keys {unknown}")
        values.update({k.replace("-", "_"): v for k, v in doc.items()})
    for key, value in vars(args).items():
        if key in _FIELDS and value is not None:
            values[key] = value
    values["command"] = args.command
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


# --------------------------------------------------------------------- commands


def _lambda1(cfg: RunConfig, sample: ContaminatedSample):
    """Return ``(lambda_1, details)`` under the configured rule."""
    if cfg.lambda_rule == "explicit":
        return float(cfg.lambda1), {}
    if cfg.lambda_rule == "mise":
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", BoundaryWarning)
            sel = select_lambda1_mise(cfg.search_spec())
        return sel.lambda1, {
            "mise_objective": sel.objective,
            "mise_at_boundary": sel.at_boundary,
            "warnings": [str(w.message) for w in caught],
        }
    sd_y = float(np.std(sample.y, ddof=1))
    h_y = rot_bandwidth_y(sample, cfg.a0)
    form = ROT_PRINTED if cfg.lambda_rule == "rot-printed" else ROT_DERIVATION
    return rot_lambda1(sd_y, mean_sigma(sample), h_y, form), {"h_y_rot": h_y}


def _grid(cfg: RunConfig, sample: ContaminatedSample) -> EvaluationGrid:
    if cfg.grid_range is not None:
        return EvaluationGrid.linspace(cfg.grid_range[0], cfg.grid_range[1], cfg.grid_points)
    return EvaluationGrid.padded(sample, cfg.grid_points)


def cmd_estimate(cfg: RunConfig) -> int:
    sample = read_sample(cfg.input, cfg.sigma)
    grid = _grid(cfg, sample)
    resolved = {}
    if cfg.method == "simex":
        if sample.n < 2 and cfg.lambda_rule.startswith("rot"):
            raise input_error("the rule-of-thumb lambda_1 needs at least 2 observations")
        lam1, details = _lambda1(cfg, sample)
        lgrid = build_lambda_grid(lam1, cfg.search_spec())
        plan = build_plan(lgrid)
        est = simex_estimate(sample, lgrid, grid)
        est = est.replace(variance=simex_variance(est.values, sample, plan))
        est = simex_confidence_band(est, cfg.level)
        resolved.update(
            lambda1=lam1,
            lambdas=lgrid.lambdas.tolist(),
            variance_factor=plan.variance_factor,
            sigma_h=harmonic_mean_sigma(sample),
            **details,
        )
    elif cfg.method == "naive":
        h = cfg.bandwidth if cfg.bandwidth is not None else rot_bandwidth_y(sample, cfg.a0)
        est = naive_kde(sample, Bandwidth(h), grid)
        resolved["bandwidth"] = h
    else:
        if cfg.method == "dke" and not is_homoscedastic(sample):
            raise input_error(
                "method 'dke' needs a common error SD but the sample is heteroscedastic; "
                "use --method adjusted-dke"
            )
        h = Bandwidth(cfg.bandwidth) if cfg.bandwidth is not None else dke_plugin_bandwidth(sample, cfg.c0)
        if cfg.method == "dke":
            est = dke_estimate(sample, h, float(sample.sigma[0]), grid)
        else:
            est = adjusted_dke_estimate(sample, h, grid)
        resolved["bandwidth"] = h.h
    if cfg.clip:
        est = clip_nonnegative(est)
    atomic_write(cfg.output, estimate_to_csv(est))
    write_manifest(
        cfg.output,
        {
            "tool": "deconvolve",
            "version": __version__,
            "config": dataclasses.asdict(cfg),
            "input_sha256": _file_digest(cfg.input),
            "n": sample.n,
            "grid": {"points": len(grid), "lo": float(grid.points[0]), "hi": float(grid.points[-1])},
            "resolved": resolved,
        },
    )
    return EXIT_OK


def load_plan(path) -> ExperimentPlan:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise input_error(f"cannot load plan {path}: {exc}") from None
    return ExperimentPlan.from_dict(doc)


def cmd_simulate(cfg: RunConfig, overrides: dict) -> int:
    plan = load_plan(cfg.input)
    if overrides:
        plan = ExperimentPlan.from_dict({**plan.to_dict(), **overrides})
    table = run_experiment(plan, workers=cfg.threads)
    text_out = cfg.text_output or str(Path(cfg.output).with_suffix(".txt"))
    atomic_write(cfg.output, table.to_csv())
    atomic_write(text_out, table.to_text())
    write_manifest(
        cfg.output,
        {
            "tool": "deconvolve",
            "version": __version__,
            "plan": plan.to_dict(),
            "plan_sha256": _file_digest(cfg.input),
            "text_output": text_out,
        },
    )
    return EXIT_OK


def bandwidth_report(cfg: RunConfig, sample: ContaminatedSample) -> str:
    sd_y = float(np.std(sample.y, ddof=1))
    sig_bar = mean_sigma(sample)
    h_y = rot_bandwidth_y(sample, cfg.a0)
    lam_rot = rot_lambda1(sd_y, sig_bar, h_y, ROT_DERIVATION)
    lam_printed = rot_lambda1(sd_y, sig_bar, h_y, ROT_PRINTED)
    spec = cfg.search_spec()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", BoundaryWarning)
        mise = select_lambda1_mise(spec)
    chosen = {
        "rot": lam_rot,
        "rot-printed": lam_printed,
        "mise": mise.lambda1,
        "explicit": cfg.lambda1,
    }[cfg.lambda_rule]
    grid = build_lambda_grid(chosen, spec)
    pairs = [
        ("n", sample.n),
        ("sigma_y", sd_y),
        ("sigma_u_mean", sig_bar),
        ("sigma_h", harmonic_mean_sigma(sample)),
        ("a0", cfg.a0),
        ("h_y_rot", h_y),
        ("c0_rot", rot_inflation(sd_y, sig_bar)),
        ("lambda1_rot", lam_rot),
        ("lambda1_rot_printed", lam_printed),
        ("lambda1_mise", mise.lambda1),
        ("mise_objective", mise.objective),
        ("mise_at_boundary", "true" if mise.at_boundary else "false"),
        ("dke_plugin_h", dke_plugin_bandwidth(sample, cfg.c0).h if sample.n >= 2 else None),
        ("lambda_rule", cfg.lambda_rule),
        ("lambda1", chosen),
        ("lambda_grid", ",".join(repr(float(v)) for v in grid.lambdas)),
    ]
    out = []
    for key, value in pairs:
        if isinstance(value, float):
            value = repr(value)
        out.append(f"{key}={value}")
    return "\n".join(out) + "\n"


def cmd_bandwidth(cfg: RunConfig) -> int:
    sample = read_sample(cfg.input, cfg.sigma)
    if sample.n < 2:
        raise input_error("bandwidth selection needs at least 2 observations")
    report = bandwidth_report(cfg, sample)
    if cfg.output:
        atomic_write(cfg.output, report)
    else:
        sys.stdout.write(report)
    return EXIT_OK


# ----------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deconvolve",
        description="Density deconvolution for data with heteroscedastic Gaussian measurement error.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, input_help):
        p.add_argument("--input", help=input_help)
        p.add_argument("--config", help="JSON file of option values; command-line flags override it")
        p.add_argument("--seed", type=int, help="seed recorded in the manifest; simulate: plan seed override")

    def data_opts(p):
        p.add_argument("--sigma", type=float, help="global error SD for single-column input files")
        p.add_argument(
            "--a0", type=float, help="rule-of-thumb factor a0 in a0*min(sd, IQR/1.34)*n^(-1/5) (default 1.06)"
        )
        p.add_argument(
            "--lambda-rule",
            choices=LAMBDA_RULES,
            help="lambda_1 selector: 'rot' solves mean(sigma)*sqrt(lambda_1) = c0*h_rot exactly; "
            "'rot-printed' omits the square on h_rot (not scale invariant; the simulation-plan default); "
            "'mise' minimises the variance constant c Sigma c; 'explicit' uses --lambda1 (default rot)",
        )
        p.add_argument("--lambda1", type=float, help="explicit smallest noise-inflation level lambda_1 > 0")
        p.add_argument("--s", type=int, help="number of lambda levels (default 50)")
        p.add_argument("--span", type=float, help="lambda_s - lambda_1 (default 3)")
        p.add_argument("--lambda-lower", type=float, help="lower bound of the mise search (default 1e-3)")
        p.add_argument("--lambda-upper", type=float, help="upper bound of the mise search (default 20)")
        p.add_argument("--lambda-tol", type=float, help="tolerance of the mise search (default 1e-4)")
        p.add_argument(
            "--c0", type=float, help="factor in the deconvoluting plug-in bandwidth c0*sigma/sqrt(log n) (default 1.05)"
        )

    est = sub.add_parser("estimate", help="estimate the error-free density from a y,sigma CSV file")
    common(est, "CSV file with columns y,sigma (header optional)")
    data_opts(est)
    est.add_argument("--output", help="output CSV with columns t,fhat,variance,lo,hi")
    est.add_argument(
        "--method",
        choices=METHODS,
        help="simex (default); dke (common error SD only); adjusted-dke (heteroscedastic); "
        "naive (kernel estimate ignoring the error)",
    )
    est.add_argument("--grid-points", type=int, help="number of evaluation points (default 512)")
    est.add_argument(
        "--grid-range",
        type=float,
        nargs=2,
        metavar=("LO", "HI"),
        help="evaluation range (default: data range padded by 4*(sd(y) + max sigma))",
    )
    est.add_argument("--level", type=float, help="confidence level of the SIMEX pointwise band (default 0.95)")
    est.add_argument("--bandwidth", type=float, help="explicit bandwidth h for dke, adjusted-dke and naive")
    est.add_argument(
        "--clip", action="store_true", default=None, help="replace negative density values by zero"
    )

    sim = sub.add_parser("simulate", help="run a replicated simulation plan and summarise ISE")
    common(sim, "plan JSON file (alias of --plan)")
    sim.add_argument("--plan", dest="input", help="plan JSON file")
    sim.add_argument("--output", help="summary CSV (estimator,mean_ise,se_ise,replicates,exclusions)")
    sim.add_argument("--text-output", help="aligned text table (default: output with .txt suffix)")
    sim.add_argument("--replicates", type=int, help="override the plan's replicate count")
    sim.add_argument("--threads", type=int, help="worker threads for replicates; output does not depend on it")

    bw = sub.add_parser("bandwidth", help="report rule-of-thumb and mise lambda_1 selections")
    common(bw, "CSV file with columns y,sigma (header optional)")
    data_opts(bw)
    bw.add_argument("--output", help="write the key=value report here instead of stdout")
    return parser


def _dispatch(args) -> int:
    cfg = resolve_config(args)
    if args.command == "estimate":
        return cmd_estimate(cfg)
    if args.command == "simulate":
        overrides = {}
        if args.replicates is not None:
            overrides["replicates"] = args.replicates
        if args.seed is not None:
            overrides["seed"] = args.seed
        return cmd_simulate(cfg, overrides)
    return cmd_bandwidth(cfg)


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _dispatch(args)
    except CliError as exc:
        category, code, detail = exc.category, exc.code, str(exc)
    except (KernelOverflowError, IllConditionedError, ExperimentFailedError, ArithmeticError) as exc:
        category, code, detail = "numerical", EXIT_NUMERICAL, str(exc)
    except InvalidInputError as exc:
        category, code, detail = "input", EXIT_INPUT, str(exc)
    except (DeconvolveError, AssertionError) as exc:
        category, code, detail = "internal", EXIT_INTERNAL, str(exc)
    detail = " ".join(detail.split())
    print(f"deconvolve: error[{category}]: {detail}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
