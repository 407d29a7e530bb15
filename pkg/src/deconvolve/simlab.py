"""Replicated simulation experiments comparing density estimators by ISE.

Each replicate draws ``X`` from a known density, contaminates it with
Gaussian error, fits the requested estimators and records their integrated
squared error against the true density. Random streams are derived from
``(seed, replicate, purpose)`` so any replicate can be reproduced on its own
and results do not depend on how replicates are scheduled.
"""

from __future__ import annotations

import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from scipy import stats

from .bandwidth import (
    ROT_DERIVATION,
    ROT_PRINTED,
    SCOTT_A0,
    LambdaSearchSpec,
    build_lambda_grid,
    rot_bandwidth_y,
    select_lambda1_mise,
    select_lambda1_rot,
)
from .errors import (
    DeconvolveError,
    ExperimentFailedError,
    PlanValidationError,
    SupportTruncationWarning,
)
from .fourier import (
    DEFAULT_C0,
    adjusted_dke_estimate,
    dke_estimate,
    dke_plugin_bandwidth,
    gaussian_kde_values,
)
from .kernels import DEFAULT_QUADRATURE, QuadratureSpec
from .model import ContaminatedSample, DensityEstimate, EvaluationGrid
from .simex import clip_nonnegative, simex_estimate

NORMAL = "normal"
GAMMA = "gamma"
MIXTURE = "mixture"

HOMOSCEDASTIC = "homoscedastic"
HETERO_UNIFORM = "hetero-uniform"

SIMEX = "simex"
DKE = "dke"
NAIVE = "naive"
ORACLE = "oracle"
ESTIMATORS = (SIMEX, ORACLE, NAIVE, DKE)

# Short column labels for the aligned text table.
TABLE_LABELS = {SIMEX: "SIMEX", ORACLE: "fx", NAIVE: "fy", DKE: "DKE"}

LAMBDA_RULES = ("rot", "rot-printed", "mise", "explicit")

# Stream purposes; the index is part of the seed sequence spawn key.
_X_DRAW, _SIGMA_DRAW, _NOISE_DRAW = 0, 1, 2

MAX_EXCLUDED_FRACTION = 0.10


@dataclass(frozen=True)
class TrueDensity:
    """Target density with a closed-form pdf and a sampler.

    Use the factories :meth:`normal`, :meth:`gamma` and :meth:`mixture`.
    """

    kind: str
    params: Tuple[Tuple[str, float], ...] = ()

    def __post_init__(self):
        p = dict(self.params)
        problems = []
        if self.kind == NORMAL:
            if not p.get("sd", 1.0) > 0:
                problems.append("normal sd must be > 0")
        elif self.kind == GAMMA:
            if not (p.get("shape", 2.0) > 0 and p.get("scale", 1.0) > 0):
                problems.append("gamma shape and scale must be > 0")
        elif self.kind == MIXTURE:
            if not 0 <= p.get("weight", 0.5) <= 1:
                problems.append("mixture weight must lie in [0, 1]")
            if not (p.get("sd1", 1.0) > 0 and p.get("sd2", 1.0) > 0):
                problems.append("mixture sds must be > 0")
        else:
            problems.append(f"unknown density kind {self.kind!r}")
        if problems:
            raise PlanValidationError(problems)

    @classmethod
    def normal(cls, mean: float = 0.0, sd: float = 1.0):
        return cls(NORMAL, (("mean", mean), ("sd", sd)))

    @classmethod
    def gamma(cls, shape: float = 2.0, scale: float = 1.0):
        return cls(GAMMA, (("shape", shape), ("scale", scale)))

    @classmethod
    def mixture(cls, weight=0.5, mean1=-2.0, sd1=1.0, mean2=2.0, sd2=1.0):
        return cls(
            MIXTURE,
            (("weight", weight), ("mean1", mean1), ("sd1", sd1), ("mean2", mean2), ("sd2", sd2)),
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "TrueDensity":
        kind = doc.get("kind")
        params = dict(doc.get("params") or {})
        factory = {NORMAL: cls.normal, GAMMA: cls.gamma, MIXTURE: cls.mixture}.get(kind)
        if factory is None:
            raise PlanValidationError([f"unknown density kind {kind!r}"])
        try:
            return factory(**{k: float(v) for k, v in params.items()})
        except TypeError as exc:
            raise PlanValidationError([f"bad parameters for density {kind!r}: {exc}"]) from None

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}

    def _dist(self):
        p = dict(self.params)
        if self.kind == NORMAL:
            return stats.norm(p["mean"], p["sd"])
        if self.kind == GAMMA:
            return stats.gamma(p["shape"], scale=p["scale"])
        return None

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == MIXTURE:
            p = dict(self.params)
            w = p["weight"]
            return w * stats.norm.pdf(x, p["mean1"], p["sd1"]) + (1 - w) * stats.norm.pdf(
                x, p["mean2"], p["sd2"]
            )
        return self._dist().pdf(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        p = dict(self.params)
        if self.kind == NORMAL:
            return p["mean"] + p["sd"] * rng.standard_normal(n)
        if self.kind == GAMMA:
            return rng.gamma(p["shape"], p["scale"], n)
        first = rng.random(n) < p["weight"]
        z = rng.standard_normal(n)
        return np.where(first, p["mean1"] + p["sd1"] * z, p["mean2"] + p["sd2"] * z)


def pdf(density: TrueDensity, x):
    return density.pdf(x)


def sample_true(density: TrueDensity, n: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise PlanValidationError(["n must be >= 1"])
    return density.sample(int(n), rng)


@dataclass(frozen=True)
class ErrorConfig:
    """Homoscedastic ``N(0, sigma_u^2)`` errors, or ``sigma_j ~ U(a, b)`` per observation."""

    mode: str
    sigma_u: float = 0.0
    a: float = 0.0
    b: float = 0.0

    def __post_init__(self):
        problems = []
        if self.mode == HOMOSCEDASTIC:
            if not self.sigma_u > 0:
                problems.append("homoscedastic sigma_u must be > 0")
        elif self.mode == HETERO_UNIFORM:
            if not 0 < self.a < self.b:
                problems.append("hetero-uniform errors need 0 < a < b")
        else:
            problems.append(f"unknown error mode {self.mode!r}")
        if problems:
            raise PlanValidationError(problems)

    @classmethod
    def homoscedastic(cls, sigma_u: float):
        return cls(HOMOSCEDASTIC, sigma_u=float(sigma_u))

    @classmethod
    def hetero_uniform(cls, a: float, b: float):
        return cls(HETERO_UNIFORM, a=float(a), b=float(b))

    @property
    def is_homoscedastic(self) -> bool:
        return self.mode == HOMOSCEDASTIC

    @classmethod
    def from_dict(cls, doc: dict) -> "ErrorConfig":
        mode = doc.get("mode")
        params = dict(doc.get("params") or {})
        try:
            if mode == HOMOSCEDASTIC:
                return cls.homoscedastic(float(params["sigma"]))
            if mode == HETERO_UNIFORM:
                return cls.hetero_uniform(float(params["a"]), float(params["b"]))
        except KeyError as exc:
            raise PlanValidationError([f"error mode {mode!r} is missing parameter {exc}"]) from None
        raise PlanValidationError([f"unknown error mode {mode!r}"])

    def to_dict(self) -> dict:
        if self.is_homoscedastic:
            return {"mode": self.mode, "params": {"sigma": self.sigma_u}}
        return {"mode": self.mode, "params": {"a": self.a, "b": self.b}}

    def label(self) -> str:
        if self.is_homoscedastic:
            return f"sigma_U={self.sigma_u:g}"
        return f"sigma_j~U({self.a:g},{self.b:g})"


def contaminate(
    x,
    errors: ErrorConfig,
    rng: np.random.Generator,
    sigma_rng: Optional[np.random.Generator] = None,
) -> ContaminatedSample:
    """Add ``N(0, sigma_j^2)`` noise; ``sigma_rng`` draws the SDs (defaults to ``rng``)."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if errors.is_homoscedastic:
        sigma = np.full(x.size, errors.sigma_u)
    else:
        sigma = (sigma_rng or rng).uniform(errors.a, errors.b, x.size)
    y = x + sigma * rng.standard_normal(x.size)
    return ContaminatedSample(y, sigma)


def ise(estimate: DensityEstimate, density: TrueDensity, tail_tol: float = 1e-6) -> float:
    """Trapezoid-rule ``int (f_hat - f)^2`` over the estimate's grid.

    Warns with :class:`SupportTruncationWarning` when the true density is
    still above ``tail_tol`` at either end of the grid.
    """
    x = estimate.grid.points
    f = density.pdf(x)
    if f[0] > tail_tol or f[-1] > tail_tol:
        warnings.warn(
            f"grid [{x[0]:.4g}, {x[-1]:.4g}] truncates the true density "
            f"(edge values {f[0]:.3g}, {f[-1]:.3g})",
            SupportTruncationWarning,
            stacklevel=2,
        )
    d = estimate.values - f
    return float(np.trapezoid(d * d, x))


@dataclass(frozen=True)
class ExperimentPlan:
    """One cell of a simulation study.

    ``lambda_rule`` is one of ``"rot"`` (exact rule-of-thumb solution),
    ``"rot-printed"`` (the unsquared variant, default),
    ``"mise"`` or ``"explicit"`` (uses ``lambda1``).
    """

    density: TrueDensity
    errors: ErrorConfig
    n: int
    replicates: int
    seed: int = 0
    estimators: Tuple[str, ...] = ESTIMATORS
    grid_points: int = 512
    grid_range: Optional[Tuple[float, float]] = None
    lambda_rule: str = "rot-printed"
    s: int = 50
    span: float = 3.0
    lambda1: Optional[float] = None
    a0: float = SCOTT_A0
    c0: float = DEFAULT_C0
    quadrature: QuadratureSpec = field(default=DEFAULT_QUADRATURE)

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if self.grid_range is not None:
            object.__setattr__(self, "grid_range", tuple(float(v) for v in self.grid_range))
        problems = self.problems()
        if problems:
            raise PlanValidationError(problems)

    def problems(self):
        out = []
        if not (isinstance(self.n, int) and self.n >= 2):
            out.append("n must be an integer >= 2")
        if not (isinstance(self.replicates, int) and self.replicates >= 2):
            out.append("replicates must be an integer >= 2 (standard errors need two)")
        if not isinstance(self.seed, int):
            out.append("seed must be an integer")
        if not self.estimators:
            out.append("at least one estimator is required")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            out.append(f"unknown estimators {unknown}; choose from {list(ESTIMATORS)}")
        if len(set(self.estimators)) != len(self.estimators):
            out.append("estimators must not repeat")
        if not (isinstance(self.grid_points, int) and self.grid_points >= 2):
            out.append("grid points must be an integer >= 2")
        if self.grid_range is not None and not (
            len(self.grid_range) == 2 and self.grid_range[0] < self.grid_range[1]
        ):
            out.append("grid range must be [lo, hi] with lo < hi")
        if self.lambda_rule not in LAMBDA_RULES:
            out.append(f"lambda rule must be one of {list(LAMBDA_RULES)}")
        if self.lambda_rule == "explicit" and not (self.lambda1 is not None and self.lambda1 > 0):
            out.append("explicit lambda rule needs lambda1 > 0")
        if not (isinstance(self.s, int) and self.s >= 3):
            out.append("s must be an integer >= 3")
        if not self.span > 0:
            out.append("span must be > 0")
        if not self.a0 > 0:
            out.append("a0 must be > 0")
        if not self.c0 > 0:
            out.append("c0 must be > 0")
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentPlan":
        """Build a plan from its JSON form, reporting every problem at once."""
        problems = []
        density = errors = None
        try:
            density = TrueDensity.from_dict(doc.get("density") or {})
        except PlanValidationError as exc:
            problems += exc.problems
        try:
            errors = ErrorConfig.from_dict(doc.get("errors") or {})
        except PlanValidationError as exc:
            problems += exc.problems
        for key in ("n", "replicates"):
            if key not in doc:
                problems.append(f"missing field {key!r}")
        grid = doc.get("grid") or {}
        lam = doc.get("lambda") or {}
        quad = doc.get("quadrature") or {}
        kwargs = dict(
            n=doc.get("n", 0),
            replicates=doc.get("replicates", 0),
            seed=doc.get("seed", 0),
            estimators=tuple(doc.get("estimators", ESTIMATORS)),
            grid_points=grid.get("points", 512),
            grid_range=grid.get("range"),
            lambda_rule=lam.get("rule", "rot-printed"),
            s=lam.get("s", 50),
            span=lam.get("span", 3.0),
            lambda1=lam.get("explicit"),
            a0=doc.get("a0", SCOTT_A0),
            c0=doc.get("c0", DEFAULT_C0),
        )
        try:
            kwargs["quadrature"] = QuadratureSpec(**quad)
        except (DeconvolveError, TypeError) as exc:
            problems.append(f"bad quadrature spec: {exc}")
        if density is None or errors is None or problems:
            # Collect the scalar-field problems too before giving up.
            probe = dict(kwargs)
            probe.pop("quadrature", None)
            problems += _scalar_problems(probe)
            raise PlanValidationError(problems)
        return cls(density, errors, **kwargs)

    def to_dict(self) -> dict:
        doc = {
            "density": self.density.to_dict(),
            "errors": self.errors.to_dict(),
            "n": self.n,
            "replicates": self.replicates,
            "seed": self.seed,
            "estimators": list(self.estimators),
            "grid": {"points": self.grid_points},
            "lambda": {"rule": self.lambda_rule, "s": self.s, "span": self.span},
            "a0": self.a0,
            "c0": self.c0,
            "quadrature": {
                "nodes": self.quadrature.nodes,
                "scheme": self.quadrature.scheme,
                "abs_tol": self.quadrature.abs_tol,
            },
        }
        if self.grid_range is not None:
            doc["grid"]["range"] = list(self.grid_range)
        if self.lambda1 is not None:
            doc["lambda"]["explicit"] = self.lambda1
        return doc


def _scalar_problems(kwargs):
    dummy = ExperimentPlan.__new__(ExperimentPlan)
    for key, value in kwargs.items():
        object.__setattr__(dummy, key, tuple(value) if key == "estimators" else value)
    return dummy.problems()


def replicate_stream(seed: int, replicate: int, purpose: int) -> np.random.Generator:
    """Philox stream keyed by ``(seed, replicate, purpose)``."""
    ss = np.random.SeedSequence(seed, spawn_key=(replicate, purpose))
    return np.random.Generator(np.random.Philox(ss))


def select_lambda1(plan: ExperimentPlan, sample: ContaminatedSample) -> float:
    if plan.lambda_rule == "explicit":
        return float(plan.lambda1)
    if plan.lambda_rule == "rot":
        return select_lambda1_rot(sample, plan.a0, ROT_DERIVATION)
    if plan.lambda_rule == "rot-printed":
        return select_lambda1_rot(sample, plan.a0, ROT_PRINTED)
    spec = _search_spec(plan)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return select_lambda1_mise(spec).lambda1


def _search_spec(plan):
    return LambdaSearchSpec(s=plan.s, span=plan.span)


@dataclass(frozen=True)
class ReplicateResult:
    index: int
    ise: dict
    failures: dict


def run_replicate(plan: ExperimentPlan, r: int) -> ReplicateResult:
    """Fit every requested estimator on replicate ``r`` and return their ISEs."""
    x = sample_true(plan.density, plan.n, replicate_stream(plan.seed, r, _X_DRAW))
    sample = contaminate(
        x,
        plan.errors,
        replicate_stream(plan.seed, r, _NOISE_DRAW),
        sigma_rng=replicate_stream(plan.seed, r, _SIGMA_DRAW),
    )
    if plan.grid_range is not None:
        grid = EvaluationGrid.linspace(*plan.grid_range, plan.grid_points)
    else:
        grid = EvaluationGrid.padded(sample, plan.grid_points)
    results, failures = {}, {}
    for name in plan.estimators:
        try:
            if name == SIMEX:
                lam1 = select_lambda1(plan, sample)
                est = clip_nonnegative(
                    simex_estimate(sample, build_lambda_grid(lam1, _search_spec(plan)), grid)
                )
            elif name == DKE:
                h = dke_plugin_bandwidth(sample, plan.c0)
                if plan.errors.is_homoscedastic:
                    est = dke_estimate(sample, h, plan.errors.sigma_u, grid, plan.quadrature)
                else:
                    est = adjusted_dke_estimate(sample, h, grid, plan.quadrature)
                est = clip_nonnegative(est)
            elif name == NAIVE:
                h = rot_bandwidth_y(sample.y, plan.a0)
                est = DensityEstimate(grid, gaussian_kde_values(sample.y, h, grid.points))
            else:
                h = rot_bandwidth_y(x, plan.a0)
                est = DensityEstimate(grid, gaussian_kde_values(x, h, grid.points))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", SupportTruncationWarning)
                results[name] = ise(est, plan.density)
        except (DeconvolveError, ArithmeticError) as exc:
            failures[name] = f"{type(exc).__name__}: {exc}"
    return ReplicateResult(r, results, failures)


@dataclass(frozen=True)
class SummaryRow:
    estimator: str
    mean_ise: float
    se_ise: float
    replicates: int
    exclusions: int


@dataclass(frozen=True)
class SummaryTable:
    plan: ExperimentPlan
    rows: Tuple[SummaryRow, ...]

    def row(self, estimator: str) -> SummaryRow:
        for r in self.rows:
            if r.estimator == estimator:
                return r
        raise KeyError(estimator)

    def mean(self, estimator: str) -> float:
        return self.row(estimator).mean_ise

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("estimator,mean_ise,se_ise,replicates,exclusions\n")
        for r in self.rows:
            buf.write(f"{r.estimator},{r.mean_ise!r},{r.se_ise!r},{r.replicates},{r.exclusions}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        """Aligned table: means on one line, standard errors in parentheses below."""
        p = self.plan
        labels = [TABLE_LABELS[r.estimator] for r in self.rows]
        width = 11
        lines = [
            f"Density: {p.density.kind}   errors: {p.errors.label()}   "
            f"replicates: {p.replicates}   seed: {p.seed}",
            f"{'n':>6}  " + "".join(f"{lab:>{width}}" for lab in labels),
            f"{p.n:>6}  " + "".join(f"{r.mean_ise:>{width}.5f}" for r in self.rows),
            f"{'':>6}  " + "".join(f"{'(' + format(r.se_ise, '.5f') + ')':>{width}}" for r in self.rows),
        ]
        excluded = [f"{TABLE_LABELS[r.estimator]}={r.exclusions}" for r in self.rows if r.exclusions]
        if excluded:
            lines.append("excluded replicates: " + ", ".join(excluded))
        return "\n".join(lines) + "\n"


def run_experiment(plan: ExperimentPlan, workers: int = 1) -> SummaryTable:
    """Run all replicates of ``plan`` and summarise ISE per estimator.

    Replicates can run on ``workers`` threads; the summary is folded in
    replicate order, so the output is identical for any ``workers``.

    Raises
    ------
    ExperimentFailedError
        If more than 10% of replicates fail for some estimator.
    """
    if workers < 1:
        raise PlanValidationError(["workers must be >= 1"])
    indices = range(plan.replicates)
    if workers == 1:
        records = [run_replicate(plan, r) for r in indices]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda r: run_replicate(plan, r), indices))
    rows = []
    for name in plan.estimators:
        values = np.array([rec.ise[name] for rec in records if name in rec.ise])
        excluded = plan.replicates - values.size
        if excluded > MAX_EXCLUDED_FRACTION * plan.replicates or values.size < 2:
            reasons = sorted({rec.failures[name] for rec in records if name in rec.failures})
            raise ExperimentFailedError(
                f"{name}: {excluded} of {plan.replicates} replicates failed; "
                f"first reason: {reasons[0] if reasons else 'unknown'}"
            )
        se = float(np.std(values, ddof=1) / math.sqrt(values.size))
        rows.append(SummaryRow(name, float(np.mean(values)), se, int(values.size), int(excluded)))
    return SummaryTable(plan, tuple(rows))
