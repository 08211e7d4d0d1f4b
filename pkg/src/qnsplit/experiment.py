"""Declarative experiment harness: config parsing, reference optima with
on-disk caching, the five-algorithm roster, CSV logs, and rate fits.

The roster names map onto the solver drivers as

    fbs      plain PDHG               (metric off, no inertia)
    ifbs     inertial PDHG            (metric off, alpha schedule)
    qn-fbs   quasi-Newton PDHG        (variable metric, no inertia)
    rqn-fbs  relaxed quasi-Newton     (variable metric, correction step)
    iqn-fbs  inertial quasi-Newton    (variable metric, alpha schedule)

CSV schema (exact header, one row per iteration):
``iter,time_ms,primal,gap,pd_gap,step_param,root_iters,metric_sign,diff_norm``.
Raw gaps are stored unclamped; wall time is excluded from determinism
guarantees.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .imaging import (ImageProblem, add_noise, build_deconvolution,
                      build_denoising, build_infconv, dual_value, edge_weights,
                      gaussian_kernel, phantom, primal_value)
from .io import read_pgm
from .pdhg import run_iqn_pdhg, run_plain_pdhg, run_rqn_pdhg
from .solvers import SolverConfig

ALGORITHMS = ("fbs", "ifbs", "qn-fbs", "rqn-fbs", "iqn-fbs")
CSV_HEADER = "iter,time_ms,primal,gap,pd_gap,step_param,root_iters,metric_sign,diff_norm"
SCHEMA_VERSION = 1
GAP_FLOOR = 1e-15   # for log plots only; CSV keeps raw values


class ConfigError(ValueError):
    """Invalid experiment configuration."""


def _take(d: dict, consumed: set, key: str, default=None, required=False):
    if key in d:
        consumed.add(key)
        return d[key]
    if required:
        raise ConfigError(f"missing required config key {key!r}")
    return default


def _reject_unknown(d: dict, consumed: set, where: str):
    unknown = set(d) - consumed
    if unknown:
        raise ConfigError(f"unknown config keys in {where}: {sorted(unknown)}")


@dataclass(frozen=True)
class ProblemSpec:
    family: str = "deconvolution"
    size: int = 64
    phantom: str = "shapes"
    image: Optional[str] = None
    mu: float = 0.001
    tau: float = 0.09
    sigma: float = 0.9
    kernel_size: int = 5
    kernel_sigma: float = 1.5
    blur: bool = True
    noise_sigma: float = 10.0
    weight_scale: float = 25.0


@dataclass(frozen=True)
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    algorithms: Tuple[str, ...] = ALGORITHMS
    iterations: int = 500
    metric_mode: str = "fixed"
    gamma_hat: float = 5.0
    safeguard_c: float = 0.5
    eta0: float = 1.0
    alpha_kind: str = "fig1"
    alpha0: float = 10.0
    alpha_cap: float = 10.0
    alpha_const: float = 0.0
    seed: int = 0
    reference_iterations: int = 10000
    rate_window: Tuple[int, int] = (50, 500)
    output_dir: str = "out"


def parse_config(source) -> ExperimentConfig:
    """Parse and validate a config mapping or JSON file path.

    The schema is versioned; unknown keys anywhere are rejected.
    """
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    else:
        data = dict(source)
    if not isinstance(data, dict):
        raise ConfigError("config root must be a JSON object")
    consumed: set = set()
    schema = _take(data, consumed, "schema", required=True)
    if schema != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema version {schema!r} (expected {SCHEMA_VERSION})")

    pdict = _take(data, consumed, "problem", default={})
    if not isinstance(pdict, dict):
        raise ConfigError("'problem' must be an object")
    pc: set = set()
    family = _take(pdict, pc, "family", "deconvolution")
    if family not in ("deconvolution", "infconv", "denoising"):
        raise ConfigError(f"unknown problem family {family!r}")
    spec = ProblemSpec(
        family=family,
        size=int(_take(pdict, pc, "size", 64)),
        phantom=str(_take(pdict, pc, "phantom", "shapes")),
        image=_take(pdict, pc, "image", None),
        mu=float(_take(pdict, pc, "mu", 0.001)),
        tau=float(_take(pdict, pc, "tau", 0.09)),
        sigma=float(_take(pdict, pc, "sigma", 0.9)),
        kernel_size=int(_take(pdict, pc, "kernel_size", 5)),
        kernel_sigma=float(_take(pdict, pc, "kernel_sigma", 1.5)),
        blur=bool(_take(pdict, pc, "blur", True)),
        noise_sigma=float(_take(pdict, pc, "noise_sigma", 10.0)),
        weight_scale=float(_take(pdict, pc, "weight_scale", 25.0)),
    )
    _reject_unknown(pdict, pc, "'problem'")

    mdict = _take(data, consumed, "metric", default={})
    mc: set = set()
    metric_mode = str(_take(mdict, mc, "mode", "fixed"))
    if metric_mode not in ("off", "secant", "safeguard-a2", "safeguard-a1", "fixed"):
        raise ConfigError(f"unknown metric mode {metric_mode!r}")
    gamma_hat = float(_take(mdict, mc, "gamma_hat", 5.0))
    safeguard_c = float(_take(mdict, mc, "c", 0.5))
    eta0 = float(_take(mdict, mc, "eta0", 1.0))
    _reject_unknown(mdict, mc, "'metric'")

    adict = _take(data, consumed, "alpha", default={})
    ac: set = set()
    alpha_kind = str(_take(adict, ac, "kind", "fig1"))
    if alpha_kind not in ("zero", "constant", "fig1", "fig2", "fig2-min", "fig3"):
        raise ConfigError(f"unknown alpha schedule {alpha_kind!r}")
    alpha0 = float(_take(adict, ac, "a0", 10.0))
    alpha_cap = float(_take(adict, ac, "cap", 10.0))
    alpha_const = float(_take(adict, ac, "const", 0.0))
    _reject_unknown(adict, ac, "'alpha'")

    algorithms = _take(data, consumed, "algorithms", list(ALGORITHMS))
    if not isinstance(algorithms, (list, tuple)) or not algorithms:
        raise ConfigError("'algorithms' must be a non-empty list")
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {a!r}; valid: {list(ALGORITHMS)}")
    iterations = int(_take(data, consumed, "iterations", 500))
    if iterations < 1:
        raise ConfigError("'iterations' must be >= 1")
    seed = int(_take(data, consumed, "seed", 0))
    reference_iterations = int(_take(data, consumed, "reference_iterations", 10000))
    window = _take(data, consumed, "rate_window", [50, 500])
    if (not isinstance(window, (list, tuple)) or len(window) != 2
            or int(window[0]) >= int(window[1])):
        raise ConfigError("'rate_window' must be [lo, hi] with lo < hi")
    output_dir = str(_take(data, consumed, "output_dir", "out"))
    _reject_unknown(data, consumed, "config root")

    return ExperimentConfig(
        problem=spec, algorithms=tuple(algorithms), iterations=iterations,
        metric_mode=metric_mode, gamma_hat=gamma_hat, safeguard_c=safeguard_c,
        eta0=eta0, alpha_kind=alpha_kind, alpha0=alpha0, alpha_cap=alpha_cap,
        alpha_const=alpha_const, seed=seed,
        reference_iterations=reference_iterations,
        rate_window=(int(window[0]), int(window[1])), output_dir=output_dir)


# ---------------------------------------------------------------------------
# problem assembly


def build_problem(cfg: ExperimentConfig) -> ImageProblem:
    """Deterministic instance from the config (phantom, blur, noise, weights)."""
    p = cfg.problem
    rng = np.random.default_rng(cfg.seed)
    if p.image is not None:
        clean = read_pgm(p.image)
    else:
        clean = phantom(p.phantom, p.size)
    rows, cols = clean.shape
    kernel = gaussian_kernel(p.kernel_size, p.kernel_sigma)
    if p.family == "deconvolution":
        from .imaging import build_blur_op
        A = build_blur_op(kernel, rows, cols)
        b = add_noise(A.apply(clean.reshape(-1)).reshape(rows, cols), p.noise_sigma, rng)
        return build_deconvolution(b, p.mu, p.tau, p.sigma, kernel)
    if p.family == "infconv":
        if p.blur:
            from .imaging import build_blur_op
            A = build_blur_op(kernel, rows, cols)
            b = add_noise(A.apply(clean.reshape(-1)).reshape(rows, cols),
                          p.noise_sigma, rng)
            W = edge_weights(b.reshape(-1), rows, cols, p.weight_scale)
            return build_infconv(b, p.mu, W, p.tau, p.sigma, kernel=kernel)
        b = add_noise(clean, p.noise_sigma, rng)
        W = edge_weights(b.reshape(-1), rows, cols, p.weight_scale)
        return build_infconv(b, p.mu, W, p.tau, p.sigma, kernel=None)
    # denoising
    b = add_noise(clean, p.noise_sigma, rng)
    W = edge_weights(b.reshape(-1), rows, cols, p.weight_scale)
    return build_denoising(b, p.mu, W, p.tau, p.sigma)


def problem_hash(p: ImageProblem) -> str:
    """Content hash of everything that determines the optimal value estimate."""
    h = hashlib.sha256()
    h.update(p.family.encode())
    h.update(np.array([p.rows, p.cols]).tobytes())
    h.update(np.array([p.mu, p.tau, p.sigma], dtype=float).tobytes())
    h.update(np.ascontiguousarray(p.b).tobytes())
    if p.W is not None:
        h.update(np.ascontiguousarray(p.W).tobytes())
    if p.A is not None:
        h.update(np.ascontiguousarray(p.A.kernel).tobytes())
        h.update(np.array([p.A.scale], dtype=float).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# reference optimum


@dataclass(frozen=True)
class ReferenceValue:
    value: float                     # best primal value along a plain PDHG run
    dual: Optional[float]            # best dual value (denoising only)
    certificate: Optional[float]     # |best primal - best dual|
    n_iters: int


def _cache_dir(explicit=None) -> Path:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get("QNSPLIT_CACHE_DIR")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "qnsplit"


def reference_gap(problem: ImageProblem, n_iters: int = 10000,
                  cache_dir=None) -> ReferenceValue:
    """Best primal value along a plain PDHG run; disk-cached per problem hash.

    For the denoising family the returned value is also dual-certified:
    the best dual value and the duality-gap certificate are reported.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    cdir = _cache_dir(cache_dir)
    key = f"{problem_hash(problem)}_{n_iters}"
    cache_file = cdir / f"ref_{key}.json"
    if cache_file.exists():
        d = json.loads(cache_file.read_text())
        return ReferenceValue(d["value"], d.get("dual"), d.get("certificate"),
                              d["n_iters"])
    best = [np.inf]
    best_dual = [-np.inf]
    has_dual = problem.family == "denoising"

    def cb(k, z):
        x, y = problem.sp.split(z)
        best[0] = min(best[0], primal_value(problem, x))
        if has_dual:
            best_dual[0] = max(best_dual[0], dual_value(problem, y))

    run_plain_pdhg(problem.sp, problem.tau, problem.sigma,
                   z0=problem.initial_point(), iters=n_iters, callback=cb)
    ref = ReferenceValue(
        value=float(best[0]),
        dual=float(best_dual[0]) if has_dual else None,
        certificate=float(best[0] - best_dual[0]) if has_dual else None,
        n_iters=n_iters)
    try:
        cdir.mkdir(parents=True, exist_ok=True)
        cache_file.write_text(json.dumps({
            "value": ref.value, "dual": ref.dual,
            "certificate": ref.certificate, "n_iters": ref.n_iters}))
    except OSError:
        pass   # caching is best-effort
    return ref


# ---------------------------------------------------------------------------
# running the roster


def solver_config_for(alg: str, cfg: ExperimentConfig) -> SolverConfig:
    if alg not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {alg!r}")
    metric = "off" if alg in ("fbs", "ifbs") else cfg.metric_mode
    alpha = cfg.alpha_kind if alg in ("ifbs", "iqn-fbs") else "zero"
    return SolverConfig(
        variant="relaxed" if alg == "rqn-fbs" else "inertial",
        tau=cfg.problem.tau, sigma=cfg.problem.sigma,
        metric_mode=metric, gamma_hat=cfg.gamma_hat,
        safeguard_c=cfg.safeguard_c, eta0=cfg.eta0,
        alpha_kind=alpha, alpha0=cfg.alpha0, alpha_cap=cfg.alpha_cap,
        alpha_const=cfg.alpha_const,
        max_iter=cfg.iterations, stop_tol=0.0)


@dataclass
class AlgorithmSummary:
    name: str
    iterations: int
    primal: np.ndarray
    gap: np.ndarray
    pd_gap: Optional[np.ndarray]
    time_ms: np.ndarray
    q: Optional[float]
    csv_path: Optional[str] = None


@dataclass
class RunSummary:
    problem_hash: str
    reference: ReferenceValue
    algorithms: Dict[str, AlgorithmSummary]


def run_algorithm(problem: ImageProblem, alg: str, cfg: ExperimentConfig,
                  reference: ReferenceValue):
    """Run one roster algorithm; returns (rows, AlgorithmSummary).

    Objectives are logged at the feasibility-restored iterate (one prox_g /
    prox_f application).  For the forward-backward algorithms the iterates
    are prox outputs already, so this is the exact identity; it only matters
    for the relaxed variant, whose correction step can leave the constraint
    sets and would otherwise log infinite values.
    """
    scfg = solver_config_for(alg, cfg)
    has_dual = problem.family == "denoising"
    rows: List[tuple] = []
    primals, gaps, pdgaps, times = [], [], [], []

    def cb(k, z, rec):
        x, y = problem.sp.split(z)
        x = problem.sp.prox_g.resolvent(x, 1.0)
        y = problem.sp.prox_f.resolvent(y, 1.0)
        pv = primal_value(problem, x)
        gap = pv - reference.value
        pdg = pv - dual_value(problem, y) if has_dual else None
        primals.append(pv)
        gaps.append(gap)
        times.append(rec.time_ms)
        if has_dual:
            pdgaps.append(pdg)
        rows.append((rec.k, rec.time_ms, pv, gap, pdg, rec.step_param,
                     rec.root_iters, rec.metric_sign, rec.diff_norm))

    runner = run_rqn_pdhg if alg == "rqn-fbs" else run_iqn_pdhg
    runner(problem.sp, scfg, tau=problem.tau, sigma=problem.sigma,
           z0=problem.initial_point(), callback=cb)
    series = np.asarray(pdgaps) if has_dual else np.asarray(gaps)
    q = fit_linear_rate(series, cfg.rate_window)
    summary = AlgorithmSummary(
        name=alg, iterations=len(rows), primal=np.asarray(primals),
        gap=np.asarray(gaps), pd_gap=np.asarray(pdgaps) if has_dual else None,
        time_ms=np.asarray(times), q=q)
    return rows, summary


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path, rows) -> None:
    with open(path, "w", encoding="ascii", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def run_experiment(cfg: ExperimentConfig, cache_dir=None) -> RunSummary:
    """Run the configured roster; one CSV per algorithm, deterministic given
    the seed (wall-clock columns excepted)."""
    problem = build_problem(cfg)
    reference = reference_gap(problem, cfg.reference_iterations, cache_dir=cache_dir)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    summaries: Dict[str, AlgorithmSummary] = {}
    for alg in cfg.algorithms:
        rows, summary = run_algorithm(problem, alg, cfg, reference)
        csv_path = out / f"{alg}.csv"
        write_csv(csv_path, rows)
        summary.csv_path = str(csv_path)
        summaries[alg] = summary
    return RunSummary(problem_hash=problem_hash(problem), reference=reference,
                      algorithms=summaries)


def fit_linear_rate(gaps: Sequence[float], window: Tuple[int, int]) -> Optional[float]:
    """Least-squares slope of ``log(gap)`` over the iteration window,
    reported as ``q = exp(slope)``; ``None`` with fewer than 3 usable points.

    Nonpositive and non-finite gaps are filtered out.
    """
    gaps = np.asarray(gaps, dtype=float)
    lo, hi = int(window[0]), int(window[1])
    lo = max(lo, 0)
    hi = min(hi, gaps.size)
    ks = np.arange(lo, hi)
    g = gaps[lo:hi]
    keep = np.isfinite(g) & (g > 0)
    if keep.sum() < 3:
        return None
    slope = np.polyfit(ks[keep], np.log(g[keep]), 1)[0]
    return float(np.exp(slope))


def iterations_to_gap(gaps: Sequence[float], threshold: float) -> Optional[int]:
    """First iteration index with ``gap <= threshold`` (None if never)."""
    g = np.asarray(gaps, dtype=float)
    hit = np.nonzero(g <= threshold)[0]
    return int(hit[0]) if hit.size else None
