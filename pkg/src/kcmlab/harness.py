"""Experiment orchestration: q-sweeps for the bootstrap and kinetic dynamics,
power-law exponent fits with bootstrap confidence intervals, the NE/FA1f tail
study, and config-file driven runs with CSV/JSON persistence.

Sweeps are quenched by default (one disorder draw per sweep); per-trial seeds
derive from (master seed, q index, trial index) so raw tables are identical
regardless of execution order.
"""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from . import _kernels as K
from .bootstrap import boundary_code, model_code
from .environment import EnvParams, Environment, ModelKind, ParameterError, sample_environment
from .kcm import trial_seeds
from .percolation import label_clusters


class ConfigError(ValueError):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = problems


class FitUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepSpec:
    qs: tuple
    width: int
    height: int
    trials: int
    pi: float
    kind: ModelKind = ModelKind.MIXED_FA
    dynamics: str = "kcm"
    boundary: str = "occupied"
    t_max: float = 1e3
    t_max_budget: float = 1e5
    seed: int = 0
    quenched: bool = True
    L: int | None = None  # box side for geometry-aware reports; None = auto

    def window_adequate(self, q: float) -> bool | None:
        """Whether the window spans at least 4 q^-1/2 L sites (the distance
        the emptying mechanism needs); None when no box side is set."""
        if self.L is None:
            return None
        need = 4.0 * q ** -0.5 * self.L
        return min(self.width, self.height) >= need

    def __post_init__(self):
        if not self.qs or any(not (0 < q < 1) for q in self.qs):
            raise ParameterError("q values must lie in (0,1)")
        if list(self.qs) != sorted(self.qs):
            raise ParameterError("q values must be sorted ascending")
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if self.dynamics not in ("bp", "kcm"):
            raise ParameterError(f"dynamics must be 'bp' or 'kcm', got {self.dynamics!r}")


@dataclass
class QPoint:
    q: float
    taus: np.ndarray
    censored: np.ndarray
    t_max: float

    @property
    def censor_fraction(self) -> float:
        return float(np.asarray(self.censored, dtype=bool).mean())


@dataclass
class FitResult:
    slope: float
    intercept: float
    ci_low: float
    ci_high: float
    statistic: str
    n_points: int
    excluded_qs: list = field(default_factory=list)

    @property
    def ci_half_width(self) -> float:
        return (self.ci_high - self.ci_low) / 2.0


def _point_statistic(taus: np.ndarray, censored: np.ndarray, statistic: str) -> float:
    taus = np.asarray(taus, dtype=float)
    censored = np.asarray(censored, dtype=bool)
    if statistic == "median":
        return float(np.median(taus))
    if statistic == "mean-uncensored":
        unc = taus[~censored]
        return float(unc.mean()) if len(unc) else np.nan
    raise ParameterError(f"unknown statistic {statistic!r}")


def loglog_fit(points: list[QPoint], statistic: str = "median",
               n_boot: int = 1000, seed: int = 0) -> FitResult:
    """OLS slope of log(statistic) against log(1/q), with a percentile
    bootstrap CI from resampling trials within each q. Points with censor
    fraction >= 0.5 (or a nonpositive statistic) are excluded and listed."""
    usable = []
    excluded = []
    for p in points:
        val = _point_statistic(p.taus, p.censored, statistic)
        if p.censor_fraction >= 0.5 or not np.isfinite(val) or val <= 0:
            excluded.append(p.q)
        else:
            usable.append((p, val))
    if len(usable) < 3:
        raise FitUnavailable(f"only {len(usable)} usable q points")
    x = np.log([1.0 / p.q for p, _ in usable])
    y = np.log([v for _, v in usable])
    slope, intercept = np.polyfit(x, y, 1)
    rng = np.random.default_rng(seed)
    boots = np.empty(n_boot)
    for b in range(n_boot):
        yb = np.empty(len(usable))
        for i, (p, _) in enumerate(usable):
            n = len(p.taus)
            idx = rng.integers(0, n, n)
            yb[i] = _point_statistic(p.taus[idx], p.censored[idx], statistic)
        good = np.isfinite(yb) & (yb > 0)
        if good.sum() >= 2:
            boots[b] = np.polyfit(x[good], np.log(yb[good]), 1)[0]
        else:
            boots[b] = np.nan
    boots = boots[np.isfinite(boots)]
    lo, hi = np.percentile(boots, [2.5, 97.5]) if len(boots) else (np.nan, np.nan)
    return FitResult(slope=float(slope), intercept=float(intercept),
                     ci_low=float(lo), ci_high=float(hi), statistic=statistic,
                     n_points=len(usable), excluded_qs=excluded)


def _sweep_environment(spec: SweepSpec, omega_index: int = 0) -> Environment:
    params = EnvParams(pi=spec.pi, width=spec.width, height=spec.height,
                       kind=spec.kind, seed=spec.seed + 1000003 * omega_index)
    return sample_environment(params)


def bp_scaling_sweep(spec: SweepSpec, env: Environment | None = None):
    """Median bootstrap-percolation emptying time against 1/q.

    Quenched (default): one disorder draw serves every trial. Annealed: a
    fresh disorder per trial, seeded from (seed, q index, trial). Returns
    (fit, points, env); the per-q t_max is the window size (the dynamics
    reaches its fixed point within that many steps)."""
    if spec.dynamics != "bp":
        raise ParameterError("spec.dynamics must be 'bp'")
    if env is None:
        env = _sweep_environment(spec)
    mdl = model_code(env)
    bnd = boundary_code(spec.boundary)
    t_cap = env.width * env.height
    points = []
    for qi, q in enumerate(spec.qs):
        seeds = trial_seeds(spec.seed, 10 + qi, spec.trials)
        if spec.quenched:
            taus, censored = K.bp_tau0_batch(env.kinds, mdl, bnd, q, t_cap,
                                             env.origin[0], env.origin[1], seeds)
            taus = taus.astype(float)
            censored = censored.astype(bool)
        else:
            taus = np.empty(spec.trials)
            censored = np.empty(spec.trials, dtype=bool)
            for t in range(spec.trials):
                e = _sweep_environment(spec, omega_index=1 + qi * spec.trials + t)
                tau, cen = K.bp_tau0_batch(e.kinds, mdl, bnd, q, t_cap,
                                           e.origin[0], e.origin[1], seeds[t:t + 1])
                taus[t] = tau[0]
                censored[t] = bool(cen[0])
        points.append(QPoint(q=q, taus=taus, censored=censored, t_max=t_cap))
    fit = loglog_fit(points, "median", seed=spec.seed)
    return fit, points, env


def _kcm_point(env: Environment, spec: SweepSpec, q: float, stream: int) -> QPoint:
    """One q point with the adaptive t_max policy: double until the censor
    fraction drops below 0.1 or the budget is exhausted. Annealed mode draws
    a fresh disorder per trial."""
    mdl = model_code(env)
    bnd = boundary_code(spec.boundary)
    seeds = trial_seeds(spec.seed, stream, spec.trials)
    if not spec.quenched:
        envs = [_sweep_environment(spec, omega_index=1 + stream * spec.trials + t)
                for t in range(spec.trials)]
    t_max = spec.t_max
    while True:
        if spec.quenched:
            taus, censored, _ = K.kcm_origin_batch(env.kinds, mdl, bnd, q, t_max,
                                                   env.origin[0], env.origin[1], seeds)
        else:
            taus = np.empty(spec.trials)
            censored = np.empty(spec.trials, dtype=np.uint8)
            for t, e in enumerate(envs):
                tt, cc, _ = K.kcm_origin_batch(e.kinds, mdl, bnd, q, t_max,
                                               e.origin[0], e.origin[1], seeds[t:t + 1])
                taus[t] = tt[0]
                censored[t] = cc[0]
        frac = float(censored.mean())
        if frac < 0.1 or t_max * 2 > spec.t_max_budget:
            return QPoint(q=q, taus=taus, censored=censored.astype(bool), t_max=t_max)
        t_max *= 2


def kcm_scaling_sweep(spec: SweepSpec, envs: list[Environment] | None = None,
                      n_omega: int = 1):
    """Per-quenched-disorder exponent fits for the kinetic dynamics.

    Returns (fits, points_by_omega, envs, spread) where spread is the range of
    fitted slopes across disorders (the random-exponent probe)."""
    if spec.dynamics != "kcm":
        raise ParameterError("spec.dynamics must be 'kcm'")
    if envs is None:
        envs = [_sweep_environment(spec, w) for w in range(n_omega)]
    fits = []
    points_by_omega = []
    for w, env in enumerate(envs):
        points = [_kcm_point(env, spec, q, 100 + 31 * w + qi)
                  for qi, q in enumerate(spec.qs)]
        points_by_omega.append(points)
        fits.append(loglog_fit(points, "median", seed=spec.seed + w))
    slopes = [f.slope for f in fits]
    spread = max(slopes) - min(slopes) if len(slopes) > 1 else 0.0
    return fits, points_by_omega, envs, spread


# ---------------------------------------------------------------------------
# NE/FA1f tails
# ---------------------------------------------------------------------------

TAIL_QUANTILE = 0.75  # the exponential statement concerns the survival tail;
                      # rates are fitted to excesses above this quantile


def exponential_tail_stats(taus: np.ndarray, censored: np.ndarray,
                           tail_quantile: float = TAIL_QUANTILE) -> dict:
    """Per-disorder exponential-tail diagnostics for origin hitting times.

    Fits the rate to the excess of the positive uncensored times over their
    `tail_quantile` quantile (memorylessness: an exponential tail has
    exponential excesses), runs a KS test against that fit, and reports the
    tightest exponential envelope scale sup_t t / (-log S(t))."""
    taus = np.asarray(taus, dtype=float)
    censored = np.asarray(censored, dtype=bool)
    pos = taus[(taus > 0) & ~censored]
    out = {"n_positive": len(pos), "censor_fraction": float(censored.mean())}
    if len(pos) < 20:
        out.update(tau_hat=np.nan, ks_pvalue=np.nan, envelope_scale=np.nan, usable=False)
        return out
    thr = float(np.quantile(pos, tail_quantile))
    exc = pos[pos > thr] - thr
    tau_hat = float(exc.mean())
    ks = stats.kstest(exc, "expon", args=(0.0, tau_hat))
    srt = np.sort(pos)
    n = len(srt)
    surv = 1.0 - np.arange(1, n + 1) / (n + 1.0)
    envelope = float(np.max(srt / -np.log(surv)))
    out.update(tau_hat=tau_hat, ks_pvalue=float(ks.pvalue),
               envelope_scale=envelope, usable=True)
    return out


def ne_tail_experiment(spec: SweepSpec, n_omega: int, q: float | None = None):
    """Per-disorder exponential tails and the across-disorder distribution of
    the fitted scale for the NE/FA1f model.

    Returns (per_omega, across) where across reports the log-log tail slope of
    the fitted scales and how their tail compares to an exponential law."""
    if spec.kind is not ModelKind.MIXED_NE_FA1F:
        raise ParameterError("ne_tail_experiment needs the NE/FA1f model")
    if q is None:
        q = spec.qs[0]
    per_omega = []
    mdl = K.MODEL_NE
    bnd = boundary_code(spec.boundary)
    skipped = 0
    w = 0
    while len(per_omega) < n_omega:
        env = _sweep_environment(spec, w)
        w += 1
        labeling = label_clusters(env.easy_mask())
        if labeling.spanning_label() < 0:
            skipped += 1
            if skipped > 10 * n_omega:
                raise ParameterError("easy sites rarely span; raise pi above the site threshold")
            continue
        seeds = trial_seeds(spec.seed, 7000 + w, spec.trials)
        taus, censored, _ = K.kcm_origin_batch(env.kinds, mdl, bnd, q, spec.t_max,
                                               env.origin[0], env.origin[1], seeds)
        entry = exponential_tail_stats(taus, censored.astype(bool))
        entry["omega_seed"] = env.params.seed
        per_omega.append(entry)
    tau_hats = np.array([e["tau_hat"] for e in per_omega if e["usable"]])
    across = {"n_omega": len(per_omega), "n_usable": len(tau_hats), "skipped": skipped}
    if len(tau_hats) >= 10:
        med = float(np.median(tau_hats))
        srt = np.sort(tau_hats)
        n = len(srt)
        surv = 1.0 - np.arange(1, n + 1) / (n + 1.0)
        upper = srt > med
        if upper.sum() >= 3:
            slope = np.polyfit(np.log(srt[upper]), np.log(surv[upper]), 1)[0]
        else:
            slope = np.nan
        frac_heavy = float((tau_hats > 10 * med).mean())
        across.update(median_tau_hat=med, loglog_tail_slope=float(slope),
                      frac_above_10x_median=frac_heavy,
                      exponential_reference=float(np.exp(-10 * np.log(2))))
    return per_omega, across


# ---------------------------------------------------------------------------
# config-driven runs
# ---------------------------------------------------------------------------

def _validate_config(cfg: dict) -> list[str]:
    problems = []
    if not isinstance(cfg.get("pi"), (int, float)) or not (0 < cfg.get("pi", 0) < 1):
        problems.append("pi: required, in (0,1)")
    qs = cfg.get("q_list")
    if not isinstance(qs, list) or not qs or any(not (0 < q < 1) for q in qs):
        problems.append("q_list: required, nonempty list within (0,1)")
    window = cfg.get("window")
    if isinstance(window, int):
        ok = window >= 1
    elif isinstance(window, list) and len(window) == 2:
        ok = all(isinstance(v, int) and v >= 1 for v in window)
    else:
        ok = False
    if not ok:
        problems.append("window: required, positive int or [width, height]")
    if cfg.get("model", "fa12") not in ("fa12", "ne-fa1f"):
        problems.append("model: must be 'fa12' or 'ne-fa1f'")
    if not isinstance(cfg.get("trials"), int) or cfg.get("trials", 0) < 1:
        problems.append("trials: required positive int")
    dyn = cfg.get("dynamics")
    if isinstance(dyn, str):
        dyn = [dyn]
    if not isinstance(dyn, list) or any(d not in ("bp", "kcm") for d in dyn):
        problems.append("dynamics: 'bp', 'kcm', or a list of those")
    if "output_dir" not in cfg:
        problems.append("output_dir: required")
    return problems


def _env_digest(env: Environment) -> str:
    h = hashlib.sha256()
    h.update(env.kinds.tobytes(order="C"))
    return h.hexdigest()


def run_config(path) -> dict:
    """Run the sweeps described by a JSON config and persist raw trials (CSV)
    plus summaries/fits (JSON) into its output directory. Reruns with the same
    config produce identical raw tables."""
    with open(path) as fh:
        cfg = json.load(fh)
    problems = _validate_config(cfg)
    if problems:
        raise ConfigError(problems)
    window = cfg["window"]
    width, height = (window, window) if isinstance(window, int) else window
    dynamics = cfg["dynamics"] if isinstance(cfg["dynamics"], list) else [cfg["dynamics"]]
    kind = ModelKind(cfg.get("model", "fa12"))
    outdir = Path(cfg["output_dir"])
    outdir.mkdir(parents=True, exist_ok=True)

    shared_env = None
    bundle = {"config": cfg, "results": {}, "timestamp": time.time()}
    for dyn in dynamics:
        spec = SweepSpec(qs=tuple(sorted(cfg["q_list"])), width=width, height=height,
                         trials=cfg["trials"], pi=cfg["pi"], kind=kind, dynamics=dyn,
                         boundary=cfg.get("boundary", "occupied"),
                         t_max=cfg.get("t_max", 1e3),
                         t_max_budget=cfg.get("t_max_budget", 1e5),
                         seed=cfg.get("seed", 0),
                         quenched=cfg.get("quenched", True),
                         L=cfg.get("L"))
        if shared_env is None:
            shared_env = _sweep_environment(spec)
        if dyn == "bp":
            fit, points, _ = bp_scaling_sweep(spec, env=shared_env)
        else:
            fits, pts, _, _ = kcm_scaling_sweep(spec, envs=[shared_env])
            fit, points = fits[0], pts[0]
        raw_path = outdir / f"raw_{dyn}.csv"
        with open(raw_path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["q", "trial", "tau", "censored"])
            for p in points:
                for i, (tau, cen) in enumerate(zip(p.taus, p.censored)):
                    wr.writerow([p.q, i, repr(float(tau)), int(cen)])
        bundle["results"][dyn] = {
            "fit": {"slope": fit.slope, "intercept": fit.intercept,
                    "ci": [fit.ci_low, fit.ci_high], "statistic": fit.statistic,
                    "excluded_qs": fit.excluded_qs},
            "points": [{"q": p.q, "t_max": p.t_max,
                        "censor_fraction": p.censor_fraction,
                        "window_adequate": spec.window_adequate(p.q)} for p in points],
            "raw_csv": str(raw_path),
        }
    bundle["environment"] = {
        "digest": _env_digest(shared_env),
        "params": {"pi": shared_env.params.pi, "width": shared_env.params.width,
                   "height": shared_env.params.height,
                   "kind": shared_env.params.kind.value, "seed": shared_env.params.seed},
    }
    bundle["software_version"] = _version()
    with open(outdir / "summary.json", "w") as fh:
        json.dump(bundle, fh, indent=2, default=float)
    return bundle


def _version() -> str:
    try:
        from importlib.metadata import version
        return version("kcmlab")
    except Exception:
        return "unknown"
