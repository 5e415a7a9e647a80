"""Seeded Monte Carlo sweeps over (n, m, d, eps) with error and failure-rate summaries."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import protocols as pr
from ._rng import trial_seed
from .analysis import wilson_interval
from .attacks import AttackError, GameConfig, VectorFlood, make_adversary, run_manip_game
from .channel import ChannelError, SubsetH

CSV_COLUMNS = ["n", "m", "d", "epsilon", "metric", "mean_err", "median_err", "q95_err",
               "manip_term_mean", "fail_rate", "fail_ci_hi"]
GRID_KEYS = ("n", "m", "d", "epsilon")
METRICS = ("l1", "l2", "linf", "abs", "verdict", "miss")

DEFAULT_METRIC = {
    "rr_mean": "abs", "est_inf": "linf", "hst": "linf", "est1": "linf", "est2": "l2",
    "raptor": "verdict", "hh": "miss", "suboptimal_hst": "l1",
}


class PlanError(ValueError):
    pass


# ---------------------------------------------------------------------------
# metrics and bounds


def error_metric(output, truth, metric: str) -> float:
    """Distance between a protocol output and the ground truth under ``metric``."""
    if metric == "verdict":
        return float(output != truth)
    if metric == "miss":
        present = np.flatnonzero(np.asarray(truth) > 0) + 1
        if present.size == 0:
            return 0.0
        return 1.0 - np.isin(present, np.asarray(output)).mean()
    out = np.atleast_1d(np.asarray(output, dtype=np.float64))
    tru = np.atleast_1d(np.asarray(truth, dtype=np.float64))
    if out.shape != tru.shape:
        raise ValueError(f"shape mismatch: {out.shape} vs {tru.shape}")
    diff = np.abs(out - tru)
    if metric in ("linf", "abs"):
        return float(diff.max())
    if metric == "l1":
        return float(diff.sum())
    if metric == "l2":
        return float(np.sqrt((diff ** 2).sum()))
    raise ValueError(f"unknown metric {metric!r}")


def honest_bound(protocol: pr.Protocol, m: int, beta: float, metric: str) -> float | None:
    """Explicit error bound holding with probability >= 1 - beta, or None if none is stated.

    The bounds come from Hoeffding's inequality on the per-user terms plus the
    worst-case shift that m corrupted users can cause.
    """
    n, d, c = protocol.n, protocol.d, protocol.c
    lg = math.log
    if isinstance(protocol, pr.RRMean) and metric == "abs":
        return c * (math.sqrt(2 / n * lg(2 / beta)) + 2 * m / n)
    if isinstance(protocol, (pr.HST, pr.SuboptimalHST)) and metric == "linf":
        return c * math.sqrt(2 / n * lg(2 * d / beta)) + 2 * c * m / n
    if isinstance(protocol, pr.Est1) and metric == "linf":
        return c * math.sqrt(8 / n * lg(2 * d / beta)) + 4 * c * m / n
    if isinstance(protocol, pr.EstInf) and metric == "linf":
        return (c + 1) * math.sqrt(2 * d / n * lg(4 * d / beta)) + 2 * c * d * m / n
    return None


# ---------------------------------------------------------------------------
# factories shared with the command line


def make_protocol(name: str, n: int, d: int, epsilon: float, **extra) -> pr.Protocol:
    if name == "rr_mean":
        return pr.RRMean(n, epsilon)
    if name == "est_inf":
        return pr.EstInf(n, d, epsilon)
    if name == "hst":
        return pr.HST(n, d, epsilon)
    if name == "est1":
        return pr.Est1(n, d, epsilon)
    if name == "est2":
        return pr.Est2(n, d, epsilon)
    if name == "raptor":
        return pr.Raptor(n, d, epsilon, beta=extra.get("raptor_beta", 0.1),
                         m_budget=extra.get("m_budget", 0), groups=extra.get("groups"))
    if name == "hh":
        k = extra.get("k") or pr.hh_k(n, extra.get("hh_beta", 0.1), extra.get("k_rule", "appendix"))
        return pr.HH(n, d, k, epsilon)
    if name == "suboptimal_hst":
        return pr.SuboptimalHST(n, d, epsilon)
    raise PlanError(f"unknown protocol {name!r}")


def make_source(spec: dict, protocol: pr.Protocol) -> pr.Source:
    """Build a data source from a small dictionary such as ``{"kind": "uniform"}``."""
    kind = spec.get("kind", "uniform")
    d = protocol.d
    if kind == "rademacher":
        return pr.Rademacher(float(spec.get("mu", 0.0)))
    if kind == "uniform":
        return pr.uniform_source(d)
    if kind == "point":
        return pr.point_source(d, int(spec.get("value", 1)))
    if kind == "planted":
        members = spec.get("H") or list(range(1, d // 2 + 1))
        return pr.PlantedHalf(SubsetH(d, frozenset(members)), float(spec.get("mu", 0.0)))
    if kind == "sphere":
        return pr.UnitSphere(d)
    if kind == "fixed":
        return pr.Fixed(load_dataset(spec["path"], protocol))
    raise PlanError(f"unknown source kind {kind!r}")


def load_dataset(path: str, protocol: pr.Protocol | None = None) -> np.ndarray:
    """One row per user: +-1, an integer in [1, d], or d comma-separated reals."""
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    if data.shape[1] == 1:
        col = data[:, 0]
        if np.all(col == np.round(col)):
            return col.astype(np.int64)
        return col
    return data


# ---------------------------------------------------------------------------
# plans and reports


@dataclass
class ExperimentPlan:
    protocol: str
    grids: dict
    trials: int = 200
    metric: str | None = None
    seed: int = 0
    source: dict = field(default_factory=lambda: {"kind": "uniform"})
    adversary: str = "none"
    adaptive: bool = False
    beta: float = 0.05
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.trials < 1:
            raise PlanError("trials must be at least 1")
        grids = {k: list(self.grids.get(k, [])) for k in GRID_KEYS}
        defaults = {"n": None, "m": [0], "d": [1], "epsilon": [1.0]}
        for k in GRID_KEYS:
            if not grids[k]:
                if defaults[k] is None:
                    raise PlanError(f"grid for {k} must be non-empty")
                grids[k] = defaults[k]
        unknown = set(self.grids) - set(GRID_KEYS)
        if unknown:
            raise PlanError(f"unknown grid keys {sorted(unknown)}")
        self.grids = grids
        self.metric = self.metric or DEFAULT_METRIC.get(self.protocol, "linf")
        if self.metric not in METRICS:
            raise PlanError(f"unknown metric {self.metric!r}")

    def points(self):
        return list(itertools.product(*(self.grids[k] for k in GRID_KEYS)))


def _norm_of(term, metric):
    v = np.abs(np.atleast_1d(term))
    if metric == "l1":
        return float(v.sum())
    if metric == "l2":
        return float(np.sqrt((v ** 2).sum()))
    return float(v.max())


def _run_point(plan: ExperimentPlan, gi: int, point) -> dict:
    n, m, d, eps = point
    row = {"n": int(n), "m": int(m), "d": int(d), "epsilon": float(eps), "metric": plan.metric}
    try:
        protocol = make_protocol(plan.protocol, int(n), int(d), float(eps), **plan.extra)
        source = make_source(plan.source, protocol)
        adv_kw = {"d": protocol.d}
        if "value" in plan.extra:
            adv_kw["value"] = plan.extra["value"]
        adversary = make_adversary(plan.adversary, **adv_kw)
        bound = honest_bound(protocol, int(m), plan.beta, plan.metric)
        errs, manips, fails, decomposition_ok = [], [], [], True
        fast = isinstance(protocol, pr.Raptor) and m == 0 and source.pmf() is not None
        for t in range(plan.trials):
            seed = trial_seed(plan.seed, gi, t)
            if fast:
                out, truth = protocol.run_iid(source, seed), protocol.truth(None, source)
                manip = 0.0
            else:
                res = run_manip_game(protocol, source, adversary,
                                     GameConfig(protocol.n, int(m), plan.adaptive, seed))
                out, truth = res.output, res.truth
                manip = math.nan
                if protocol.output_kind in ("scalar", "vector") and protocol.name in DEFAULT_METRIC:
                    manip = _norm_of(res.manipulation_term(), plan.metric)
                    honest_out = res.honest_output() if res.m else out
                    total = error_metric(out, truth, plan.metric)
                    parts = error_metric(honest_out, truth, plan.metric) + error_metric(out, honest_out, plan.metric)
                    decomposition_ok &= total <= parts + 1e-12
            err = error_metric(out, truth, plan.metric)
            errs.append(err)
            manips.append(manip)
            if plan.metric == "verdict":
                fails.append(err > 0)
            elif bound is not None:
                fails.append(err > bound)
        errs = np.asarray(errs)
        row.update(mean_err=float(errs.mean()), median_err=float(np.median(errs)),
                   q95_err=float(np.quantile(errs, 0.95)),
                   manip_term_mean=float(np.mean(manips)) if not np.all(np.isnan(manips)) else math.nan)
        if fails:
            k = int(np.sum(fails))
            lo, hi = wilson_interval(k, len(fails))
            row.update(fail_rate=k / len(fails), fail_ci_hi=hi)
        else:
            row.update(fail_rate=math.nan, fail_ci_hi=math.nan)
        row["bound"] = bound if bound is not None else math.nan
        row["decomposition_ok"] = bool(decomposition_ok)
        row["error"] = ""
    except (pr.ProtocolError, AttackError, ChannelError, PlanError, ValueError) as exc:
        row.update({k: math.nan for k in CSV_COLUMNS[5:]})
        row.update(bound=math.nan, decomposition_ok=False, error=str(exc))
    return row


def _point_job(args):
    plan, gi, point = args
    return _run_point(plan, gi, point)


@dataclass
class ErrorReport:
    plan: ExperimentPlan
    rows: list

    def slopes(self) -> list[dict]:
        """Least-squares slope of log(mean_err) against log of each swept variable."""
        out = []
        for var in GRID_KEYS:
            if len(self.plan.grids[var]) < 2:
                continue
            others = [k for k in GRID_KEYS if k != var]
            groups: dict = {}
            for r in self.rows:
                if r["error"] or not (r["mean_err"] > 0) or not (r[var] > 0):
                    continue
                groups.setdefault(tuple(r[k] for k in others), []).append(r)
            for key, rows in groups.items():
                if len(rows) < 2:
                    continue
                x = np.log([r[var] for r in rows])
                y = np.log([r["mean_err"] for r in rows])
                fit = stats.linregress(x, y)
                se = float(fit.stderr) if len(rows) > 2 else 0.0
                out.append({"variable": var, "fixed": dict(zip(others, key)),
                            "slope": float(fit.slope), "stderr": se, "points": len(rows)})
        return out

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r[k]) for k in CSV_COLUMNS})
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def to_dict(self) -> dict:
        return {"plan": {"protocol": self.plan.protocol, "grids": self.plan.grids,
                         "trials": self.plan.trials, "metric": self.plan.metric,
                         "seed": self.plan.seed, "source": self.plan.source,
                         "adversary": self.plan.adversary, "beta": self.plan.beta},
                "rows": [{k: _json_num(v) for k, v in r.items()} for r in self.rows],
                "slopes": self.slopes()}

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    def plot_svg(self, path, variable: str = "n") -> None:
        import matplotlib
        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        others = [k for k in GRID_KEYS if k != variable]
        fig, ax = plt.subplots(figsize=(5, 4))
        series: dict = {}
        for r in self.rows:
            if r["error"] or not (r["mean_err"] > 0):
                continue
            series.setdefault(tuple(r[k] for k in others), []).append((r[variable], r["mean_err"]))
        for key, pts in series.items():
            pts.sort()
            ax.loglog(*zip(*pts), marker="o", label=", ".join(f"{k}={v}" for k, v in zip(others, key)))
        ax.set_xlabel(variable)
        ax.set_ylabel(f"mean {self.plan.metric} error")
        ax.legend(fontsize=7)
        fig.tight_layout()
        fig.savefig(path, format="svg")
        plt.close(fig)


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


def _json_num(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def run_plan(plan: ExperimentPlan, jobs: int = 1) -> ErrorReport:
    """Run every grid point; the report does not depend on ``jobs``."""
    tasks = [(plan, gi, pt) for gi, pt in enumerate(plan.points())]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_point_job, tasks))
    else:
        rows = [_point_job(t) for t in tasks]
    return ErrorReport(plan, rows)


# ---------------------------------------------------------------------------


class GapResult(NamedTuple):
    l1_bias_suboptimal: float
    l1_bias_hst: float
    ratio: float
    per_run_suboptimal: np.ndarray


def suboptimality_gap(n: int, d: int, epsilon: float, m: int, trials: int, rng) -> GapResult:
    """Mean l1 shift from m flooding users against suboptimal_hst versus hst.

    Both attacks push toward the all-ones direction: on the privately signed
    variant each corrupted user sends ``c * 1``; on hst, where the sign
    vectors are public, each sends ``c * sign(<s_i, 1>)``.
    """
    seeds = np.random.SeedSequence(np.random.default_rng(rng).integers(0, 2**63)).generate_state(
        2 * trials, dtype=np.uint64)
    ones = np.ones(d, dtype=np.int64)
    sub, hst = pr.SuboptimalHST(n, d, epsilon), pr.HST(n, d, epsilon)
    flood = VectorFlood(ones)
    src = pr.uniform_source(d)
    per_sub, per_hst = [], []
    for t in range(trials):
        r = run_manip_game(sub, src, flood, GameConfig(n, m, False, int(seeds[2 * t])))
        per_sub.append(np.abs(r.corrupt_contribution()).sum())
        r = run_manip_game(hst, src, flood, GameConfig(n, m, False, int(seeds[2 * t + 1])))
        per_hst.append(np.abs(r.corrupt_contribution()).sum())
    a, b = float(np.mean(per_sub)), float(np.mean(per_hst))
    return GapResult(a, b, a / b if b > 0 else math.inf, np.asarray(per_sub))

