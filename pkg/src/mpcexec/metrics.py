"""Slippage in basis points, schedule deviation statistics and policy comparisons.

All slippage figures are signed so that a positive number is a worse
execution for the trader, whichever side they are on.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from mpcexec.orderbook import Side


class NoFills(ValueError):
    pass


class NonPositiveReference(ValueError):
    pass


class MissingMid(ValueError):
    pass


class ZeroDenominator(ZeroDivisionError):
    pass


class EmptyInput(ValueError):
    pass


METRICS = ("z_arrival", "z_vwap", "z_schedule")


def slippage(p_fwap: float, p_ref: float, side: Side | int) -> float:
    if p_fwap is None or not math.isfinite(p_fwap):
        raise NoFills("no fill price")
    if not p_ref > 0:
        raise NonPositiveReference(f"reference price {p_ref}")
    # accepts a Side or its sign, +1 for buys and -1 for sells
    sign = int(side) if side in (-1, 1) else Side(side).sign
    return 1e4 * (p_fwap - p_ref) / p_ref * sign


def swap_price(schedule: Sequence[float], mids: Sequence[float], Q: float = 100.0) -> float:
    """Price paid if every scheduled increment traded at the mid when it was scheduled."""
    s = np.asarray(schedule, dtype=float)
    m = np.asarray(mids, dtype=float)
    if len(m) != len(s) - 1 or not np.isfinite(m).all():
        raise MissingMid(f"need {len(s) - 1} finite mids, got {len(m)}")
    return float(np.diff(s) @ m / Q)


def improvement(z_base: float, z_mpc: float) -> float:
    """Percent by which the MPC slippage improves on the baseline.

    Scaled by the magnitude of the MPC figure so that the sign always says
    which policy did better.
    """
    if z_mpc == 0:
        raise ZeroDenominator("MPC slippage is zero")
    return 100.0 * (z_base - z_mpc) / abs(z_mpc)


def deviation_stats(series: Iterable[Sequence[float]]) -> tuple[float, float, float]:
    """Pooled mean, population std and median over every step of every episode."""
    chunks = [np.asarray(s, dtype=float).ravel() for s in series]
    pooled = np.concatenate(chunks) if chunks else np.zeros(0)
    if pooled.size == 0:
        raise EmptyInput("no deviations to summarise")
    return float(pooled.mean()), float(pooled.std()), float(np.median(pooled))


def episode_metrics(result) -> dict[str, float]:
    """z metrics for one episode result; NaN where undefined."""
    out = {}
    refs = {"z_arrival": result.p_0, "z_vwap": result.p_vwap, "z_schedule": result.p_swap}
    for name, ref in refs.items():
        try:
            out[name] = slippage(result.p_fwap, ref, result.side)
        except (NoFills, NonPositiveReference):
            out[name] = math.nan
    return out


def _mean_stderr(x: np.ndarray) -> tuple[float, float]:
    x = x[np.isfinite(x)]
    if x.size == 0:
        return math.nan, math.nan
    se = float(x.std(ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
    return float(x.mean()), se


@dataclass
class MetricsReport:
    policy: str
    schedule: str
    n_episodes: int
    z: dict[str, tuple[float, float]]  # metric -> (mean, stderr)
    deviation: tuple[float, float, float]  # mean, std, median of epsilon, percent of Q
    deviation_var: float
    mean_m_hat: float
    mean_v_hat: float
    completion_rate: float
    incomplete: int  # episodes with no fills at all
    per_episode: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    @property
    def z_arrival(self) -> float:
        return self.z["z_arrival"][0]

    @property
    def z_vwap(self) -> float:
        return self.z["z_vwap"][0]

    @property
    def z_schedule(self) -> float:
        return self.z["z_schedule"][0]


def summarize(results: Sequence, policy: str | None = None, schedule: str = "") -> MetricsReport:
    if not results:
        raise EmptyInput("no episodes")
    per = {m: np.array([episode_metrics(r)[m] for r in results]) for m in METRICS}
    eps = [r.epsilon[1:] for r in results]
    mean, std, med = deviation_stats(eps)
    m_hat = np.concatenate([r.m_hat for r in results])
    v_hat = np.concatenate([r.v_hat for r in results])
    return MetricsReport(
        policy=policy or results[0].policy,
        schedule=schedule,
        n_episodes=len(results),
        z={m: _mean_stderr(per[m]) for m in METRICS},
        deviation=(mean, std, med),
        deviation_var=std**2,
        mean_m_hat=float(np.nanmean(m_hat)) if np.isfinite(m_hat).any() else math.nan,
        mean_v_hat=float(np.nanmean(v_hat)) if np.isfinite(v_hat).any() else math.nan,
        completion_rate=float(np.mean([r.completion >= 1.0 - 1e-9 for r in results])),
        incomplete=sum(1 for r in results if r.filled == 0),
        per_episode=per,
    )


REPORT_FIELDS = ("policy", "schedule", "metric", "mean", "stderr", "n")


def report_rows(report: MetricsReport) -> list[dict]:
    n = report.n_episodes
    rows = [
        {"policy": report.policy, "schedule": report.schedule, "metric": m, "mean": mu, "stderr": se, "n": n}
        for m, (mu, se) in report.z.items()
    ]
    extra = {
        "eps_mean": report.deviation[0],
        "eps_std": report.deviation[1],
        "eps_median": report.deviation[2],
        "eps_var": report.deviation_var,
        "m_hat_mean": report.mean_m_hat,
        "v_hat_mean": report.mean_v_hat,
        "completion_rate": report.completion_rate,
        "incomplete": report.incomplete,
    }
    for name, value in extra.items():
        rows.append(
            {"policy": report.policy, "schedule": report.schedule, "metric": name, "mean": value, "stderr": "", "n": n}
        )
    return rows


def write_report(path: str | Path, reports: Iterable[MetricsReport]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=REPORT_FIELDS)
        writer.writeheader()
        for rep in reports:
            writer.writerows(report_rows(rep))


def read_report(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def paired_improvement(base: MetricsReport, mpc: MetricsReport, metric: str = "z_schedule") -> float:
    return improvement(base.z[metric][0], mpc.z[metric][0])
