"""Episode fleets: one synthetic session per (instrument, day), every policy on it.

Running all policies against the same stream keeps comparisons paired. Buy
and sell days alternate. A VWAP schedule takes its volume profile from the
previous day's session of the same instrument.
"""

from __future__ import annotations

import dataclasses
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mpcexec.execution import (
    CrossingPolicy,
    EpisodeResult,
    ExecConfig,
    MpcPolicy,
    ParentOrder,
    run_episode,
)
from mpcexec.marketdata import NS, MarketStream, SyntheticMarketConfig, accumulate_vwap, generate_market, read_l3e
from mpcexec.models import RolloutMode
from mpcexec.mpc import MpcConfig
from mpcexec.orderbook import Side
from mpcexec.schedule import Schedule, ScheduleKind


@dataclass
class PolicySpec:
    """A named policy: ``crossing``, ``mpc`` or ``mpc-oracle`` with optional overrides."""

    kind: str = "mpc"
    label: str = ""
    mpc: MpcConfig = field(default_factory=MpcConfig)

    def __post_init__(self) -> None:
        if self.kind not in ("crossing", "mpc", "mpc-oracle"):
            raise ValueError(f"unknown policy {self.kind!r}")
        self.label = self.label or self.kind

    def build(self):
        if self.kind == "crossing":
            return CrossingPolicy()
        cfg = dataclasses.replace(self.mpc)
        if self.kind == "mpc-oracle":
            cfg.rollout = RolloutMode.ORACLE
        policy = MpcPolicy(cfg)
        policy.name = self.label
        return policy


@dataclass
class FleetConfig:
    market: SyntheticMarketConfig = field(default_factory=SyntheticMarketConfig)
    schedule: ScheduleKind = ScheduleKind.TWAP
    psi_T: float = 1.0  # Almgren-Chriss urgency over the whole horizon
    interval: float = 300.0
    notional: float = 10_000.0
    execution: ExecConfig = field(default_factory=ExecConfig)
    instruments: int = 1
    days: int = 1
    alternate_sides: bool = True
    first_side: Side = Side.BUY
    adverse_drift: bool = False  # point the drift against each day's side
    seed: int = 0
    market_file: str | None = None

    @property
    def T(self) -> int:
        return int(self.market.duration // self.interval)

    def validate(self) -> None:
        self.market.validate()
        self.execution.validate()
        self.schedule = ScheduleKind(self.schedule)
        if self.instruments < 1 or self.days < 1:
            raise ValueError("need at least one instrument and one day")
        if not self.interval > 0 or self.T < 1:
            raise ValueError("the session must hold at least one interval")
        if self.psi_T < 0:
            raise ValueError("psi_T must be non-negative")


@dataclass(frozen=True)
class EpisodeSpec:
    instrument: int
    day: int
    side: Side


def episode_specs(cfg: FleetConfig) -> list[EpisodeSpec]:
    specs = []
    for i in range(cfg.instruments):
        for d in range(cfg.days):
            flip = cfg.alternate_sides and (d + i) % 2 == 1
            side = cfg.first_side.opposite if flip else cfg.first_side
            specs.append(EpisodeSpec(i, d, Side(side)))
    return specs


def session_seed(seed: int, instrument: int, day: int) -> int:
    return int(np.random.SeedSequence([seed, instrument, day + 1]).generate_state(1, np.uint32)[0])


def session_config(cfg: FleetConfig, instrument: int, day: int, side: Side | None = None) -> SyntheticMarketConfig:
    mc = dataclasses.replace(cfg.market, seed=session_seed(cfg.seed, instrument, day))
    if cfg.adverse_drift and side is not None:
        mc.drift = abs(mc.drift) * Side(side).sign
    return mc


def make_schedule(cfg: FleetConfig, spec: EpisodeSpec, prev: MarketStream | None = None) -> Schedule:
    T = cfg.T
    if cfg.schedule is ScheduleKind.TWAP:
        return Schedule(ScheduleKind.TWAP, T)
    if cfg.schedule is ScheduleKind.AC:
        return Schedule(ScheduleKind.AC, T, psi=cfg.psi_T / T)
    if prev is None:
        prev = generate_market(session_config(cfg, spec.instrument, spec.day - 1))
    start = int(round(cfg.execution.start * NS))
    _, profile = accumulate_vwap(prev.events, int(round(cfg.interval * NS)), T, start)
    return Schedule(ScheduleKind.VWAP, T, profile=profile.cumulative)


def run_one(cfg: FleetConfig, spec: EpisodeSpec, policies: list[PolicySpec]) -> list[EpisodeResult]:
    if cfg.market_file:
        stream = read_l3e(cfg.market_file)
    else:
        stream = generate_market(session_config(cfg, spec.instrument, spec.day, spec.side))
    schedule = make_schedule(cfg, spec)
    parent = ParentOrder(spec.side, T=cfg.T, interval=cfg.interval, notional=cfg.notional)
    out = []
    for ps in policies:
        res = run_episode(ps.build(), stream, parent, schedule, cfg.execution)
        res.policy = ps.label
        res.tag = {"instrument": spec.instrument, "day": spec.day}
        out.append(res)
    return out


def _run_star(args):
    return run_one(*args)


def default_workers() -> int:
    env = os.environ.get("MPCEXEC_WORKERS")
    return max(1, int(env)) if env else 1


def run_fleet(
    cfg: FleetConfig,
    policies: list[PolicySpec],
    workers: int | None = None,
    specs: list[EpisodeSpec] | None = None,
) -> dict[str, list[EpisodeResult]]:
    """Results keyed by policy label, in episode order."""
    cfg.validate()
    labels = [p.label for p in policies]
    if len(set(labels)) != len(labels):
        raise ValueError(f"policy labels must be unique: {labels}")
    specs = specs if specs is not None else episode_specs(cfg)
    workers = workers or default_workers()
    jobs = [(cfg, s, policies) for s in specs]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            batches = list(pool.map(_run_star, jobs))
    else:
        batches = [_run_star(j) for j in jobs]
    out: dict[str, list[EpisodeResult]] = {label: [] for label in labels}
    for batch in batches:
        for res in batch:
            out[res.policy].append(res)
    return out


def output_dir(default: str | Path = "runs") -> Path:
    path = Path(os.environ.get("MPCEXEC_OUTPUT_DIR", default))
    path.mkdir(parents=True, exist_ok=True)
    return path
