"""Command line entry point: ``mpcexec {gen-market,run,sweep,compare,report}``.

Configuration is an INI file with sections ``[run]``, ``[market]``,
``[schedule]``, ``[mpc]`` and ``[execution]``; missing keys keep their
defaults and ``--set section.key=value`` overrides any of them.
``MPCEXEC_OUTPUT_DIR`` and ``MPCEXEC_WORKERS`` override the output directory
and worker count.

Exit codes: 0 success, 1 configuration error, 2 runtime error, 3 failed
``compare --assert`` check.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import logging
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from mpcexec.execution import ExecConfig, write_episodes, write_trace
from mpcexec.harness import FleetConfig, PolicySpec, run_fleet
from mpcexec.marketdata import SyntheticMarketConfig, generate_market, write_csv, write_l3e
from mpcexec.metrics import improvement, summarize, write_report
from mpcexec.mpc import MpcConfig
from mpcexec.orderbook import Side
from mpcexec.schedule import ScheduleKind

log = logging.getLogger("mpcexec")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_ASSERT = 0, 1, 2, 3


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    policy: str = "mpc"
    instruments: int = 1
    days: int = 2
    alternate_sides: bool = True
    first_side: str = "buy"
    adverse_drift: bool = False
    seed: int = 0
    output_dir: str = "runs"
    workers: int = 1
    notional: float = 10_000.0
    market_file: str = ""
    trace: bool = False


@dataclass
class ScheduleSection:
    kind: str = "twap"
    interval: float = 300.0
    psi_T: float = 1.0


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    market: SyntheticMarketConfig = field(default_factory=SyntheticMarketConfig)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    execution: ExecConfig = field(default_factory=ExecConfig)

    SECTIONS = ("run", "market", "schedule", "mpc", "execution")

    def validate(self) -> None:
        try:
            if self.run.policy not in ("mpc", "crossing", "mpc-oracle"):
                raise ValueError(f"unknown policy {self.run.policy!r}")
            if self.run.first_side not in ("buy", "sell"):
                raise ValueError("first_side must be buy or sell")
            if self.run.workers < 1:
                raise ValueError("workers must be at least 1")
            ScheduleKind(self.schedule.kind)
            self.mpc.validate()
            self.fleet().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def fleet(self) -> FleetConfig:
        return FleetConfig(
            market=dataclasses.replace(self.market),
            schedule=ScheduleKind(self.schedule.kind),
            psi_T=self.schedule.psi_T,
            interval=self.schedule.interval,
            notional=self.run.notional,
            execution=dataclasses.replace(self.execution),
            instruments=self.run.instruments,
            days=self.run.days,
            alternate_sides=self.run.alternate_sides,
            first_side=Side.BUY if self.run.first_side == "buy" else Side.SELL,
            adverse_drift=self.run.adverse_drift,
            seed=self.run.seed,
            market_file=self.run.market_file or None,
        )

    def policy(self, kind: str | None = None, label: str = "", **overrides) -> PolicySpec:
        return PolicySpec(kind or self.run.policy, label, dataclasses.replace(self.mpc, **overrides))

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        for name in self.SECTIONS:
            section = getattr(self, name)
            cp[name] = {f.name: _format(getattr(section, f.name)) for f in dataclasses.fields(section)}
        lines = []
        for name in self.SECTIONS:
            lines.append(f"[{name}]")
            lines += [f"{k} = {v}" for k, v in cp[name].items()]
            lines.append("")
        return "\n".join(lines)


def _format(value) -> str:
    if hasattr(value, "value"):
        return str(value.value)
    return str(value)


def _coerce(current, raw: str):
    if isinstance(current, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int) and not hasattr(current, "value"):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if hasattr(current, "value"):
        return type(current)(raw.strip())
    return raw.strip()


def apply_setting(cfg: RunConfig, section: str, key: str, raw: str) -> None:
    if section not in RunConfig.SECTIONS:
        raise ConfigError(f"unknown section [{section}]")
    obj = getattr(cfg, section)
    names = {f.name for f in dataclasses.fields(obj)}
    if key not in names:
        raise ConfigError(f"unknown key {section}.{key}")
    try:
        setattr(obj, key, _coerce(getattr(obj, key), raw))
    except ValueError as exc:
        raise ConfigError(f"{section}.{key}: {exc}") from exc


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    cfg = RunConfig()
    if path:
        cp = configparser.ConfigParser()
        cp.optionxform = str
        try:
            with open(path) as fh:
                cp.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for section in cp.sections():
            for key, raw in cp[section].items():
                apply_setting(cfg, section, key, raw)
    # environment beats the file, command line flags beat both
    if "MPCEXEC_OUTPUT_DIR" in os.environ:
        cfg.run.output_dir = os.environ["MPCEXEC_OUTPUT_DIR"]
    if "MPCEXEC_WORKERS" in os.environ:
        try:
            cfg.run.workers = int(os.environ["MPCEXEC_WORKERS"])
        except ValueError as exc:
            raise ConfigError(f"MPCEXEC_WORKERS: {exc}") from exc
    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, raw = item.split("=", 1)
        section, key = lhs.split(".", 1)
        apply_setting(cfg, section.strip(), key.strip(), raw)
    cfg.validate()
    return cfg


def _out(cfg: RunConfig) -> Path:
    path = Path(cfg.run.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ------------------------------------------------------------------ commands


def cmd_gen_market(cfg: RunConfig, args) -> int:
    mc = dataclasses.replace(cfg.market)
    if args.seed is not None:
        mc.seed = args.seed
    try:
        mc.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    stream = generate_market(mc)
    out = Path(args.out) if args.out else _out(cfg) / f"market_{mc.seed}.l3e"
    out.parent.mkdir(parents=True, exist_ok=True)
    if out.suffix == ".csv":
        write_csv(out, stream.events)
    else:
        write_l3e(out, stream)
    print(f"wrote {len(stream)} events to {out}")
    return EXIT_OK


def cmd_run(cfg: RunConfig, args) -> int:
    results = run_fleet(cfg.fleet(), [cfg.policy()], cfg.run.workers)
    out = _out(cfg)
    (res,) = results.values()
    write_episodes(out / "episodes.csv", res)
    write_report(out / "metrics.csv", [summarize(res, schedule=cfg.schedule.kind)])
    if cfg.run.trace:
        for r in res:
            write_trace(out / f"trace_{r.policy}_{r.tag['instrument']}_{r.tag['day']}.csv", r)
    rep = summarize(res)
    print(
        f"{rep.policy}: {rep.n_episodes} episodes, z_arrival {rep.z_arrival:.3f} z_vwap {rep.z_vwap:.3f} "
        f"z_schedule {rep.z_schedule:.3f} bps, completion {rep.completion_rate:.2%}"
    )
    return EXIT_OK


def parse_values(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad sweep values {text!r}") from exc
    if len(values) < 2:
        raise ConfigError("a sweep needs at least two values")
    return values


def cmd_sweep(cfg: RunConfig, args) -> int:
    values = parse_values(args.values)
    if args.param not in ("beta", "gamma"):
        raise ConfigError("sweep parameter must be beta or gamma")
    kind = cfg.run.policy if cfg.run.policy != "crossing" else "mpc"
    policies = [PolicySpec("crossing")]
    policies += [cfg.policy(kind, f"{args.param}={v:g}", **{args.param: v}) for v in values]
    results = run_fleet(cfg.fleet(), policies, cfg.run.workers)
    base = summarize(results["crossing"])
    rows = []
    for v, ps in zip(values, policies[1:]):
        rep = summarize(results[ps.label], schedule=cfg.schedule.kind)
        row = {
            "param": args.param,
            "value": v,
            "eps_var": rep.deviation_var,
            "m_hat_mean": rep.mean_m_hat,
            "abs_m_hat_mean": abs(rep.mean_m_hat),
            "v_hat_mean": rep.mean_v_hat,
        }
        for m in ("z_arrival", "z_vwap", "z_schedule"):
            row[m] = rep.z[m][0]
            try:
                row[f"improvement_{m}"] = improvement(base.z[m][0], rep.z[m][0])
            except ZeroDivisionError:
                row[f"improvement_{m}"] = math.nan
        rows.append(row)
    out = _out(cfg) / f"sweep_{args.param}.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(f"{args.param}={row['value']:g}: var(eps) {row['eps_var']:.4f} mean m_hat {row['m_hat_mean']:.4f}")
    return EXIT_OK


def cmd_compare(cfg: RunConfig, args) -> int:
    labels = [p.strip() for p in args.policies.split(",") if p.strip()]
    if len(labels) < 2:
        raise ConfigError("compare needs at least two policies")
    try:
        policies = [cfg.policy(p) for p in labels]
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    results = run_fleet(cfg.fleet(), policies, cfg.run.workers)
    reports = [summarize(results[p], schedule=cfg.schedule.kind) for p in labels]
    out = _out(cfg)
    write_report(out / "compare.csv", reports)
    write_episodes(out / "episodes.csv", [r for p in labels for r in results[p]])
    base = reports[0]
    failed = False
    for rep in reports[1:]:
        imp = improvement(base.z_schedule, rep.z_schedule) if rep.z_schedule else math.nan
        print(f"{rep.policy} vs {base.policy}: z_schedule {rep.z_schedule:.3f} vs {base.z_schedule:.3f} bps "
              f"({imp:+.1f}%)")
        if args.assert_ and not (rep.z_schedule < base.z_schedule and imp >= args.min_improvement):
            failed = True
    if failed:
        print("acceptance check failed", file=sys.stderr)
        return EXIT_ASSERT
    return EXIT_OK


def cmd_report(cfg: RunConfig, args) -> int:
    from mpcexec.metrics import slippage

    groups: dict[str, dict[str, list[float]]] = {}
    for path in args.episodes:
        try:
            with open(path, newline="") as fh:
                rows = list(csv.DictReader(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        for row in rows:
            g = groups.setdefault(row["policy"], {"z_arrival": [], "z_vwap": [], "z_schedule": []})
            fwap = float(row["p_fwap"])
            side = Side.BUY if row["side"] == "buy" else Side.SELL
            for metric, ref in (("z_arrival", "p_0"), ("z_vwap", "p_vwap"), ("z_schedule", "p_swap")):
                if math.isfinite(fwap) and float(row[ref]) > 0:
                    g[metric].append(slippage(fwap, float(row[ref]), side))
    out = Path(args.out) if args.out else _out(cfg) / "report.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["policy", "schedule", "metric", "mean", "stderr", "n"])
        for policy, metrics in groups.items():
            for metric, xs in metrics.items():
                x = np.asarray(xs)
                se = x.std(ddof=1) / math.sqrt(len(x)) if len(x) > 1 else math.nan
                writer.writerow([policy, cfg.schedule.kind, metric, x.mean() if len(x) else math.nan, se, len(x)])
    print(f"wrote {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpcexec", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("-c", "--config", help="INI configuration file")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE")
        p.add_argument("--out-dir", help="output directory")
        p.add_argument("--workers", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--days", type=int)
        p.add_argument("--instruments", type=int)
        p.add_argument("--policy", choices=("mpc", "crossing", "mpc-oracle"))
        p.add_argument("--schedule", choices=[k.value for k in ScheduleKind])

    p = sub.add_parser("gen-market", help="write a synthetic session to .l3e or .csv")
    common(p)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_gen_market)

    p = sub.add_parser("run", help="run a fleet of episodes with one policy")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="sweep beta or gamma on paired markets")
    common(p)
    p.add_argument("--param", required=True, choices=("beta", "gamma"))
    p.add_argument("--values", required=True, help="comma separated, at least two")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="compare policies on paired markets; the first is the baseline")
    common(p)
    p.add_argument("--policies", default="crossing,mpc")
    p.add_argument("--assert", dest="assert_", action="store_true", help="exit 3 unless every policy beats the baseline")
    p.add_argument("--min-improvement", type=float, default=0.0, help="percent, used with --assert")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="aggregate episode CSV files into a metrics CSV")
    common(p)
    p.add_argument("episodes", nargs="+")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", help="print the default configuration")
    common(p)
    p.set_defaults(func=lambda cfg, args: print(cfg.to_ini()) or EXIT_OK)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = list(args.set)
    flags = {
        "out_dir": "run.output_dir",
        "workers": "run.workers",
        "days": "run.days",
        "instruments": "run.instruments",
        "policy": "run.policy",
        "schedule": "schedule.kind",
    }
    for attr, key in flags.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    if args.seed is not None and args.command != "gen-market":
        overrides.append(f"run.seed={args.seed}")
    try:
        cfg = load_config(args.config, overrides)
        return args.func(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - surface any runtime failure as exit 2
        log.debug("runtime failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
