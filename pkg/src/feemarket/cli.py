"""Command-line driver.

All run parameters come from one JSON config; flags only pick the config,
the output directory and verifier suites. ``FEEMARKET_OUTPUT_DIR``
overrides the configured output directory. Exit codes: 0 pass, 1 bound-check
failure, 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .adversaries import LowerBoundAdversary, ReplayScenario, StochasticModel, scenario_from_json
from .controllers import ChoiceFunction, StepSchedule, fixed_eta_for_horizon, horizon_free_constant
from .evaluation import (
    average_regret_bound,
    bound_kind_for,
    dumps_report,
    mean_and_se,
    regret_report,
    stochastic_report,
    write_trace_csv,
)
from .packing import TableStack
from .simulation import run_lower_bound, simulate
from .verify import SUITES, run_suite

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    raw: dict
    horizon: int
    replications: int
    workers: int
    M: float
    eps: float | None
    mu: float | None
    norm: str | None
    accounting: str
    output_dir: Path
    prefix: str
    base_dir: Path

    def scenario(self, replication: int = 0):
        return scenario_from_json(self.raw["scenario"], stream=replication, base_dir=self.base_dir)

    def controller(self, m: int, B: float) -> tuple[ChoiceFunction, StepSchedule]:
        c = self.raw["controller"]
        p0 = c.get("p0", [0.0] * m if c["kind"] == "norm_squared" else [1.0] * m)
        cf = ChoiceFunction(
            kind=c["kind"],
            p0=p0,
            price_cap=c.get("price_cap"),
            eps=c.get("eps", self.eps if c["kind"] != "norm_squared" else None),
            project=c.get("project", True),
            cap_norm=str(c.get("cap_norm", "inf")),
        )
        if cf.m != m:
            raise ConfigError(f"controller p0 has m={cf.m}, scenario has m={m}")
        s = c.get("schedule", {"kind": "fixed", "value": "auto"})
        value = s.get("value", "auto")
        if value == "auto":
            if s["kind"] == "fixed":
                value = fixed_eta_for_horizon(cf, B, self.M, self.horizon, self.eps)
            elif s["kind"] == "inverse_sqrt":
                value = horizon_free_constant(B, self.M)
            else:
                value = self.mu if self.mu is not None else 1.0
        return cf, StepSchedule(s["kind"], float(value))


def load_config(path, output_override: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in ("scenario", "controller", "horizon"):
        if key not in raw:
            raise ConfigError(f"config is missing {key!r}")
    T = raw["horizon"]
    if not isinstance(T, int) or T < 1:
        raise ConfigError("horizon must be an integer >= 1")
    reps = raw.get("replications", 1)
    if not isinstance(reps, int) or reps < 1:
        raise ConfigError("replications must be an integer >= 1")
    workers = raw.get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("workers must be an integer >= 1")
    bounds = raw.get("bounds", {})
    M = bounds.get("M", raw["scenario"].get("price_bound"))
    if M is None or not float(M) > 0:
        raise ConfigError("bounds.M must be a positive number")
    if "seed" in raw:
        raw["scenario"] = {**raw["scenario"], "seed": raw["seed"]}
    oracle = raw.get("oracle", {})
    out = raw.get("output", {})
    out_dir = output_override or os.environ.get("FEEMARKET_OUTPUT_DIR") or out.get("dir", ".")
    return RunConfig(
        raw=raw,
        horizon=T,
        replications=reps,
        workers=workers,
        M=float(M),
        eps=bounds.get("eps"),
        mu=bounds.get("mu"),
        norm=oracle.get("norm"),
        accounting=oracle.get("accounting", "forced" if raw["scenario"].get("kind") == "lower_bound" else "optimal"),
        output_dir=Path(out_dir),
        prefix=out.get("prefix", "run"),
        base_dir=path.parent,
    )


def _B(loss) -> float:
    return math.sqrt(float(loss.limit @ loss.limit))


def _run_one(cfg: RunConfig, r: int):
    scen = cfg.scenario(r)
    if isinstance(scen, StochasticModel):
        scen = ReplayScenario(scen.sample_range(1, cfg.horizon), scen.loss)
    cf, sched = cfg.controller(scen.loss.m, _B(scen.loss))
    trace, blocks = simulate(scen, cf, sched, cfg.horizon, price_bound=cfg.M)
    return scen, trace, blocks


def _simulate_task(args) -> dict:
    cfg, r = args
    scen, trace, _ = _run_one(cfg, r)
    path = cfg.output_dir / f"{cfg.prefix}_trace_r{r}.csv"
    write_trace_csv(trace, path)
    loss = scen.loss
    kind = bound_kind_for(trace.controller)
    return {
        "replication": r,
        "trace": path.name,
        "final_price": trace.prices[-1].tolist(),
        "mean_price": trace.prices.mean(axis=0).tolist(),
        "dual_total": float(trace.dual_values.sum()),
        "max_gradient_norm": float(np.sqrt((trace.gradients**2).sum(axis=1)).max()),
        "domain_exits": trace.domain_exits,
        "bound_kind": kind,
        "bound_value": average_regret_bound(kind, B=_B(loss), M=cfg.M, T=cfg.horizon, m=loss.m, eps=cfg.eps, mu=cfg.mu),
    }


def _regret_task(args) -> dict:
    cfg, r = args
    scen, trace, blocks = _run_one(cfg, r)
    data = None if cfg.accounting == "forced" else TableStack.from_blocks(blocks)
    rep = regret_report(scen.loss, data, trace, cfg.M, cfg.eps, norm=cfg.norm, accounting=cfg.accounting, mu=cfg.mu)
    return {"replication": r, **rep.to_json()}


def _map(cfg: RunConfig, fn, items) -> list:
    """Ordered map over replications, optionally on a process pool."""
    if cfg.workers == 1 or len(items) == 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, items))


def _write(cfg: RunConfig, name: str, obj) -> Path:
    path = cfg.output_dir / f"{cfg.prefix}_{name}.json"
    path.write_text(dumps_report(obj), encoding="utf-8")
    return path


def cmd_simulate(cfg: RunConfig) -> int:
    runs = _map(cfg, _simulate_task, [(cfg, r) for r in range(cfg.replications)])
    path = _write(cfg, "summary", {"config": cfg.raw, "horizon": cfg.horizon, "runs": runs})
    print(f"wrote {path}")
    return EXIT_PASS


def cmd_regret(cfg: RunConfig) -> int:
    runs = _map(cfg, _regret_task, [(cfg, r) for r in range(cfg.replications)])
    failed = [r["replication"] for r in runs if not r["passed"]]
    summary = {
        "config": cfg.raw,
        "runs": runs,
        "violations": len(failed),
        "passed": not failed,
    }
    path = _write(cfg, "regret", summary)
    for r in runs:
        tag = "PASS" if r["passed"] else "FAIL"
        print(f"{tag} replication {r['replication']}: R/T={r['avg_regret']:.6g} bound={r['bound_value']:.6g} ({r['bound_kind']}, norm {r['norm']})")
    print(f"wrote {path}")
    return EXIT_PASS if not failed else EXIT_FAIL


def cmd_stochastic(cfg: RunConfig) -> int:
    model = cfg.scenario(0)
    if not isinstance(model, StochasticModel):
        raise ConfigError("the stochastic command needs a stochastic scenario")
    cf, sched = cfg.controller(model.m, _B(model.loss))
    heldout = int(cfg.raw.get("heldout", 10_000))
    rep = stochastic_report(model, cf, sched, cfg.horizon, cfg.replications, M=cfg.M, heldout=heldout, norm=cfg.norm or "inf")
    path = _write(cfg, "stochastic", {"config": cfg.raw, **rep.to_json()})
    tag = "PASS" if rep.passed else "FAIL"
    print(f"{tag} mean gap {rep.mean_gap:.6g} +- {rep.standard_error:.3g} vs bound {rep.bound_value:.6g}")
    print(f"wrote {path}")
    return EXIT_PASS if rep.passed else EXIT_FAIL


def lower_bound_summary(
    adv: LowerBoundAdversary, cf, sched, T: int, replications: int, M: float, *, optimal_reps: int = 5
) -> dict:
    """Regret of the gradient rule against the random-sign adversary.

    The pass checks use forced accounting (the realised packing is held fixed,
    so every ``f_t`` is linear). The first ``optimal_reps`` replications are
    also scored with re-solved packings and reported alongside.
    """
    advs = [adv.with_stream(r) for r in range(replications)]
    run = run_lower_bound(advs, cf, sched, T)
    ctrl = {"choice": cf.to_json(), "schedule": sched.to_json()}
    forced, optimal = [], []
    for r, a in enumerate(advs):
        tr = run.trace(r, ctrl)
        forced.append(regret_report(a.loss, None, tr, M, accounting="forced", norm="inf").regret)
        if r >= optimal_reps:
            continue
        q = tr.dual_values - (a.loss.target * np.maximum(tr.prices, 0.0)).sum(axis=1) + (tr.usage * tr.prices).sum(axis=1)
        stack = TableStack.from_arrays(q[:, None], tr.usage[:, :, None], a.limit)
        optimal.append(regret_report(a.loss, stack, tr, M, accounting="optimal", norm="inf").regret)
    mean, se = mean_and_se(forced)
    scale = M * float(adv.slack.sum())
    threshold = scale * math.sqrt(T) / 24
    ratio = mean / math.sqrt(T)
    window = [scale / 24, scale * math.sqrt(2 / math.pi) * 1.1]
    opt_mean, opt_se = mean_and_se(optimal) if optimal else (float("nan"), float("nan"))
    return {
        "horizon": T,
        "replications": replications,
        "M": M,
        "slack": adv.slack.tolist(),
        "norm": "inf",
        "accounting": "forced",
        "mean_regret": mean,
        "standard_error": se,
        "threshold": threshold,
        "mean_over_sqrt_T": ratio,
        "window": window,
        "optimal_accounting_replications": len(optimal),
        "optimal_accounting_mean": opt_mean,
        "optimal_accounting_se": opt_se,
        "lower_bound_pass": bool(mean >= threshold - 3 * se),
        "window_pass": bool(window[0] <= ratio <= window[1]),
    }


def cmd_lowerbound(cfg: RunConfig) -> int:
    adv = cfg.scenario(0)
    if not isinstance(adv, LowerBoundAdversary):
        raise ConfigError("the lowerbound command needs a lower_bound scenario")
    cf, sched = cfg.controller(adv.m, _B(adv.loss))
    extra = int(cfg.raw.get("oracle", {}).get("optimal_replications", 5))
    rep = lower_bound_summary(adv, cf, sched, cfg.horizon, cfg.replications, cfg.M, optimal_reps=extra)
    ok = rep["lower_bound_pass"] and rep["window_pass"]
    path = _write(cfg, "lowerbound", {"config": cfg.raw, **rep, "passed": ok})
    tag = "PASS" if ok else "FAIL"
    print(f"{tag} mean regret {rep['mean_regret']:.6g} +- {rep['standard_error']:.3g}, threshold {rep['threshold']:.6g}")
    print(f"wrote {path}")
    return EXIT_PASS if ok else EXIT_FAIL


def cmd_verify(suite: str) -> int:
    results = run_suite(suite)
    for res in results:
        print(f"{'PASS' if res.passed else 'FAIL'} {res.name}")
    return EXIT_PASS if all(r.passed for r in results) else EXIT_FAIL


COMMANDS = {"simulate": cmd_simulate, "regret": cmd_regret, "stochastic": cmd_stochastic, "lowerbound": cmd_lowerbound}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="feemarket", description="Fee-market price controller laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", help="JSON run configuration")
        p.add_argument("--output-dir", help="directory for traces and reports")
    v = sub.add_parser("verify")
    v.add_argument("suite", choices=[*SUITES, "all"])
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_PASS
    if args.command == "verify":
        return cmd_verify(args.suite)
    try:
        cfg = load_config(args.config, args.output_dir)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (ConfigError, ValueError, KeyError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
