"""Scenario registry, experiment runner and the ``cbba-etc`` command line."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Optional, Sequence

from . import __version__
from .engine import run_trial
from .metrics import METRIC_FIELDS, compare
from .world import STRATEGIES, ConfigError, ScenarioConfig

log = logging.getLogger("cbba_etc")

CSV_COLUMNS = (
    "scenario", "strategy", "trial", "seed", "rescued", "expired", "failed_rescues",
    "messages_sent", "negotiations", "trig_init", "trig_dbid", "trig_conflict",
    "trig_fallback", "robots_alive_at_end", "wall_time_ms",
)
INT_COLUMNS = CSV_COLUMNS[2:]


@dataclass
class ScenarioSpec:
    """A named set of overrides applied on top of the default configuration."""

    name: str
    overrides: dict[str, Any] = field(default_factory=dict)
    group: str = "base"

    def config(self, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
        cfg = (base or ScenarioConfig()).replace(**dict(self.overrides))
        cfg.validate()
        return cfg


def build_registry() -> dict[str, ScenarioSpec]:
    specs = [ScenarioSpec("base_R20_V100")]
    for r in (5, 10, 20, 40):
        specs.append(ScenarioSpec(f"robots_R{r}_V100", {"n_robots": r}, "robot_sweep"))
    for v in (25, 50, 100, 200, 500):
        specs.append(ScenarioSpec(f"victims_R20_V{v}", {"n_victims": v}, "victim_sweep"))
    for loss in (0.10, 0.30):
        specs.append(ScenarioSpec(f"loss_{int(round(loss * 100)):02d}",
                                  {"p_packet_loss": loss, "bandwidth_cap_msgs_per_tick": 10},
                                  "packet_loss"))
    for p in (0.25, 0.50):
        specs.append(ScenarioSpec(f"action_fail_{int(round(p * 100)):02d}",
                                  {"p_move_fail": p, "p_inspect_fail": p, "p_rescue_fail": p},
                                  "action_failure"))
    for p, tag in ((0.0001, "0001"), (0.001, "001")):
        specs.append(ScenarioSpec(f"agent_fail_{tag}",
                                  {"p_agent_fail_per_tick": p, "agent_fail_grace_s": 500.0},
                                  "agent_failure"))
    specs.append(ScenarioSpec("finite_tasks", {"victim_replacement": False, "duration_s": 1000.0},
                              "finite_task"))
    reg: dict[str, ScenarioSpec] = {}
    for s in specs:
        if s.name in reg:
            raise ConfigError(f"duplicate scenario name {s.name}")
        reg[s.name] = s
    return reg


def registry_to_json(reg: dict[str, ScenarioSpec]) -> str:
    data = {"scenarios": [{"name": s.name, "group": s.group, "overrides": s.overrides}
                          for s in reg.values()]}
    return json.dumps(data, indent=2, sort_keys=True)


def registry_from_json(text: str) -> dict[str, ScenarioSpec]:
    try:
        data = json.loads(text)
        items = data["scenarios"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"malformed scenario file: {exc}") from exc
    reg: dict[str, ScenarioSpec] = {}
    for item in items:
        spec = ScenarioSpec(item["name"], dict(item.get("overrides", {})), item.get("group", "custom"))
        if spec.name in reg:
            raise ConfigError(f"duplicate scenario name {spec.name}")
        spec.config()  # validate eagerly
        reg[spec.name] = spec
    return reg


def trial_seed(master_seed: int, scenario: str, strategy: str, trial: int) -> int:
    """Stable 63-bit seed; independent of which other runs are in the sweep."""
    key = f"{int(master_seed)}|{scenario}|{strategy}|{int(trial)}".encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little") >> 1


@dataclass(frozen=True)
class RunSpec:
    index: int
    scenario: str
    strategy: str
    trial: int
    seed: int
    config: ScenarioConfig


def expand_scenarios(specs: Sequence[ScenarioSpec], strategies: Sequence[str] = STRATEGIES,
                     trials: Optional[int] = None, master_seed: int = 0,
                     overrides: Optional[dict[str, Any]] = None) -> list[RunSpec]:
    """Cartesian product scenarios x strategies x trial indices, in that order."""
    for s in strategies:
        if s not in STRATEGIES:
            raise ConfigError(f"unknown strategy {s!r}; expected one of {STRATEGIES}")
    runs: list[RunSpec] = []
    for spec in specs:
        base = spec.config()
        if overrides:
            base = base.replace(**overrides)
        n = int(trials) if trials is not None else int(base.trials)
        if n < 1:
            raise ConfigError("trials must be >= 1")
        for strat in strategies:
            for k in range(n):
                seed = trial_seed(master_seed, spec.name, strat, k)
                cfg = base.replace(strategy=strat, rng_seed=seed, trials=n)
                cfg.validate()
                runs.append(RunSpec(len(runs), spec.name, strat, k, seed, cfg))
    return runs


def select_scenarios(reg: dict[str, ScenarioSpec], names: Iterable[str]) -> list[ScenarioSpec]:
    out = []
    for n in names:
        if n not in reg:
            raise ConfigError(f"unknown scenario {n!r}; known: {', '.join(reg)}")
        out.append(reg[n])
    return out


class TrialFailure(RuntimeError):
    pass


def _execute(run: RunSpec, wall_time: bool) -> dict[str, Any]:
    t0 = time.perf_counter()
    try:
        m = run_trial(run.config, run.trial)
    except Exception as exc:  # reported with the seed so the trial can be replayed
        raise TrialFailure(f"trial failed: scenario={run.scenario} strategy={run.strategy} "
                           f"trial={run.trial} seed={run.seed}: {exc!r}") from exc
    row: dict[str, Any] = {"scenario": run.scenario, "strategy": run.strategy,
                           "trial": run.trial, "seed": run.seed}
    row.update(m.as_row())
    row["wall_time_ms"] = int(round((time.perf_counter() - t0) * 1000)) if wall_time else 0
    return row


def _execute_star(args):
    return _execute(*args)


def iter_results(runs: Sequence[RunSpec], parallel: int = 1, wall_time: bool = False
                 ) -> Iterator[dict[str, Any]]:
    """Yield result rows in run-index order whatever the worker count."""
    if parallel <= 1 or len(runs) <= 1:
        for r in runs:
            yield _execute(r, wall_time)
        return
    with ProcessPoolExecutor(max_workers=parallel) as pool:
        yield from pool.map(_execute_star, [(r, wall_time) for r in runs], chunksize=1)


def sidecar(runs: Sequence[RunSpec], master_seed: int, parallel_independent: bool = True) -> dict:
    configs: dict[str, dict] = {}
    for r in runs:
        key = f"{r.scenario}/{r.strategy}"
        if key not in configs:
            d = r.config.to_dict()
            d.pop("rng_seed")
            configs[key] = {"config": d, "seeds": []}
        configs[key]["seeds"].append(r.seed)
    return {
        "code_version": __version__,
        "master_seed": int(master_seed),
        "columns": list(CSV_COLUMNS),
        "n_runs": len(runs),
        "seed_rule": "blake2b-64(master|scenario|strategy|trial) >> 1",
        "resolved": configs,
    }


def run_experiment(runs: Sequence[RunSpec], out_path: Optional[Path], parallel: int = 1,
                   master_seed: int = 0, wall_time: bool = False) -> list[dict[str, Any]]:
    """Execute runs and write the CSV plus ``<out>.json`` sidecar.

    Rows are appended one at a time in run order, so an interrupted run
    leaves a valid prefix. With ``out_path=None`` the CSV goes to stdout.
    """
    rows: list[dict[str, Any]] = []
    fh = open(out_path, "w", newline="") if out_path is not None else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in iter_results(runs, parallel, wall_time):
            w.writerow(row)
            fh.flush()
            rows.append(row)
    finally:
        if out_path is not None:
            fh.close()
    if out_path is not None:
        side = Path(str(out_path) + ".json")
        side.write_text(json.dumps(sidecar(runs, master_seed), indent=2, sort_keys=True) + "\n")
    return rows


def read_rows(path: Path) -> list[dict[str, Any]]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = set(CSV_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise ConfigError(f"{path}: missing columns {sorted(missing)}")
        rows = []
        for r in reader:
            for c in INT_COLUMNS:
                r[c] = int(r[c])
            rows.append(r)
    return rows


def stats_table(rows: Sequence[dict], control: str) -> tuple[list[dict], str]:
    """Comparison records and a human-readable rendering, one block per scenario."""
    by_scn: dict[str, list[dict]] = {}
    for r in rows:
        by_scn.setdefault(r["scenario"], []).append(r)
    records: list[dict] = []
    lines = [f"# post-hoc: Welch t-tests vs {control}, Bonferroni-adjusted (Dunnett substitute)"]
    for scn, rs in by_scn.items():
        recs = compare(rs, control, METRIC_FIELDS)
        lines.append(f"\n== {scn} ==")
        for m in METRIC_FIELDS:
            block = [x for x in recs if x["metric"] == m]
            lines.append(f"{m}: ANOVA F={block[0]['anova_F']:.4g} p={block[0]['anova_p']:.3g}")
            for x in block:
                tag = "control" if x["strategy"] == control else \
                    f"p_adj={x['p_adj_vs_control']:.3g} d={x['d_vs_control']:+.3f}"
                lines.append(f"  {x['strategy']:<10} mean={x['mean']:>10.2f} sd={x['sd']:>9.2f} "
                             f"ci95=±{x['ci95']:.2f}  {tag}")
        for x in recs:
            x["scenario"] = scn
        records.extend(recs)
    return records, "\n".join(lines)


def parse_set(items: Sequence[str]) -> dict[str, Any]:
    """``key=value`` overrides; ``etc.<field>`` targets the trigger parameters."""
    out: dict[str, Any] = {}
    etc: dict[str, Any] = {}
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except ValueError:
            value = float(raw) if raw.lower() in ("inf", "-inf", "nan") else raw
        if key.startswith("etc."):
            etc[key[4:]] = value
        elif key in known:
            out[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if etc:
        out["etc_params"] = etc
    return out


def _load_registry(path: Optional[str]) -> dict[str, ScenarioSpec]:
    if path is None:
        return build_registry()
    try:
        return registry_from_json(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file: {exc}") from exc


def _common_overrides(args) -> dict[str, Any]:
    ov = parse_set(args.set or [])
    if getattr(args, "duration", None) is not None:
        ov["duration_s"] = float(args.duration)
    return ov


def cmd_run(args) -> int:
    reg = _load_registry(args.scenarios)
    names = list(reg) if getattr(args, "all", False) else [args.scenario]
    strategies = [args.strategy] if args.strategy else list(STRATEGIES)
    runs = expand_scenarios(select_scenarios(reg, names), strategies, args.trials, args.seed,
                            _common_overrides(args))
    out = Path(args.out) if args.out else None
    log.info("running %d trials with parallelism %d", len(runs), args.parallel)
    run_experiment(runs, out, args.parallel, args.seed, args.wall_time)
    return 0


def cmd_stats(args) -> int:
    rows = read_rows(Path(args.input))
    records, text = stats_table(rows, args.control)
    print(text)
    if args.out:
        cols = ["scenario", "metric", "strategy", "n", "mean", "sd", "ci95", "anova_F", "anova_p",
                "p_adj_vs_control", "d_vs_control"]
        with open(args.out, "w", newline="") as fh:
            fh.write(f"# post-hoc: Welch t-tests vs {args.control}, Bonferroni-adjusted\n")
            w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
            w.writeheader()
            w.writerows(records)
    return 0


def cmd_dump(args) -> int:
    print(registry_to_json(_load_registry(args.scenarios)))
    return 0


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if hasattr(x, "item"):
        return x.item()
    return str(x)


def cmd_trace(args) -> int:
    reg = _load_registry(args.scenarios)
    [spec] = select_scenarios(reg, [args.scenario])
    [run] = [r for r in expand_scenarios([spec], [args.strategy], args.trial + 1, args.seed,
                                         _common_overrides(args)) if r.trial == args.trial]
    events: list[dict] = []
    m = run_trial(run.config, run.trial, events)
    fh = open(args.out, "w") if args.out else sys.stdout
    try:
        for e in events:
            fh.write(json.dumps(e, default=_jsonable, sort_keys=True) + "\n")
        summary = {"kind": "summary", "seed": run.seed, **m.as_row()}
        fh.write(json.dumps(summary, sort_keys=True) + "\n")
    finally:
        if args.out:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cbba-etc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, scenario_required=True):
        if scenario_required:
            sp.add_argument("--scenario", required=True)
        sp.add_argument("--scenarios", help="JSON scenario file (defaults to the built-in registry)")
        sp.add_argument("--seed", type=int, default=0, help="master seed")
        sp.add_argument("--duration", type=float, help="override duration_s")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="config override; etc.<name> for trigger parameters")

    def runner(sp):
        sp.add_argument("--strategy", choices=STRATEGIES)
        sp.add_argument("--trials", type=int)
        sp.add_argument("--parallel", type=int, default=1)
        sp.add_argument("--out")
        sp.add_argument("--wall-time", action="store_true",
                        help="fill wall_time_ms (breaks byte-identical output)")

    sp = sub.add_parser("run", help="run one scenario")
    common(sp)
    runner(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="run every registered scenario")
    common(sp, scenario_required=False)
    sp.add_argument("--all", action="store_true", required=True)
    runner(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("stats", help="compare strategies from a trial CSV")
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--control", default="cbba-etc")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_stats)

    sp = sub.add_parser("dump-scenarios", help="print the scenario registry as JSON")
    sp.add_argument("--scenarios")
    sp.set_defaults(func=cmd_dump)

    sp = sub.add_parser("trace", help="per-tick JSON Lines event log of one trial")
    common(sp)
    sp.add_argument("--trial", type=int, required=True)
    sp.add_argument("--strategy", choices=STRATEGIES, default="cbba-etc")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_trace)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return int(args.func(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except TrialFailure as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
