"""Command-line entry point.

Exit codes:
  0  success
  1  unexpected internal error
  2  usage or configuration error
  3  input error (missing file or column, unreadable data)
  4  empty scope or no usable data
  5  no matched pairs in any experiment comparison
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .apsurvey import (
    DEFAULT_BLOCKLIST,
    VIABLE_SIGNAL,
    load_isp_rules,
    read_scans,
    scan_report,
)
from .cohort import (
    ATTRIBUTES,
    DegenerateError,
    RegionIndicator,
    entropy,
    information_gain,
    region_correlations,
    unit_feature_records,
)
from .dns import LINK_LOSS_MAX, NoDataError, build_dns_hours, dns_failure_probabilities
from .experiments import ExperimentConfig, Metric, NoMatchesError, run_experiment
from .failover import load_scenario, scenario_from_dict, write_trajectory
from .ingest import (
    IngestError,
    format_time,
    load_dataset,
    read_table,
    records_by_unit,
    series_by_unit,
    write_dns,
    write_pings,
    write_traffic,
    write_units,
)
from .multihome import MIN_OVERLAP, build_pairs, sim_report
from .reliability import (
    DEFAULT_THRESHOLDS,
    GROUP_KEYS,
    PEAK_WINDOW,
    EmptyScopeError,
    aggregate_stats,
    compute_stats,
    loss_cdf,
    losses_by_group,
    reduce_stats,
)
from .report import Staging, config_hash, rounded
from .synth import SynthSpec, generate_synthetic

log = logging.getLogger("broadrel")

EXIT_OK, EXIT_UNEXPECTED, EXIT_USAGE, EXIT_INPUT, EXIT_EMPTY, EXIT_NO_MATCHES = 0, 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    peak_window: tuple[int, int] = PEAK_WINDOW
    min_overlap: int = MIN_OVERLAP
    seed: Optional[int] = None
    sections: dict = field(default_factory=dict)  # per-subcommand settings from the config file

    def __post_init__(self):
        ts = [float(t) for t in self.thresholds]
        if not ts:
            raise ConfigError("at least one threshold is required")
        if any(not 0 < t <= 1 for t in ts):
            raise ConfigError(f"thresholds must lie in (0, 1]: {ts}")
        if ts != sorted(ts):
            raise ConfigError(f"thresholds must be sorted ascending: {ts}")
        self.thresholds = ts
        lo, hi = (int(h) for h in self.peak_window)
        if not 0 <= lo < hi <= 24:
            raise ConfigError(f"peak window must satisfy 0 <= start < end <= 24: {self.peak_window}")
        self.peak_window = (lo, hi)
        if int(self.min_overlap) < 1:
            raise ConfigError("min_overlap must be positive")
        self.min_overlap = int(self.min_overlap)

    def section(self, name: str) -> dict:
        return dict(self.sections.get(name, {}))

    def to_dict(self, command: str) -> dict:
        return {
            "command": command,
            "min_overlap": self.min_overlap,
            "peak_window": list(self.peak_window),
            "seed": self.seed,
            "settings": self.sections.get(command, {}),
            "thresholds": self.thresholds,
        }


def load_run_config(args) -> RunConfig:
    data = {}
    if args.config:
        try:
            with open(args.config) as fh:
                data = json.load(fh)
        except FileNotFoundError as exc:
            raise IngestError(args.config, "config file not found") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
    base = {k: data[k] for k in ("thresholds", "peak_window", "min_overlap", "seed") if k in data}
    sections = {k: v for k, v in data.items() if k not in base}
    if args.thresholds:
        try:
            base["thresholds"] = [float(t) for t in args.thresholds.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad --thresholds value {args.thresholds!r}") from exc
    if getattr(args, "seed", None) is not None:
        base["seed"] = args.seed
    return RunConfig(**base, sections=sections)


# -- subcommands --------------------------------------------------------------


def _inputs(directory: Path) -> list[Path]:
    return sorted(p for p in directory.iterdir() if p.suffix == ".csv")


def _dataset(args):
    d = Path(args.input)
    if not d.is_dir():
        raise IngestError(d, "input directory not found")
    ds = load_dataset(d, jobs=args.jobs, resolvers_file=args.resolvers, prefixes_file=args.prefixes)
    for uid, reason in ds.rejected_units:
        log.warning("unit %s rejected: %s", uid, reason)
    if not ds.records:
        raise EmptyScopeError(f"{d}: no hourly records after ingest")
    extra = [p for p in (args.resolvers, args.prefixes) if p]
    return ds, _inputs(d) + [Path(p) for p in extra]


def cmd_ingest(args, cfg: RunConfig, out: Staging):
    ds, inputs = _dataset(args)
    rows = (
        (r.unit_id, format_time(r.hour_start), r.loss_rate, r.bytes_down, r.bytes_up, r.dns_queries, r.dns_failures)
        for r in ds.records
    )
    out.write_csv("hourly.csv", ("unit_id", "hour", "loss_rate", "bytes_down", "bytes_up", "dns_queries", "dns_failures"), rows)
    out.write_csv("rejected_units.csv", ("unit_id", "reason"), ds.rejected_units)
    out.write_text("ingest_report.jsonl", ds.report.to_jsonl())
    return inputs


def _stats_rows(stats):
    for s in stats:
        yield (s.scope, s.threshold, s.uptime_hours, s.downtime_hours, s.failures,
               s.mtbf_hours, s.mdt_hours, s.availability, s.annual_downtime_hours)


def _read_indicators(path) -> list[RegionIndicator]:
    cols = ("region", "urban_fraction", "population_density", "gsp_per_capita")
    out = []
    for line, row in read_table(path, cols):
        try:
            out.append(RegionIndicator(row["region"].strip(), float(row["urban_fraction"]),
                                       float(row["population_density"]), float(row["gsp_per_capita"])))
        except (AttributeError, TypeError, ValueError) as exc:
            raise IngestError(path, f"line {line}: {exc}") from exc
    return out


def cmd_stats(args, cfg: RunConfig, out: Staging):
    ds, inputs = _dataset(args)
    settings = cfg.section("stats")
    keys = args.group_by.split(",") if args.group_by else settings.get("group_by", ["isp", "technology", "year"])
    bad = [k for k in keys if k not in GROUP_KEYS]
    if bad:
        raise ConfigError(f"unknown grouping key(s) {bad}; choose from {', '.join(GROUP_KEYS)}")
    metas = {m.unit_id: m for m in ds.units}
    series = series_by_unit(ds.records)

    stats = []
    per_unit = {}
    for t in cfg.thresholds:
        unit_stats = [compute_stats(series[u], t, u) for u in sorted(series)]
        per_unit[t] = {s.scope: s for s in unit_stats}
        stats.append(reduce_stats(unit_stats, "all"))
        for key in keys:
            for peak in (False, True):
                stats.extend(aggregate_stats(series, metas, key, t, peak=peak, peak_window=cfg.peak_window).values())
    out.write_csv(
        "stats.csv",
        ("scope", "threshold", "uptime", "downtime", "failures", "mtbf", "mdt", "availability", "annual_downtime"),
        _stats_rows(stats),
    )

    cdf_key = keys[0]
    cdfs = loss_cdf(losses_by_group(series, metas, cdf_key), cfg.thresholds)
    out.write_csv("cdf.csv", ("group", "loss", "cum_fraction"),
                  ((g, x, f) for g, c in cdfs.items() for x, f in c.points))
    out.write_csv("exceedance.csv", ("group", "threshold", "fraction"),
                  ((g, t, c.exceedance[t]) for g, c in cdfs.items() for t in cfg.thresholds))

    rows = []
    for t in cfg.thresholds:
        avail = {u: float(s.availability) for u, s in per_unit[t].items()}
        records = unit_feature_records(ds.units, avail)
        h = entropy(r["availability_bin"] for r in records)
        gains = sorted(((information_gain(records, a), a) for a in ATTRIBUTES), key=lambda g: (-round(g[0], 12), g[1]))
        rows.extend((t, a, g, h) for g, a in gains)
    out.write_csv("infogain.csv", ("threshold", "attribute", "gain", "target_entropy"), rows)

    regions_file = args.regions or settings.get("regions")
    if regions_file:
        inputs.append(Path(regions_file))
        indicators = _read_indicators(regions_file)
        rows = []
        for t in cfg.thresholds:
            pooled = {}
            by_region = {}
            for u, s in per_unit[t].items():
                by_region.setdefault(metas[u].region, []).append(s)
            for region, ss in by_region.items():
                hours = sum(s.uptime_hours + s.downtime_hours for s in ss)
                pooled[region] = sum(s.failures for s in ss) / hours
            try:
                rows.extend((t, c.x_name, c.y_name, c.r, c.n) for c in region_correlations(pooled, indicators))
            except DegenerateError as exc:
                log.warning("correlation at threshold %g skipped: %s", t, exc)
        out.write_csv("correlations.csv", ("threshold", "indicator", "metric", "r", "n"), rows)
    return inputs


def cmd_dns(args, cfg: RunConfig, out: Staging):
    ds, inputs = _dataset(args)
    if not ds.dns:
        raise IngestError(Path(args.input) / "dns.csv", "no DNS counters found")
    link_max = float(cfg.section("dns").get("link_loss_max", LINK_LOSS_MAX))
    hours = build_dns_hours(ds.dns, ds.loss, {m.unit_id: m.isp for m in ds.units})
    probs = dns_failure_probabilities(hours, link_max)
    out.write_csv(
        "dns_probs.csv",
        ("isp", "p_one", "p_two", "hours_used", "hours_excluded"),
        ((p.isp, p.p_one, p.p_two, p.hours_used, p.hours_excluded) for p in probs.values()),
    )
    return inputs


def cmd_experiment(args, cfg: RunConfig, out: Staging):
    ds, inputs = _dataset(args)
    section = cfg.sections.get("experiment")
    if args.metric:
        configs = [ExperimentConfig.from_dict({"metric": args.metric})]
    elif section is None:
        configs = [ExperimentConfig.from_dict({"metric": m.value}) for m in Metric]
    else:
        items = section if isinstance(section, list) else [section]
        configs = [ExperimentConfig.from_dict(c) for c in items]
    by_unit = records_by_unit(ds.records)
    runs = [run_experiment(c, ds.units, by_unit) for c in configs]
    if not any(r["results"] for r in runs):
        raise NoMatchesError("no comparison produced matched pairs")
    cfg_dict = cfg.to_dict("experiment")
    cfg_dict["settings"] = [c.to_dict() for c in configs]
    out.write_json("experiment.json", rounded({"config_hash": config_hash(cfg_dict), "experiments": runs}))
    return inputs, cfg_dict


def cmd_multihome(args, cfg: RunConfig, out: Staging):
    ds, inputs = _dataset(args)
    series = series_by_unit(ds.records)
    pairs = build_pairs(ds.units, series, cfg.min_overlap)
    if not pairs:
        raise EmptyScopeError(f"no same-block pairs with at least {cfg.min_overlap} overlapping hours")
    rows, notes = sim_report(pairs, series, cfg.thresholds)
    for n in notes:
        log.warning("%s", n)
    out.write_csv(
        "multihome.csv",
        ("cohort", "threshold", "availability", "mtbf", "mdt", "pairs"),
        ((r.cohort, r.threshold, r.stats.availability, r.stats.mtbf_hours, r.stats.mdt_hours, r.pairs) for r in rows),
    )
    return inputs


def cmd_apsurvey(args, cfg: RunConfig, out: Staging):
    settings = cfg.section("apsurvey")
    path = Path(args.scans)
    if not path.exists():
        raise IngestError(path, "input file not found")
    scans = read_scans(path)
    inputs = [path]
    client_isp = {}
    if args.client_isp:
        inputs.append(Path(args.client_isp))
        client_isp = {k: v for k, v in (
            (row["client_id"].strip(), row["isp"].strip())
            for _, row in read_table(args.client_isp, ("client_id", "isp"))
        )}
    rules_path = args.rules or settings.get("rules")
    if rules_path:
        inputs.append(Path(rules_path))
    rules = load_isp_rules(rules_path)
    rep = scan_report(
        scans,
        client_isp,
        rules,
        tuple(settings.get("blocklist", DEFAULT_BLOCKLIST)),
        float(settings.get("viable_cutoff", VIABLE_SIGNAL)),
    )
    cfg_dict = cfg.to_dict("apsurvey")
    body = rep.to_dict()
    body["config_hash"] = config_hash(cfg_dict)
    out.write_json("ap_report.json", rounded(body))
    return inputs, cfg_dict


def cmd_failover(args, cfg: RunConfig, out: Staging):
    section = cfg.sections.get("failover")
    if args.scenario:
        path = Path(args.scenario)
        if not path.exists():
            raise IngestError(path, "scenario file not found")
        try:
            scenario = load_scenario(path)
        except KeyError as exc:
            raise IngestError(path, "required field missing", column=exc.args[0]) from exc
        inputs = [path]
    elif section:
        scenario = scenario_from_dict(section)
        inputs = []
    else:
        raise ConfigError("failover needs a scenario file or a 'failover' section in --config")
    traj = scenario.run()
    write_trajectory(out.path("trajectory.csv"), traj)
    cfg_dict = cfg.to_dict("failover")
    summary = traj.summary()
    summary["config_hash"] = config_hash(cfg_dict)
    out.write_json("failover_summary.json", rounded(summary))
    return inputs, cfg_dict


def cmd_synth(args, cfg: RunConfig, out: Staging):
    settings = cfg.section("synth")
    if args.units is not None:
        settings["units"] = args.units
    if args.hours is not None:
        settings["hours"] = args.hours
    settings["seed"] = cfg.seed if cfg.seed is not None else settings.get("seed", 0)
    try:
        spec = SynthSpec.from_dict(settings)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth settings: {exc}") from exc
    trace = generate_synthetic(spec)
    write_units(out.path("units.csv"), trace.units)
    write_pings(out.path("pings.csv"), trace.pings)
    write_traffic(out.path("traffic.csv"), trace.traffic)
    write_dns(out.path("dns.csv"), trace.dns)
    cfg_dict = cfg.to_dict("synth")
    cfg_dict["settings"] = settings
    return [], cfg_dict


COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "dns": cmd_dns,
    "experiment": cmd_experiment,
    "multihome": cmd_multihome,
    "apsurvey": cmd_apsurvey,
    "failover": cmd_failover,
    "synth": cmd_synth,
}


# -- argument parsing ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--thresholds", help="comma-separated loss thresholds, e.g. 0.01,0.05,0.1")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for ingest")
    common.add_argument("-v", "--verbose", action="store_true")

    dataset = argparse.ArgumentParser(add_help=False)
    dataset.add_argument("input", help="directory with units.csv, pings*.csv and optional traffic.csv, dns.csv")
    dataset.add_argument("--resolvers", help="CSV of unit_id,resolver used to validate ISP labels")
    dataset.add_argument("--prefixes", help="CSV of isp,prefix used to validate ISP labels")

    parser = argparse.ArgumentParser(prog="broadrel", description="Broadband reliability analyses.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", parents=[common, dataset], help="normalise raw measurements")
    p = sub.add_parser("stats", parents=[common, dataset], help="MTBF, MDT and availability")
    p.add_argument("--group-by", help=f"comma-separated keys from {', '.join(GROUP_KEYS)}")
    p.add_argument("--regions", help="CSV of region indicators for correlations.csv")
    sub.add_parser("dns", parents=[common, dataset], help="DNS server failure probabilities")
    p = sub.add_parser("experiment", parents=[common, dataset], help="loss vs demand natural experiments")
    p.add_argument("--metric", choices=[m.value for m in Metric])
    sub.add_parser("multihome", parents=[common, dataset], help="simulated multihoming from neighbours")
    p = sub.add_parser("apsurvey", parents=[common], help="neighbouring access point survey")
    p.add_argument("scans", help="scans.csv")
    p.add_argument("--client-isp", help="CSV of client_id,isp")
    p.add_argument("--rules", help="ISP inference rules file")
    p = sub.add_parser("failover", parents=[common], help="dual-uplink streaming simulation")
    p.add_argument("scenario", nargs="?", help="scenario JSON")
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--units", type=int)
    p.add_argument("--hours", type=int)
    return parser


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="broadrel: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_run_config(args)
        with Staging(args.out) as out:
            result = COMMANDS[args.command](args, cfg, out)
            inputs, cfg_dict = result if isinstance(result, tuple) else (result, cfg.to_dict(args.command))
            out.write_manifest(args.command, cfg_dict, inputs, __version__)
    except ConfigError as exc:
        print(f"broadrel: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IngestError, FileNotFoundError) as exc:
        print(f"broadrel: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EmptyScopeError, NoDataError) as exc:
        print(f"broadrel: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    except NoMatchesError as exc:
        print(f"broadrel: {exc.code}: {exc}", file=sys.stderr)
        return EXIT_NO_MATCHES
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        log.debug("unexpected failure", exc_info=True)
        print(f"broadrel: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
