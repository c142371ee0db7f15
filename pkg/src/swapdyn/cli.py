"""Command-line front end.

Exit codes: 0 success, 1 domain violation, 2 I/O or parse failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .analysis import AD_TOL, PhaseLabel, SweepCellResult, ad_index, classify_phase, is_wardrop_ue, solve_ue_oracle
from .dynamics import OverSwappingError, fmt
from .network import NetworkError, feasibility_violations, load_network, validate
from .protocols import ProtocolError
from .scenarios import (
    ScenarioConfig,
    ScenarioSpec,
    SweepResult,
    build_spec,
    load_scenario_config,
    run_sweep,
    scenario_trajectory,
)

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2
FORMAT_VERSION = "1"
OUT_ENV = "SWAPDYN_OUT"

SWEEP_COLUMNS = ["theta", "cap_link", "cap_fraction", "termination", "period", "days", "ad", "phase", "error"]

log = logging.getLogger("swapdyn")


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _out_dir(arg: str | None) -> Path:
    out = Path(arg or os.environ.get(OUT_ENV, "out"))
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {out}: {exc}", EXIT_IO) from exc
    return out


def num(x: float | None) -> float | None:
    """JSON number rounded to the 12 significant digits used in every CSV; NaN becomes null."""
    if x is None or x != x:
        return None
    return float(fmt(x))


def _dump_json(obj, path: Path | None = None) -> str:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if path is not None:
        path.write_text(text, encoding="utf-8")
    return text


def _load_network_or_fail(path: str):
    try:
        return load_network(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except (json.JSONDecodeError, NetworkError) as exc:
        raise CliError(f"cannot parse {path}: {exc}", EXIT_IO) from exc


def _load_spec(path: str) -> tuple[ScenarioConfig, ScenarioSpec]:
    try:
        cfg = load_scenario_config(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    except (json.JSONDecodeError, ValueError, KeyError, TypeError) as exc:
        raise CliError(f"cannot parse {path}: {exc}", EXIT_IO) from exc
    base = Path(path).resolve().parent
    try:
        spec = build_spec(cfg, base)
    except OSError as exc:
        raise CliError(f"cannot read scenario input: {exc}", EXIT_IO) from exc
    except json.JSONDecodeError as exc:
        raise CliError(f"cannot parse scenario input: {exc}", EXIT_IO) from exc
    except (NetworkError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    problems = validate(spec.network)
    if problems:
        raise CliError("invalid network: " + "; ".join(problems), EXIT_DOMAIN)
    violated = feasibility_violations(spec.network, spec.reference)
    if violated:
        raise CliError("infeasible initial flows: " + "; ".join(violated), EXIT_DOMAIN)
    return cfg, spec


# --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    net = _load_network_or_fail(args.network)
    problems = validate(net)
    for p in problems:
        print(p)
    if problems:
        return EXIT_DOMAIN
    print(f"ok: {len(net.links)} links, {len(net.routes)} routes, {len(net.od_pairs)} OD pairs")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg, spec = _load_spec(args.scenario)
    theta = args.theta if args.theta is not None else spec.theta_grid[0]
    link = args.cap_link if args.cap_link is not None else spec.cap_link
    if args.cap_fraction is not None:
        cap = args.cap_fraction
    else:
        cap = cfg.reductions[0].fraction if cfg.reductions else 0.0
    if not theta > 0:
        raise CliError("theta must be > 0", EXIT_DOMAIN)
    out = _out_dir(args.out)
    try:
        rec = scenario_trajectory(spec, theta, cap, link)
    except (OverSwappingError, ProtocolError, NetworkError, ValueError) as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    rec.write_csv(out / "trajectory.csv")
    ad = ad_index(rec, spec.reference, spec.ad_cycle)
    summary = {
        "format_version": FORMAT_VERSION,
        "theta": num(theta),
        "cap_link": link,
        "cap_fraction": num(cap),
        "termination": rec.termination.outcome.value,
        "period": rec.termination.period,
        "days": rec.termination.day,
        "days_to_converge": rec.converged_day,
        "ad": num(ad),
        "final_flows": {r: num(x) for r, x in zip(rec.route_ids, rec.flows[-1])},
        "final_link_flows": {a: num(x) for a, x in zip(rec.link_ids, rec.link_flows[-1])},
    }
    _dump_json(summary, out / "summary.json")
    print(f"{rec.termination}; AD = {fmt(ad)}; wrote {out / 'trajectory.csv'} and {out / 'summary.json'}")
    return EXIT_OK


def sweep_rows(result: SweepResult) -> list[dict[str, str]]:
    rows = []
    for c in result.cells:
        term = c.termination
        phase = result.phases.get(c.theta)
        rows.append(
            {
                "theta": fmt(c.theta),
                "cap_link": c.cap_link or "",
                "cap_fraction": fmt(c.cap_fraction),
                "termination": term.outcome.value if term else "ERROR",
                "period": "" if term is None or term.period is None else str(term.period),
                "days": "" if term is None else str(term.day),
                "ad": fmt(c.ad),
                "phase": phase.value if phase else "",
                "error": c.error or "",
            }
        )
    return rows


def sweep_json_row(c: SweepCellResult, result: SweepResult) -> dict:
    term = c.termination
    phase = result.phases.get(c.theta)
    return {
        "theta": num(c.theta),
        "cap_link": c.cap_link,
        "cap_fraction": num(c.cap_fraction),
        "termination": term.outcome.value if term else "ERROR",
        "period": None if term is None else term.period,
        "days": None if term is None else term.day,
        "ad": num(c.ad),
        "phase": phase.value if phase else None,
        "error": c.error,
    }


def write_sweep_csv(rows: list[dict[str, str]], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def phase_bands(phases: dict[float, PhaseLabel]) -> list[dict]:
    """Contiguous runs of equal labels along the theta axis."""
    bands: list[dict] = []
    for theta in sorted(phases):
        label = phases[theta].value
        if bands and bands[-1]["phase"] == label:
            bands[-1]["theta_max"] = num(theta)
            bands[-1]["count"] += 1
        else:
            bands.append({"phase": label, "theta_min": num(theta), "theta_max": num(theta), "count": 1})
    return bands


def cmd_sweep(args) -> int:
    _, spec = _load_spec(args.scenario)
    out = _out_dir(args.out)
    result = run_sweep(spec, jobs=max(1, args.jobs))
    rows = sweep_rows(result)
    write_sweep_csv(rows, out / "sweep.csv")
    summary = [sweep_json_row(c, result) for c in result.cells]
    _dump_json(summary, out / "sweep.json")
    phases = {fmt(th): label.value for th, label in result.phases.items()}
    _dump_json({"format_version": FORMAT_VERSION, "phases": phases, "bands": phase_bands(result.phases)}, out / "phases.json")
    failed = sum(1 for c in result.cells if c.error)
    print(f"{len(rows)} cells ({failed} failed); wrote {out / 'sweep.csv'}, {out / 'sweep.json'}, {out / 'phases.json'}")
    return EXIT_OK


def read_sweep_csv(path: str) -> list[SweepCellResult]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from exc
    cells = []
    try:
        for r in rows:
            cells.append(
                SweepCellResult(
                    theta=float(r["theta"]),
                    cap_link=r.get("cap_link") or None,
                    cap_fraction=float(r["cap_fraction"]),
                    termination=None,
                    ad=float(r["ad"]),
                    days_to_converge=None,
                    error=r.get("error") or None,
                )
            )
    except (KeyError, ValueError) as exc:
        raise CliError(f"cannot parse {path}: {exc}", EXIT_IO) from exc
    return cells


def cmd_classify(args) -> int:
    cells = read_sweep_csv(args.sweep)
    caps = sorted({c.cap_fraction for c in cells})
    try:
        phases = classify_phase(cells, args.ad_tol, caps)
    except ValueError as exc:
        raise CliError(str(exc), EXIT_DOMAIN) from exc
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["theta", "phase"])
    for theta, label in phases.items():
        w.writerow([fmt(theta), label.value])
    sys.stdout.write(buf.getvalue())
    return EXIT_OK


def cmd_ue(args) -> int:
    net = _load_network_or_fail(args.network)
    problems = validate(net)
    if problems:
        for p in problems:
            print(p, file=sys.stderr)
        return EXIT_DOMAIN
    res = solve_ue_oracle(net, args.tol, args.max_iters)
    check = is_wardrop_ue(net, res.flows)
    report = {
        "format_version": FORMAT_VERSION,
        "converged": res.converged,
        "rel_gap": num(res.rel_gap),
        "iterations": res.iterations,
        "link_flows": {a: num(x) for a, x in zip(net.link_ids, res.link_flows)},
        "route_flows": {r: num(x) for r, x in zip(net.route_ids, res.flows.flows)},
        "min_costs": {w: num(x) for w, x in zip(net.od_ids, check.min_costs)},
        "is_wardrop_ue": check.is_ue,
    }
    sys.stdout.write(_dump_json(report))
    if not res.converged:
        print(f"tolerance {args.tol:g} not reached; achieved relative gap {res.rel_gap:.3e}", file=sys.stderr)
        return EXIT_DOMAIN
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swapdyn", description="Day-to-day route-swapping dynamics.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", help="check a network file")
    s.add_argument("network")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("simulate", help="run one (theta, Cap) trajectory")
    s.add_argument("scenario")
    s.add_argument("--theta", type=float)
    s.add_argument("--cap-link")
    s.add_argument("--cap-fraction", type=float)
    s.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("sweep", help="run the (theta, Cap) grid")
    s.add_argument("scenario")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./out)")
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("classify", help="phase table from a sweep CSV")
    s.add_argument("sweep")
    s.add_argument("--ad-tol", type=float, default=AD_TOL)
    s.set_defaults(func=cmd_classify)

    s = sub.add_parser("ue", help="equilibrium oracle report")
    s.add_argument("network")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iters", type=int, default=10_000)
    s.set_defaults(func=cmd_ue)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
