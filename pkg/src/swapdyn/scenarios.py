"""One-day capacity-disruption experiments on the example network and (theta, Cap) sweeps."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .analysis import AD_TOL, PhaseLabel, SweepCellResult, ad_index, classify_phase, solve_ue_oracle
from .dynamics import StepperConfig, TrajectoryRecord, run_trajectory
from .network import FlowState, Network, NetworkError, load_network
from .protocols import ProtocolParams

log = logging.getLogger(__name__)

FIXTURE = "example_network.json"

# route i <-> route 9-i, and the matching link permutation
ROUTE_INVOLUTION = {"1": "8", "2": "7", "3": "6", "4": "5", "5": "4", "6": "3", "7": "2", "8": "1"}
LINK_INVOLUTION = {
    "1": "4", "2": "3", "3": "2", "4": "1", "5": "8", "6": "7", "7": "6", "8": "5",
    "9": "13", "10": "12", "11": "11", "12": "10", "13": "9",
    "14": "17", "15": "16", "16": "15", "17": "14",
}  # fmt: skip


def _fixture_data() -> dict:
    text = resources.files("swapdyn").joinpath("data", FIXTURE).read_text(encoding="utf-8")
    return json.loads(text)


def build_example_network() -> Network:
    """The 17-link, 8-route, 2-OD example network with calibrated symmetric BPR parameters."""
    return Network.from_dict(_fixture_data())


def example_reference() -> FlowState:
    """Frozen oracle equilibrium of :func:`build_example_network`."""
    data = _fixture_data()
    net = Network.from_dict(data)
    return FlowState.from_mapping(net, data["reference_ue"]["flows"])


def apply_reduction(net: Network, link: str, fraction: float) -> Network:
    """Copy of ``net`` with the capacity of ``link`` multiplied by ``1 - fraction``."""
    if not 0 <= fraction < 1:
        raise ValueError(f"reduction fraction must lie in [0, 1), got {fraction!r}")
    if link not in net.link_index:
        raise NetworkError(f"unknown link {link!r}")
    if fraction == 0:
        return net
    return net.with_capacity(link, net.capacities[net.link_index[link]] * (1.0 - fraction))


def decimal_grid(start: float, step: float, stop: float) -> list[float]:
    """Inclusive ``[start:step:stop]`` built from integer multiples of ``step`` in decimal."""
    s, h, e = (Decimal(str(x)) for x in (start, step, stop))
    if h <= 0:
        raise ValueError("grid step must be > 0")
    n = int((e - s) / h)
    if n < 0:
        raise ValueError("grid stop lies before start")
    return [float(s + i * h) for i in range(n + 1)]


def parse_grid(spec: Any) -> list[float]:
    if isinstance(spec, Mapping):
        try:
            return decimal_grid(spec["start"], spec["step"], spec["stop"])
        except KeyError as exc:
            raise ValueError(f"grid object needs start/step/stop, missing {exc}") from None
    if isinstance(spec, (list, tuple)):
        return [float(x) for x in spec]
    return [float(spec)]


@dataclass(frozen=True)
class Reduction:
    link: str
    fraction: float
    days: tuple[int, ...] = (0,)

    def __post_init__(self):
        if not 0 <= self.fraction < 1:
            raise ValueError(f"reduction fraction must lie in [0, 1), got {self.fraction!r}")


@dataclass(frozen=True)
class ScenarioSpec:
    network: Network
    reference: FlowState
    protocol: ProtocolParams = ProtocolParams()
    stepper: StepperConfig = StepperConfig(run_to_horizon=True)
    cap_link: str = "11"
    theta_grid: tuple[float, ...] = (0.1,)
    cap_grid: tuple[float, ...] = (0.5,)
    reduction_days: tuple[int, ...] = (0,)
    ad_cycle: int = 2
    ad_tol: float = AD_TOL

    def __post_init__(self):
        object.__setattr__(self, "theta_grid", tuple(float(x) for x in self.theta_grid))
        object.__setattr__(self, "cap_grid", tuple(float(x) for x in self.cap_grid))
        problems = []
        for name, grid in (("theta_grid", self.theta_grid), ("cap_grid", self.cap_grid)):
            if not grid:
                problems.append(f"{name} is empty")
            elif any(b <= a for a, b in zip(grid, grid[1:])):
                problems.append(f"{name} must be strictly increasing")
        if any(t <= 0 for t in self.theta_grid):
            problems.append("theta values must be > 0")
        if any(not 0 <= c < 1 for c in self.cap_grid):
            problems.append("capacity reductions must lie in [0, 1)")
        if self.cap_link not in self.network.link_index:
            problems.append(f"unknown reduction link {self.cap_link!r}")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def cells(self) -> list[tuple[float, float]]:
        return [(th, cap) for th in self.theta_grid for cap in self.cap_grid]


def scenario_trajectory(
    spec: ScenarioSpec, theta: float, cap: float, link: str | None = None
) -> TrajectoryRecord:
    """Trajectory from the reference equilibrium with a capacity reduction on the disruption days."""
    link = spec.cap_link if link is None else link
    reduced = apply_reduction(spec.network, link, cap)
    schedule = {d: reduced for d in spec.reduction_days} if cap > 0 else {}
    return run_trajectory(spec.network, spec.reference, spec.protocol.with_theta(theta), spec.stepper, schedule)


def run_scenario(spec: ScenarioSpec, theta: float, cap: float, link: str | None = None) -> SweepCellResult:
    link = spec.cap_link if link is None else link
    rec = scenario_trajectory(spec, theta, cap, link)
    ad = ad_index(rec, spec.reference, spec.ad_cycle)
    return SweepCellResult(
        theta=theta,
        cap_link=link,
        cap_fraction=cap,
        termination=rec.termination,
        ad=ad,
        days_to_converge=rec.converged_day,
    )


def _run_cell(args) -> SweepCellResult:
    spec, theta, cap = args
    try:
        return run_scenario(spec, theta, cap)
    except Exception as exc:  # recorded per cell; the sweep continues
        log.warning("cell theta=%s cap=%s failed: %s", theta, cap, exc)
        return SweepCellResult(theta, spec.cap_link, cap, None, float("nan"), None, error=f"{type(exc).__name__}: {exc}")


@dataclass
class SweepResult:
    cells: list[SweepCellResult]
    phases: dict[float, PhaseLabel] = field(default_factory=dict)

    def phase_of(self, theta: float) -> PhaseLabel | None:
        return self.phases.get(theta)


def run_sweep(spec: ScenarioSpec, jobs: int = 1) -> SweepResult:
    """Run every (theta, cap) cell; output order is grid order at any ``jobs``."""
    tasks = [(spec, th, cap) for th, cap in spec.cells]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        cells = [_run_cell(t) for t in tasks]
    cells.sort(key=lambda c: (c.theta, c.cap_fraction))
    phases = {}
    ok_thetas = {c.theta for c in cells} - {c.theta for c in cells if c.error is not None}
    if ok_thetas:
        phases = classify_phase([c for c in cells if c.theta in ok_thetas], spec.ad_tol, spec.cap_grid)
    return SweepResult(cells, phases)


# --------------------------------------------------------------------------
# scenario config files


@dataclass(frozen=True)
class ScenarioConfig:
    """Parsed form of a scenario JSON file (paths unresolved)."""

    network: str = "example"
    protocol: ProtocolParams = ProtocolParams()
    stepper: StepperConfig = StepperConfig(run_to_horizon=True)
    reductions: tuple[Reduction, ...] = (Reduction("11", 0.5),)
    theta_grid: tuple[float, ...] = (0.1,)
    cap_grid: tuple[float, ...] = (0.5,)
    cap_link: str | None = None
    reference: str = "oracle"
    ad_cycle: int = 2
    ad_tol: float = AD_TOL

    @classmethod
    def from_dict(cls, d: Mapping) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown scenario key(s): {sorted(unknown)}")
        raw = d.get("reductions", [{"link": "11", "fraction": 0.5, "day": 0}])
        if not isinstance(raw, list) or len(raw) > 1:
            raise ValueError("reductions must be a list with at most one entry (single-link disruptions)")
        reductions = []
        for r in raw:
            days = r.get("days", r.get("day", 0))
            days = tuple(int(x) for x in days) if isinstance(days, (list, tuple)) else (int(days),)
            reductions.append(Reduction(str(r["link"]), float(r["fraction"]), days))
        return cls(
            network=str(d.get("network", "example")),
            protocol=ProtocolParams.from_dict(d.get("protocol", {})),
            stepper=StepperConfig.from_dict({"run_to_horizon": True, **d.get("stepper", {})}),
            reductions=tuple(reductions),
            theta_grid=tuple(parse_grid(d.get("theta_grid", [0.1]))),
            cap_grid=tuple(parse_grid(d.get("cap_grid", [0.5]))),
            cap_link=None if d.get("cap_link") is None else str(d["cap_link"]),
            reference=str(d.get("reference", "oracle")),
            ad_cycle=int(d.get("ad_cycle", 2)),
            ad_tol=float(d.get("ad_tol", AD_TOL)),
        )

    def to_dict(self) -> dict:
        d = {
            "network": self.network,
            "protocol": self.protocol.to_dict(),
            "stepper": self.stepper.to_dict(),
            "reductions": [{"link": r.link, "fraction": r.fraction, "days": list(r.days)} for r in self.reductions],
            "theta_grid": list(self.theta_grid),
            "cap_grid": list(self.cap_grid),
            "reference": self.reference,
            "ad_cycle": self.ad_cycle,
            "ad_tol": self.ad_tol,
        }
        if self.cap_link is not None:
            d["cap_link"] = self.cap_link
        return d

    @property
    def sweep_link(self) -> str:
        if self.cap_link is not None:
            return self.cap_link
        if self.reductions:
            return self.reductions[0].link
        raise ValueError("scenario names no reduction link")

    @property
    def reduction_days(self) -> tuple[int, ...]:
        return self.reductions[0].days if self.reductions else (0,)


def load_scenario_config(path: str | Path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError("scenario file must hold a JSON object")
    return ScenarioConfig.from_dict(data)


def resolve_network(cfg: ScenarioConfig, base_dir: Path) -> Network:
    if cfg.network == "example":
        return build_example_network()
    return load_network(base_dir / cfg.network)


def resolve_reference(cfg: ScenarioConfig, net: Network, base_dir: Path) -> FlowState:
    """Reference equilibrium: the frozen fixture UE, a fresh oracle solve, or a flow file."""
    if cfg.reference == "oracle":
        if cfg.network == "example":
            return example_reference()
        res = solve_ue_oracle(net)
        if not res.converged:
            raise ValueError(f"UE oracle did not reach its tolerance (gap {res.rel_gap:.3e})")
        return res.flows
    with open(base_dir / cfg.reference, encoding="utf-8") as fh:
        data = json.load(fh)
    flows = data.get("flows", data) if isinstance(data, dict) else data
    if isinstance(flows, dict):
        return FlowState.from_mapping(net, {str(k): float(v) for k, v in flows.items()})
    return FlowState(np.asarray(flows, dtype=float))


def build_spec(cfg: ScenarioConfig, base_dir: Path, network: Network | None = None) -> ScenarioSpec:
    net = network if network is not None else resolve_network(cfg, base_dir)
    return ScenarioSpec(
        network=net,
        reference=resolve_reference(cfg, net, base_dir),
        protocol=cfg.protocol,
        stepper=cfg.stepper,
        cap_link=cfg.sweep_link,
        theta_grid=cfg.theta_grid,
        cap_grid=cfg.cap_grid,
        reduction_days=cfg.reduction_days,
        ad_cycle=cfg.ad_cycle,
        ad_tol=cfg.ad_tol,
    )


def is_route_symmetric(flows: np.ndarray, route_ids: Sequence[str]) -> bool:
    """Bit-exact equality of every route flow with its mirror route."""
    idx = {r: i for i, r in enumerate(route_ids)}
    perm = [idx[ROUTE_INVOLUTION[r]] for r in route_ids]
    return bool(np.array_equal(flows, flows[..., perm]))
