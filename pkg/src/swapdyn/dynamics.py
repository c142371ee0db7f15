"""Traffic evolution equation and day-to-day trajectory runs."""

from __future__ import annotations

import csv
import enum
from collections import deque
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .analysis import lyapunov_value
from .network import (
    FlowState,
    Network,
    NetworkError,
    canonical_sum,
    feasibility_violations,
    link_costs,
    link_flows,
    route_costs,
)
from .protocols import ProtocolParams, SwapMatrix, swap_matrix


class OverSwappingError(ValueError):
    """A swap matrix asks some route to shed more than all of its flow."""

    def __init__(self, route_ids: Sequence[str], day: int | None = None):
        self.route_ids = list(route_ids)
        self.day = day
        where = f" on day {day}" if day is not None else ""
        super().__init__(f"over-swapping{where}: total swap-off proportion > 1 on route(s) {', '.join(self.route_ids)}")


class InfeasibleStateError(ValueError):
    pass


class Mode(str, enum.Enum):
    DISCRETE = "discrete"
    EULER = "euler"


class Outcome(str, enum.Enum):
    CONVERGED = "CONVERGED"
    MAX_DAYS = "MAX_DAYS"
    CYCLE = "CYCLE"


@dataclass(frozen=True)
class Termination:
    outcome: Outcome
    day: int
    period: int | None = None
    # largest ||f^t - f^{t-L}|| over the detection window for CYCLE
    residual: float | None = None

    def __str__(self) -> str:
        if self.outcome is Outcome.CYCLE:
            return f"CYCLE(period={self.period}) at day {self.day}"
        return f"{self.outcome.value} at day {self.day}"


@dataclass(frozen=True)
class StepperConfig:
    max_days: int = 2000
    convergence_tol: float = 1e-5
    mode: Mode = Mode.DISCRETE
    euler_step: float = 1.0
    record_every: int = 1
    record_window: int = 32
    # keep iterating after the convergence criterion is first met
    run_to_horizon: bool = False
    detect_cycles: bool = True
    cycle_period_max: int = 8
    cycle_tol: float = 1e-6
    cycle_window: int = 32
    cycle_burn_in: int = 100

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        problems = []
        if not (isinstance(self.max_days, int) and self.max_days >= 1):
            problems.append("max_days must be an integer >= 1")
        if not self.convergence_tol > 0:
            problems.append("convergence_tol must be > 0")
        if not 0 < self.euler_step <= 1:
            problems.append("euler_step must lie in (0, 1]")
        if not self.record_every >= 1:
            problems.append("record_every must be >= 1")
        if not self.record_window >= 2:
            problems.append("record_window must be >= 2")
        if self.cycle_window < 2 * self.cycle_period_max:
            problems.append("cycle_window must be at least 2 * cycle_period_max")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def tau(self) -> float:
        return self.euler_step if self.mode is Mode.EULER else 1.0

    def to_dict(self) -> dict:
        return {
            "max_days": self.max_days,
            "convergence_tol": self.convergence_tol,
            "mode": self.mode.value,
            "euler_step": self.euler_step,
            "record_every": self.record_every,
            "record_window": self.record_window,
            "run_to_horizon": self.run_to_horizon,
            "detect_cycles": self.detect_cycles,
            "cycle_period_max": self.cycle_period_max,
            "cycle_tol": self.cycle_tol,
            "cycle_window": self.cycle_window,
            "cycle_burn_in": self.cycle_burn_in,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StepperConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown stepper option(s): {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrajectoryRecord:
    """Recorded days of a run. Row ``i`` of every array belongs to ``days[i]``.

    ``step_norm[i]`` and ``rbap[i]`` describe the step leaving ``days[i]``;
    they are NaN on the final row. ``rbap`` is evaluated on the step
    increment (see :func:`increment`).
    """

    route_ids: list[str]
    link_ids: list[str]
    days: np.ndarray
    flows: np.ndarray
    costs: np.ndarray
    link_flows: np.ndarray
    step_norm: np.ndarray
    rbap: np.ndarray
    lyapunov: np.ndarray
    termination: Termination
    converged_day: int | None = None

    @property
    def states(self) -> list[FlowState]:
        return [FlowState(row, int(d)) for d, row in zip(self.days, self.flows)]

    @property
    def final(self) -> FlowState:
        return FlowState(self.flows[-1], int(self.days[-1]))

    def state_at(self, day: int) -> FlowState:
        idx = np.flatnonzero(self.days == day)
        if idx.size == 0:
            raise KeyError(f"day {day} was not recorded")
        return FlowState(self.flows[idx[0]], day)

    def write_csv(self, path) -> None:
        header = (
            ["day"]
            + [f"f_{r}" for r in self.route_ids]
            + [f"C_{r}" for r in self.route_ids]
            + [f"v_{a}" for a in self.link_ids]
            + ["step_norm", "rbap_value", "lyapunov_value"]
        )
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for i, day in enumerate(self.days):
                nums = [
                    *self.flows[i],
                    *self.costs[i],
                    *self.link_flows[i],
                    self.step_norm[i],
                    self.rbap[i],
                    self.lyapunov[i],
                ]
                w.writerow([str(int(day))] + [fmt(x) for x in nums])


def fmt(x: float) -> str:
    """Fixed 12-significant-digit decimal rendering used by every emitted file."""
    x = float(x)
    if x == 0:
        return "0"
    return f"{x:.12g}"


def _check_matrix(net: Network, f: FlowState, rho: SwapMatrix) -> None:
    if f.flows.shape != (len(net.routes),) or len(rho.route_ids) != len(net.routes):
        raise NetworkError("flow state / swap matrix do not match the network")
    bad = rho.over_swapping_routes()
    if bad:
        raise OverSwappingError(bad, f.day)


def _inflow(f: np.ndarray, rho: SwapMatrix) -> np.ndarray:
    inflow = np.zeros_like(f)
    for pos, blk in zip(rho.positions, rho.blocks):
        inflow[pos] = canonical_sum(f[pos][:, None] * blk, axis=0)
    return inflow


def _evolve(f: np.ndarray, rho: SwapMatrix, tau: float) -> np.ndarray:
    # f (1 - tau * out) + tau * in; both terms are >= 0 when tau * out <= 1
    return f * (1.0 - tau * rho.outflow) + tau * _inflow(f, rho)


def increment(f: FlowState | np.ndarray, rho: SwapMatrix, tau: float = 1.0) -> np.ndarray:
    """Right-hand side ``tau (inflow - outflow)`` of the evolution equation.

    Equal to ``f' - f`` in exact arithmetic, but its rounding error scales with
    the flow actually moved rather than with the flow on each route.
    """
    flows = f.flows if isinstance(f, FlowState) else np.asarray(f, dtype=float)
    return tau * (_inflow(flows, rho) - flows * rho.outflow)


def step_discrete(net: Network, f: FlowState, rho: SwapMatrix) -> FlowState:
    """One day of the evolution equation: inflow from other routes minus outflow."""
    _check_matrix(net, f, rho)
    return FlowState(_evolve(f.flows, rho, 1.0), f.day + 1)


def step_euler(net: Network, f: FlowState, rho: SwapMatrix, tau: float) -> FlowState:
    """Explicit Euler substep of the continuous-time evolution equation.

    The day index counts substeps. ``tau = 1`` reproduces :func:`step_discrete`.
    """
    if not 0 < tau <= 1:
        raise ValueError(f"tau must lie in (0, 1], got {tau!r}")
    _check_matrix(net, f, rho)
    return FlowState(_evolve(f.flows, rho, tau), f.day + 1)


def detect_cycle(states: Sequence[FlowState | np.ndarray], period_max: int = 8, tol: float = 1e-6) -> int | None:
    """Smallest period ``L <= period_max`` whose last two ``L``-blocks agree within ``tol``."""
    period, _ = _detect_cycle(states, period_max, tol)
    return period


def _detect_cycle(states, period_max: int, tol: float) -> tuple[int | None, float | None]:
    if period_max < 1:
        raise ValueError("period_max must be >= 1")
    if len(states) < 2 * period_max:
        raise ValueError(f"window of {len(states)} states is shorter than 2 * period_max = {2 * period_max}")
    arr = np.array([s.flows if isinstance(s, FlowState) else s for s in states], dtype=float)
    for L in range(1, period_max + 1):
        recent = arr[-L:]
        earlier = arr[-2 * L : -L]
        res = float(np.sqrt(((recent - earlier) ** 2).sum(axis=1)).max())
        if res <= tol:
            return L, res
    return None, None


class _Recorder:
    def __init__(self, stride: int, window: int):
        self.stride = stride
        self.rows: dict[int, tuple] = {}
        self.tail: deque = deque(maxlen=window)

    def add(self, day: int, row: tuple) -> None:
        if day % self.stride == 0:
            self.rows[day] = row
        self.tail.append((day, row))

    def patch_last(self, step_norm: float, rbap: float) -> None:
        day, row = self.tail[-1]
        row = row[:4] + (step_norm, rbap) + row[6:]
        self.tail[-1] = (day, row)
        if day in self.rows:
            self.rows[day] = row

    def collect(self):
        merged = dict(self.rows)
        merged.update(dict(self.tail))
        days = sorted(merged)
        return days, [merged[d] for d in days]


def run_trajectory(
    net: Network,
    f0: FlowState,
    params: ProtocolParams,
    cfg: StepperConfig = StepperConfig(),
    cost_networks: Mapping[int, Network] | None = None,
) -> TrajectoryRecord:
    """Iterate cost evaluation, swap proportions and the evolution step.

    ``cost_networks`` overrides the network used for cost evaluation on
    particular step indices (e.g. a reduced-capacity network on day 0).
    Diagnostics always use the costs that actually drove the step; the
    Lyapunov column is the potential of the base network.
    """
    violations = feasibility_violations(net, f0)
    if violations:
        raise InfeasibleStateError("; ".join(violations))
    cost_networks = cost_networks or {}
    tau = cfg.tau
    def observe(flows: np.ndarray, t: int):
        net_t = cost_networks.get(t, net)
        v = link_flows(net, flows)
        costs = route_costs(net_t, link_costs(net_t, v))
        return net_t, v, costs

    rec = _Recorder(cfg.record_every, cfg.record_window)
    window: deque = deque(maxlen=cfg.cycle_window)
    f = np.array(f0.flows)
    day0 = f0.day
    window.append(f)
    converged_day = None
    termination = None
    t = 0
    while True:
        net_t, v, costs = observe(f, t)
        lyap = lyapunov_value(net, f)
        rec.add(day0 + t, (f, costs, v, lyap, np.nan, np.nan))
        if termination is not None:
            break
        if t >= cfg.max_days:
            termination = Termination(Outcome.MAX_DAYS, day0 + t)
            break

        rho = swap_matrix(net_t, costs, params)
        bad = rho.over_swapping_routes()
        if bad:
            raise OverSwappingError(bad, day0 + t)
        f_next = _evolve(f, rho, tau)
        diff = f_next - f
        norm = float(np.sqrt(diff @ diff))
        rec.patch_last(norm, float(costs @ increment(f, rho, tau)))
        t += 1
        f = f_next
        window.append(f)

        if norm <= cfg.convergence_tol:
            if converged_day is None:
                converged_day = day0 + t
                if not cfg.run_to_horizon:
                    termination = Termination(Outcome.CONVERGED, converged_day)
                    continue
            if norm == 0.0:
                # exact fixed point: every later day is identical
                termination = Termination(Outcome.CONVERGED, converged_day)
            continue
        # left the neighbourhood of a fixed point (unstable equilibrium)
        converged_day = None
        if cfg.detect_cycles and t >= cfg.cycle_burn_in and len(window) >= 2 * cfg.cycle_period_max:
            period, res = _detect_cycle(window, cfg.cycle_period_max, cfg.cycle_tol)
            if period is not None and period > 1:
                termination = Termination(Outcome.CYCLE, day0 + t, period, res)

    if termination.outcome is Outcome.MAX_DAYS and converged_day is not None:
        termination = Termination(Outcome.CONVERGED, converged_day)

    days, rows = rec.collect()
    return TrajectoryRecord(
        route_ids=net.route_ids,
        link_ids=net.link_ids,
        days=np.array(days, dtype=int),
        flows=np.array([r[0] for r in rows]),
        costs=np.array([r[1] for r in rows]),
        link_flows=np.array([r[2] for r in rows]),
        lyapunov=np.array([r[3] for r in rows]),
        step_norm=np.array([r[4] for r in rows]),
        rbap=np.array([r[5] for r in rows]),
        termination=termination,
        converged_day=converged_day,
    )
