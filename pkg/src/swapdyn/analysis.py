"""Equilibrium and stability analytics.

Contains the Wardrop test, the Beckmann (Lyapunov) potential for BPR costs,
the day-to-day descent quantity, the average-deviation oscillation index,
phase classification of sweep results, and an equilibrium oracle that is
independent of the swapping dynamics.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, NamedTuple, Sequence

import numpy as np
from scipy.optimize import brentq

from .network import (
    BPR_ALPHA,
    BPR_BETA,
    FlowState,
    Network,
    NetworkError,
    evaluate_route_costs,
    link_costs,
    link_flows,
)

if TYPE_CHECKING:
    from .dynamics import Termination

log = logging.getLogger(__name__)

FLOW_FLOOR = 1e-9
AD_TOL = 1e-6


class PhaseLabel(str, enum.Enum):
    STABLE = "STABLE"
    META_STABLE = "META_STABLE"
    UNSTABLE = "UNSTABLE"


class UECheck(NamedTuple):
    is_ue: bool
    min_costs: np.ndarray


def is_wardrop_ue(net: Network, f: FlowState, epsilon: float = 1e-8, flow_floor: float = FLOW_FLOOR) -> UECheck:
    """Every route carrying more than ``flow_floor`` costs at most ``pi_w + epsilon``."""
    costs = evaluate_route_costs(net, f)
    pis = np.array([costs[pos].min() for pos in net.od_blocks])
    ok = True
    for pi, pos in zip(pis, net.od_blocks):
        used = f.flows[pos] > flow_floor
        if np.any(costs[pos][used] > pi + epsilon):
            ok = False
    return UECheck(bool(ok), pis)


def beckmann_link_terms(net: Network, v: np.ndarray) -> np.ndarray:
    """Per-link integral of the BPR cost from 0 to ``v``."""
    t0, cap = net.free_flow_times, net.capacities
    k = BPR_ALPHA / (BPR_BETA + 1)
    return t0 * v + k * t0 * v ** (BPR_BETA + 1) / cap**BPR_BETA


def lyapunov_value(net: Network, f: FlowState | np.ndarray) -> float:
    """Beckmann potential ``sum_a [c0 v + 0.03 c0 v^5 / O^4]`` at the link flows of ``f``."""
    return float(beckmann_link_terms(net, link_flows(net, f)).sum())


def rbap_descent_value(costs: np.ndarray, f_t: FlowState | np.ndarray, f_next: FlowState | np.ndarray) -> float:
    """``sum_k C_k^t (f_k^{t+1} - f_k^t)``; nonpositive for a rational adjustment step."""
    a = f_t.flows if isinstance(f_t, FlowState) else np.asarray(f_t, dtype=float)
    b = f_next.flows if isinstance(f_next, FlowState) else np.asarray(f_next, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if not (a.shape == b.shape == costs.shape):
        raise NetworkError(f"dimension mismatch: costs {costs.shape}, states {a.shape} / {b.shape}")
    return float(costs @ (b - a))


def ad_index(traj, reference: FlowState | np.ndarray, cycle: int = 2) -> float:
    """Mean Euclidean distance of the last ``cycle`` retained states from ``reference``.

    ``traj`` is a :class:`~swapdyn.dynamics.TrajectoryRecord` or a 2-d array of
    route-flow rows.
    """
    if cycle < 1:
        raise ValueError("cycle must be a positive integer")
    rows = np.asarray(getattr(traj, "flows", traj), dtype=float)
    if rows.ndim != 2 or rows.shape[0] < cycle:
        raise ValueError(f"need at least {cycle} retained states, have {0 if rows.ndim != 2 else rows.shape[0]}")
    ref = reference.flows if isinstance(reference, FlowState) else np.asarray(reference, dtype=float)
    dev = rows[-cycle:] - ref
    return float(np.sqrt((dev**2).sum(axis=1)).sum() / cycle)


@dataclass(frozen=True)
class SweepCellResult:
    theta: float
    cap_link: str | None
    cap_fraction: float
    termination: "Termination | None"
    ad: float
    days_to_converge: int | None
    error: str | None = None

    @property
    def cap(self) -> tuple[str | None, float]:
        return (self.cap_link, self.cap_fraction)


def classify_phase(
    cells: Iterable[SweepCellResult],
    ad_tol: float = AD_TOL,
    cap_grid: Sequence[float] | None = None,
) -> dict[float, PhaseLabel]:
    """Label each theta by how its cells ended across the capacity-reduction grid.

    With ``cap_grid`` given, every theta group must contain exactly those
    fractions. Failed cells (``error`` set) make a group incomplete.
    """
    groups: dict[float, list[SweepCellResult]] = {}
    for cell in cells:
        groups.setdefault(cell.theta, []).append(cell)
    out = {}
    for theta in sorted(groups):
        group = groups[theta]
        if any(c.error is not None for c in group):
            raise ValueError(f"theta={theta}: group contains failed cells")
        if cap_grid is not None:
            got = sorted(c.cap_fraction for c in group)
            if got != sorted(cap_grid):
                raise ValueError(f"theta={theta}: incomplete capacity grid {got}")
        oscillating = [c.ad > ad_tol for c in group]
        if not any(oscillating):
            out[theta] = PhaseLabel.STABLE
        elif all(oscillating):
            out[theta] = PhaseLabel.UNSTABLE
        else:
            out[theta] = PhaseLabel.META_STABLE
    return out


# --------------------------------------------------------------------------
# Equilibrium oracle


@dataclass(frozen=True)
class UEResult:
    flows: FlowState
    link_flows: np.ndarray
    rel_gap: float
    iterations: int
    converged: bool


def relative_gap(net: Network, f: np.ndarray) -> float:
    costs = evaluate_route_costs(net, f)
    total = float(costs @ f)
    best = sum(d * costs[pos].min() for d, pos in zip(net.demands, net.od_blocks))
    if total <= 0:
        return 0.0
    return max(0.0, float((total - best) / total))


def _all_or_nothing(net: Network, costs: np.ndarray) -> np.ndarray:
    y = np.zeros(len(net.routes))
    for d, pos in zip(net.demands, net.od_blocks):
        y[pos[np.argmin(costs[pos])]] = d
    return y


def _frank_wolfe(net: Network, f: np.ndarray, iters: int) -> np.ndarray:
    delta = net.incidence
    for _ in range(iters):
        costs = evaluate_route_costs(net, f)
        y = _all_or_nothing(net, costs)
        d = y - f
        dv = delta @ d
        v = delta @ f

        def slope(s: float) -> float:
            return float(link_costs(net, np.maximum(v + s * dv, 0.0)) @ dv)

        if slope(0.0) >= 0:
            break
        step = 1.0 if slope(1.0) <= 0 else brentq(slope, 0.0, 1.0, xtol=1e-15)
        f = f + step * d
    return f


def _pairwise_sweep(net: Network, f: np.ndarray) -> np.ndarray:
    """Shift flow from each costlier route to the cheapest route of its OD pair.

    Each shift is an exact line search of the Beckmann potential along the
    two-route direction (a convex combination inside the OD simplex).
    """
    delta = net.incidence
    f = f.copy()
    for pos in net.od_blocks:
        costs = evaluate_route_costs(net, f)
        s = pos[np.argmin(costs[pos])]
        for k in pos:
            if k == s or f[k] <= 0 or costs[k] <= costs[s]:
                continue
            dv = delta[:, s] - delta[:, k]
            v = delta @ f

            def slope(x: float) -> float:
                return float(link_costs(net, np.maximum(v + x * dv, 0.0)) @ dv)

            if slope(0.0) >= 0:
                continue
            cap = f[k]
            x = cap if slope(cap) <= 0 else brentq(slope, 0.0, cap, xtol=1e-15, rtol=4 * np.finfo(float).eps)
            f[k] -= x
            f[s] += x
    return f


def solve_ue_oracle(
    net: Network,
    rel_gap_tol: float = 1e-10,
    max_iters: int = 10_000,
    fw_iters: int = 50,
) -> UEResult:
    """User equilibrium over the explicit route sets by convex-combination steps.

    A few Frank-Wolfe iterations (all-or-nothing direction, exact line search)
    are followed by pairwise route equalisation, which reaches tight gaps on
    small networks where plain Frank-Wolfe stalls.
    """
    f = np.zeros(len(net.routes))
    costs0 = evaluate_route_costs(net, f)
    f = _all_or_nothing(net, costs0)
    f = _frank_wolfe(net, f, min(fw_iters, max_iters))
    gap = relative_gap(net, f)
    it = 0
    while gap > rel_gap_tol and it < max_iters:
        f = _pairwise_sweep(net, f)
        gap = relative_gap(net, f)
        it += 1
    converged = bool(gap <= rel_gap_tol)
    if not converged:
        log.warning("UE oracle stopped at relative gap %.3e after %d iterations", gap, it)
    return UEResult(FlowState(f), link_flows(net, f), relative_gap(net, f), it, converged)
