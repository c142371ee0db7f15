"""Revision protocols: per-day swap proportions between routes of an OD pair.

Three variants share one interface (:func:`swap_matrix`):

* ``npsd``      nonlinear pairwise swapping, ``(1/|R_k|) (1 - exp(-theta dC))``
* ``pap_fixed`` proportional switch with a constant ``kappa``
* ``pap_he``    proportional switch with the cost-dependent ``kappa`` of He et al.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .network import Network, NetworkError, canonical_sum


class Variant(str, enum.Enum):
    NPSD = "npsd"
    PAP_FIXED = "pap_fixed"
    PAP_HE = "pap_he"


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class ProtocolParams:
    variant: Variant = Variant.NPSD
    theta: float | Mapping[str, float] = 0.1
    kappa: float | None = None
    reluctance: float | None = None
    cost_epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if isinstance(self.theta, Mapping):
            object.__setattr__(self, "theta", dict(self.theta))
        problems = self.problems()
        if problems:
            raise ProtocolError("; ".join(problems))

    def problems(self) -> list[str]:
        out = []
        if not self.cost_epsilon >= 0:
            out.append("cost_epsilon must be >= 0")
        if self.variant is Variant.NPSD:
            thetas = self.theta.values() if isinstance(self.theta, dict) else [self.theta]
            if not all(isinstance(t, (int, float)) and t > 0 for t in thetas):
                out.append("NPSD requires theta > 0")
        elif self.variant is Variant.PAP_FIXED:
            if self.kappa is None or not self.kappa > 0:
                out.append("PAP_FIXED requires kappa > 0")
        elif self.variant is Variant.PAP_HE:
            if self.reluctance is None or not self.reluctance > 0:
                out.append("PAP_HE requires reluctance > 0")
        return out

    def theta_for(self, od_id: str) -> float:
        if isinstance(self.theta, dict):
            try:
                return float(self.theta[od_id])
            except KeyError:
                raise ProtocolError(f"no theta given for OD pair {od_id!r}") from None
        return float(self.theta)

    def with_theta(self, theta: float) -> "ProtocolParams":
        return ProtocolParams(self.variant, theta, self.kappa, self.reluctance, self.cost_epsilon)

    def to_dict(self) -> dict:
        d: dict = {"variant": self.variant.value}
        d["theta"] = dict(self.theta) if isinstance(self.theta, dict) else self.theta
        if self.kappa is not None:
            d["kappa"] = self.kappa
        if self.reluctance is not None:
            d["reluctance"] = self.reluctance
        d["cost_epsilon"] = self.cost_epsilon
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProtocolParams":
        try:
            return cls(
                variant=Variant(d.get("variant", "npsd")),
                theta=d.get("theta", 0.1),
                kappa=d.get("kappa"),
                reluctance=d.get("reluctance"),
                cost_epsilon=float(d.get("cost_epsilon", 0.0)),
            )
        except ValueError as exc:
            raise ProtocolError(str(exc)) from exc


@dataclass(frozen=True)
class SwapMatrix:
    """Swap proportions, one square block per OD pair.

    ``blocks[w][i, j]`` is the share of flow on the i-th route of OD pair ``w``
    moving to its j-th route; route positions come from ``Network.od_blocks``.
    ``outflow`` is the total swap-off fraction of every route, indexed like
    ``Network.routes``. It is what the evolution equation uses and is
    computed so that rounding never pushes a mathematically admissible row
    above 1.
    """

    od_ids: tuple[str, ...]
    route_ids: tuple[str, ...]
    blocks: tuple[np.ndarray, ...]
    positions: tuple[np.ndarray, ...]
    outflow: np.ndarray

    @property
    def over_swapping(self) -> np.ndarray:
        """Per-route flag: total swap-off proportion exceeds 1."""
        return self.outflow > 1.0

    def over_swapping_routes(self) -> list[str]:
        return [r for r, bad in zip(self.route_ids, self.over_swapping) if bad]

    def block(self, od_id: str) -> np.ndarray:
        return self.blocks[self.od_ids.index(od_id)]

    def dense(self) -> np.ndarray:
        """Full route-by-route matrix (zero across OD pairs)."""
        n = len(self.route_ids)
        out = np.zeros((n, n))
        for pos, blk in zip(self.positions, self.blocks):
            out[np.ix_(pos, pos)] = blk
        return out

    def violations(self, costs: np.ndarray) -> list[str]:
        """Check the structural invariants against the costs the matrix was built from."""
        out = []
        for od, pos, blk in zip(self.od_ids, self.positions, self.blocks):
            c = costs[pos]
            if np.any(blk < 0):
                out.append(f"OD {od}: negative proportion")
            if np.any(np.diag(blk) != 0):
                out.append(f"OD {od}: nonzero diagonal")
            if np.any(blk * (c[:, None] - c[None, :]) < 0):
                out.append(f"OD {od}: contrary-sign property violated")
        for rid in self.over_swapping_routes():
            out.append(f"route {rid}: over-swapping, total swap-off proportion exceeds 1")
        return out


def candidate_set(k: int, costs: np.ndarray, epsilon: float = 0.0) -> np.ndarray:
    """Indices ``p`` of ``costs`` with ``C_p < C_k - epsilon``.

    ``costs`` is the cost vector of a single OD pair; ``k`` indexes into it.
    """
    costs = np.asarray(costs, dtype=float)
    if not 0 <= k < costs.shape[0]:
        raise IndexError(f"route index {k} outside cost vector of length {costs.shape[0]}")
    return np.flatnonzero(costs < costs[k] - epsilon)


def route_candidates(net: Network, route_id: str, costs: np.ndarray, epsilon: float = 0.0) -> set[str]:
    """Network-level :func:`candidate_set`: cheaper routes of the same OD pair, by id."""
    try:
        route = net.routes[net.route_index[route_id]]
    except KeyError:
        raise NetworkError(f"unknown route {route_id!r}") from None
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (len(net.routes),):
        raise NetworkError(f"expected {len(net.routes)} route costs, got shape {costs.shape}")
    pos = net.od_blocks[net.od_ids.index(route.od_pair)]
    k = int(np.flatnonzero(pos == net.route_index[route_id])[0])
    return {net.routes[pos[p]].id for p in candidate_set(k, costs[pos], epsilon)}


def npsd_rate(k: int, p: int, costs: np.ndarray, theta: float, epsilon: float = 0.0) -> float:
    if not theta > 0:
        raise ProtocolError("theta must be > 0")
    cands = candidate_set(k, costs, epsilon)
    if p not in cands:
        return 0.0
    dc = costs[k] - costs[p]
    return max(0.0, -math.expm1(-theta * dc) / len(cands))


def pap_rate_fixed(k: int, p: int, costs: np.ndarray, kappa: float) -> float:
    if not kappa > 0:
        raise ProtocolError("kappa must be > 0")
    return kappa * max(0.0, float(costs[k] - costs[p]))


def smith_wisten_kappa_bound(net: Network | int, cost_upper_bound: float) -> float:
    """``1 / (B M)`` with ``M`` the number of routes in the network."""
    if not cost_upper_bound > 0:
        raise ProtocolError("cost upper bound must be > 0")
    m = net if isinstance(net, int) else len(net.routes)
    if m < 1:
        raise ProtocolError("network has no routes")
    return 1.0 / (cost_upper_bound * m)


def pap_kappa_he(costs: np.ndarray, reluctance: float) -> float:
    # ordered pairs within one OD pair
    if not reluctance > 0:
        raise ProtocolError("reluctance must be > 0")
    c = np.asarray(costs, dtype=float)
    total = np.maximum(0.0, c[:, None] - c[None, :]).sum()
    return 1.0 / (total + reluctance)


def npsd_block(costs: np.ndarray, theta: float, epsilon: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Swap block and outflow fractions for one OD pair under NPSD."""
    c = np.asarray(costs, dtype=float)
    diff = c[:, None] - c[None, :]
    cand = c[None, :] < c[:, None] - epsilon
    n_cand = cand.sum(axis=1)
    # 1 - exp(-theta dC) via expm1; exp term kept for the outflow
    with np.errstate(over="ignore"):
        e = np.where(cand, np.exp(-theta * np.where(cand, diff, 0.0)), 1.0)
        gain = np.where(cand, -np.expm1(-theta * np.where(cand, diff, 0.0)), 0.0)
    denom = np.maximum(n_cand, 1)[:, None]
    block = np.maximum(0.0, gain / denom)
    # 1 - mean over candidates of exp(-theta dC): exactly <= 1 in floating point
    stay = np.where(n_cand > 0, canonical_sum(np.where(cand, e, 0.0), axis=1) / np.maximum(n_cand, 1), 1.0)
    outflow = 1.0 - stay
    return block, outflow


def pap_block(costs: np.ndarray, kappa: float, epsilon: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    c = np.asarray(costs, dtype=float)
    diff = c[:, None] - c[None, :]
    cand = c[None, :] < c[:, None] - epsilon
    block = np.where(cand, kappa * np.maximum(0.0, diff), 0.0)
    outflow = np.array([math.fsum(row) for row in block])
    return block, outflow


def swap_matrix(net: Network, costs: np.ndarray, params: ProtocolParams) -> SwapMatrix:
    """Assemble the swap proportions of every OD pair for one day."""
    costs = np.asarray(costs, dtype=float)
    if costs.shape != (len(net.routes),):
        raise NetworkError(f"expected {len(net.routes)} route costs, got shape {costs.shape}")
    problems = params.problems()
    if problems:
        raise ProtocolError("; ".join(problems))
    eps = params.cost_epsilon
    blocks = []
    outflow = np.zeros(len(net.routes))
    for od, pos in zip(net.od_pairs, net.od_blocks):
        c = costs[pos]
        if params.variant is Variant.NPSD:
            blk, out = npsd_block(c, params.theta_for(od.id), eps)
        elif params.variant is Variant.PAP_FIXED:
            blk, out = pap_block(c, params.kappa, eps)
        else:
            blk, out = pap_block(c, pap_kappa_he(c, params.reluctance), eps)
        blk.setflags(write=False)
        blocks.append(blk)
        outflow[pos] = out
    outflow.setflags(write=False)
    return SwapMatrix(
        od_ids=tuple(net.od_ids),
        route_ids=tuple(net.route_ids),
        blocks=tuple(blocks),
        positions=tuple(net.od_blocks),
        outflow=outflow,
    )
