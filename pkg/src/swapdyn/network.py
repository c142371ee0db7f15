"""Path-based network description, flow states and BPR cost evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

BPR_ALPHA = 0.15
BPR_BETA = 4
FEASIBILITY_TOL = 1e-9


class NetworkError(ValueError):
    """Raised when a network or flow vector is structurally inconsistent."""


@dataclass(frozen=True)
class Link:
    id: str
    free_flow_time: float
    capacity: float


@dataclass(frozen=True)
class Route:
    id: str
    od_pair: str
    links: tuple[str, ...]


@dataclass(frozen=True)
class ODPair:
    id: str
    origin: str
    destination: str
    demand: float


@dataclass(frozen=True)
class Network:
    """Immutable route-based network.

    Construction does not validate; call :func:`validate` to get the list of
    problems. The numeric views (incidence matrix, OD index blocks) raise
    :class:`NetworkError` on a network with dangling references.
    """

    links: tuple[Link, ...]
    routes: tuple[Route, ...]
    od_pairs: tuple[ODPair, ...]

    def __post_init__(self):
        object.__setattr__(self, "links", tuple(self.links))
        object.__setattr__(self, "routes", tuple(self.routes))
        object.__setattr__(self, "od_pairs", tuple(self.od_pairs))

    @property
    def link_ids(self) -> list[str]:
        return [a.id for a in self.links]

    @property
    def route_ids(self) -> list[str]:
        return [r.id for r in self.routes]

    @property
    def od_ids(self) -> list[str]:
        return [w.id for w in self.od_pairs]

    @cached_property
    def link_index(self) -> dict[str, int]:
        return {a.id: i for i, a in enumerate(self.links)}

    @cached_property
    def route_index(self) -> dict[str, int]:
        return {r.id: i for i, r in enumerate(self.routes)}

    @cached_property
    def free_flow_times(self) -> np.ndarray:
        return _readonly(np.array([a.free_flow_time for a in self.links], dtype=float))

    @cached_property
    def capacities(self) -> np.ndarray:
        return _readonly(np.array([a.capacity for a in self.links], dtype=float))

    @cached_property
    def demands(self) -> np.ndarray:
        return _readonly(np.array([w.demand for w in self.od_pairs], dtype=float))

    @cached_property
    def incidence(self) -> np.ndarray:
        """0-1 link-route incidence matrix, shape (n_links, n_routes)."""
        delta = np.zeros((len(self.links), len(self.routes)))
        for j, route in enumerate(self.routes):
            for link_id in route.links:
                if link_id not in self.link_index:
                    raise NetworkError(f"route {route.id!r} references unknown link {link_id!r}")
                delta[self.link_index[link_id], j] = 1.0
        return _readonly(delta)

    @cached_property
    def route_link_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded link positions of every route and the matching validity mask."""
        self.incidence  # raises on dangling references
        return _padded([[self.link_index[x] for x in r.links] for r in self.routes])

    @cached_property
    def link_route_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded route positions crossing every link and the matching validity mask."""
        members = [list(np.flatnonzero(row)) for row in self.incidence]
        return _padded(members)

    @cached_property
    def od_blocks(self) -> tuple[np.ndarray, ...]:
        """Route positions of each OD pair, in OD-pair order."""
        known = {w.id for w in self.od_pairs}
        for route in self.routes:
            if route.od_pair not in known:
                raise NetworkError(f"route {route.id!r} references unknown OD pair {route.od_pair!r}")
        return tuple(
            _readonly(np.array([j for j, r in enumerate(self.routes) if r.od_pair == w.id], dtype=int))
            for w in self.od_pairs
        )

    def routes_of(self, od_id: str) -> list[Route]:
        return [r for r in self.routes if r.od_pair == od_id]

    def with_capacity(self, link_id: str, capacity: float) -> "Network":
        if link_id not in self.link_index:
            raise NetworkError(f"unknown link {link_id!r}")
        links = tuple(replace(a, capacity=capacity) if a.id == link_id else a for a in self.links)
        return Network(links, self.routes, self.od_pairs)

    def to_dict(self) -> dict:
        return {
            "links": [
                {"id": a.id, "free_flow_time": a.free_flow_time, "capacity": a.capacity} for a in self.links
            ],
            "od_pairs": [
                {"id": w.id, "origin": w.origin, "destination": w.destination, "demand": w.demand}
                for w in self.od_pairs
            ],
            "routes": [{"id": r.id, "od_pair": r.od_pair, "links": list(r.links)} for r in self.routes],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Network":
        try:
            links = [Link(str(a["id"]), float(a["free_flow_time"]), float(a["capacity"])) for a in data["links"]]
            ods = [
                ODPair(str(w["id"]), str(w["origin"]), str(w["destination"]), float(w["demand"]))
                for w in data["od_pairs"]
            ]
            routes = [
                Route(str(r["id"]), str(r["od_pair"]), tuple(str(x) for x in r["links"])) for r in data["routes"]
            ]
        except (KeyError, TypeError) as exc:
            raise NetworkError(f"malformed network description: {exc!r}") from exc
        return cls(tuple(links), tuple(routes), tuple(ods))


def _padded(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray]:
    width = max([len(r) for r in rows] + [1])
    idx = np.zeros((len(rows), width), dtype=int)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, r in enumerate(rows):
        idx[i, : len(r)] = r
        mask[i, : len(r)] = True
    return _readonly(idx), _readonly(mask)


def canonical_sum(terms: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sum after sorting along ``axis``.

    The result depends only on the multiset of terms, not on their order, so
    mirror-image inputs give bit-identical sums.
    """
    return np.sort(terms, axis=axis).sum(axis=axis)


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def load_network(path: str | Path) -> Network:
    """Read a network JSON file. Raises ``OSError``, ``json.JSONDecodeError`` or ``NetworkError``."""
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise NetworkError("network file must hold a JSON object")
    return Network.from_dict(data)


@dataclass(frozen=True)
class FlowState:
    """Route-flow vector (ordered like ``Network.routes``) stamped with a day index."""

    flows: np.ndarray
    day: int = 0

    def __post_init__(self):
        flows = np.array(self.flows, dtype=float)
        if flows.ndim != 1:
            raise NetworkError("flows must be a 1-d vector")
        if self.day < 0:
            raise NetworkError("day index must be nonnegative")
        object.__setattr__(self, "flows", _readonly(flows))

    @classmethod
    def from_mapping(cls, net: Network, flows: Mapping[str, float], day: int = 0) -> "FlowState":
        missing = set(net.route_ids) - set(flows)
        if missing:
            raise NetworkError(f"no flow given for routes {sorted(missing)}")
        return cls(np.array([flows[r] for r in net.route_ids], dtype=float), day)

    def as_mapping(self, net: Network) -> dict[str, float]:
        return {r: float(x) for r, x in zip(net.route_ids, self.flows)}


def feasibility_violations(net: Network, f: FlowState, tol: float = FEASIBILITY_TOL) -> list[str]:
    """Describe every violated nonnegativity / demand-conservation constraint of ``f``."""
    _check_route_dim(net, f.flows)
    out = []
    for rid, x in zip(net.route_ids, f.flows):
        if not x >= 0.0:
            out.append(f"route {rid}: negative flow {x!r}")
    for od, block in zip(net.od_pairs, net.od_blocks):
        total = float(f.flows[block].sum())
        if abs(total - od.demand) > tol:
            out.append(f"OD pair {od.id}: route flows sum to {total!r}, demand is {od.demand!r}")
    return out


def is_feasible(net: Network, f: FlowState, tol: float = FEASIBILITY_TOL) -> bool:
    return not feasibility_violations(net, f, tol)


def _check_route_dim(net: Network, x: np.ndarray) -> None:
    if np.shape(x) != (len(net.routes),):
        raise NetworkError(f"expected {len(net.routes)} route values, got shape {np.shape(x)}")


def link_flows(net: Network, f: FlowState | np.ndarray) -> np.ndarray:
    flows = f.flows if isinstance(f, FlowState) else np.asarray(f, dtype=float)
    _check_route_dim(net, flows)
    idx, mask = net.link_route_table
    return canonical_sum(np.where(mask, flows[idx], 0.0))


def link_costs(net: Network, v: np.ndarray) -> np.ndarray:
    """BPR travel times ``c0 * (1 + 0.15 (v/O)^4)``."""
    v = np.asarray(v, dtype=float)
    if v.shape != (len(net.links),):
        raise NetworkError(f"expected {len(net.links)} link flows, got shape {v.shape}")
    if np.any(v < 0):
        raise NetworkError("link flows must be nonnegative")
    return net.free_flow_times * (1.0 + BPR_ALPHA * (v / net.capacities) ** BPR_BETA)


def route_costs(net: Network, c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.shape != (len(net.links),):
        raise NetworkError(f"expected {len(net.links)} link costs, got shape {c.shape}")
    idx, mask = net.route_link_table
    return canonical_sum(np.where(mask, c[idx], 0.0))


def evaluate_route_costs(net: Network, f: FlowState | np.ndarray) -> np.ndarray:
    """Full cost pipeline: route flows -> link flows -> BPR link costs -> route costs."""
    return route_costs(net, link_costs(net, link_flows(net, f)))


def validate(net: Network) -> list[str]:
    problems: list[str] = []
    problems += _duplicates("link", [a.id for a in net.links])
    problems += _duplicates("route", [r.id for r in net.routes])
    problems += _duplicates("OD pair", [w.id for w in net.od_pairs])

    for a in net.links:
        if not a.free_flow_time > 0:
            problems.append(f"link {a.id}: free_flow_time must be > 0 (got {a.free_flow_time!r})")
        if not a.capacity > 0:
            problems.append(f"link {a.id}: capacity must be > 0 (got {a.capacity!r})")

    link_ids = {a.id for a in net.links}
    od_ids = {w.id for w in net.od_pairs}
    for r in net.routes:
        if not r.links:
            problems.append(f"route {r.id}: empty link list")
        dangling = [x for x in r.links if x not in link_ids]
        if dangling:
            problems.append(f"route {r.id}: unknown link(s) {', '.join(dangling)}")
        if r.od_pair not in od_ids:
            problems.append(f"route {r.id}: unknown OD pair {r.od_pair}")

    used = {r.od_pair for r in net.routes}
    for w in net.od_pairs:
        if not w.demand >= 0:
            problems.append(f"OD pair {w.id}: demand must be >= 0 (got {w.demand!r})")
        if w.id not in used:
            problems.append(f"OD pair {w.id}: no routes")
    return problems


def _duplicates(kind: str, ids: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for x in ids:
        if x in seen:
            out.append(f"{kind} {x}: duplicate identifier")
        seen.add(x)
    return out


def build_network(
    links: Sequence[tuple[str, float, float]],
    od_pairs: Sequence[tuple[str, float]],
    routes: Sequence[tuple[str, str, Sequence[str]]],
) -> Network:
    """Compact constructor used by tests and fixtures.

    ``od_pairs`` entries are ``(id, demand)``; origins/destinations get
    placeholder labels derived from the id.
    """
    return Network(
        tuple(Link(i, float(t0), float(cap)) for i, t0, cap in links),
        tuple(Route(i, w, tuple(ls)) for i, w, ls in routes),
        tuple(ODPair(i, f"o{i}", f"d{i}", float(d)) for i, d in od_pairs),
    )
