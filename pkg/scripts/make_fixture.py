"""Regenerate src/swapdyn/data/example_network.json.

Free-flow times and capacities are chosen on one half of the network and
mirrored (links 1<->4, 2<->3, 5<->8, 6<->7, 9<->13, 10<->12, 14<->17,
15<->16; link 11 is shared). The free-flow times of links 6, 14 and 15 are
then solved so that route flows (20, 20, 25, 25 | 25, 25, 20, 20) equalise
the route costs of each OD pair. The stored reference equilibrium is the
oracle solution, not the design target, averaged over mirror-image route
pairs so that it is exactly symmetric; its gap is re-evaluated afterwards.
"""

import json
from pathlib import Path


from swapdyn.analysis import relative_gap, solve_ue_oracle
from swapdyn.network import FlowState, build_network, evaluate_route_costs

OUT = Path(__file__).resolve().parents[1] / "src" / "swapdyn" / "data" / "example_network.json"

MIRROR = {1: 4, 2: 3, 5: 8, 6: 7, 9: 13, 10: 12, 11: 11, 14: 17, 15: 16}
# design link flows on the OD (1, 11) half
DESIGN_FLOW = {1: 40, 2: 50, 5: 20, 6: 25, 9: 20, 10: 45, 11: 50, 14: 20, 15: 25}
FREE_FLOW = {1: 2.49, 2: 3.85, 5: 4.87, 9: 2.47, 10: 2.54, 11: 4.95}
CAPACITY = {1: 36.5, 2: 83.1, 5: 17.5, 6: 21.5, 9: 31.1, 10: 44.9, 11: 76.1, 14: 28.8, 15: 27.9}

ROUTES = [
    ("1", "1-11", ["1", "9", "14"]),
    ("2", "1-11", ["1", "5", "10"]),
    ("3", "1-11", ["2", "6", "10"]),
    ("4", "1-11", ["2", "11", "15"]),
    ("5", "2-12", ["3", "11", "16"]),
    ("6", "2-12", ["3", "7", "12"]),
    ("7", "2-12", ["4", "8", "12"]),
    ("8", "2-12", ["4", "13", "17"]),
]
DEMAND = 90.0


def solve_free_flow_times():
    t = dict(FREE_FLOW)

    def factor(a):
        return 1 + 0.15 * (DESIGN_FLOW[a] / CAPACITY[a]) ** 4

    def cost(a):
        return t[a] * factor(a)

    t[14] = (cost(5) + cost(10) - cost(9)) / factor(14)  # route 1 = route 2
    t[6] = (cost(1) + cost(5) - cost(2)) / factor(6)  # route 3 = route 2
    t[15] = (cost(6) + cost(10) - cost(11)) / factor(15)  # route 4 = route 3
    return t


def main():
    t = solve_free_flow_times()
    source = {b: a for a, b in MIRROR.items()}
    source.update({a: a for a in MIRROR})
    links = [(str(a), t[source[a]], CAPACITY[source[a]]) for a in range(1, 18)]
    net = build_network(links, [("1-11", DEMAND), ("2-12", DEMAND)], ROUTES)
    ue = solve_ue_oracle(net, rel_gap_tol=1e-14, max_iters=1000)
    assert ue.converged, ue.rel_gap

    raw = ue.flows.flows
    flows = FlowState((raw + raw[::-1]) / 2.0)
    gap = relative_gap(net, flows.flows)
    assert gap <= 1e-14, gap

    data = net.to_dict()
    data["od_pairs"] = [
        {"id": "1-11", "origin": "1", "destination": "11", "demand": DEMAND},
        {"id": "2-12", "origin": "2", "destination": "12", "demand": DEMAND},
    ]
    costs = evaluate_route_costs(net, flows)
    data["reference_ue"] = {
        "flows": dict(zip(net.route_ids, map(float, flows.flows))),
        "route_costs": dict(zip(net.route_ids, map(float, costs))),
        "rel_gap": gap,
        "oracle_rel_gap_tol": 1e-14,
    }
    data["calibration"] = {
        "link_involution": {str(a): str(b) for a, b in MIRROR.items()},
        "solved_free_flow_links": ["6", "14", "15", "7", "17", "16"],
        "design_route_flows": [20, 20, 25, 25, 25, 25, 20, 20],
    }
    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {OUT}; UE gap {gap:.2e}; flows {flows.flows}")


if __name__ == "__main__":
    main()
