"""Regenerate the bundled scenario library under src/setrend/scenarios/.

Run from the repository root: ``python tools/make_scenarios.py``.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "setrend" / "scenarios"

THETA = [1.301, 0.256, 0.096]

Q0 = [[-8, 8], [6.4, 12], [-8, -8], [6, -8], [-8.8, -4], [4.8, -12], [-4, -8], [3.2, -12]]
QD0 = [[-0.4, 0.4], [0.8, -0.8], [2.8, -2.8], [1.6, -1.6], [-1.2, 0.8], [1.6, -0.4], [1.6, -2], [0.8, -0.8]]

# ring-with-rungs graph of the fixed-topology experiment (1-based labels)
FIG2 = [[1, 2], [2, 3], [4, 3], [1, 8], [2, 7], [3, 6], [4, 5], [8, 7], [7, 6], [6, 5]]
FIG6 = [[1, 2], [2, 3], [4, 3], [8, 7], [7, 6], [6, 5]]
FIG7 = [[1, 8], [2, 7], [3, 6], [4, 5]]

CIRCLE_CENTERS = [
    [1.5, 1.5], [-1.5, -1.5], [1.5, 1.5], [0, -1.5],
    [0, -1.5], [-1.5, -1.5], [1, 1], [-1.5, -1.5],
]

# eight axis-aligned rectangles, centres inside [-2, 2]^2, common part [-1, 1]^2
BOXES = [
    ([-1.0, -1.0], [3.0, 2.0]),
    ([-3.0, -1.0], [1.0, 2.0]),
    ([-1.0, -1.0], [2.0, 4.0]),
    ([-1.0, -3.0], [2.0, 1.0]),
    ([-3.0, -2.0], [2.0, 1.0]),
    ([-1.0, -2.0], [4.0, 1.0]),
    ([-4.0, -1.0], [1.0, 3.0]),
    ([-1.5, -1.5], [1.5, 1.5]),
]


def edges(pairs):
    return [[i, j, 1.0] for i, j in pairs]


def box(lo_hi):
    lo, hi = lo_hi
    return {"type": "box", "lo": lo, "hi": hi}


def star_edges(n):
    return [[1, j, 1.0] for j in range(2, n + 1)]


def complete_edges(n):
    return [[i, j, 1.0] for i in range(1, n + 1) for j in range(i + 1, n + 1)]


def base(name, description):
    return {
        "name": name,
        "description": description,
        "dynamics": {"theta": THETA},
        "dt": 0.001,
        "record_every": 100,
        "seed": 7,
    }


def circles():
    doc = base("paper_4c1_circles", "Fixed graph, disc target sets, k = 1.")
    doc.update(
        regions=[{"type": "ball", "center": c, "radius": 3.0} for c in CIRCLE_CENTERS],
        graph={"nodes": 8, "edges": edges(FIG2)},
        controller={"law": "fixed", "k": 1.0},
        initial={"q": Q0, "qdot": QD0},
        t_end=100.0,
    )
    return doc


def switching(k, name):
    doc = base(name, f"Graph alternates between two disconnected graphs every 5 s; rectangles; k = {k:g}.")
    doc.update(
        regions=[box(b) for b in BOXES],
        schedule={
            "graphs": [{"nodes": 8, "edges": edges(FIG6)}, {"nodes": 8, "edges": edges(FIG7)}],
            "period": [0, 1],
            "interval": 5.0,
            "dwell": 5.0,
        },
        controller={"law": "switching", "k": k},
        initial={"q": Q0, "qdot": QD0},
        t_end=200.0,
    )
    return doc


def nonconvex():
    # each agent sees a small "decoy" rectangle around the ring plus one shared
    # disc far away; nearest-member projection pulls agents apart
    members = []
    for i in range(8):
        ang = 2 * math.pi * i / 8
        cx, cy = round(7 * math.cos(ang), 3), round(7 * math.sin(ang), 3)
        members.append(
            {
                "type": "union",
                "members": [
                    {"type": "box", "lo": [cx - 1, cy - 1], "hi": [cx + 1, cy + 1]},
                    {"type": "ball", "center": [25.0, 25.0], "radius": 1.0},
                ],
            }
        )
    doc = base("paper_4c3_nonconvex", "Fixed graph and gains of the disc experiment with non-convex target sets.")
    doc.update(
        regions=members,
        graph={"nodes": 8, "edges": edges(FIG2)},
        controller={"law": "fixed", "k": 1.0},
        initial={"q": Q0, "qdot": QD0},
        t_end=100.0,
        nonconvex_demo=True,
    )
    return doc


def collision(name, description, graph_key):
    n = 16
    doc = base(name, description)
    doc.update(
        regions=[box(BOXES[i % 8]) for i in range(n)],
        controller={"law": "collision", "k": 1.0, "R": 2.0, "r": 0.2},
        initial={"placement": {"kind": "grid", "lo": -10.0, "hi": 10.0, "jitter": 0.5, "speed": 2.8}},
        t_end=100.0,
    )
    star = {"nodes": n, "edges": star_edges(n)}
    full = {"nodes": n, "edges": complete_edges(n)}
    if graph_key == "star":
        doc["graph"] = star
    elif graph_key == "complete":
        doc["graph"] = full
    else:
        doc["schedule"] = {"graphs": [star, full], "period": [0, 1], "interval": 5.0, "dwell": 5.0}
    return doc


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    docs = [
        circles(),
        switching(5.0, "paper_4c2_switching"),
        switching(6.0, "paper_4c2_switching_k6"),
        nonconvex(),
        collision("paper_5b_star", "Collision avoidance, 16 agents, star graph centred on agent 1.", "star"),
        collision("paper_5b_complete", "Collision avoidance, 16 agents, complete graph.", "complete"),
        collision(
            "paper_5c_switching_collision",
            "Collision avoidance with the graph alternating star/complete every 5 s.",
            "switching",
        ),
    ]
    for doc in docs:
        path = OUT / f"{doc['name']}.json"
        path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        print(path)


if __name__ == "__main__":
    main()
