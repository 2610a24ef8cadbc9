"""Regenerate the shipped preset SCM files under src/modecausal/data/presets/.

Run from the repository root:  python tools/build_presets.py
"""

from __future__ import annotations

import json
from itertools import product
from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "modecausal" / "data" / "presets"

LEVELS = {
    "hhinc": list(range(1, 11)),
    "sex": [1, 2],
    "race_x": [0, 1],
    "hhveh_x": [0, 1],
    "hhsize_x": [1, 2, 3],
    "age_x": [1, 2, 3, 4],
    "distance_x": list(range(1, 9)),
    "work_purp": [0, 1],
    "Car": [0, 1],
    "Public": [0, 1],
    "Walk": [0, 1],
}
ORDER = list(LEVELS)

# Table 1 marginal percentages per neighbourhood (north, west, south)
BASE = {
    "hhinc": ([2.50, 3.25, 2.53, 2.69, 7.37, 7.83, 11.81, 16.91, 21.83, 23.27],
              [5.39, 4.85, 3.36, 2.75, 8.50, 7.88, 9.01, 11.46, 22.71, 24.09],
              [11.03, 10.90, 7.58, 6.54, 12.40, 7.75, 11.17, 11.25, 14.07, 7.31]),
    "sex": ([46.25, 53.75], [41.92, 58.08], [37.28, 62.72]),
    "race_x": ([85.86, 14.14], [72.12, 27.88], [36.16, 63.84]),
    "hhveh_x": ([27.00, 73.00], [21.41, 78.59], [18.61, 81.39]),
    "hhsize_x": ([28.30, 43.70, 28.00], [22.10, 49.40, 28.50], [23.90, 28.96, 47.14]),
    "age_x": ([31.40, 45.10, 20.59, 2.91], [32.88, 52.01, 14.47, 0.65], [26.88, 37.12, 31.37, 4.63]),
    "distance_x": ([12.14, 12.95, 12.71, 16.19, 15.94, 18.89, 8.77, 2.41],
                   [11.65, 12.51, 12.95, 20.51, 22.06, 9.95, 7.67, 2.71],
                   [8.57, 8.46, 11.74, 17.57, 15.74, 18.29, 16.78, 2.85]),
    "work_purp": ([71.25, 28.75], [71.32, 28.68], [75.80, 24.20]),
}
REGION = {"northlike": 0, "westlike": 1, "southlike": 2}


def base(var, region):
    p = np.array(BASE[var][REGION[region]], dtype=float)
    return p / p.sum()


def root(var, region):
    return {"node": var, "parents": [], "rows": [base(var, region).tolist()]}


def tilted(var, region, parents, score):
    """Exponentially tilt the base distribution toward higher codes by score(parent codes)."""
    p0 = base(var, region)
    k = np.arange(len(p0)) - (len(p0) - 1) / 2
    rows = []
    for codes in product(*(LEVELS[p] for p in parents)):
        w = p0 * np.exp(score(dict(zip(parents, codes))) * k)
        rows.append((w / w.sum()).tolist())
    return {"node": var, "parents": parents, "rows": rows}


def logistic(var, parents, logit):
    rows = []
    for codes in product(*(LEVELS[p] for p in parents)):
        p1 = 1.0 / (1.0 + np.exp(-logit(dict(zip(parents, codes)))))
        rows.append([1.0 - p1, p1])
    return {"node": var, "parents": parents, "rows": rows}


def mode_choice(parents, utilities):
    rows = []
    for codes in product(*(LEVELS[p] for p in parents)):
        u = np.array(utilities(dict(zip(parents, codes))), dtype=float)
        e = np.exp(u - u.max())
        rows.append((e / e.sum()).tolist())
    return {"members": ["Car", "Public", "Walk"], "parents": parents, "rows": rows}


def logit0(p):
    return float(np.log(p / (1 - p)))


def survey(name, edges, cpts, choice):
    edges = list(edges) + [[p, m] for p in choice["parents"] for m in choice["members"]]
    return {
        "name": name,
        "nodes": [{"name": n, "levels": LEVELS[n]} for n in ORDER],
        "edges": edges,
        "cpts": cpts,
        "choices": [choice],
    }


def mode_utilities(v, race_walk=0.0):
    veh, d = v["hhveh_x"], v["distance_x"]
    race = v.get("race_x", 0)
    u_pub = 1.3 - 3.0 * veh + 0.14 * (d - 4)
    u_walk = 1.8 - 2.8 * veh - 0.95 * (d - 4) + race_walk * race
    return [0.0, u_pub, u_walk]


def northlike():
    r = "northlike"
    cpts = [
        root("sex", r), root("race_x", r), root("hhsize_x", r), root("age_x", r), root("work_purp", r),
        tilted("hhinc", r, ["race_x", "hhsize_x", "age_x"],
               lambda v: -0.45 * v["race_x"] + 0.30 * (v["hhsize_x"] - 2) + 0.18 * (v["age_x"] - 2)),
        logistic("hhveh_x", ["hhsize_x"], lambda v: logit0(0.73) + 0.35 * (v["hhsize_x"] - 2)),
        tilted("distance_x", r, ["work_purp"], lambda v: 0.10 * v["work_purp"]),
    ]
    edges = [["race_x", "hhinc"], ["hhsize_x", "hhinc"], ["age_x", "hhinc"],
             ["hhsize_x", "hhveh_x"], ["work_purp", "distance_x"]]
    return survey(r, edges, cpts, mode_choice(["hhveh_x", "distance_x"], mode_utilities))


def westlike():
    r = "westlike"
    cpts = [
        root("sex", r), root("race_x", r), root("age_x", r), root("work_purp", r), root("distance_x", r),
        tilted("hhsize_x", r, ["race_x"], lambda v: 0.25 * v["race_x"]),
        tilted("hhinc", r, ["race_x", "hhsize_x"],
               lambda v: -0.70 * v["race_x"] + 0.22 * (v["hhsize_x"] - 2)),
        logistic("hhveh_x", ["hhinc", "hhsize_x"],
                 lambda v: logit0(0.78) + 0.08 * (v["hhinc"] - 7) + 0.30 * (v["hhsize_x"] - 2)),
    ]
    edges = [["race_x", "hhsize_x"], ["race_x", "hhinc"], ["hhsize_x", "hhinc"],
             ["hhinc", "hhveh_x"], ["hhsize_x", "hhveh_x"]]
    return survey(r, edges, cpts, mode_choice(["hhveh_x", "distance_x"], mode_utilities))


def southlike():
    r = "southlike"
    cpts = [
        root("sex", r), root("race_x", r), root("hhsize_x", r), root("age_x", r), root("work_purp", r),
        tilted("hhinc", r, ["race_x", "hhsize_x", "age_x"],
               lambda v: -0.55 * v["race_x"] + 0.18 * (v["hhsize_x"] - 2) + 0.15 * (v["age_x"] - 2)),
        logistic("hhveh_x", ["race_x", "hhinc", "hhsize_x"],
                 lambda v: logit0(0.81) - 0.30 * v["race_x"] + 0.08 * (v["hhinc"] - 5)
                 + 0.25 * (v["hhsize_x"] - 2)),
        tilted("distance_x", r, ["work_purp"], lambda v: 0.10 * v["work_purp"]),
    ]
    edges = [["race_x", "hhinc"], ["hhsize_x", "hhinc"], ["age_x", "hhinc"],
             ["race_x", "hhveh_x"], ["hhinc", "hhveh_x"], ["hhsize_x", "hhveh_x"],
             ["work_purp", "distance_x"]]
    choice = mode_choice(["race_x", "hhveh_x", "distance_x"],
                         lambda v: mode_utilities(v, race_walk=-0.8))
    return survey(r, edges, cpts, choice)


def binary(node, parents, p1):
    p1 = np.atleast_1d(np.asarray(p1, dtype=float)).ravel()
    return {"node": node, "parents": parents, "rows": [[1 - p, p] for p in p1.tolist()]}


def toy(name, nodes, edges, cpts):
    return {"name": name, "nodes": [{"name": n, "levels": [0, 1]} for n in nodes],
            "edges": edges, "cpts": cpts, "choices": []}


def toys():
    yield toy("chain", ["A", "B", "C"], [["A", "B"], ["B", "C"]],
              [binary("A", [], 0.5), binary("B", ["A"], [0.2, 0.8]), binary("C", ["B"], [0.25, 0.75])])
    yield toy("fork", ["A", "B", "C"], [["B", "A"], ["B", "C"]],
              [binary("B", [], 0.5), binary("A", ["B"], [0.2, 0.8]), binary("C", ["B"], [0.3, 0.75])])
    yield toy("collider", ["A", "B", "C"], [["A", "C"], ["B", "C"]],
              [binary("A", [], 0.5), binary("B", [], 0.4),
               binary("C", ["A", "B"], [[0.1, 0.6], [0.6, 0.9]])])
    yield toy("diamond", ["A", "B", "C", "D"], [["A", "B"], ["A", "C"], ["B", "D"], ["C", "D"]],
              [binary("A", [], 0.5), binary("B", ["A"], [0.2, 0.8]), binary("C", ["A"], [0.25, 0.7]),
               binary("D", ["B", "C"], [[0.1, 0.5], [0.6, 0.9]])])
    # O is additive in T and Z on the probability scale, so the effect of T is 0.3 in every stratum
    yield toy("confounded", ["Z", "T", "O"], [["Z", "T"], ["Z", "O"], ["T", "O"]],
              [binary("Z", [], 0.5), binary("T", ["Z"], [0.3, 0.7]),
               binary("O", ["Z", "T"], [[0.2, 0.5], [0.5, 0.8]])])
    yield toy("null", ["Z", "T", "O"], [["Z", "T"], ["Z", "O"]],
              [binary("Z", [], 0.5), binary("T", ["Z"], [0.3, 0.7]), binary("O", ["Z"], [0.3, 0.7])])


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    models = [northlike(), westlike(), southlike(), *toys()]
    for m in models:
        (OUT / f"{m['name']}.json").write_text(json.dumps(m, indent=1) + "\n", encoding="utf-8")
        print("wrote", m["name"])


if __name__ == "__main__":
    main()
