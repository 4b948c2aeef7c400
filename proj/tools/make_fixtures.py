#!/usr/bin/env python3
"""Regenerates the hand-built fixtures under fixtures/.

The benchmark fixtures under fixtures/bench come from `mlchain bench
--generate-only` instead (see README).
"""

import json
import pathlib

ROOT = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


def write(path, obj):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n")


def problem(**fields):
    return {"format": "mlchain-problem", "version": 1, **fields}


def linear_model(W, b):
    return {"format": "mlchain-model", "version": 1, "kind": "linear_regression", "weights": W, "bias": b}


def two_state():
    # pi = [1, 0], P = I, r = [1, 0], lambda = 0.5: v_1 = 1 / (1 - 0.5) = 2.
    return problem(
        states=2,
        features=1,
        discount=0.5,
        query={"kind": "total_reward", "sense": "max"},
        models=[],
        links=[
            {"target": "pi", "b": [1, 0]},
            {"target": "P", "b": [1, 0, 0, 1]},
            {"target": "r", "b": [1, 0]},
        ],
        feature_set={"boxes": [{"lower": [0], "upper": [1]}]},
    )


def worked_example(p10_hi):
    # Identity model on six features; the feature box is the parameter box
    # [P00, P01, P10, P11, r0, r1].
    eye = [[1.0 if i == j else 0.0 for j in range(6)] for i in range(6)]
    return problem(
        states=2,
        features=6,
        discount=0.97,
        query={"kind": "total_reward", "sense": "max"},
        models=[{"path": "identity6.json"}],
        links=[
            {"target": "pi", "b": [0.5, 0.5]},
            {"target": "P", "A": {"rows": 4, "cols": 6, "entries": [[k, k, 1.0] for k in range(4)]}, "b": [0, 0, 0, 0]},
            {"target": "r", "A": {"rows": 2, "cols": 6, "entries": [[0, 4, 1.0], [1, 5, 1.0]]}, "b": [0, 0]},
        ],
        feature_set={"boxes": [{"lower": [0.5, 0.2, 0.1, 0.5, 0, 0], "upper": [0.6, 0.5, p10_hi, 0.6, 100, 100]}]},
    ), linear_model(eye, [0.0] * 6)


def special_case(fixed):
    """Three states, two features in [-1, 1]^2 and one linear model with
    outputs theta = (x0 + 0.5 x1, 0.5 x0 - x1, x0 + x1) feeding pi, P and r.
    A fixed parameter keeps its value at theta = 0."""
    pi_A = {"rows": 3, "cols": 3, "entries": [[0, 0, 0.1], [1, 0, -0.1]]}
    P_A = {"rows": 9, "cols": 3, "entries": [[0, 1, 0.2], [1, 1, -0.2]]}
    r_A = {"rows": 3, "cols": 3, "entries": [[0, 2, 1.0], [1, 2, -0.5]]}
    links = [
        {"target": "pi", "b": [0.4, 0.3, 0.3]},
        {"target": "P", "b": [0.5, 0.3, 0.2, 0.1, 0.6, 0.3, 0.3, 0.3, 0.4]},
        {"target": "r", "b": [1.0, 2.0, 0.5]},
    ]
    for link, A in zip(links, (pi_A, P_A, r_A)):
        if link["target"] not in fixed:
            link["A"] = A
    return problem(
        states=3,
        features=2,
        discount=0.9,
        query={"kind": "total_reward", "sense": "max"},
        models=[linear_model([[1.0, 0.5], [0.5, -1.0], [1.0, 1.0]], [0.0, 0.0, 0.0])],
        links=links,
        feature_set={"boxes": [{"lower": [-1, -1], "upper": [1, 1]}]},
    )


def main():
    write(ROOT / "two_state.json", two_state())
    case1, model = worked_example(0.4)
    case2, _ = worked_example(0.3)
    write(ROOT / "worked_example" / "identity6.json", model)
    write(ROOT / "worked_example" / "case1.json", case1)
    write(ROOT / "worked_example" / "case2.json", case2)
    cases = {
        "none": (),
        "pi": ("pi",),
        "P": ("P",),
        "r": ("r",),
        "pi_P": ("pi", "P"),
        "pi_r": ("pi", "r"),
        "P_r": ("P", "r"),
    }
    for name, fixed in cases.items():
        write(ROOT / "special" / f"fixed_{name}.json", special_case(fixed))


if __name__ == "__main__":
    main()
