"""Smoke test for the `bethe` extension module.

Build and install it first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python python/smoke.py` from the repository root.
"""

import itertools
import json
import math
import pathlib
import random
import sys

import bethe

ROOT = pathlib.Path(__file__).resolve().parent.parent


def random_model(n, k, rng):
    node = [[rng.uniform(-1, 1) for _ in range(k)] for _ in range(n)]
    edge = [[rng.uniform(-1, 1) for _ in range(k * k)] for _ in range(n - 1)]
    return node, edge


def brute_force(node, edge):
    n, k = len(node), len(node[0])
    scores = {}
    for y in itertools.product(range(k), repeat=n):
        s = sum(node[i][y[i]] for i in range(n))
        s += sum(edge[i][y[i] * k + y[i + 1]] for i in range(n - 1))
        scores[y] = s
    top = max(scores.values())
    log_z = top + math.log(sum(math.exp(s - top) for s in scores.values()))
    node_marg = [[0.0] * k for _ in range(n)]
    for y, s in scores.items():
        p = math.exp(s - log_z)
        for i, a in enumerate(y):
            node_marg[i][a] += p
    best = max(scores, key=scores.get)
    return log_z, node_marg, list(best)


def check_oracle():
    rng = random.Random(0)
    for _ in range(20):
        n, k = rng.randint(2, 5), rng.randint(2, 3)
        node, edge = random_model(n, k, rng)
        model = bethe.ChainModel(node, edge)
        log_z, node_marg, best = brute_force(node, edge)
        assert abs(model.log_partition() - log_z) < 1e-9
        mu = model.marginals()
        assert mu.is_valid()
        for i in range(n):
            assert max(abs(a - b) for a, b in zip(mu.node(i), node_marg[i])) < 1e-9
        assert model.score(model.map()) == model.score(best)
        # <θ, μ> + H_B(μ) = log Z on a chain.
        inner = sum(a * b for a, b in zip(model.params(), mu.flat()))
        assert abs(inner + mu.bethe_entropy() - log_z) < 1e-9
    print("oracle: 20 chains match brute force")


def check_solver():
    energy = bethe.Energy.from_toml(
        """
schema = "bethe.energy/v1"
family = "measurement"
psi = [4.0]

[[terms]]
offset = 1.0
label_weights = [1.0, -1.0]
"""
    )
    rng = random.Random(1)
    node, edge = random_model(6, 2, rng)
    node = [[row[0] - 1.0, row[1] + 1.0] for row in node]
    model = bethe.ChainModel(node, edge)
    for algorithm in ["rda", "md", "acc-rda"]:
        sol = bethe.solve(model, energy, algorithm=algorithm, max_iters=2000, tolerance=1e-9)
        assert sol.marginals.is_valid()
        assert sol.infeasible_iterates == 0
        assert sol.objective <= sol.objectives[0] + 1e-12
        counts = [sum(sol.marginals.node(i)[a] for i in range(6)) for a in range(2)]
        print(f"{algorithm}: {sol!r}, expected counts {counts[0]:.3f} / {counts[1]:.3f}, map {sol.labels}")
    free = bethe.solve(model)
    assert max(abs(a - b) for a, b in zip(free.marginals.flat(), model.marginals().flat())) < 1e-9
    try:
        bethe.solve(model, algorithm="simplex")
    except ValueError as err:
        print(f"rejected unknown solver: {err}")
    else:
        raise AssertionError("unknown solver accepted")


def check_experiment(out):
    report = json.loads(bethe.run_experiment(str(ROOT / "configs" / "softcon.toml"), out=out))
    for run in report["runs"]:
        m = run.get("metrics")
        if m:
            print(f"{run['id']}: accuracy {m['token_accuracy']:.4f}, violations {m['constraint_violations']}")
    assert sum(r["infeasible_iterates"] for r in report["runs"]) == 0


if __name__ == "__main__":
    check_oracle()
    check_solver()
    # `--bench [DIR]` also runs the softcon experiment, writing it to DIR.
    if "--bench" in sys.argv:
        rest = sys.argv[sys.argv.index("--bench") + 1 :]
        check_experiment(rest[0] if rest else None)
    print("ok")
