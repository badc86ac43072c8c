import itertools

import numpy as np
import pytest
from scipy.optimize import linprog

from jmlseg import theory
from jmlseg.simplex import InfeasibleError, UnboundedError, linprog_eq


def test_simplex_matches_scipy(rng):
    for _ in range(100):
        m, n = int(rng.integers(1, 4)), int(rng.integers(3, 7))
        A = rng.normal(size=(m, n))
        x0 = rng.uniform(0, 1, size=n)
        b = A @ x0
        c = rng.uniform(0, 2, size=n)
        x, value = linprog_eq(c, A, b)
        ref = linprog(c, A_eq=A, b_eq=b, bounds=(0, None), method="highs")
        assert value == pytest.approx(ref.fun, abs=1e-8)
        np.testing.assert_allclose(A @ x, b, atol=1e-8)


def test_simplex_degenerate_and_errors():
    # redundant row
    x, value = linprog_eq([1, 1], [[1, 1], [2, 2]], [1, 2])
    assert value == pytest.approx(1.0)
    with pytest.raises(InfeasibleError):
        linprog_eq([1, 1], [[1, 1]], [-1])
    with pytest.raises(UnboundedError):
        linprog_eq([-1, 0], [[1, -1]], [0])


def test_closure_exact_at_vertices(rng):
    for p in range(1, 7):
        values = rng.uniform(size=2 ** p)
        for i, v in enumerate(theory.hypercube_vertices(p)):
            assert theory.convex_closure(values, v) == values[i]


def test_closure_edge_midpoint():
    values = np.array([0.0, 1.0])
    assert theory.convex_closure(values, [0.5]) <= 0.5


def test_closure_is_midpoint_convex(rng):
    values = rng.uniform(size=8)
    for _ in range(200):
        a, b = rng.uniform(size=(2, 3))
        mid = theory.convex_closure(values, (a + b) / 2)
        assert mid <= 0.5 * (theory.convex_closure(values, a)
                             + theory.convex_closure(values, b)) + 1e-9


def test_closure_rejects_outside_points():
    with pytest.raises(ValueError):
        theory.convex_closure(np.zeros(2), [1.5])


def test_axioms_pass_for_jml():
    for name in ("jml1", "jml2"):
        assert theory.check_metric_axioms(name, 3, 20_000, seed=1).passed


def test_sjl_counterexamples_are_reproducible():
    rep = theory.check_metric_axioms("sjl-l1", 1, 1000, probes=[(0.5, 0.5, 0.5)])
    refl = rep.results["reflexivity"]
    assert not refl.passed
    assert theory.replay_axiom("sjl-l1", refl) == refl.magnitude
    rep = theory.check_metric_axioms("sjl-l2", 1, 1000, probes=[(0.8, 0.4, 0.2)])
    tri = rep.results["triangle"]
    assert not tri.passed
    assert theory.replay_axiom("sjl-l2", tri) == tri.magnitude
    assert theory.get_loss("sjl-l2")(np.array([0.8]), np.array([0.2])) == \
        pytest.approx(9 / 13, abs=1e-12)


def test_axiom_check_deterministic():
    a = theory.check_metric_axioms("jml1", 2, 5000, seed=7).to_dict()
    b = theory.check_metric_axioms("jml1", 2, 5000, seed=7).to_dict()
    assert a == b


def test_gradient_sign_examples():
    assert theory.sjl_gradient_sign(0, 0, 0.3) == (-1, 0.0)
    assert theory.sjl_gradient_sign(1, 0, 0.2)[1] == 0.0
    sign, r2 = theory.sjl_gradient_sign(0.5, 0.3, 1.0)
    assert sign == -1 and r2 <= 1
    with pytest.raises(ValueError):
        theory.sjl_gradient_sign(-1, 0, 0.5)


def test_gradient_sign_positive_below_threshold():
    sign, r2 = theory.sjl_gradient_sign(0.5, 2.0, 0.1)
    assert r2 > 0.1 and sign == 1


def test_nonconcavity_and_control():
    out = theory.verify_nonconcavity_counterexample()
    assert out["passed"]
    assert out["concave_control"]["magnitude"] <= 0


def test_equivalence_trivial_case():
    y = np.array([[1.0, 0.0, 1.0]])
    for fn in (theory.get_loss("jml1"), theory.get_loss("jml2"), theory.get_loss("sjl-l1")):
        assert fn(y, y)[0] == 0.0


def test_loss_curve_examples():
    xs, curves = theory.loss_curve(["jml1", "ce"], 0.5, 11)
    assert curves["jml1"][0] == 1.0
    _, curves = theory.loss_curve(["ce"], 0.1, 11)
    assert curves["ce"][1] == pytest.approx(-(0.1 * np.log(0.1) + 0.9 * np.log(0.9)), abs=1e-9)
    with pytest.raises(ValueError, match="valid names"):
        theory.loss_curve(["nope"], 0.5)
    with pytest.raises(ValueError):
        theory.loss_curve(["jml1"], 1.5)


def test_closure_profiles_both_readings():
    rows = theory.closure_profiles("jml1", 0.5, 5)
    for r in rows:
        assert r["joint"] <= r["jml1"] + 1e-12 or r["x"] > 0.5
    assert rows[0]["x_only"] == 1.0


def test_exhaustive_closure_matches_bruteforce_p2():
    values = np.array([0.0, 0.7, 0.4, 1.0])
    verts = theory.hypercube_vertices(2)
    point = np.array([0.3, 0.6])
    best = np.inf
    for combo in itertools.combinations(range(4), 3):
        M = np.vstack([np.ones(3), verts[list(combo)].T])
        try:
            alpha = np.linalg.solve(M, np.concatenate([[1.0], point]))
        except np.linalg.LinAlgError:
            continue
        if np.all(alpha >= -1e-12):
            best = min(best, float(alpha @ values[list(combo)]))
    assert theory.convex_closure(values, point) == pytest.approx(best, abs=1e-12)
