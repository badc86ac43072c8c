"""Mechanical checks of the metric, equivalence and ordering properties.

Each check is seeded and pure: rerunning with the same arguments gives the
same verdict and the same worst case.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field
from functools import partial

import numpy as np

from .losses import cross_entropy, jml, sjl, tversky_metric
from .simplex import linprog_eq

AXIOM_TOLERANCE = 1e-9
EQUALITY_TOLERANCE = 1e-12

LOSSES = {
    "jml1": partial(jml, which="jml1"),
    "jml2": partial(jml, which="jml2"),
    "jml1-l2": partial(jml, which="jml1", norm="l2"),
    "jml2-l2": partial(jml, which="jml2", norm="l2"),
    "sjl-l1": partial(sjl, norm="l1"),
    "sjl-l2": partial(sjl, norm="l2"),
    "tversky": tversky_metric,
}


def get_loss(name):
    try:
        return LOSSES[name]
    except KeyError:
        raise ValueError(f"unknown loss {name!r}; valid names: {sorted(LOSSES)}") from None


# ---------------------------------------------------------------------------
# metric axioms

@dataclass
class AxiomResult:
    axiom: str
    passed: bool
    magnitude: float
    worst_sample: list = field(default_factory=list)


@dataclass
class AxiomReport:
    loss: str
    p: int
    n_samples: int
    seed: int
    tolerance: float
    results: dict

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results.values())

    def to_dict(self):
        return {"loss": self.loss, "p": self.p, "n_samples": self.n_samples, "seed": self.seed,
                "tolerance": self.tolerance, "passed": self.passed,
                "results": {k: asdict(v) for k, v in self.results.items()}}


def sample_triples(p, n, rng):
    """Uniform triples mixed with near-vertex and near-diagonal ones."""
    n_uniform = n // 2
    n_vertex = n // 5
    n_diag = n // 5
    n_exact = n - n_uniform - n_vertex - n_diag
    parts = []
    parts.append(rng.uniform(size=(3, n_uniform, p)))
    corners = rng.integers(0, 2, size=(3, n_vertex, p)).astype(np.float64)
    jitter = rng.uniform(0.0, 1e-3, size=corners.shape)
    parts.append(np.abs(corners - jitter))
    base = rng.uniform(size=(n_diag, p))
    near = np.clip(base + rng.normal(scale=1e-4, size=(2, n_diag, p)), 0.0, 1.0)
    parts.append(np.stack([base, near[0], near[1]]))
    parts.append(rng.integers(0, 2, size=(3, n_exact, p)).astype(np.float64))
    trip = np.concatenate(parts, axis=1)
    return trip[0], trip[1], trip[2]


def _worst(values, a, b, c):
    i = int(np.argmax(values))
    return float(values[i]), [a[i].tolist(), b[i].tolist(), c[i].tolist()]


def check_metric_axioms(loss, p, n_samples=100_000, seed=0, tolerance=AXIOM_TOLERANCE,
                        probes=None) -> AxiomReport:
    """Test reflexivity, positivity, symmetry and the triangle inequality.

    ``loss`` is a name from :data:`LOSSES` or a vectorised callable.
    ``probes`` adds explicit ``(a, b, c)`` triples to the random sample.
    """
    name = loss if isinstance(loss, str) else getattr(loss, "__name__", "custom")
    fn = get_loss(loss) if isinstance(loss, str) else loss
    rng = np.random.default_rng(seed)
    a, b, c = sample_triples(p, n_samples, rng)
    if probes:
        pa, pb, pc = (np.asarray([np.broadcast_to(t[i], (p,)) for t in probes], dtype=np.float64)
                      for i in range(3))
        a, b, c = np.vstack([pa, a]), np.vstack([pb, b]), np.vstack([pc, c])

    f_aa = fn(a, a)
    f_ab = fn(a, b)
    f_ba = fn(b, a)
    f_bc = fn(b, c)
    f_ac = fn(a, c)

    results = {}
    mag, worst = _worst(np.abs(f_aa), a, a, a)
    results["reflexivity"] = AxiomResult("reflexivity", mag <= tolerance, mag, worst)

    distinct = np.any(a != b, axis=1)
    undetected = np.where(distinct & (f_ab <= 0.0), np.abs(a - b).sum(axis=1), 0.0)
    mag, worst = _worst(undetected, a, b, b)
    results["positivity"] = AxiomResult("positivity", mag == 0.0, mag, worst)

    mag, worst = _worst(np.abs(f_ab - f_ba), a, b, b)
    results["symmetry"] = AxiomResult("symmetry", mag <= tolerance, mag, worst)

    mag, worst = _worst(f_ac - f_ab - f_bc, a, b, c)
    results["triangle"] = AxiomResult("triangle", mag <= tolerance, mag, worst)
    return AxiomReport(name, p, int(a.shape[0]), seed, tolerance, results)


def replay_axiom(loss, result: AxiomResult) -> float:
    """Recompute an axiom's magnitude from its stored worst sample."""
    fn = get_loss(loss) if isinstance(loss, str) else loss
    a, b, c = (np.asarray(v, dtype=np.float64)[None] for v in result.worst_sample)
    if result.axiom == "reflexivity":
        return float(abs(fn(a, a)[0]))
    if result.axiom == "symmetry":
        return float(abs(fn(a, b)[0] - fn(b, a)[0]))
    if result.axiom == "positivity":
        return float(np.abs(a - b).sum()) if np.any(a != b) and fn(a, b)[0] <= 0 else 0.0
    return float(fn(a, c)[0] - fn(a, b)[0] - fn(b, c)[0])


# ---------------------------------------------------------------------------
# equivalence on hard labels, ordering, KD triangle bound

def verify_hard_label_equivalence(p=6, n_samples=10_000, seed=0):
    """JML1 = JML2 = SJL-L1 whenever one side is binary; L2 variants always agree."""
    rng = np.random.default_rng(seed)
    soft = rng.uniform(size=(n_samples, p))
    hard = rng.integers(0, 2, size=(n_samples, p)).astype(np.float64)
    deviations = {}
    for label, (x, y) in {"soft_x_hard_y": (soft, hard), "hard_x_soft_y": (hard, soft)}.items():
        j1, j2, s1 = jml(x, y, "jml1"), jml(x, y, "jml2"), sjl(x, y, "l1")
        deviations[label] = float(max(np.abs(j1 - j2).max(), np.abs(j1 - s1).max()))
    x, y = rng.uniform(size=(2, n_samples, p))
    j1, j2, s2 = jml(x, y, "jml1", "l2"), jml(x, y, "jml2", "l2"), sjl(x, y, "l2")
    deviations["l2_soft"] = float(max(np.abs(j1 - j2).max(), np.abs(j1 - s2).max()))

    wx, wy = np.array([0.8]), np.array([0.5])
    witness = {"jml1": float(jml(wx, wy, "jml1")), "jml2": float(jml(wx, wy, "jml2")),
               "sjl-l1": float(sjl(wx, wy, "l1"))}
    values = sorted(witness.values())
    min_gap = min(b - a for a, b in zip(values, values[1:]))
    max_dev = max(deviations.values())
    return {"passed": max_dev <= EQUALITY_TOLERANCE and min_gap > 0,
            "max_deviation": max_dev, "deviations": deviations,
            "witness": witness, "witness_min_gap": min_gap}


def verify_ordering(ps=range(1, 9), n_samples=100_000, seed=0, tolerance=EQUALITY_TOLERANCE):
    """JML1 <= JML2 on random soft pairs across dimensions ``ps``."""
    rng = np.random.default_rng(seed)
    ps = list(ps)
    worst, worst_case = -np.inf, None
    per_p = n_samples // len(ps)
    for i, p in enumerate(ps):
        n = per_p + (n_samples - per_p * len(ps) if i == 0 else 0)
        x, y = rng.uniform(size=(2, n, p))
        gap = jml(x, y, "jml1") - jml(x, y, "jml2")
        j = int(np.argmax(gap))
        if gap[j] > worst:
            worst, worst_case = float(gap[j]), [x[j].tolist(), y[j].tolist()]
    return {"passed": worst <= tolerance, "magnitude": worst, "worst_case": worst_case}


def verify_kd_triangle(p=8, n_samples=10_000, seed=0, tolerance=EQUALITY_TOLERANCE):
    """JML1(S, L) <= JML1(S, T) + JML1(T, L) for random soft triples."""
    rng = np.random.default_rng(seed)
    s, t, lab = rng.uniform(size=(3, n_samples, p))
    excess = jml(s, lab) - jml(s, t) - jml(t, lab)
    j = int(np.argmax(excess))
    return {"passed": float(excess[j]) <= tolerance, "magnitude": float(excess[j]),
            "worst_case": [s[j].tolist(), t[j].tolist(), lab[j].tolist()]}


# ---------------------------------------------------------------------------
# SJL-L1 gradient sign

def sjl_gradient_sign(a, b, y_i):
    """Predicted sign of d SJL-L1 / d x_i given the off-pixel sums ``a``, ``b``.

    ``a`` is the off-pixel union mass and ``b`` the off-pixel intersection.
    Returns ``(sign, r2)`` with ``sign = -1`` for a non-positive derivative
    (``y_i >= r2``) and ``+1`` otherwise.
    """
    if a < 0 or b < 0:
        raise ValueError("a and b must be non-negative")
    s = a + b
    r2 = (-s + math.sqrt(s * s + 4.0 * b)) / 2.0
    return (-1 if y_i >= r2 else 1), r2


def off_pixel_sums(x_rest, y_rest):
    inter = float(np.dot(x_rest, y_rest))
    return float(x_rest.sum() + y_rest.sum() - inter), inter


def check_sjl_gradient_signs(n_configs=1000, seed=0, exclusion=1e-3, step=1e-6, max_pixels=8):
    """Compare predicted signs with central differences of the full SJL-L1."""
    rng = np.random.default_rng(seed)
    agree = checked = skipped = 0
    disagreements = []
    for _ in range(n_configs):
        p_rest = int(rng.integers(1, max_pixels))
        x_rest, y_rest = rng.uniform(size=(2, p_rest))
        a, b = off_pixel_sums(x_rest, y_rest)
        y_i = float(rng.uniform())
        x_i = float(rng.uniform(0.01, 0.99))
        predicted, r2 = sjl_gradient_sign(a, b, y_i)
        if abs(y_i - r2) < exclusion:
            skipped += 1
            continue
        y = np.concatenate([[y_i], y_rest])

        def f(v):
            return float(sjl(np.concatenate([[v], x_rest]), y, "l1"))

        numeric = (f(x_i + step) - f(x_i - step)) / (2.0 * step)
        observed = -1 if numeric <= 0 else 1
        checked += 1
        if observed == predicted:
            agree += 1
        else:
            disagreements.append({"a": a, "b": b, "y_i": y_i, "x_i": x_i, "fd": numeric})
    return {"passed": agree == checked, "agreement": agree / checked if checked else 1.0,
            "checked": checked, "skipped": skipped, "disagreements": disagreements[:5]}


# ---------------------------------------------------------------------------
# convex closure

def hypercube_vertices(p):
    return np.array(list(itertools.product((0.0, 1.0), repeat=p)))


def convex_closure(set_function, point):
    """Convex closure of a set function on ``{0,1}^p`` evaluated at ``point``.

    ``set_function`` is a callable on binary vectors or an array of values
    ordered like :func:`hypercube_vertices`.  Solved as a linear program
    over all ``2^p`` vertices.
    """
    point = np.asarray(point, dtype=np.float64).ravel()
    p = point.size
    if p > 8:
        raise ValueError("convex closure is limited to p <= 8")
    if np.any(point < 0) or np.any(point > 1):
        raise ValueError("point lies outside the unit hypercube")
    vertices = hypercube_vertices(p)
    if callable(set_function):
        values = np.array([float(set_function(v)) for v in vertices])
    else:
        values = np.asarray(set_function, dtype=np.float64)
        if values.shape != (2 ** p,):
            raise ValueError(f"expected {2 ** p} vertex values, got {values.shape}")
    A = np.vstack([np.ones(2 ** p), vertices.T])
    b = np.concatenate([[1.0], point])
    _, value = linprog_eq(values, A, b)
    return value


def closure_profiles(loss="jml1", y=0.5, grid=11):
    """Two readings of the 1-D convex closure at a soft label ``y``.

    ``joint`` closes the hard loss over joint (x, y) vertices and evaluates
    at ``(x, y)``; ``x_only`` closes ``v -> loss(v, y)`` over ``v`` in {0, 1}.
    """
    fn = get_loss(loss)
    hard = get_loss("sjl-l1")
    joint_values = np.array([float(hard(np.array([v[0]]), np.array([v[1]])))
                             for v in hypercube_vertices(2)])
    x_values = np.array([float(hard(np.array([v]), np.array([y]))) for v in (0.0, 1.0)])
    rows = []
    for x in np.linspace(0.0, 1.0, grid):
        rows.append({
            "x": float(x),
            loss: float(fn(np.array([x]), np.array([y]))),
            "joint": convex_closure(joint_values, [x, y]),
            "x_only": convex_closure(x_values, [x]),
        })
    return rows


# ---------------------------------------------------------------------------
# non-concavity in 2-D

COUNTEREXAMPLE_Y = (0.5, 0.5)
COUNTEREXAMPLE_X = (0.4087, 0.7855)
COUNTEREXAMPLE_X2 = (0.6285, 0.7551)


def jensen_gap(fn, x, x2, y):
    """``(f(x) + f(x2)) / 2 - f((x + x2) / 2)``; positive means not concave there."""
    x, x2, y = (np.asarray(v, dtype=np.float64) for v in (x, x2, y))
    return float(0.5 * fn(x, y) + 0.5 * fn(x2, y) - fn(0.5 * (x + x2), y))


def verify_nonconcavity_counterexample():
    """Strict midpoint-concavity violation of JML1 and JML2 at the known triple."""
    out = {}
    for name in ("jml1", "jml2"):
        gap = jensen_gap(get_loss(name), COUNTEREXAMPLE_X, COUNTEREXAMPLE_X2, COUNTEREXAMPLE_Y)
        out[name] = {"passed": gap > 0.0, "magnitude": gap}

    def concave_probe(x, y):
        return -np.sum((x - y) ** 2, axis=-1)

    gap = jensen_gap(concave_probe, COUNTEREXAMPLE_X, COUNTEREXAMPLE_X2, COUNTEREXAMPLE_Y)
    out["concave_control"] = {"passed": gap <= 0.0, "magnitude": gap}
    out["passed"] = all(v["passed"] for v in out.values() if isinstance(v, dict))
    return out


# ---------------------------------------------------------------------------
# loss curves

CURVE_LOSSES = ("jml1", "jml2", "sjl-l1", "sjl-l2", "tversky", "dice", "ce",
                "closure-joint", "closure-x")


def loss_curve(names, y, grid=101):
    """Single-pixel sweep of ``x`` over [0, 1] for each named loss.

    Returns ``(xs, {name: values})``.  ``ce`` is the two-class cross-entropy
    of ``[x, 1-x]`` against ``[y, 1-y]``; the ``closure-*`` names are the two
    convex-closure readings of :func:`closure_profiles`.
    """
    if not 0.0 <= y <= 1.0:
        raise ValueError("y must lie in [0, 1]")
    if grid < 2:
        raise ValueError("grid must have at least 2 points")
    xs = np.linspace(0.0, 1.0, grid)
    ys = np.full_like(xs, y)
    out = {}
    for name in names:
        if name == "ce":
            probs = np.stack([xs, 1.0 - xs])[:, :, None]
            labels = np.stack([ys, 1.0 - ys])[:, :, None]
            out[name] = np.array([float(cross_entropy(probs[:, i], labels[:, i]))
                                  for i in range(grid)])
        elif name in ("closure-joint", "closure-x"):
            key = "joint" if name == "closure-joint" else "x_only"
            out[name] = np.array([r[key] for r in closure_profiles("jml1", y, grid)])
        elif name == "dice":
            out[name] = tversky_metric(xs[:, None], ys[:, None], 0.5, 0.5)
        elif name in LOSSES:
            out[name] = LOSSES[name](xs[:, None], ys[:, None])
        else:
            raise ValueError(f"unknown loss {name!r}; valid names: {', '.join(CURVE_LOSSES)}")
    return xs, out


# ---------------------------------------------------------------------------
# full report

def run_verification(seed=0, n_samples=100_000, dims=range(1, 9)):
    """Every check as ``{check, verdict, worst_case, magnitude}`` records."""
    records = []

    def record(check, passed, worst_case, magnitude):
        records.append({"check": check, "verdict": "PASS" if passed else "FAIL",
                        "worst_case": worst_case, "magnitude": magnitude})

    for name in ("jml1", "jml2"):
        for p in dims:
            rep = check_metric_axioms(name, p, n_samples, seed)
            worst = max(rep.results.values(), key=lambda r: r.magnitude)
            record(f"metric_axioms/{name}/p={p}", rep.passed, worst.worst_sample, worst.magnitude)

    refl = check_metric_axioms("sjl-l1", 1, 0, seed, probes=[(0.5, 0.5, 0.5)])
    r = refl.results["reflexivity"]
    record("counterexample/sjl-l1/reflexivity", abs(r.magnitude - 2.0 / 3.0) <= 1e-12,
           r.worst_sample, r.magnitude)
    tri = check_metric_axioms("sjl-l2", 1, 0, seed, probes=[(0.8, 0.4, 0.2)])
    t = tri.results["triangle"]
    record("counterexample/sjl-l2/triangle", t.magnitude > 0.02, t.worst_sample, t.magnitude)

    eq = verify_hard_label_equivalence(6, 10_000, seed)
    record("hard_label_equivalence", eq["passed"], eq["witness"], eq["max_deviation"])
    order = verify_ordering(dims, n_samples, seed)
    record("ordering/jml1<=jml2", order["passed"], order["worst_case"], order["magnitude"])
    tri_kd = verify_kd_triangle(8, 10_000, seed)
    record("kd_triangle", tri_kd["passed"], tri_kd["worst_case"], tri_kd["magnitude"])
    nc = verify_nonconcavity_counterexample()
    for name in ("jml1", "jml2", "concave_control"):
        record(f"nonconcavity/{name}", nc[name]["passed"],
               [list(COUNTEREXAMPLE_X), list(COUNTEREXAMPLE_X2), list(COUNTEREXAMPLE_Y)],
               nc[name]["magnitude"])
    signs = check_sjl_gradient_signs(1000, seed)
    record("sjl_gradient_sign", signs["passed"], signs["disagreements"][:1], signs["agreement"])
    return records
