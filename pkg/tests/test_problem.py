import numpy as np
import pytest

from doco.problem import (
    AffineConstraint,
    Ball,
    Box,
    PiecewiseLinearCosts,
    ProblemInstance,
    QuadraticPevCosts,
    bound_constants,
    load_instance,
    make_pev_active_instance,
    make_pev_equality_instance,
    make_pev_instance,
    project,
    serialize_instance,
)
from doco.rng import keyed_rng


def test_box_projection_clamps():
    box = Box(lo=np.zeros(2), hi=np.ones(2))
    assert np.array_equal(project(box, np.array([2.0, -1.0])), np.array([1.0, 0.0]))
    assert project(box, np.array([0.5, 0.5]))[0] == 0.5


def test_ball_projection_rescales():
    ball = Ball(center=np.zeros(2), radius=1.0)
    assert np.allclose(project(ball, np.array([3.0, 4.0])), np.array([0.6, 0.8]))
    inside = np.array([0.1, -0.2])
    assert np.array_equal(project(ball, inside), inside)


def test_projection_dimension_mismatch():
    box = Box(lo=np.zeros(2), hi=np.ones(2))
    with pytest.raises(ValueError):
        project(box, np.zeros(3))


@pytest.mark.parametrize(
    "xset",
    [
        Box(lo=np.array([-1.0, 0.0, 2.0]), hi=np.array([1.0, 0.5, 3.0])),
        Ball(center=np.array([1.0, -2.0]), radius=1.5),
    ],
)
def test_projection_idempotent_and_optimal(xset):
    rng = np.random.default_rng(3)
    for _ in range(1000):
        z = rng.normal(scale=4.0, size=xset.dim)
        pz = xset.project(z)
        assert xset.contains(pz, tol=1e-9)
        assert np.allclose(xset.project(pz), pz, atol=1e-12)
        s = xset.sample(rng)
        assert np.linalg.norm(z - pz) <= np.linalg.norm(z - s) + 1e-12


def test_affine_two_evaluation_routes_agree():
    rng = np.random.default_rng(5)
    for _ in range(100):
        p, d = int(rng.integers(1, 6)), int(rng.integers(1, 6))
        c = AffineConstraint(A=rng.normal(size=(p, d)), b=rng.normal(size=p))
        x = rng.normal(size=d)
        per_row = np.array([c.A[k] @ x + c.b[k] for k in range(p)])
        assert np.max(np.abs(c(x) - per_row)) <= 1e-12


def test_pev_paper_scale_shapes():
    inst = make_pev_instance(N=10, d=24, p=48, seed=0, horizon=4)
    assert inst.constraints[0].A.shape == (48, 24)
    assert inst.N == 10 and inst.p == 48 and inst.dims == (24,) * 10


def test_hand_built_two_node_margin():
    # g_1(x) + g_2(x) = x_1 + x_2 - 4; zero profile has margin 4
    constraints = tuple(AffineConstraint(A=np.array([[1.0]]), b=np.array([-2.0])) for _ in range(2))
    sets = (Box(lo=np.zeros(1), hi=np.ones(1)),) * 2
    inst = ProblemInstance(
        sets=sets,
        constraints=constraints,
        costs=QuadraticPevCosts(0, 2, (1, 1)),
        feasible_point=(np.zeros(1), np.zeros(1)),
        slater_point=(np.zeros(1), np.zeros(1)),
        slater_margin=4.0,
    )
    assert inst.coupling_at((np.array([1.0]), np.array([3.0])))[0] == 0.0
    assert np.all(inst.coupling_at(inst.slater_point) <= -inst.slater_margin)


def test_value_bound_dominates_sampled_couplings():
    inst = make_pev_instance(N=3, d=4, p=5, seed=7, horizon=2)
    rng = np.random.default_rng(0)
    for i in range(inst.N):
        bound = inst.constraints[i].value_bound(inst.sets[i])
        for _ in range(1000):
            x = inst.sets[i].sample(rng)
            assert np.linalg.norm(inst.constraints[i](x)) <= bound + 1e-12


def test_slater_witness_exact():
    inst = make_pev_instance(N=4, d=3, p=2, seed=1, horizon=2)
    coupling = inst.coupling_at(inst.slater_point)
    assert np.all(coupling <= -inst.slater_margin)
    assert inst.slater_margin > 0


def test_equality_variant_has_no_slater_point():
    inst = make_pev_equality_instance(N=3, d=2, p=2, seed=1, horizon=2)
    assert inst.slater_point is None and inst.slater_margin is None
    assert np.array_equal(inst.coupling_at(inst.feasible_point), np.zeros(2))
    # utility-signed costs: the linear term rewards charging
    _, b = inst.costs.coefficients(0, 1)
    assert np.all(b < 0)


def test_make_pev_instance_reproducible():
    a = make_pev_instance(N=3, d=2, p=2, seed=9, horizon=3)
    b = make_pev_instance(N=3, d=2, p=2, seed=9, horizon=3)
    for i in range(3):
        assert np.array_equal(a.constraints[i].A, b.constraints[i].A)
        assert np.array_equal(a.constraints[i].b, b.constraints[i].b)
        xa, ga = a.costs.value_and_subgrad(i, 5, np.array([0.3, 0.4]))
        xb, gb = b.costs.value_and_subgrad(i, 5, np.array([0.3, 0.4]))
        assert xa == xb and np.array_equal(ga, gb)
    other = make_pev_instance(N=3, d=2, p=2, seed=10, horizon=3)
    assert not np.array_equal(a.constraints[0].A, other.constraints[0].A)


def test_cost_draw_independent_of_evaluation_order():
    inst = make_pev_instance(N=2, d=2, p=1, seed=4, horizon=3)
    x = np.array([0.2, 0.7])
    late = inst.costs.value_and_subgrad(1, 77, x)
    early = inst.costs.value_and_subgrad(0, 1, x)
    again = inst.costs.value_and_subgrad(1, 77, x)
    assert late[0] == again[0] and np.array_equal(late[1], again[1])
    assert early[0] != late[0]


@pytest.mark.parametrize("family", ["quadratic", "piecewise"])
def test_subgradient_inequality_on_sampled_pairs(family):
    dims = (3, 3)
    if family == "quadratic":
        costs = QuadraticPevCosts(2, 2, dims)
    else:
        costs = PiecewiseLinearCosts(2, 2, dims)
    rng = np.random.default_rng(8)
    for _ in range(500):
        i = int(rng.integers(0, 2))
        t = int(rng.integers(1, 50))
        x, y = rng.random(3), rng.random(3)
        fx, gx = costs.value_and_subgrad(i, t, x)
        fy, _ = costs.value_and_subgrad(i, t, y)
        assert fy >= fx + gx @ (y - x) - 1e-9


def test_piecewise_subgradient_zero_at_kink():
    costs = PiecewiseLinearCosts(0, 1, (2,))
    target = costs.target(0, 3)
    _, g = costs.value_and_subgrad(0, 3, target.copy())
    assert np.array_equal(g, np.zeros(2))


def test_bound_constants_box_diameter_and_endpoint():
    sets = (Box(lo=np.zeros(2), hi=np.ones(2)), Box(lo=np.zeros(1), hi=np.ones(1)))
    constraints = (
        AffineConstraint(A=np.zeros((1, 2)), b=np.zeros(1)),
        AffineConstraint(A=np.array([[1.0]]), b=np.array([-2.0])),
    )
    inst = ProblemInstance(
        sets=sets,
        constraints=constraints,
        costs=QuadraticPevCosts(0, 2, (2, 1)),
        feasible_point=(np.zeros(2), np.zeros(1)),
    )
    consts = bound_constants(inst)
    assert consts.R == pytest.approx(np.sqrt(2.0))
    assert consts.F == pytest.approx(2.0)  # |x - 2| maximized at x = 0


def test_bound_constants_dominate_observed_subgradients():
    inst = make_pev_instance(N=3, d=4, p=2, seed=3, horizon=5)
    consts = bound_constants(inst)
    rng = np.random.default_rng(1)
    for _ in range(500):
        i = int(rng.integers(0, 3))
        t = int(rng.integers(1, 6))
        x = inst.sets[i].sample(rng)
        _, g = inst.costs.value_and_subgrad(i, t, x)
        assert np.linalg.norm(g) <= consts.G + 1e-12


def test_feasible_point_certified():
    with pytest.raises(ValueError):
        ProblemInstance(
            sets=(Box(lo=np.zeros(1), hi=np.ones(1)),),
            constraints=(AffineConstraint(A=np.array([[1.0]]), b=np.array([1.0])),),
            costs=QuadraticPevCosts(0, 1, (1,)),
            feasible_point=(np.zeros(1),),
        )


@pytest.mark.parametrize(
    "builder", [make_pev_instance, make_pev_active_instance, make_pev_equality_instance]
)
def test_serialization_round_trip(builder, tmp_path):
    inst = builder(3, 2, 2, 11, 6)
    path = tmp_path / "inst.txt"
    serialize_instance(inst, path)
    loaded = load_instance(path)
    assert loaded.N == inst.N and loaded.p == inst.p
    assert (loaded.slater_margin is None) == (inst.slater_margin is None)
    rng = np.random.default_rng(2)
    for t in range(1, 7):
        for i in range(inst.N):
            x = inst.sets[i].sample(rng)
            v0, g0 = inst.costs.value_and_subgrad(i, t, x)
            v1, g1 = loaded.costs.value_and_subgrad(i, t, x)
            assert v0 == v1
            assert np.array_equal(g0, g1)
            assert np.array_equal(inst.constraints[i](x), loaded.constraints[i](x))


def test_serialized_piecewise_round_trip(tmp_path):
    sets = (Box(lo=np.zeros(2), hi=np.ones(2)),) * 2
    inst = ProblemInstance(
        sets=sets,
        constraints=tuple(AffineConstraint(A=np.eye(2), b=-np.ones(2)) for _ in range(2)),
        costs=PiecewiseLinearCosts(5, 2, (2, 2)),
        feasible_point=(np.zeros(2), np.zeros(2)),
        horizon=4,
    )
    path = tmp_path / "pw.txt"
    serialize_instance(inst, path)
    loaded = load_instance(path)
    x = np.array([0.3, 0.9])
    for t in range(1, 5):
        v0, g0 = inst.costs.value_and_subgrad(1, t, x)
        v1, g1 = loaded.costs.value_and_subgrad(1, t, x)
        assert v0 == v1 and np.array_equal(g0, g1)


def test_initial_points():
    inst = make_pev_instance(N=3, d=2, p=2, seed=0, horizon=2)
    zeros = inst.initial_point("zero_projected", 0)
    assert all(np.array_equal(x, np.zeros(2)) for x in zeros)
    r1 = inst.initial_point("seeded_random_in_set", 42)
    r2 = inst.initial_point("seeded_random_in_set", 42)
    assert all(np.array_equal(a, b) for a, b in zip(r1, r2))
    assert all(inst.sets[i].contains(x) for i, x in enumerate(r1))
    with pytest.raises(ValueError):
        inst.initial_point("nope", 0)


def test_keyed_rng_is_pure():
    assert keyed_rng(1, 2, 3).random() == keyed_rng(1, 2, 3).random()
    assert keyed_rng(1, 2, 3).random() != keyed_rng(1, 2, 4).random()
