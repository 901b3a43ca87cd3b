import math

import numpy as np
import pytest

from doco.dust import RoundSummary, StepSchedule, Trajectory, dust_round, initialize, load_state, run
from doco.graph import generate_sequence
from doco.metrics import (
    CSV_HEADER,
    build_run_records,
    consensus_diagnostics,
    constants_from,
    constraint_violation,
    dynamic_regret,
    loglog_slope,
    read_records_csv,
    theory_constants,
    variation_series,
    write_records_csv,
)
from doco.oracle import RoundOptimum, accumulated_variation, compute_optima
from doco.problem import AffineConstraint, make_pev_instance
from tests.test_dust import table_instance


def synthetic_traj(couplings, costs=None):
    couplings = [np.atleast_1d(np.asarray(c, dtype=float)) for c in couplings]
    costs = [0.0] * len(couplings) if costs is None else costs
    summaries = [
        RoundSummary(
            t=i + 1, cost=float(costs[i]), coupling=couplings[i], tracking_err=0.0, mass_err=0.0,
            c_min=1.0, c_max=1.0, mu_min=0.0, mu_bar_norm=0.0, consensus_err=0.0,
            y_norm_max=0.0, dual_step_slack=0.0,
        )
        for i in range(len(couplings))
    ]
    return Trajectory(summaries=summaries, final_state=None, r_empirical=1.0, y_norm_max=0.0)


def fake_optimum(t, value, x=None):
    return RoundOptimum(
        t=t, x=x or (np.zeros(1),), value=value, mu=np.zeros(1),
        kkt_residual=0.0, converged=True, iterations=1,
    )


def test_theory_constants_match_independent_arithmetic():
    c = constants_from(N=2, p=1, B=1, a=0.5, R=1.0, F=1.0, G=1.0)
    assert c.r_lower == 0.25
    assert c.sigma_upper == pytest.approx(math.sqrt(0.75), abs=0)
    expected_by = (8 * 4 * 1 * 1 / 0.25) * (1 + 2 / (1 - math.sqrt(0.75))) + 4 * 1
    assert c.B_y == pytest.approx(expected_by, rel=1e-14)
    expected_sens = 2**6 / (0.25**3 * (1 - math.sqrt(0.75)) ** 3)
    assert c.sensitivity == pytest.approx(expected_sens, rel=1e-12)
    assert not c.overflow


def test_sensitivity_grows_with_n_and_b():
    grid = {}
    for N in (2, 3, 4):
        for B in (1, 2, 3):
            grid[N, B] = constants_from(N, 1, B, 1.0 / N, 1.0, 1.0, 1.0).sensitivity
    for N in (2, 3, 4):
        assert grid[N, 1] < grid[N, 2] < grid[N, 3]
    for B in (1, 2, 3):
        assert grid[2, B] < grid[3, B] < grid[4, B]


def test_sensitivity_ordering_at_experiment_scales():
    base = constants_from(10, 6, 2, 0.1, 1.0, 1.0, 1.0)
    wide = constants_from(10, 6, 10, 0.1, 1.0, 1.0, 1.0)
    tall = constants_from(20, 6, 2, 0.05, 1.0, 1.0, 1.0)
    assert base.sensitivity < wide.sensitivity
    assert base.sensitivity < tall.sensitivity
    assert wide.overflow and tall.overflow
    assert not base.overflow


def test_overflow_reported_as_inf_with_flag():
    c = constants_from(N=50, p=4, B=50, a=0.02, R=1.0, F=1.0, G=1.0)
    assert c.overflow
    assert math.isinf(c.B_y) and math.isinf(c.sensitivity)


def test_dynamic_regret_zero_for_identical_decisions():
    traj = synthetic_traj([[0.0]] * 4, costs=[2.0, 1.0, 3.0, 0.5])
    optima = [fake_optimum(t + 1, v) for t, v in enumerate([2.0, 1.0, 3.0, 0.5])]
    assert np.array_equal(dynamic_regret(traj, optima), np.zeros(4))


def test_dynamic_regret_single_round_example():
    traj = synthetic_traj([[0.0]], costs=[1.0])
    assert dynamic_regret(traj, [fake_optimum(1, 0.0)])[0] == 1.0


def test_dynamic_regret_round_mismatch():
    traj = synthetic_traj([[0.0]], costs=[1.0])
    with pytest.raises(ValueError):
        dynamic_regret(traj, [fake_optimum(2, 0.0)])
    with pytest.raises(ValueError):
        dynamic_regret(traj, [])


def test_regret_additivity_over_splits():
    rng = np.random.default_rng(0)
    costs = rng.normal(size=10)
    opt_vals = rng.normal(size=10)
    traj = synthetic_traj([[0.0]] * 10, costs=costs)
    optima = [fake_optimum(t + 1, v) for t, v in enumerate(opt_vals)]
    series = dynamic_regret(traj, optima)
    for k in range(1, 10):
        head = dynamic_regret(synthetic_traj([[0.0]] * k, costs=costs[:k]), optima[:k])[-1]
        tail = float(np.sum(costs[k:] - opt_vals[k:]))
        assert series[-1] == pytest.approx(head + tail, abs=1e-12)


def test_violation_cancellation_across_time():
    traj = synthetic_traj([[1.0], [-3.0]])
    assert np.array_equal(constraint_violation(traj), np.array([1.0, 0.0]))


def test_violation_accumulates():
    traj = synthetic_traj([[1.0], [1.0], [1.0]])
    assert np.array_equal(constraint_violation(traj), np.array([1.0, 2.0, 3.0]))


def test_violation_matches_naive_resummation():
    rng = np.random.default_rng(5)
    couplings = rng.normal(size=(40, 3))
    traj = synthetic_traj(list(couplings))
    series = constraint_violation(traj)
    for t in range(40):
        total = np.zeros(3)
        for s in range(t + 1):
            total = total + couplings[s]
        naive = float(np.linalg.norm(np.maximum(total, 0.0)))
        assert series[t] == pytest.approx(naive, abs=1e-12)


def test_consensus_error_zero_single_node():
    inst = table_instance(
        1, 1, 1,
        np.full((1, 30), 0.8), (np.full((30, 1), -0.5),),
        (AffineConstraint(A=np.array([[1.0]]), b=np.array([-0.2])),),
    )
    state = initialize(inst, "zero_projected")
    for t in range(1, 25):
        prev_mu = state.mu.copy()
        state = dust_round(inst, state, np.array([[1.0]]), StepSchedule())
        assert np.linalg.norm(state.lam - prev_mu.mean(axis=0)) == 0.0


def test_envelope_dominates_observed_and_y_bound_holds():
    inst = make_pev_instance(N=4, d=2, p=2, seed=3, horizon=220)
    seq = generate_sequence("cyclic_partition", 4, 2, seed=5)
    traj = run(inst, seq, StepSchedule(), 200, init_kind="seeded_random_in_set", seed_init=1)
    consts = theory_constants(inst, B=2)
    series = consensus_diagnostics(traj, consts)
    assert np.all(series.observed <= series.envelope)
    assert traj.y_norm_max <= consts.B_y


def test_run_records_and_csv_round_trip(tmp_path):
    inst = make_pev_instance(N=3, d=2, p=2, seed=9, horizon=40)
    seq = generate_sequence("cyclic_partition", 3, 2, seed=2)
    traj = run(inst, seq, StepSchedule(), 30, init_kind="seeded_random_in_set", seed_init=4)
    optima = compute_optima(inst, T=31)
    records = build_run_records(traj, optima)
    assert records[0].V_t is not None
    path = tmp_path / "run.csv"
    write_records_csv(records, path)
    text = path.read_text().splitlines()
    assert text[0] == CSV_HEADER
    parsed = read_records_csv(path)
    for a, b in zip(records, parsed):
        assert a == b

    bare = build_run_records(traj)
    assert bare[0].cum_regret is None and bare[0].V_t is None
    write_records_csv(bare, path)
    row = path.read_text().splitlines()[1].split(",")
    assert row[1] == "" and row[2] == "" and row[5] == ""
    assert row[3] != "" and row[6] != ""


def test_variation_series_consistent_with_total():
    inst = make_pev_instance(N=2, d=2, p=1, seed=3, horizon=12)
    optima = compute_optima(inst, T=11)
    series = variation_series(optima)
    assert series[-1] == pytest.approx(accumulated_variation(optima), abs=0)
    assert len(series) == 10


def test_replay_from_dumped_states(tmp_path):
    inst = make_pev_instance(N=3, d=2, p=2, seed=13, horizon=25)
    seq = generate_sequence("random_bconnected", 3, 2, seed=8)
    traj = run(
        inst, seq, StepSchedule(), 20,
        init_kind="seeded_random_in_set", seed_init=2,
        dump_every=1, dump_dir=tmp_path,
    )
    optima = compute_optima(inst, T=21)
    records = build_run_records(traj, optima)
    # independent replay: recompute both series from the dumped states alone
    cum_cost, cum_coupling = 0.0, np.zeros(2)
    for idx, path in enumerate(traj.dump_paths):
        state = load_state(path)
        assert state.t == idx + 1
        cum_cost += inst.cost_at(state.t, state.x)
        cum_coupling = cum_coupling + state.g.sum(axis=0)
        replay_regret = cum_cost - sum(o.value for o in optima[: idx + 1])
        replay_violation = float(np.linalg.norm(np.maximum(cum_coupling, 0.0)))
        assert abs(records[idx].cum_regret - replay_regret) <= 1e-9
        assert abs(records[idx].cum_violation - replay_violation) <= 1e-9


def test_loglog_slope_recovers_power():
    ts = np.array([500, 1000, 2000, 4000], dtype=float)
    assert loglog_slope(ts, 3.0 * ts**0.75) == pytest.approx(0.75, abs=1e-12)
    with pytest.raises(ValueError):
        loglog_slope(ts, np.array([1.0, 0.0, 2.0, 3.0]))
