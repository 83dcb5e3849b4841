import numpy as np
import pytest

from ltlfplan.dfa import compile_minimal_dfa
from ltlfplan.ltlf import TRUE, parse_formula
from ltlfplan.pbvi import (
    AlphaPolicy, AlphaVector, SolverConfig, exact_value_oracle, load_policy,
    policy_action, policy_from_dict, policy_to_dict, save_policy, solve_discounted,
    solve_finite_horizon, start_value,
)
from ltlfplan.pomdp import LabeledPomdp, StoppingModel, derive_seed, sample_trajectory
from ltlfplan.product import build_product
from ltlfplan.benchmarks import random_tiny_model, twostate_constrained

from helpers import (
    deterministic_chain, fully_observable, mdp_value_iteration_discounted,
    mdp_value_iteration_finite, uninformative_two_state,
)


def product_of(model, spec_text):
    dfa = compile_minimal_dfa(parse_formula(spec_text), atoms=model.atoms)
    return build_product(model, dfa)


def trivial_product(model):
    return product_of(model, "true")


# --------------------------------------------------------------------------
# Discounted solver
# --------------------------------------------------------------------------

def test_single_state_geometric_series():
    P = np.ones((1, 1, 1))
    m = LabeledPomdp("unit", ["s"], ["a"], ["o"], P, np.ones((1, 1)), np.ones(1),
                     (), np.zeros(1, dtype=np.int64), np.ones((1, 1)),
                     StoppingModel.geometric(0.5))
    prod = trivial_product(m)
    policy = solve_discounted(prod, prod.rewards, 0.5, SolverConfig(n_beliefs=1))
    assert policy.value_at(np.ones(1)) == pytest.approx(2.0, abs=1e-6)


def test_fully_observable_matches_exact_value_iteration():
    P = np.zeros((2, 2, 2))
    P[0, 0] = (1.0, 0.0)
    P[0, 1] = (0.2, 0.8)
    P[1, 0] = (0.0, 1.0)
    P[1, 1] = (0.7, 0.3)
    R = np.array([[0.2, 0.0], [1.0, 0.4]])
    gamma = 0.9
    m = fully_observable(P, R, gamma=gamma)
    prod = trivial_product(m)
    cfg = SolverConfig(n_beliefs=16, max_backup_rounds=2000, bellman_tolerance=1e-9)
    policy = solve_discounted(prod, prod.rewards, gamma, cfg)
    V = mdp_value_iteration_discounted(P, R, gamma)
    for s in range(2):
        point = np.zeros(2)
        point[s] = 1.0
        assert policy.value_at(point) == pytest.approx(V[s], abs=1e-6)


def test_solver_value_consistent_with_rollouts():
    model, _ = twostate_constrained(0.8)
    prod = product_of(model, "F g")
    cfg = SolverConfig(n_beliefs=12, max_backup_rounds=1000, bellman_tolerance=1e-9)
    policy = solve_discounted(prod, prod.rewards, 0.8, cfg)
    n = 10_000
    totals = np.empty(n)
    for i in range(n):
        totals[i] = sample_trajectory(prod, policy, derive_seed(31, i)).rewards.sum()
    se = totals.std(ddof=1) / np.sqrt(n)
    assert abs(totals.mean() - start_value(policy, prod)) <= 3 * se


def test_monotone_improvement_and_bounds():
    model = uninformative_two_state(stopping=StoppingModel.geometric(0.9))
    prod = trivial_product(model)
    cfg = SolverConfig(n_beliefs=24, max_backup_rounds=300, bellman_tolerance=1e-8)
    policy = solve_discounted(prod, prod.rewards, 0.9, cfg)
    history = policy.stats["point_value_history"]
    for older, newer in zip(history, history[1:]):
        assert np.all(newer >= older - 1e-12)
    lo = prod.rewards.min() / (1 - 0.9)
    hi = prod.rewards.max() / (1 - 0.9)
    for alpha in policy.alphas:
        assert np.all(alpha.values >= lo - 1e-9)
        assert np.all(alpha.values <= hi + 1e-9)


def test_solver_deterministic():
    model = uninformative_two_state(stopping=StoppingModel.geometric(0.9))
    prod = trivial_product(model)
    cfg = SolverConfig(n_beliefs=24, max_backup_rounds=120, expansion_seed=5)
    p1 = solve_discounted(prod, prod.rewards, 0.9, cfg)
    p2 = solve_discounted(prod, prod.rewards, 0.9, cfg)
    assert len(p1.alphas) == len(p2.alphas)
    for a1, a2 in zip(p1.alphas, p2.alphas):
        assert a1.action == a2.action
        assert np.array_equal(a1.values, a2.values)


def test_nonconvergence_flagged_not_raised():
    model = uninformative_two_state(stopping=StoppingModel.geometric(0.99))
    prod = trivial_product(model)
    policy = solve_discounted(prod, prod.rewards, 0.99,
                              SolverConfig(n_beliefs=8, max_backup_rounds=3))
    assert policy.converged is False


def test_discounted_argument_validation():
    model = uninformative_two_state()
    prod = trivial_product(model)
    with pytest.raises(ValueError):
        solve_discounted(prod, prod.rewards, 1.0, SolverConfig())
    with pytest.raises(ValueError):
        solve_discounted(prod, np.zeros((3, 3)), 0.9, SolverConfig())
    with pytest.raises(ValueError):
        SolverConfig(n_beliefs=0)


# --------------------------------------------------------------------------
# Finite-horizon solver and the exact oracle
# --------------------------------------------------------------------------

def test_horizon_zero_picks_best_immediate_action():
    model = uninformative_two_state(rewards=((1.0, 0.0), (0.0, 2.0)))
    prod = trivial_product(model)
    policy = solve_finite_horizon(prod, prod.rewards, 0, SolverConfig(exhaustive=True))
    b0 = np.full(2, 0.5)
    # uninformative observation keeps the uniform prior; action 1 averages 1.0
    assert policy.action(b0, 0) == 1
    assert policy.value_at(b0, 0) == pytest.approx(1.0)
    with pytest.raises(IndexError):
        policy.action(b0, 1)


def test_zero_reward_zero_value():
    model = uninformative_two_state(rewards=((0.0, 0.0), (0.0, 0.0)))
    prod = trivial_product(model)
    policy = solve_finite_horizon(prod, prod.rewards, 2, SolverConfig(exhaustive=True))
    assert start_value(policy, prod) == pytest.approx(0.0)


def test_constant_reward_oracle():
    model = uninformative_two_state(rewards=((0.3, 0.3), (0.3, 0.3)))
    prod = trivial_product(model)
    for T in (0, 1, 3):
        assert exact_value_oracle(prod, prod.rewards, T) == pytest.approx(0.3 * (T + 1))


def test_oracle_deterministic_chain_hand_value():
    chain = deterministic_chain(3, reward_on={0: 1.0, 1: 5.0}, stopping=StoppingModel.fixed(1))
    prod = trivial_product(chain)
    # single action: collect r(s0) then r(s1)
    assert exact_value_oracle(prod, prod.rewards, 1) == pytest.approx(6.0)


def test_oracle_matches_exact_mdp_on_identity_observations():
    P = np.zeros((2, 2, 2))
    P[0, 0] = (1.0, 0.0)
    P[0, 1] = (0.0, 1.0)
    P[1, 0] = (0.5, 0.5)
    P[1, 1] = (1.0, 0.0)
    R = np.array([[0.1, 0.9], [2.0, 0.0]])
    m = fully_observable(P, R, gamma=0.9)
    prod = trivial_product(m)
    T = 3
    V = mdp_value_iteration_finite(P, R, T)
    want = float(m.varpi @ V)
    assert exact_value_oracle(prod, prod.rewards, T) == pytest.approx(want, abs=1e-12)


def test_finite_horizon_solver_matches_oracle_small():
    for seed, n_states, T in ((3, 2, 2), (4, 3, 3)):
        model = random_tiny_model(seed, n_states=n_states, horizon=T)
        prod = product_of(model, "F a")
        cfg = SolverConfig(exhaustive=True)
        lam = 0.7
        terminal = lam * prod.r_final
        policy = solve_finite_horizon(prod, prod.rewards, T, cfg, terminal=terminal)
        oracle = exact_value_oracle(prod, prod.rewards, T, terminal=terminal)
        assert start_value(policy, prod) == pytest.approx(oracle, abs=1e-9)


def test_oracle_guards_large_trees():
    model = uninformative_two_state()
    prod = trivial_product(model)
    with pytest.raises(RuntimeError):
        exact_value_oracle(prod, prod.rewards, 3, max_tree=2)


# --------------------------------------------------------------------------
# Action selection
# --------------------------------------------------------------------------

def test_policy_action_single_vector():
    policy = AlphaPolicy("stationary", [AlphaVector(2, np.array([0.0, 1.0]))], 2, gamma=0.9)
    assert policy_action(policy, np.array([1.0, 0.0])) == 2
    assert policy_action(policy, np.array([0.0, 1.0])) == 2


def test_policy_action_tie_breaks_low_index():
    alphas = [AlphaVector(3, np.array([1.0, 1.0])), AlphaVector(0, np.array([1.0, 1.0]))]
    policy = AlphaPolicy("stationary", alphas, 2, gamma=0.9)
    assert policy_action(policy, np.array([0.5, 0.5])) == 3


def test_policy_action_dominating_action():
    alphas = [AlphaVector(0, np.array([5.0, 0.0])), AlphaVector(1, np.array([0.0, 5.0]))]
    policy = AlphaPolicy("stationary", alphas, 2, gamma=0.9)
    assert policy_action(policy, np.array([1.0, 0.0])) == 0
    assert policy_action(policy, np.array([0.0, 1.0])) == 1
    with pytest.raises(ValueError):
        policy_action(policy, np.zeros(3))


# --------------------------------------------------------------------------
# Persistence
# --------------------------------------------------------------------------

def test_policy_file_roundtrip(tmp_path):
    model = uninformative_two_state(stopping=StoppingModel.geometric(0.9))
    prod = trivial_product(model)
    policy = solve_discounted(prod, prod.rewards, 0.9, SolverConfig(n_beliefs=8, max_backup_rounds=40))
    path = tmp_path / "policy.json"
    save_policy(policy, path)
    again = load_policy(path)
    assert again.kind == "stationary"
    assert len(again.alphas) == len(policy.alphas)
    b = np.full(prod.n_states, 1.0 / prod.n_states)
    assert again.value_at(b) == pytest.approx(policy.value_at(b))
    assert again.action(b, 0) == policy.action(b, 0)


def test_time_indexed_policy_roundtrip():
    model = uninformative_two_state()
    prod = trivial_product(model)
    policy = solve_finite_horizon(prod, prod.rewards, 2, SolverConfig(exhaustive=True))
    again = policy_from_dict(policy_to_dict(policy))
    b = np.full(prod.n_states, 1.0 / prod.n_states)
    for t in range(3):
        assert again.action(b, t) == policy.action(b, t)
