import json
import math

import numpy as np
import pytest
from scipy.optimize import brentq

from poincare_nn import (
    AdversarialOracle,
    BruteForceOracle,
    KdTree,
    binary_search_nn,
    build_shell_partition,
    recentering_nn,
    shell_nn,
)
from poincare_nn.adversarial import (
    ConstructionError,
    best_case_configuration,
    best_case_geometry,
    binary_search_scalars,
    bs_sufficient_conditions,
    gen_binary_search_approx_failure,
    gen_recentering_approx_failure,
    gen_recentering_worstcase,
    gen_rl_ratio_instance,
    generate,
    min_S_for_exp_condition,
    shell_exact_counterexample,
)

from helpers import dist_ref


def _hyper_rank(con, id_):
    q = con.query
    d = {int(i): dist_ref(q, x) for i, x in zip(con.dataset.ids, con.dataset.points)}
    order = sorted(d, key=lambda i: (d[i], i))
    return order.index(id_) + 1


def _euclid_nn(con):
    d = np.linalg.norm(con.dataset.points - con.query, axis=1)
    return int(con.dataset.ids[np.flatnonzero(d == d.min()).min()])


# --------------------------------------------------------------------------
# worst case


def test_worstcase_k3_layout():
    con = gen_recentering_worstcase(3)
    assert len(con.dataset) == 3
    assert con.point(2)[-1] == 0.5
    assert recentering_nn(con.query, BruteForceOracle(con.dataset)).stats.oracle_calls == 4


@pytest.mark.parametrize("k", [3, 4, 5, 10, 15, 20, 23])
def test_worstcase_calls_and_ranks(k):
    con = gen_recentering_worstcase(k)
    q = con.query
    plus, minus = con.point(0)[-1], con.point(1)[-1]
    # z solves d(q, 0) = d(q, q+z).  Rounding q+z to float64 next to 1 perturbs
    # its tiny gap, so the root is checked in the exact parametrization
    # q = 1 - a, q + z = 1 - u, with the plain arccosh formula.
    a = 2.0 ** -(k + 2)
    u = a - con.params["z"]
    d_plus = math.acosh(1 + 2 * (a - u) ** 2 / (a * (2 - a) * u * (2 - u)))
    d_origin = 2 * math.atanh(1 - a)
    assert abs(d_plus - d_origin) <= 1e-10
    assert abs(con.expected["z_residual"]) < 1e-10
    assert plus < 1.0 and minus >= 1.0 - 2.0 ** -k
    assert _euclid_nn(con) == 0
    assert _hyper_rank(con, 0) == k
    assert _hyper_rank(con, 1) == 1
    for oracle in (BruteForceOracle(con.dataset), KdTree(con.dataset)):
        res = recentering_nn(q, oracle)
        assert res.stats.oracle_calls == k + 1 == con.expected["oracle_calls"]
        assert res.nearest == 1


def test_worstcase_higher_dimension():
    con = gen_recentering_worstcase(6, dim=4)
    assert con.dataset.dim == 4
    assert np.all(con.dataset.points[:, :3] == 0)
    assert recentering_nn(con.query, BruteForceOracle(con.dataset)).stats.oracle_calls == 7


def test_worstcase_infeasible():
    with pytest.raises(ConstructionError, match="k >= 3"):
        gen_recentering_worstcase(2)
    with pytest.raises(ConstructionError, match="q - z"):
        gen_recentering_worstcase(10, q_norm=0.9)
    with pytest.raises(ConstructionError, match="inside the ball"):
        gen_recentering_worstcase(30)


# --------------------------------------------------------------------------
# best case


def test_best_case_geometry_from_tanh():
    q = 0.99
    r = dist_ref([0.0, q], [0.0, 0.998])
    d0 = 2 * math.atanh(q)
    geo = best_case_geometry()
    assert geo["radius"] == pytest.approx(r, rel=1e-12)
    assert geo["inner"] == pytest.approx(math.tanh((d0 - r) / 2), abs=1e-12)
    assert geo["outer"] == pytest.approx(0.998, abs=1e-12)
    assert geo["center"] == pytest.approx(0.9743941, abs=1e-7)


@pytest.mark.parametrize("k", [2, 5, 20, 50])
def test_best_case_three_calls(k):
    con = best_case_configuration(k)
    assert len(con.dataset) == k
    assert _euclid_nn(con) == 1
    assert _hyper_rank(con, 1) == k  # every filler beats n_E
    res = recentering_nn(con.query, BruteForceOracle(con.dataset))
    assert res.stats.oracle_calls == 3
    assert res.nearest == 0 == _hyper_rank(con, 0) - 1


@pytest.mark.parametrize("k", [5, 20])
def test_best_case_literal_interval(k):
    con = best_case_configuration(k, literal=True)
    res = recentering_nn(con.query, BruteForceOracle(con.dataset))
    assert res.stats.oracle_calls == 3
    assert res.nearest == 0
    # the literal fillers sit outside the first ball, so n_E is not rank k there
    assert _hyper_rank(con, 1) < k


# --------------------------------------------------------------------------
# R/L ratio


@pytest.mark.parametrize("s", [5, 20, 50])
def test_rl_ratio(s):
    con = gen_rl_ratio_instance(s)
    q, e, h = con.query[-1], con.point(0)[-1], con.point(1)[-1]
    assert q == pytest.approx((e + h) / 2, abs=1e-15)
    assert _euclid_nn(con) == 0
    assert _hyper_rank(con, 1) == 1
    assert con.expected["ratio"] >= (s - 1) / 2 - 1
    assert con.params["delta"] ** (s + 1) < con.params["gamma"] < con.params["delta"] ** s


def test_rl_ratio_regime_errors():
    with pytest.raises(ConstructionError):
        gen_rl_ratio_instance(1.0)
    with pytest.raises(ConstructionError):
        gen_rl_ratio_instance(20, delta=0.99)
    with pytest.raises(ConstructionError):
        gen_rl_ratio_instance(200, delta=0.6)


# --------------------------------------------------------------------------
# approximate-oracle failures


@pytest.mark.parametrize("eps", [0.1, 0.5, 1.0])
def test_recentering_failure(eps):
    con = gen_recentering_approx_failure(eps)
    q = con.query
    assert con.expected["failure_margin"] > 0
    bad = recentering_nn(q, AdversarialOracle(con.dataset, eps))
    good = recentering_nn(q, BruteForceOracle(con.dataset))
    assert bad.nearest == 1 and good.nearest == 0
    ratio = dist_ref(q, con.point(1)) / dist_ref(q, con.point(0))
    assert ratio == pytest.approx(con.expected["ratio"], rel=1e-9)
    assert ratio > 10


def test_recentering_failure_larger_ratio():
    con = gen_recentering_approx_failure(0.5, min_ratio=15)
    assert con.expected["ratio"] > 15


@pytest.mark.parametrize("eps,S", [(0.2, None), (0.5, None), (1.0, None), (0.5, 30.0)])
def test_binary_search_failure(eps, S):
    con = gen_binary_search_approx_failure(eps, S=S, c=2.0)
    q = con.query
    bad = binary_search_nn(q, AdversarialOracle(con.dataset, eps), 2.0)
    good = binary_search_nn(q, BruteForceOracle(con.dataset), 2.0)
    d_h = dist_ref(q, con.point(0))
    assert bad.nearest == 1
    assert good.distance <= 2.0 * d_h
    ratio = dist_ref(q, con.point(1)) / d_h
    assert ratio >= con.params["S"] * (1 - 1e-6)
    assert con.expected["conditions"]["delta_below_eps_over_6"] > 0


def test_binary_search_failure_sufficient_conditions_hold():
    # both sufficient inequalities, evaluated on the generated instance
    con = gen_binary_search_approx_failure(0.5)
    cond = bs_sufficient_conditions(0.5, con.params["delta"], con.expected["ratio"])
    assert cond["delta_below_eps_over_6"] > 0
    assert cond["exp_condition"] > 0


def test_exp_condition_needs_unrepresentable_ratio():
    delta = 0.5 / 12
    S = min_S_for_exp_condition(delta)
    assert 4 * math.exp(-0.49 * math.sqrt(S)) == pytest.approx(delta**2 / 8, rel=1e-9)
    assert S > 300
    with pytest.raises(ConstructionError, match="float64"):
        gen_binary_search_approx_failure(0.5, S=S)


@pytest.mark.parametrize("y,D", [(0.5, 0.3), (0.9, 1.0), (0.99, 2.5), (0.3, 0.05)])
def test_binary_search_scalars(y, D):
    t1, t2 = binary_search_scalars(y, D)
    assert t1 < y < t2
    # independent roots of d((0,y), (0,t)) = D on either side of y
    r1 = brentq(lambda t: dist_ref([0, y], [0, t]) - D, -1 + 1e-15, y, xtol=1e-15)
    r2 = brentq(lambda t: dist_ref([0, y], [0, t]) - D, y, 1 - 1e-15, xtol=1e-15)
    assert t1 == pytest.approx(r1, abs=1e-8)
    assert t2 == pytest.approx(r2, abs=1e-8)
    assert dist_ref([0, y], [0, t1]) == pytest.approx(D, abs=1e-8)


# --------------------------------------------------------------------------
# shell counterexample


def test_shell_counterexample():
    con = shell_exact_counterexample()
    q = con.query
    part = build_shell_partition(con.dataset, 3.0, num_bands=25)
    assert shell_nn(q, part).nearest == 1
    assert recentering_nn(q, BruteForceOracle(con.dataset)).nearest == 0
    e = con.expected
    assert e["inv_gap_nstar"] == pytest.approx(1.33, abs=1e-2)
    assert e["inv_gap_ne"] == pytest.approx(1.48, abs=1e-2)
    assert e["d_nstar"] == pytest.approx(4.19, abs=1e-2)
    assert e["d_ne"] == pytest.approx(4.1947374, abs=1e-7)
    assert e["euclid_ne"] == pytest.approx(0.464, abs=1e-2)
    assert e["euclid_nstar"] == pytest.approx(0.49, abs=1e-12)
    assert e["d_nstar"] < e["d_ne"]


@pytest.mark.parametrize("w", [1.5, 2.0, 3.0])
def test_shell_counterexample_same_band(w):
    con = shell_exact_counterexample()
    part = build_shell_partition(con.dataset, w, num_bands=10)
    assert part.band_sizes()[0] == 2


# --------------------------------------------------------------------------
# dispatch and serialization


def test_generate_dispatch_and_json():
    con = generate("recentering-worstcase", k=4)
    assert con.kind == "recentering_worstcase"
    json.dumps(con.to_json(), default=float)
    assert len(generate("best-case", k=4).dataset) == 4
    assert len(generate("rl_ratio", s=10).dataset) == 2
    assert len(generate("shell-exact-counterexample").dataset) == 2
    with pytest.raises(ConstructionError, match="unknown"):
        generate("nope")
