import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oalloc.core import (InfeasibleAllocationError, Instance, Linear,
                         LogServe, eval_utility, eval_utility_batch, step_budget,
                         utility_lipschitz, utility_sup, utility_supergradient)


def test_logserve_closed_form():
    assert eval_utility(LogServe(1.0), [1.0]) == pytest.approx(np.log(2), abs=1e-12)


def test_logserve_saturation_branch():
    # min{1, 3/2} = 1 forces the cap
    assert eval_utility(LogServe(2.0), [3.0]) == pytest.approx(2 * np.log(2), abs=1e-12)


def test_utility_zero_is_zero():
    assert eval_utility(LogServe(0.7), [0.0]) == 0.0
    assert eval_utility(Linear([2.0, 0.5]), [0.0, 0.0]) == 0.0


def test_linear_inner_product():
    assert eval_utility(Linear([2.0, 0.5]), [1.0, 4.0]) == pytest.approx(4.0)


def test_eval_dimension_mismatch():
    with pytest.raises(ValueError):
        eval_utility(Linear([1.0, 2.0]), [1.0])
    with pytest.raises(ValueError):
        eval_utility(LogServe(1.0), [0.5, 0.5])


def test_supergradient_linear_constant():
    assert utility_supergradient(Linear([2.0]), [0.3]) == pytest.approx([2.0])


def test_supergradient_logserve_values():
    assert utility_supergradient(LogServe(1.0), [0.0]) == pytest.approx([1.0])
    assert utility_supergradient(LogServe(1.0), [0.5]) == pytest.approx([2.0 / 3.0])
    # deterministic left limit at the kink, zero beyond it
    assert utility_supergradient(LogServe(1.0), [1.0]) == pytest.approx([0.5])
    assert utility_supergradient(LogServe(1.0), [1.5]) == pytest.approx([0.0])


@given(st.floats(0.1, 5.0), st.floats(0.0, 8.0), st.floats(0.0, 8.0))
@settings(max_examples=200, deadline=None)
def test_logserve_is_1_lipschitz(c, x, y):
    u = LogServe(c)
    fx = eval_utility(u, [x])
    fy = eval_utility(u, [y])
    assert abs(fx - fy) <= abs(x - y) + 1e-12
    assert utility_lipschitz(u) == 1.0


def test_supergradient_is_valid_supergradient():
    # concavity check on random pairs: f(y) <= f(x) + g(x) (y - x)
    rng = np.random.default_rng(7)
    for _ in range(200):
        c = rng.uniform(0.2, 3.0)
        u = LogServe(c)
        x, y = rng.uniform(0.0, 4.0, size=2)
        g = utility_supergradient(u, [x])[0]
        assert eval_utility(u, [y]) <= eval_utility(u, [x]) + g * (y - x) + 1e-9


def test_step_budget_cap_binding():
    e, nxt = step_budget(np.array([29.0]), np.array([5.0]), np.array([2.0]), np.array([30.0]))
    assert e == pytest.approx([1.0])
    assert nxt == pytest.approx([28.0])


def test_step_budget_zero_case():
    e, nxt = step_budget(np.array([0.0]), np.array([0.0]), np.array([0.0]), np.array([30.0]))
    assert e == pytest.approx([0.0])
    assert nxt == pytest.approx([0.0])


def test_step_budget_cap_slack():
    e, nxt = step_budget(np.array([10.0]), np.array([3.0]), np.array([4.0]), np.array([30.0]))
    assert e == pytest.approx([3.0])
    assert nxt == pytest.approx([9.0])


def test_step_budget_rejects_infeasible():
    with pytest.raises(InfeasibleAllocationError):
        step_budget(np.array([1.0]), np.array([0.0]), np.array([1.0 + 1e-6]), np.array([30.0]))
    # within tolerance is clamped, not rejected
    _, nxt = step_budget(np.array([1.0]), np.array([0.0]), np.array([1.0 + 1e-10]),
                         np.array([30.0]))
    assert nxt[0] >= 0.0


def test_step_budget_monotone_capping():
    rng = np.random.default_rng(11)
    bmax = np.array([5.0, 3.0])
    for _ in range(300):
        b = rng.uniform(0.0, 1.0, 2) * bmax
        e_hat = rng.uniform(0.0, 4.0, 2)
        e, nxt = step_budget(b, e_hat, np.zeros(2), bmax)
        assert np.all(e <= e_hat + 1e-12)
        assert np.all(e <= bmax - b + 1e-12)
        assert np.all(e >= 0.0)
        assert np.all(nxt <= bmax + 1e-12)


def _toy_instance(T=4, c=1.0):
    return Instance(T=T, M=1, b1=np.array([2.0]), bmax=np.array([4.0]),
                    xbar=np.array([1.0]), utilities=[LogServe(c)] * T,
                    replenishment=np.zeros((T, 1)))


def test_instance_derived_constants():
    inst = _toy_instance()
    assert inst.rho == pytest.approx([0.5])
    assert inst.rho_max == pytest.approx([1.0])
    assert inst.alpha == pytest.approx(2.0)
    assert inst.f_bar == pytest.approx(np.log(2))
    assert inst.lipschitz == 1.0


def test_f_bar_is_sup_over_box():
    # with xbar < c the saturation point is unreachable: sup is f(xbar)
    inst = Instance(T=1, M=1, b1=np.array([2.0]), bmax=np.array([4.0]),
                    xbar=np.array([1.0]), utilities=[LogServe(3.0)],
                    replenishment=np.zeros((1, 1)))
    assert inst.f_bar == pytest.approx(3.0 * np.log1p(1.0 / 3.0))
    assert utility_sup(Linear([2.0]), np.array([0.5])) == pytest.approx(1.0)


def test_utility_bound_property():
    inst = _toy_instance()
    rng = np.random.default_rng(3)
    for u in inst.utilities:
        for x in rng.uniform(0.0, inst.xbar[0], 50):
            f = eval_utility(u, [x])
            assert 0.0 <= f <= inst.f_bar + 1e-12


def test_instance_validation_errors():
    with pytest.raises(ValueError):
        Instance(T=2, M=1, b1=np.array([0.0]), bmax=np.array([4.0]), xbar=np.array([1.0]),
                 utilities=[LogServe(1.0)] * 2, replenishment=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        Instance(T=2, M=1, b1=np.array([5.0]), bmax=np.array([4.0]), xbar=np.array([1.0]),
                 utilities=[LogServe(1.0)] * 2, replenishment=np.zeros((2, 1)))
    with pytest.raises(ValueError):
        Instance(T=2, M=1, b1=np.array([2.0]), bmax=np.array([4.0]), xbar=np.array([5.0]),
                 utilities=[LogServe(1.0)] * 2, replenishment=np.zeros((2, 1)))
    with pytest.raises(ValueError):  # negative replenishment
        Instance(T=2, M=1, b1=np.array([2.0]), bmax=np.array([4.0]), xbar=np.array([1.0]),
                 utilities=[LogServe(1.0)] * 2, replenishment=-np.ones((2, 1)))
    with pytest.raises(ValueError):  # log-serve needs M=1
        Instance(T=1, M=2, b1=np.array([1.0, 1.0]), bmax=np.array([2.0, 2.0]),
                 xbar=np.array([1.0, 1.0]), utilities=[LogServe(1.0)],
                 replenishment=np.zeros((1, 2)))


def test_batch_eval_matches_scalar():
    u = LogServe(0.8)
    xs = np.linspace(0.0, 2.0, 17)
    batch = eval_utility_batch(u, xs)
    for x, f in zip(xs, batch):
        assert f == pytest.approx(eval_utility(u, [x]), abs=1e-12)
