import math

import numpy as np
import pytest

from irgnm4pi import irgnm
from irgnm4pi.irgnm import ForwardOperator, IrgnmConfig, IrgnmTrace, NoiseBudget, TraceRow
from irgnm4pi.tikhonov import SsnConfig
from irgnm4pi.toys import ToySpec, build_linear_toy, build_nonlinear_toy


@pytest.mark.parametrize("alpha0,q,eta,delta,expected", [
    (1.0, 0.5, 1.0, 0.1, 4),        # 1/16 < 0.1 <= 1/8
    (1.0, 0.5, 1.0, 0.125, 4),      # strict inequality: 1/8 is not below 1/8
    (1.0, 0.5, 2.0, 0.1, 3),        # threshold 0.2: 1/8 < 0.2
    (2.0, 2 / 3, 1.0, 1e-3, 19),
])
def test_stopping_index(alpha0, q, eta, delta, expected):
    alphas = alpha0 * q ** np.arange(60)
    N = irgnm.stopping_index(alphas, eta, delta)
    assert N == expected
    assert alphas[N] < eta * delta
    assert np.all(alphas[:N] >= eta * delta)


def test_stopping_index_errors():
    a = 0.5 ** np.arange(10)
    with pytest.raises(ValueError, match="noise-free"):
        irgnm.stopping_index(a, 1.0, 0.0)
    with pytest.raises(ValueError, match="decreasing"):
        irgnm.stopping_index([1.0, 1.0, 0.5], 1.0, 0.1)
    with pytest.raises(ValueError, match="not reached"):
        irgnm.stopping_index(a, 1.0, 1e-9)


@pytest.mark.parametrize("dg,dF,dFp,expected", [
    (0.01, 0.02, 0.1, 0.03),
    (0.001, 0.0, 0.1, 0.01),
    (0.0, 0.0, 0.0, 0.0),
])
def test_combined_noise(dg, dF, dFp, expected):
    assert math.isclose(irgnm.combined_noise(NoiseBudget(dg, dF, dFp)), expected, rel_tol=1e-12)
    assert math.isclose(NoiseBudget(dg, dF, dFp).delta_bar, expected, rel_tol=1e-12)


def test_noise_budget_rejects_negative_levels():
    with pytest.raises(ValueError):
        NoiseBudget(-1e-3, 0.0, 0.0)


@pytest.mark.parametrize("kwargs", [
    dict(alpha0=0.0), dict(decay=1.0), dict(decay=0.0), dict(eta=0.0),
    dict(delta_bar=-1.0), dict(max_iters=-1), dict(variant="fancy"),
])
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        IrgnmConfig(**kwargs)


def test_trace_tsv_round_trip():
    tr = IrgnmTrace([TraceRow(0, 1.0, 2.5, 0.1, math.nan, 0.1, 0, 0, True),
                     TraceRow(1, 2 / 3, 1.25, 0.05, 0.3, 1 / 3, 7, 42, False)])
    back = IrgnmTrace.from_tsv(tr.to_tsv())
    assert back.to_tsv() == tr.to_tsv()
    assert back.rows[1].cg_iters == 42 and back.rows[1].ssn_converged is False
    assert math.isnan(back.rows[0].phase_error)
    assert np.array_equal(back.alphas, [1.0, 2 / 3])


def test_linear_first_step_is_the_tikhonov_solution():
    prob = build_linear_toy(ToySpec(size=32))
    T = prob.operator.T
    cfg = IrgnmConfig(alpha0=0.1, max_iters=1, variant="unconstrained")
    x, trace = irgnm.run(prob.operator, prob.data, np.zeros(32), cfg)
    want = np.linalg.solve(T.T @ T + 0.1 * np.eye(32), T.T @ prob.data)
    assert np.allclose(x, want, atol=1e-9)
    assert trace.stop_reason == "max_iters" and trace.stop_index == 1


@pytest.mark.parametrize("variant", irgnm.VARIANTS)
def test_variants_feasibility(variant):
    prob = build_nonlinear_toy(ToySpec(size=64, beta=0.05, gain=10.0, rho=0.05))
    cfg = IrgnmConfig(alpha0=1.0, max_iters=8, variant=variant)
    x, trace = irgnm.run(prob.operator, prob.data, prob.anchor, cfg, truth=prob.x_true)
    if variant == "unconstrained":
        assert np.any(x < 0)
    else:
        assert np.all(x >= 0)
    assert len(trace.rows) == 9
    assert trace.column("residual")[-1] < trace.column("residual")[0]


def test_stopping_rule_fires_at_predicted_index():
    prob = build_nonlinear_toy(ToySpec(size=64, beta=0.05, gain=10.0, rho=0.05))
    cfg = IrgnmConfig(alpha0=1.0, decay=0.5, delta_bar=1e-3, max_iters=100)
    _, trace = irgnm.run(prob.operator, prob.data, prob.anchor, cfg)
    assert trace.stop_reason == "stopping rule"
    assert trace.stop_index == irgnm.stopping_index(0.5 ** np.arange(100), 1.0, 1e-3) == 10


def test_noise_free_runs_stop_at_max_iters():
    prob = build_linear_toy(ToySpec(size=16))
    _, trace = irgnm.run(prob.operator, prob.data, prob.anchor, IrgnmConfig(max_iters=3))
    assert trace.stop_reason == "max_iters"
    assert [r.n for r in trace.rows] == [0, 1, 2, 3]


def test_infeasible_start_rejected():
    prob = build_linear_toy(ToySpec(size=16))
    with pytest.raises(ValueError, match="feasible"):
        irgnm.run(prob.operator, prob.data, -np.ones(16), IrgnmConfig())


class _Blowup(ForwardOperator):
    """Linear map whose value turns non-finite once the iterate is nonzero."""

    constraint_mask = np.zeros(2, bool)

    def evaluate(self, x):
        return np.array([np.inf, 0.0]) if np.any(x != 0) else x.copy()

    def derivative_apply(self, x, h):
        return h

    def derivative_adjoint(self, x, g):
        return g


def test_divergence_carries_partial_trace():
    with pytest.raises(irgnm.IrgnmDivergence) as err:
        irgnm.run(_Blowup(), np.ones(2), np.zeros(2), IrgnmConfig(max_iters=5, ssn=SsnConfig()))
    tr = err.value.trace
    assert tr.stop_reason == "non-finite residual"
    assert len(tr.rows) == 2


def test_callback_sees_every_iterate():
    prob = build_linear_toy(ToySpec(size=16))
    seen = []
    irgnm.run(prob.operator, prob.data, prob.anchor, IrgnmConfig(max_iters=4),
              callback=lambda n, x: seen.append(n))
    assert seen == [0, 1, 2, 3, 4]


def test_check_operator_on_linear_and_nonlinear_maps():
    lin = build_linear_toy(ToySpec(size=32)).operator
    d = irgnm.check_operator(lin, np.ones(32))
    assert d.adjoint_mismatch < 1e-12
    assert d.taylor_order == math.inf
    nl = build_nonlinear_toy(ToySpec(size=32, beta=0.05, gain=10.0, rho=0.05)).operator
    d = irgnm.check_operator(nl, np.ones(32))
    assert 1.9 <= d.taylor_order <= 2.1
