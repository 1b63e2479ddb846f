import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from uabnn.bnn import BnnModel, GaussianPrior, VariationalLinear, inverse_softplus
from uabnn.exceptions import ContractViolation
from uabnn.uncertainty import (
    PredictiveDistribution,
    decompose,
    decompose_array,
    entropy,
    ood_score,
    predict_mc,
    sample_probs,
)
from oracles import entropy_nats


def test_entropy_examples():
    assert entropy([0.0, 1.0, 0.0]) == 0.0
    assert entropy([1 / 3] * 3) == pytest.approx(math.log(3), abs=1e-12)
    assert entropy([0.7, 0.2, 0.1]) == pytest.approx(entropy_nats([0.7, 0.2, 0.1]), abs=1e-14)
    assert entropy([0.7, 0.2, 0.1]) == pytest.approx(0.801819, abs=1e-6)
    with pytest.raises(ContractViolation):
        entropy([1.2, -0.2])


def test_decompose_examples():
    same = decompose(PredictiveDistribution(np.tile([0.1, 0.3, 0.6], (5, 1))))
    assert same.eu == 0.0 and same.pu == same.au

    split = decompose(PredictiveDistribution([[1.0, 0.0], [0.0, 1.0]]))
    assert split.au == 0.0
    assert split.pu == pytest.approx(math.log(2), abs=1e-12) and split.eu == pytest.approx(math.log(2), abs=1e-12)
    assert ood_score(split) == split.eu and ood_score(split, "total") == split.pu

    r = decompose(PredictiveDistribution([[0.6, 0.4], [0.8, 0.2]]))
    pu = entropy_nats([0.7, 0.3])
    au = (entropy_nats([0.6, 0.4]) + entropy_nats([0.8, 0.2])) / 2
    assert (pu, au, pu - au) == pytest.approx((0.610864, 0.586707, 0.024157), abs=1e-6)
    assert r.pu == pytest.approx(pu, abs=1e-12)
    assert r.au == pytest.approx(au, abs=1e-12)
    assert r.eu == pytest.approx(pu - au, abs=1e-12)
    assert r.predicted_class == 0 and r.confidence == pytest.approx(0.7)


def test_report_json_keys():
    r = decompose(PredictiveDistribution([[0.6, 0.4], [0.8, 0.2]]))
    assert set(r.to_json()) == {"pu", "au", "eu", "mean_probs", "predicted_class", "confidence", "eu_clamped"}


def test_argmax_tie_breaks_to_lowest_index():
    r = decompose(PredictiveDistribution([[0.5, 0.5], [0.5, 0.5]]))
    assert r.predicted_class == 0


def test_distribution_contract():
    with pytest.raises(ContractViolation):
        PredictiveDistribution([[0.5, 0.5]])
    with pytest.raises(ContractViolation):
        PredictiveDistribution([[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(ContractViolation):
        PredictiveDistribution([[1.5, -0.5], [0.5, 0.5]])


@st.composite
def distributions(draw):
    s = draw(st.integers(2, 12))
    c = draw(st.integers(2, 6))
    raw = draw(arrays(np.float64, (s, c), elements=st.floats(0, 1)))
    raw = raw + 1e-300 * (raw.sum(axis=1, keepdims=True) == 0)
    p = raw / raw.sum(axis=1, keepdims=True)
    return p


@given(distributions())
def test_decomposition_identities(p):
    out = decompose_array(p[:, None, :])
    pu, au, eu = out["pu"][0], out["au"][0], out["eu"][0]
    assert pu == au + eu
    assert 0 <= au <= pu <= math.log(p.shape[1]) + 1e-15
    assert out["eu_raw"][0] >= -1e-9
    assert out["predicted_class"][0] == int(np.argmax(p.mean(axis=0)))


def _wide_model():
    # logit_0 = w * x with w ~ N(0.5, 1); logit_1 = 0 (collapsed)
    rho = np.array([[inverse_softplus(1.0)], [-40.0]])
    layer = VariationalLinear(np.array([[0.5], [0.0]]), rho, np.zeros(2), np.full(2, -40.0))
    return BnnModel([layer], "identity", GaussianPrior())


def test_collapsed_posterior_rows_equal_mean_prediction(gen):
    m = BnnModel.init(4, (6,), 3, gen, rho_init=-40.0)
    x = gen.standard_normal(4)
    pd = predict_mc(m, x, S=16, seed=2)
    assert np.max(np.abs(pd.probs - m.mean_network().predict_proba(x[None])[0])) < 1e-9
    assert decompose(pd).eu < 1e-12


def test_predict_mc_deterministic_and_order_independent(gen):
    m = BnnModel.init(4, (6,), 3, gen, rho_init=-1.0)
    x = gen.standard_normal(4)
    assert np.array_equal(predict_mc(m, x, 2, 5).probs, predict_mc(m, x, 2, 5).probs)
    # draw s does not depend on how many draws were requested
    assert np.array_equal(predict_mc(m, x, 8, 5).probs, predict_mc(m, x, 20, 5).probs[:8])
    assert not np.array_equal(predict_mc(m, x, 8, 5).probs, predict_mc(m, x, 8, 6).probs)
    # a row sees the same weight draws whatever else is in the batch (BLAS may round differently)
    X = gen.standard_normal((3, 4))
    assert np.allclose(sample_probs(m, X, 4, 1)[:, 1], sample_probs(m, X[1:2], 4, 1)[:, 0], rtol=0, atol=1e-14)


def test_wide_posterior_matches_push_forward_oracle():
    x = np.array([1.3])
    S = 20_000
    p0 = predict_mc(_wide_model(), x, S=S, seed=11).probs[:, 0]
    w = np.random.default_rng(99).normal(0.5, 1.0, 100_000)
    oracle = 1 / (1 + np.exp(-w * x[0]))
    var_model, var_oracle = p0.var(ddof=1), oracle.var(ddof=1)
    se = lambda v: np.std((v - v.mean()) ** 2, ddof=1) / math.sqrt(v.size)  # noqa: E731
    assert var_model > 0
    assert abs(var_model - var_oracle) < 3 * math.hypot(se(p0), se(oracle))
    assert abs(p0.mean() - oracle.mean()) < 3 * math.hypot(p0.std() / math.sqrt(S), oracle.std() / math.sqrt(w.size))


def test_untrained_nan_model_rejected(gen):
    m = BnnModel.init(2, (3,), 2, gen)
    m.layers[0].mu[0, 0] = np.nan
    with pytest.raises(ContractViolation):
        predict_mc(m, np.zeros(2), 4)


def test_s_consistency(gen):
    m = BnnModel.init(3, (8,), 3, gen, rho_init=0.0)
    x = gen.standard_normal(3)
    sizes = [16, 64, 256, 1024]
    gaps = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        diffs = []
        for rep in range(20):
            ra = decompose(predict_mc(m, x, a, seed=1000 + rep))
            rb = decompose(predict_mc(m, x, b, seed=2000 + rep))
            diffs.append((abs(ra.pu - rb.pu), abs(ra.au - rb.au)))
        gaps.append(np.mean(diffs, axis=0))
    gaps = np.array(gaps)
    assert np.all(np.diff(gaps[:, 0]) < 0) and np.all(np.diff(gaps[:, 1]) < 0)
