import numpy as np
import pytest
from oracles import lp_transport_vertex

from hetradar import holmes as hm
from hetradar.backbone import FeatureMap
from hetradar.errors import ConfigError, ConvergenceError, NumericalError, ShapeError
from hetradar.pipeline import Describer

# 1 + 2 tanh(var / (2 (mean + eps))) for x = {0, 2}, eps = 1e-6, evaluated
# independently at 40 significant digits
REG_0_2 = 1.9242335280728913
REG_0_2_NO_EPS = 1.924234314520019


@pytest.fixture(scope="module")
def params():
    return hm.init_holmes(3, 32, 24)


def _maps(rng, c=32, h=6, w=8):
    return FeatureMap(np.maximum(rng.standard_normal((c, h, w)), 0) * rng.uniform(0.1, 2))


def test_adaptive_regularization_examples():
    assert hm.adaptive_regularization(np.full(10, 4.2)) == 1.0
    assert hm.adaptive_regularization([0.0, 2.0], 1e-6) == pytest.approx(REG_0_2, abs=1e-12)
    assert hm.adaptive_regularization([0.0, 2.0], 0.0) == pytest.approx(REG_0_2_NO_EPS, abs=1e-12)
    big = hm.adaptive_regularization([0.0, 0.0, 0.0, 1e4])
    assert 3.0 - 1e-9 < big <= 3.0
    with pytest.raises(NumericalError):
        hm.adaptive_regularization([-1e-6, -1e-6], 1e-6)
    with pytest.raises(NumericalError):
        hm.adaptive_regularization([])


def test_sinkhorn_uniform_scores():
    a = hm.sinkhorn_assign(np.zeros((6, 4)), 1.0)
    np.testing.assert_allclose(a.plan, 1.0 / 36, rtol=1e-12)
    assert a.transport.shape == (6, 4)


def test_sinkhorn_marginals_and_nonnegativity(rng):
    s = rng.standard_normal((40, 10)) * 3
    a = hm.sinkhorn_assign(s, 1.3, dustbin=0.5, ghostbin=rng.standard_normal(40))
    assert (a.plan >= 0).all()
    np.testing.assert_allclose(a.plan.sum(1), 1 / 40, atol=1e-6)
    np.testing.assert_allclose(a.plan.sum(0), 1 / 12, atol=1e-6)
    assert a.iterations <= 100 and a.marginal_error < 1e-6


def test_sinkhorn_custom_marginals(rng):
    s = rng.standard_normal((5, 3))
    ra = np.array([0.1, 0.2, 0.3, 0.25, 0.15])
    cb = np.array([0.3, 0.3, 0.2, 0.1, 0.1])
    a = hm.sinkhorn_assign(s, 0.7, ra, cb, max_iters=1000)
    np.testing.assert_allclose(a.plan.sum(1), ra, atol=1e-6)
    np.testing.assert_allclose(a.plan.sum(0), cb, atol=1e-6)
    with pytest.raises(ConfigError):
        hm.sinkhorn_assign(s, 1.0, ra, cb * 2)
    with pytest.raises(ShapeError):
        hm.sinkhorn_assign(s, 1.0, ra[:3])
    with pytest.raises(ConfigError):
        hm.sinkhorn_assign(s, 0.0)


def test_sinkhorn_nonconvergence_reports_error(rng):
    s = rng.standard_normal((30, 8)) * 50
    with pytest.raises(ConvergenceError) as info:
        hm.sinkhorn_assign(s, 0.05, max_iters=2)
    assert info.value.error > 1e-6 and info.value.last is not None


@pytest.mark.parametrize("seed", range(3))
def test_sinkhorn_small_reg_matches_lp(seed):
    rng = np.random.default_rng(seed)
    s = rng.standard_normal((3, 2))
    s[:, 0] += 2.0  # one dominant column
    dust, ghost = 0.3, rng.standard_normal(3) * 0.5
    aug = np.column_stack([s, np.full(3, dust), ghost])
    oracle = lp_transport_vertex(aug, np.full(3, 1 / 3), np.full(4, 1 / 4))
    a = hm.sinkhorn_assign(s, 0.005, dustbin=dust, ghostbin=ghost, max_iters=20000, tol=1e-10)
    np.testing.assert_allclose(a.plan, oracle, atol=1e-4)


def test_entropy_increases_with_reg(rng):
    s = rng.standard_normal((20, 6)) * 2
    ent = [hm.transport_entropy(hm.sinkhorn_assign(s, r, max_iters=2000).plan)
           for r in (0.2, 0.5, 1.0, 2.0, 5.0)]
    assert all(x < y for x, y in zip(ent, ent[1:]))


def test_cluster_aggregate_one_hot(rng):
    f = rng.standard_normal((7, 4))
    labels = np.array([0, 2, 2, 1, 0, 2, 1])
    r = np.eye(3)[labels]
    v = hm.cluster_aggregate(r, f)
    for k in range(3):
        np.testing.assert_allclose(v[k], f[labels == k].sum(0))


def test_gem():
    x = np.array([[1.0, -2.0], [3.0, 4.0]])
    np.testing.assert_allclose(hm.gem(x, 1.0), [2.0, 3.0])
    assert hm.gem(x, 3.0)[0] == pytest.approx(((1 + 27) / 2) ** (1 / 3))


def test_range_encoding_layout():
    enc = hm.range_encoding(3, 4, 2)
    assert enc.shape == (12, 4)
    # flatten order is row-major: locations 0..3 share row 0
    np.testing.assert_array_equal(enc[0], enc[3])
    assert not np.array_equal(enc[3], enc[4])
    assert hm.range_encoding(3, 4, 0).shape == (12, 0)


def test_level_norms_and_dims(params, rng):
    cfg = hm.HolmesConfig()
    d = hm.describe(_maps(rng), _maps(rng, 24, 3, 4), params, cfg)
    assert len(d) == 320 and d.level_sizes == (256, 64)
    for i in range(2):
        assert abs(np.linalg.norm(d.level(i)) - 1.0) < 1e-9


def test_single_scale_dim(rng):
    cfg = hm.HolmesConfig(multi_scale=False)
    p = hm.init_holmes(0, 32, 24, cfg)
    assert p.high is None
    d = hm.describe(_maps(rng), None, p, cfg)
    assert len(d) == 256


def test_describe_deterministic(params, rng):
    m, h = _maps(rng), _maps(rng, 24, 3, 4)
    a = hm.describe(m, h, params).values
    b = hm.describe(FeatureMap(m.data.copy()), FeatureMap(h.data.copy()), params).values
    assert a.tobytes() == b.tobytes()


def test_column_shift_invariance(params, rng):
    m, h = _maps(rng), _maps(rng, 24, 3, 4)
    base = hm.describe(m, h, params).values
    for s in range(1, 8):
        out = hm.describe(m.roll(s), h.roll(s % 4), params).values
        assert np.linalg.norm(out - base) / np.linalg.norm(base) < 1e-5


def test_shape_errors(params, rng):
    with pytest.raises(ShapeError):
        hm.describe(_maps(rng, c=31), _maps(rng, 24, 3, 4), params)
    with pytest.raises(ShapeError):
        hm.describe(_maps(rng), None, params)
    with pytest.raises(ConfigError):
        hm.LevelConfig(0, 1, 1, 1)
    with pytest.raises(ConfigError):
        hm.HolmesConfig(range_encoding=-1)


def test_parameters_roundtrip(tmp_path, rng):
    d = Describer.random(4, channels=(4, 8, 8, 8, 16), high_channels=8)
    d.save(tmp_path / "w.shbw")
    back = Describer.load(tmp_path / "w.shbw")
    img = np.where(rng.random((128, 64)) < 0.1, 80.0, 0.0)
    np.testing.assert_allclose(back.describe_images(img), d.describe_images(img), rtol=1e-6,
                               atol=1e-7)
    assert back.cfg.range_encoding == d.cfg.range_encoding
