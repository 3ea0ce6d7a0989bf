import numpy as np
import pytest
from hypothesis import given, strategies as st

from tot.chains import DiscreteLatentChain, NonErgodicError
from tot.diffnum import DimensionError
from tot.evaluation import (BaselineConfig, MissingLatentsError, baseline_suite, channel_matrix,
                            estimate_latents, forecast_metrics, mcc, risk_lab, support_recovery,
                            z_affects_transition)
from tot.evaluation.baselines import split_windows
from tot.model import ModelConfig, TotModel
from tot.synthgen import generate_dataset, preset

from test_model import SMALL, linear_decoder


# ---------------------------------------------------------------- MCC

def test_mcc_examples(rng):
    z = rng.normal(size=(500, 4))
    assert mcc(z, z).score == pytest.approx(1.0)
    flipped = -z[:, [2, 0, 3, 1]] * np.array([1.0, -1.0, 1.0, 1.0])
    rep = mcc(z, flipped)
    assert rep.score == pytest.approx(1.0)
    assert rep.assignment.tolist() == [1, 3, 0, 2]


def test_mcc_null_bound():
    rng = np.random.default_rng(7)
    assert mcc(rng.normal(size=(10_000, 5)), rng.normal(size=(10_000, 5))).score <= 0.1


def test_mcc_constant_column_and_errors(rng):
    z = rng.normal(size=(50, 2))
    est = np.c_[z[:, 0], np.ones(50)]
    rep = mcc(z, est)
    assert rep.corr[1, 1] == 0.0 and rep.score == pytest.approx(0.5)
    with pytest.raises(DimensionError):
        mcc(z, z[:, :1])
    with pytest.raises(DimensionError):
        mcc(z[:2], z[:2])


@given(st.integers(0, 2**31 - 1), st.integers(1, 6))
def test_mcc_invariances(seed, n):
    r = np.random.default_rng(seed)
    z, est = r.normal(size=(200, n)), r.normal(size=(200, n))
    base = mcc(z, est)
    assert 0.0 <= base.score <= 1.0
    assert sorted(base.assignment.tolist()) == list(range(n))
    scale = r.uniform(0.1, 5, size=n) * r.choice([-1, 1], size=n)
    perm = r.permutation(n)
    assert mcc(z, (est * scale + r.normal(size=n))[:, perm]).score == pytest.approx(base.score, abs=1e-12)
    assert mcc(z * scale - 3.0, est).score == pytest.approx(base.score, abs=1e-12)


def test_forecast_metrics_examples(rng):
    x = rng.normal(size=(3, 4))
    assert forecast_metrics(x, x) == (0.0, 0.0)
    mse, mae = forecast_metrics(x + 2.0, x)
    assert mse == pytest.approx(4.0) and mae == pytest.approx(2.0)
    assert forecast_metrics([0.0, 0.0], [1.0, 3.0]) == (5.0, 2.0)
    with pytest.raises(DimensionError):
        forecast_metrics(x, x.T)


# ---------------------------------------------------------------- risk lab

def random_chain(seed, k=None, m=None, floor=0.0):
    r = np.random.default_rng(seed)
    k = k or int(r.integers(1, 7))
    m = m or int(r.integers(2, 7))
    return DiscreteLatentChain.random(k, m, r, floor=floor)


def test_channel_matrices():
    assert np.array_equal(channel_matrix("identity", 3), np.eye(3))
    np.testing.assert_allclose(channel_matrix("noisy", 3, 0.2).sum(axis=1), 1.0)
    assert channel_matrix("noisy", 3, 0.2)[0, 1] == pytest.approx(0.1)
    assert np.array_equal(channel_matrix("bijection", 3, perm=[2, 0, 1]).argmax(axis=1), [2, 0, 1])
    with pytest.raises(ValueError):
        channel_matrix("bijection", 3, perm=[0, 0, 1])
    with pytest.raises(ValueError):
        channel_matrix("psychic", 3)


def test_risk_lab_channels_exact():
    chain = random_chain(1, 3, 3)
    z = risk_lab(chain, "identity")
    b = risk_lab(chain, "bijection", perm=[1, 2, 0])
    ind = risk_lab(chain, "independent")
    assert abs(b.r_zhat - z.r_z) <= 1e-12
    assert abs(ind.r_zhat - ind.r_o) <= 1e-12
    noisy = risk_lab(chain, "noisy", p_flip=0.2)
    assert noisy.r_o > noisy.r_zhat > noisy.r_z
    assert noisy.decomposition_residual <= 1e-12
    assert all(v >= 0 for v in (noisy.r_o, noisy.r_z, noisy.r_zhat))


def test_risk_lab_against_monte_carlo_free_oracle():
    # brute force: enumerate (x_{t-1}, z_t, x_t, x_{t+1}) and condition by grouping
    chain = random_chain(2, 2, 3)
    pi = chain.stationary()
    v = chain.x_values
    P = {}
    for zp in range(2):
        for a in range(3):
            for zt in range(2):
                for b in range(3):
                    for zn in range(2):
                        for d in range(3):
                            w = pi[zp, a] * chain.P_z[zp, zt] * chain.P_x[zt, a, b] \
                                * chain.P_z[zt, zn] * chain.P_x[zn, b, d]
                            key = (a, zt, b, d)
                            P[key] = P.get(key, 0.0) + w

    def risk(info):
        cells = {}
        for (a, zt, b, d), w in P.items():
            cells.setdefault(info(a, zt, b), []).append((w, v[d]))
        tot = 0.0
        for items in cells.values():
            w = np.array([i[0] for i in items])
            y = np.array([i[1] for i in items])
            mu = (w * y).sum() / w.sum()
            tot += (w * (y - mu) ** 2).sum()
        return tot
    rep = risk_lab(chain)
    assert rep.r_o == pytest.approx(risk(lambda a, z, b: (a, b)), abs=1e-13)
    assert rep.r_z == pytest.approx(risk(lambda a, z, b: (a, z, b)), abs=1e-13)


@pytest.mark.parametrize("seed", range(50))
def test_risk_lab_properties_random_chains(seed):
    chain = random_chain(100 + seed)
    rep = risk_lab(chain, "noisy", p_flip=0.3)
    assert rep.decomposition_residual <= 1e-12
    assert rep.r_o + 1e-12 >= rep.r_zhat >= rep.r_z - 1e-12
    if z_affects_transition(chain):
        assert rep.r_o > rep.r_z


def test_non_ergodic_chain_rejected():
    P_x = np.full((2, 2, 2), 0.5)
    with pytest.raises(NonErgodicError):
        risk_lab(DiscreteLatentChain(np.eye(2), P_x))


def test_chain_validation_and_json():
    with pytest.raises(ValueError):
        DiscreteLatentChain(np.array([[0.5, 0.6], [0.5, 0.5]]), np.full((2, 2, 2), 0.5))
    chain = random_chain(3, 2, 3)
    back = DiscreteLatentChain.from_json(chain.to_json())
    assert np.array_equal(back.P_x, chain.P_x) and np.array_equal(back.P_z, chain.P_z)


# ---------------------------------------------------------------- baselines

@pytest.fixture(scope="module")
def small_ds():
    return generate_dataset(preset("A", n=3, total_steps=3000, validation_size=300, seed=1))


@pytest.fixture(scope="module")
def small_model():
    return TotModel.init(ModelConfig(n=3, t_in=4, horizon=2, **SMALL))


def test_split_windows_respects_validation(small_ds):
    tr, va = split_windows(small_ds, 4, 2)
    v0 = small_ds.validation_range.start
    assert tr[-1] + 6 <= v0
    assert va[0] + 4 == v0 and va[-1] + 6 == small_ds.T


def test_baseline_suite_noise_control_and_oracle(small_ds, small_model):
    cfg = BaselineConfig(hidden=(32,), epochs=4, regimes=("baseline", "oracle", "noise"), seed=2)
    rep = baseline_suite(small_ds, small_model, cfg)
    assert set(rep.mse) == {"baseline", "oracle", "noise"}
    assert rep.mse["oracle"] < rep.mse["baseline"]
    assert abs(rep.mse["noise"] - rep.mse["baseline"]) <= 0.05 * rep.mse["baseline"]
    again = baseline_suite(small_ds, small_model, cfg)
    assert again.to_dict() == rep.to_dict()


def test_baseline_suite_tot_regime(small_ds, small_model):
    rep = baseline_suite(small_ds, small_model, BaselineConfig(hidden=(8,), epochs=1, regimes=("tot",)))
    assert np.isfinite(rep.mse["tot"]) and rep.tot_native_mse is not None


def test_baseline_suite_needs_latents(small_ds, small_model):
    from dataclasses import replace
    with pytest.raises(MissingLatentsError):
        baseline_suite(replace(small_ds, has_latents=False), small_model)
    with pytest.raises(ValueError):
        BaselineConfig(regimes=("magic",))


# ---------------------------------------------------------------- latent read-out

def test_estimate_latents_alignment(small_ds, small_model):
    steps, zhat = estimate_latents(small_model, small_ds.x[:50])
    assert steps[0] == 3 and len(steps) == len(zhat) == 47


def test_support_recovery_linear_decoder():
    # decoder x = M z with a known support; encoder replaced by the exact inverse
    rng = np.random.default_rng(0)
    n = 3
    M = np.array([[1.0, 0.0, 0.0], [0.8, 1.0, 0.0], [0.0, 0.0, -1.2]])  # M[x_i, z_j]
    m = linear_decoder(n, M)
    from tot.evaluation import latents
    z = rng.normal(size=(400, n))
    x = z @ M.T
    orig = latents.estimate_latents
    try:
        latents.estimate_latents = lambda model, xx, batch=4096: (np.arange(2, len(xx)), np.linalg.solve(M, xx[2:].T).T)
        rep = support_recovery(m, x, z, (M != 0).T)
    finally:
        latents.estimate_latents = orig
    assert rep.f1 == 1.0 and rep.precision == 1.0 and rep.recall == 1.0
    np.testing.assert_allclose(rep.jacobian, np.abs(M).T, atol=1e-12)
