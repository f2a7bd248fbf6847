import math
from types import SimpleNamespace

import numpy as np
import pytest

from ambipose import cvae
from ambipose.autodiff import Tensor, finite_difference_check, value_and_grad, ParamStore
from ambipose.errors import DegenerateRotation6D, ExcessiveDegeneracy
from ambipose.geometry import Pose, random_rotations, rot6d_to_matrix, rotation_about

TINY = cvae.ModelSpec(feature_widths=(5,), fusion_width=6, hidden_width=7, encoder_depth=2, decoder_depth=2)


def zeroed(spec=cvae.ModelSpec(), dtype=np.float64):
    p = cvae.init_params(spec, 0, dtype)
    for k in p:
        p[k] = np.zeros_like(p[k])
    return p


def randomized(spec=TINY, seed=0):
    p = cvae.init_params(spec, seed, np.float64)
    rng = np.random.default_rng(seed + 1)
    for k in p:
        if k.endswith(".bias"):
            p[k] = 0.1 * rng.standard_normal(p[k].shape)
    return p


def relu(x):
    return np.maximum(x, 0)


def mlp_oracle(p, prefix, x, final_relu=False):
    i = 0
    while f"{prefix}.{i}.weight" in p:
        x = x @ p[f"{prefix}.{i}.weight"] + p[f"{prefix}.{i}.bias"]
        last = f"{prefix}.{i + 1}.weight" not in p
        if not last or final_relu:
            x = relu(x)
        i += 1
    return x


def decode_oracle(p, z, obs):
    f = mlp_oracle(p, "features", obs, final_relu=True)
    e = relu(f @ p["obs_proj.weight"] + p["obs_proj.bias"])
    h = relu(z @ p["latent_proj.weight"] + p["latent_proj.bias"]) + e
    return mlp_oracle(p, "decoder", h)


# ----------------------------------------------------------------- encoder


def test_encode_zero_network():
    q = cvae.encode(zeroed(), np.arange(9.0))
    np.testing.assert_array_equal(q.mean, np.zeros(4))
    np.testing.assert_array_equal(q.log_variance, np.zeros(4))


def test_encode_matches_oracle(rng):
    p = randomized(cvae.ModelSpec(), seed=3)
    y = Pose(random_rotations(rng, 1)[0], rng.standard_normal(3)).to_vec9()
    out = mlp_oracle(p, "encoder", y)
    q = cvae.encode(p, y)
    np.testing.assert_allclose(q.mean, out[:4], atol=1e-12)
    np.testing.assert_allclose(q.log_variance, np.clip(out[4:], -10, 10), atol=1e-12)


def test_encode_distinguishes_poses():
    p = randomized(cvae.ModelSpec(), seed=4)
    a = cvae.encode(p, Pose.identity().to_vec9())
    b = cvae.encode(p, Pose(rotation_about("z", 30), (1, 0, 0)).to_vec9())
    assert not np.allclose(a.mean, b.mean)


def test_log_variance_clamped():
    q = cvae.LatentGaussian(np.zeros(2), np.array([-50.0, 50.0]))
    np.testing.assert_array_equal(q.log_variance, [-10, 10])


# ---------------------------------------------------------------------- KL


def test_kl_examples():
    assert cvae.kl_standard_normal(cvae.LatentGaussian(np.zeros(4), np.zeros(4))) == 0.0
    assert cvae.kl_standard_normal(cvae.LatentGaussian([1.0, 0, 0, 0], np.zeros(4))) == pytest.approx(0.5, abs=1e-12)
    q = cvae.LatentGaussian(np.zeros(4), np.full(4, math.log(2)))
    assert cvae.kl_standard_normal(q) == pytest.approx(2 * (1 - math.log(2)), abs=1e-12)


def test_kl_nonnegative(rng):
    for _ in range(200):
        q = cvae.LatentGaussian(rng.normal(0, 2, 4), rng.normal(0, 3, 4))
        assert cvae.kl_standard_normal(q) >= 0


def test_kl_tensor_matches_closed_form(rng):
    mu, lv = rng.standard_normal((5, 4)), rng.standard_normal((5, 4))
    got = cvae.kl_terms(Tensor(mu), Tensor(lv)).data
    want = [cvae.kl_standard_normal(cvae.LatentGaussian(m, l)) for m, l in zip(mu, lv)]
    np.testing.assert_allclose(got, want, atol=1e-12)


# ---------------------------------------------------------- reparameterize


def test_reparameterize_examples(rng):
    q = cvae.LatentGaussian(rng.standard_normal(4), rng.standard_normal(4))
    np.testing.assert_array_equal(cvae.reparameterize(q, np.zeros(4)), q.mean)
    n = rng.standard_normal(4)
    np.testing.assert_array_equal(cvae.reparameterize(cvae.LatentGaussian(np.zeros(4), np.zeros(4)), n), n)


def test_reparameterize_gradient(rng):
    noise = rng.standard_normal(4)
    p = ParamStore()
    p.add("mu", rng.standard_normal(4))
    p.add("lv", rng.standard_normal(4))
    f = lambda t: cvae.reparameterize((t["mu"], t["lv"]), noise).square().sum()
    _, g = value_and_grad(f, p)
    z = p["mu"] + np.exp(0.5 * p["lv"]) * noise
    np.testing.assert_allclose(g["mu"], 2 * z, atol=1e-12)
    assert finite_difference_check(f, p) <= 1e-6


# ------------------------------------------------------------------ decoder


def test_decode_zero_network():
    out = cvae.decode(zeroed(), np.ones(4), np.ones(3))
    np.testing.assert_array_equal(out, np.zeros(9))
    with pytest.raises(DegenerateRotation6D):
        rot6d_to_matrix(out[:6])


def test_decode_matches_oracle(rng):
    p = randomized(cvae.ModelSpec(), seed=5)
    z, obs = rng.standard_normal(4), rng.random(3)
    np.testing.assert_allclose(cvae.decode(p, z, obs), decode_oracle(p, z, obs), atol=1e-12)


def test_spec_round_trip():
    for spec in (TINY, cvae.ModelSpec(), cvae.ModelSpec(feature_widths=(), obs_dim=6)):
        assert cvae.spec_from_params(cvae.init_params(spec, 0)) == spec


# ------------------------------------------------------------------- losses


def test_reconstruction_loss_examples():
    target = Pose(np.eye(3), (1, 2, 3))
    assert cvae.reconstruction_loss(target.to_vec9(), target) == 0.0
    flipped = Pose(rotation_about("z", 180), (1, 2, 3)).to_vec9()
    assert cvae.reconstruction_loss(flipped, target, 1.0, 1.0) == pytest.approx(2 * math.sqrt(2), abs=1e-12)
    moved = Pose(np.eye(3), (4, 6, 3)).to_vec9()
    assert cvae.reconstruction_loss(moved, target, 1.0, 1.0) == pytest.approx(5.0)
    with pytest.raises(DegenerateRotation6D):
        cvae.reconstruction_loss(np.zeros(9), target)


def test_pose_loss_terms_match_scalar_version(rng):
    pred = rng.standard_normal((6, 9))
    R = random_rotations(rng, 6)
    t = rng.standard_normal((6, 3))
    got = cvae.pose_loss_terms(Tensor(pred), R, t, 0.7, 1.3).data
    want = [cvae.reconstruction_loss(pred[i], Pose(R[i], t[i]), 0.7, 1.3) for i in range(6)]
    np.testing.assert_allclose(got, want, atol=1e-12)


@pytest.mark.parametrize("it, beta", [(0, 0.0), (999, 0.0), (1000, 0.0), (3000, 0.15), (5000, 0.3), (20000, 0.3)])
def test_beta_schedule(it, beta):
    assert cvae.beta_schedule(it, cvae.TrainConfig()) == pytest.approx(beta, abs=1e-15)


def test_elbo_zero_for_perfect_decoder(rng):
    target = Pose(rotation_about("y", 25), (0.5, -1, 2))
    p = randomized(TINY, seed=2)
    for name in cvae.layer_names(p, "decoder"):
        p[f"{name}.weight"] = np.zeros_like(p[f"{name}.weight"])
        p[f"{name}.bias"] = np.zeros_like(p[f"{name}.bias"])
    p["decoder.2.bias"] = target.to_vec9()
    cfg = cvae.TrainConfig(warmup_start=10)
    loss = cvae.elbo_loss(
        p, rng.random((1, 3)), target.rotation[None], target.translation[None], 0, cfg, rng.standard_normal((1, 5, 4))
    )
    assert float(loss.data) == 0.0


def test_elbo_hand_oracle(rng):
    p = randomized(TINY, seed=8)
    R = random_rotations(rng, 1)
    t = rng.standard_normal((1, 3))
    obs = rng.random((1, 3))
    noise = rng.standard_normal((1, 1, 4))
    cfg = cvae.TrainConfig(lambda_r=0.7, lambda_t=1.9)
    it = 2000
    # scalar pipeline
    y = Pose(R[0], t[0]).to_vec9()
    enc = mlp_oracle(p, "encoder", y)
    mu, lv = enc[:4], np.clip(enc[4:], -10, 10)
    kl = 0.5 * np.sum(mu**2 + np.exp(lv) - 1 - lv)
    z = mu + np.exp(0.5 * lv) * noise[0, 0]
    pred = decode_oracle(p, z, obs[0])
    d = 0.7 * np.linalg.norm(rot6d_to_matrix(pred[:6]) - R[0]) + 1.9 * np.linalg.norm(pred[6:] - t[0])
    expected = cvae.beta_schedule(it, cfg) * kl + d
    got = float(cvae.elbo_loss(p, obs, R, t, it, cfg, noise).data)
    assert got == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_elbo_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    p = randomized(TINY, seed=seed)
    R, t, obs = random_rotations(rng, 2), rng.standard_normal((2, 3)), rng.random((2, 3))
    noise = rng.standard_normal((2, 3, 4))
    cfg = cvae.TrainConfig()
    f = lambda tt: cvae.elbo_loss(tt, obs, R, t, 2500, cfg, noise)
    assert finite_difference_check(f, p) <= 1e-4


# ----------------------------------------------------------------- training


def toy_data(n=10):
    x = np.linspace(0, 1, n)
    return SimpleNamespace(
        features=np.stack([x, 1 - x, 0 * x], axis=1),
        rotations=np.stack([rotation_about("z", 40 * v) for v in x]),
        translations=np.stack([x, 0 * x, 0 * x], axis=1),
    )


SMALL = cvae.ModelSpec(feature_widths=(16,), fusion_width=32, hidden_width=32, encoder_depth=2, decoder_depth=2)


def test_zero_iterations_keeps_params():
    p = cvae.init_params(SMALL, 1)
    before = {k: p[k].copy() for k in p}
    cvae.train(toy_data(), cvae.TrainConfig(iterations=0), p)
    for k in p:
        np.testing.assert_array_equal(p[k], before[k])


def test_training_is_deterministic():
    cfg = cvae.TrainConfig(iterations=30, mc_samples=8, seed=3)
    runs = []
    for _ in range(2):
        p = cvae.init_params(SMALL, 1)
        _, hist = cvae.train(toy_data(), cfg, p)
        runs.append(([(r.kl, r.reconstruction, r.total) for r in hist], p["decoder.0.weight"].copy()))
    assert runs[0][0] == runs[1][0]
    np.testing.assert_array_equal(runs[0][1], runs[1][1])


def test_loss_decreases_on_toy_set():
    cfg = cvae.TrainConfig(iterations=500, mc_samples=16, batch_size=10, seed=0,
                           optimizer=cvae.OptimizerConfig(lr=1e-3))
    p = cvae.init_params(SMALL, 0)
    _, hist = cvae.train(toy_data(), cfg, p)
    first = np.mean([r.total for r in hist[:20]])
    last = np.mean([r.total for r in hist[-20:]])
    assert last < 0.5 * first


def test_large_beta_collapses_posterior():
    cfg = cvae.TrainConfig(iterations=600, mc_samples=8, batch_size=10, beta=100.0, warmup_start=0,
                           warmup_length=0, optimizer=cvae.OptimizerConfig(lr=1e-3))
    p = cvae.init_params(SMALL, 0)
    data = toy_data()
    cvae.train(data, cfg, p)
    kls = [cvae.kl_standard_normal(cvae.encode(p, Pose(R, t).to_vec9())) for R, t in zip(data.rotations, data.translations)]
    assert np.mean(kls) < 0.1


# ----------------------------------------------------------------- sampling


def test_sample_posterior_contract():
    p = cvae.init_params(cvae.ModelSpec(), 2)
    poses = cvae.sample_posterior(p, np.array([1.0, 0, 0]), 1000, seed=5)
    assert len(poses) == 1000
    assert all(q.is_valid() for q in poses)
    again = cvae.sample_posterior(p, np.array([1.0, 0, 0]), 1000, seed=5)
    assert all(a == b for a, b in zip(poses, again))


def test_sample_posterior_degenerate_model():
    with pytest.raises(ExcessiveDegeneracy):
        cvae.sample_posterior(zeroed(dtype=np.float32), np.ones(3), 100, seed=0)


def test_draw_samples_resamples_a_few_degenerate(monkeypatch):
    p = cvae.init_params(SMALL, 0)
    real = cvae.decoder_forward
    calls = []

    def flaky(t, z, emb):
        out = real(t, z, emb)
        if not calls:
            out.data[:3] = 0.0
        calls.append(z.shape[0])
        return out

    monkeypatch.setattr(cvae, "decoder_forward", flaky)
    R, t, n_bad = cvae.draw_samples(p, np.ones(3), 500, seed=1)
    assert n_bad == 3 and len(R) == 500 and calls == [500, 3]
