import math

import numpy as np
import pytest

from fcrl.model import (
    CheckpointError,
    FcrlModel,
    encode,
    embed,
    init_model,
    load_model,
    predict,
    reparameterize,
    save_model,
    score,
)
from fcrl.numeric import Rng


def random_model(objective="O2", seed=0, p=4, d=3, K=2):
    model = init_model(p, d=d, h=5, K=K, objective=objective, predictor_hidden=6, seed=seed)
    rng = np.random.default_rng(seed + 100)
    # non-zero biases so the reference pass exercises them
    for k, v in model.params.items():
        if k.endswith(("b1", "b2", "bmu", "bls")):
            model.params[k] = rng.normal(size=v.shape) * 0.3
    return model


def ref_dense(x, W, b, act):
    """Scalar-loop dense layer, independent of numpy broadcasting."""
    out = []
    for j in range(W.shape[1]):
        s = b[j] + sum(x[i] * W[i, j] for i in range(W.shape[0]))
        out.append(act(s))
    return out


def ident(s):
    return s


def rl(s):
    return max(s, 0.0)


class TestEncode:
    def test_zero_heads(self):
        model = init_model(5, d=3, h=4)
        for k in ("enc_Wmu", "enc_bmu", "enc_Wls", "enc_bls"):
            model.params[k][...] = 0.0
        mu, sigma, _ = encode(model.params, np.random.default_rng(0).random((7, 5)))
        np.testing.assert_array_equal(mu, 0.0)
        np.testing.assert_array_equal(sigma, 1.0)

    def test_matches_reference(self):
        P = random_model().params
        x = np.random.default_rng(1).random(4)
        mu, sigma, _ = encode(P, x[None, :])
        hidden = ref_dense(x, P["enc_W1"], P["enc_b1"], rl)
        ref_mu = ref_dense(hidden, P["enc_Wmu"], P["enc_bmu"], ident)
        ref_sigma = ref_dense(hidden, P["enc_Wls"], P["enc_bls"], math.exp)
        np.testing.assert_allclose(mu[0], ref_mu, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(sigma[0], ref_sigma, rtol=1e-12, atol=1e-12)

    def test_sigma_clamped(self):
        model = init_model(2, d=2, h=3)
        model.params["enc_bls"][:] = [-50.0, 50.0]
        model.params["enc_Wls"][...] = 0.0
        _, sigma, _ = encode(model.params, np.zeros((1, 2)))
        np.testing.assert_allclose(sigma[0], [1e-4, 1e4])

    def test_wrong_width(self):
        with pytest.raises(ValueError, match="does not match"):
            encode(init_model(3).params, np.zeros((2, 4)))


class TestReparameterize:
    def test_tiny_sigma_returns_mean(self):
        mu = np.array([[0.3, -1.2]])
        Z, _ = reparameterize(mu, np.full_like(mu, 1e-4), Rng(0))
        np.testing.assert_allclose(Z, mu, atol=1e-3)

    def test_deterministic(self):
        mu, s = np.zeros((4, 2)), np.ones((4, 2))
        np.testing.assert_array_equal(reparameterize(mu, s, Rng(7))[0], reparameterize(mu, s, Rng(7))[0])

    def test_sample_mean_clt(self):
        n = 100_000
        mu, sigma = np.full((n, 1), 0.7), np.full((n, 1), 2.0)
        Z, _ = reparameterize(mu, sigma, Rng(3))
        assert abs(Z.mean() - 0.7) < 3 * 2.0 / math.sqrt(n)

    def test_mean_mode(self):
        mu = np.array([[1.0, 2.0]])
        np.testing.assert_array_equal(reparameterize(mu, np.ones((1, 2)), mean_mode=True)[0], mu)


class TestPredict:
    def test_zero_predictor_is_half(self):
        model = init_model(3, d=2)
        for k in ("pred_W1", "pred_b1", "pred_W2", "pred_b2"):
            model.params[k][...] = 0.0
        probs, _ = predict(model.params, np.ones((5, 2)), np.array([0, 1, 0, 1, 1]), 2, True)
        np.testing.assert_array_equal(probs, 0.5)

    def test_unconditional_ignores_group(self):
        model = random_model("O1")
        Z = np.random.default_rng(2).normal(size=(6, 3))
        a, _ = predict(model.params, Z, np.zeros(6, dtype=int), 2, False)
        b, _ = predict(model.params, Z, np.ones(6, dtype=int), 2, False)
        np.testing.assert_array_equal(a, b)

    def test_matches_reference(self):
        P = random_model("O2", K=3).params
        z = [0.4, -1.1, 0.2]
        u = z + [0.0, 0.0, 1.0]  # group 2 one-hot
        hidden = ref_dense(u, P["pred_W1"], P["pred_b1"], rl)
        logit = ref_dense(hidden, P["pred_W2"], P["pred_b2"], ident)[0]
        probs, _ = predict(P, np.array([z]), np.array([2]), 3, True)
        assert probs[0] == pytest.approx(1 / (1 + math.exp(-logit)), rel=1e-12)

    def test_arity_differs_by_objective(self):
        assert init_model(4, d=3, K=2, objective="O1").params["pred_W1"].shape[0] == 3
        assert init_model(4, d=3, K=2, objective="O2").params["pred_W1"].shape[0] == 5


class TestScore:
    def test_zero_wz_gives_log2(self):
        P = random_model().params
        P["W_z"][...] = 0.0
        E, _ = embed(P, np.random.default_rng(0).random((4, 4)))
        s = score(P, np.random.default_rng(1).normal(size=(4, 3)), E, [0, 1, 1, 0])
        np.testing.assert_allclose(s, math.log(2), rtol=1e-15)

    def test_two_by_two_hand(self):
        P = {"W_z": np.array([[1.0, 2.0], [0.0, 1.0]]),
             "W_c": np.array([[[1.0, 0.0], [1.0, 1.0]]])}
        z, e = np.array([1.0, -1.0]), np.array([0.5, 0.25])
        # W_z z = (-1, -1); W_c^T e = (0.75, 0.25); form = -1
        assert score(P, z[None], e[None], [0])[0] == pytest.approx(math.log1p(math.exp(-1.0)), rel=1e-14)

    def test_positive_and_monotone_in_embedding_scale(self):
        P = random_model().params
        Z = np.random.default_rng(3).normal(size=(5, 3))
        E, _ = embed(P, np.random.default_rng(4).random((5, 4)))
        s1, s2 = score(P, Z, E, [0] * 5), score(P, Z, 2 * E, [0] * 5)
        assert np.all(s1 > 0)
        forms = np.log(np.expm1(s1))
        np.testing.assert_array_equal(s2 > s1, forms > 0)

    def test_mismatched_rows(self):
        P = random_model().params
        with pytest.raises(ValueError):
            score(P, np.zeros((2, 3)), np.zeros((3, 3)), [0, 0])


class TestCheckpoint:
    def test_round_trip_forward(self, tmp_path):
        model = random_model()
        save_model(model, tmp_path / "m.json", extra={"beta": 0.1})
        back, extra = load_model(tmp_path / "m.json")
        X = np.random.default_rng(5).random((3, 4))
        np.testing.assert_array_equal(encode(back.params, X)[0], encode(model.params, X)[0])
        assert extra == {"beta": 0.1}

    def test_truncated(self, tmp_path):
        path = tmp_path / "m.json"
        save_model(random_model(), path)
        text = path.read_text()
        path.write_text(text[: len(text) // 2])
        with pytest.raises(CheckpointError, match="corrupt"):
            load_model(path)

    def test_bad_objective(self):
        with pytest.raises(ValueError):
            FcrlModel(3, objective="O3")
