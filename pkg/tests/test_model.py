import numpy as np
import pytest

from acfr import autodiff as ad
from acfr import model as md
from acfr.autodiff import Tensor
from acfr.splines import SplineConfig

SMALL = dict(hidden_width=7, hidden_layers=1, repr_dim=8, attn_dim=5, value_dim=4,
             tokens=4, head_hidden=6, spline=SplineConfig(2, (1 / 3, 2 / 3)))


def small_cfg(method="acfr", **overrides):
    kw = dict(SMALL, input_dim=5, method=method)
    kw.update(overrides)
    return md.ModelConfig(**kw)


def test_init_is_deterministic_per_seed():
    cfg = small_cfg()
    a = md.init_params(cfg, seed=3).named_arrays()
    b = md.init_params(cfg, seed=3).named_arrays()
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_different_seeds_differ():
    cfg = small_cfg()
    a = md.init_params(cfg, seed=1).named_arrays()
    b = md.init_params(cfg, seed=2).named_arrays()
    assert any(not np.array_equal(a[k], b[k]) for k in a)


def test_key_projection_rows_follow_token_size():
    cfg = md.ModelConfig(input_dim=10, repr_dim=64, tokens=8, **{
        k: v for k, v in SMALL.items() if k not in ("repr_dim", "tokens")})
    params = md.init_params(cfg, seed=0)
    assert params.w_k.data.shape[0] == 8


def test_repr_dim_token_divisibility_enforced():
    with pytest.raises(ValueError, match="divisible"):
        small_cfg(repr_dim=10, tokens=4)


def test_encode_zero_params_gives_zero():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=0)
    for layer in params.encoder:
        layer.w.data[:] = 0.0
        layer.b.data[:] = 0.0
    z = md.encode(params, np.random.default_rng(0).normal(size=(3, 5)))
    np.testing.assert_array_equal(z.data, np.zeros((3, cfg.repr_dim)))


def test_batch_independence():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=5)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 5))
    t = np.array([0.3, 0.8])
    single = md.predict_outcome(params, x[:1], t[:1]).data
    pair = md.predict_outcome(params, x, t).data
    np.testing.assert_allclose(single[0], pair[0], rtol=0, atol=1e-12)
    z_single = md.encode(params, x[:1]).data
    z_pair = md.encode(params, x).data
    np.testing.assert_allclose(z_single[0], z_pair[0], rtol=0, atol=1e-12)


def test_treatment_predictor_sigmoid_at_zero_params():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=0)
    for layer in params.predictor:
        layer.w.data[:] = 0.0
        layer.b.data[:] = 0.0
    t_hat = md.predict_treatment(params, np.random.default_rng(2).normal(size=(4, 8)))
    np.testing.assert_array_equal(t_hat.data, np.full(4, 0.5))


def test_treatment_predictor_stays_in_unit_interval():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=9)
    z = np.random.default_rng(3).normal(size=(50, 8)) * 3.0
    t_hat = md.predict_treatment(params, z).data
    assert np.all(t_hat > 0.0) and np.all(t_hat < 1.0)


def test_zero_query_gives_uniform_attention():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=4)
    params.w_q.data[:] = 0.0
    z = np.random.default_rng(4).normal(size=(6, 8))
    for t in (0.0, 0.25, 1.0):
        w = md.attention_weights(params, z, np.full(6, t))
        np.testing.assert_allclose(w, np.full((6, cfg.tokens), 1.0 / cfg.tokens),
                                   rtol=0, atol=1e-12)


def test_attention_weights_are_a_distribution():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=11)
    z = np.random.default_rng(5).normal(size=(10, 8))
    w = md.attention_weights(params, z, np.linspace(0, 1, 10))
    assert np.all(w >= 0.0)
    np.testing.assert_allclose(w.sum(axis=1), np.ones(10), rtol=0, atol=1e-12)


def test_token_permutation_invariance():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=8)
    rng = np.random.default_rng(6)
    z = rng.normal(size=(5, 8))
    t = rng.uniform(size=5)
    base = md.outcome_attention(params, z, t).data

    perm = np.array([2, 0, 3, 1])
    # permute the tokens inside z together with nothing else: K/V projections
    # act per token, so shuffling token order must leave the output unchanged
    z_tok = z.reshape(5, cfg.tokens, cfg.token_size)[:, perm, :].reshape(5, 8)
    permuted = md.outcome_attention(params, z_tok, t).data
    np.testing.assert_allclose(permuted, base, rtol=0, atol=1e-12)


def test_no_attention_head_zero_final_layer():
    cfg = small_cfg("acfr-no-attn")
    params = md.init_params(cfg, seed=0)
    params.alt_head[-1].w.data[:] = 0.0
    params.alt_head[-1].b.data[:] = 0.0
    y = md.outcome_no_attention(params, np.random.default_rng(0).normal(size=(3, 8)),
                                np.array([0.1, 0.5, 0.9]))
    np.testing.assert_array_equal(y.data, np.zeros(3))


def test_no_attention_head_depends_on_treatment():
    cfg = small_cfg("acfr-no-attn")
    params = md.init_params(cfg, seed=13)
    z = np.random.default_rng(7).normal(size=(4, 8))
    y0 = md.outcome_no_attention(params, z, np.zeros(4)).data
    y1 = md.outcome_no_attention(params, z, np.ones(4)).data
    assert np.max(np.abs(y0 - y1)) > 1e-8


def test_mlp_zero_params_and_determinism():
    cfg = small_cfg("mlp")
    params = md.init_params(cfg, seed=0)
    for layer in params.mlp:
        layer.w.data[:] = 0.0
        layer.b.data[:] = 0.0
    x = np.random.default_rng(8).normal(size=(3, 5))
    y = md.mlp_baseline(params, x, np.array([0.0, 0.5, 1.0]))
    np.testing.assert_array_equal(y.data, np.zeros(3))
    p1 = md.init_params(cfg, seed=21).named_arrays()
    p2 = md.init_params(cfg, seed=21).named_arrays()
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])


def test_out_of_range_treatment_rejected():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=0)
    z = np.zeros((2, 8))
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        md.outcome_attention(params, z, np.array([0.5, 1.2]))


@pytest.mark.parametrize("method", ["acfr", "acfr-no-attn", "mlp"])
def test_full_forward_paths_pass_gradient_check(method):
    cfg = small_cfg(method)
    params = md.init_params(cfg, seed=17)
    rng = np.random.default_rng(17)
    x = rng.normal(size=(4, 5))
    t = rng.uniform(size=4)
    y = rng.normal(size=4)

    def loss_fn():
        return ad.mse(md.predict_outcome(params, x, t), Tensor(y))

    err = ad.grad_check_params(loss_fn, params.all_params())
    assert err < 1e-4, f"{method}: worst relative error {err}"


def test_treatment_predictor_gradient_check():
    cfg = small_cfg()
    params = md.init_params(cfg, seed=19)
    rng = np.random.default_rng(19)
    z = rng.normal(size=(4, 8))
    t = rng.uniform(size=4)

    def loss_fn():
        return ad.mse(md.predict_treatment(params, z), Tensor(t))

    assert ad.grad_check_params(loss_fn, params.predictor_params()) < 1e-4


def test_frozen_query_is_identity_like_and_untrained():
    cfg = small_cfg(freeze_query=True)
    params = md.init_params(cfg, seed=0)
    assert not params.w_q.requires_grad
    m = cfg.spline.dim
    expected = np.zeros((m, cfg.attn_dim))
    for i in range(min(m, cfg.attn_dim)):
        expected[i, i] = 1.0
    np.testing.assert_array_equal(params.w_q.data, expected)
    assert params.w_q not in params.outcome_params()
    # sibling projections match the unfrozen init at the same seed
    unfrozen = md.init_params(small_cfg(), seed=0)
    np.testing.assert_array_equal(params.w_k.data, unfrozen.w_k.data)
