import numpy as np
import pytest

from linrec.autograd import TapeConsumed, finite_diff_check
from linrec.layers import LayerConfig, init_layer
from linrec.model import (
    MIXER_REGISTRY,
    Adam,
    GatedMLP,
    LMHeadModel,
    ModelConfig,
    RMSNorm,
    TokenOutOfRange,
    UnknownMixer,
    Unsupported,
    build_model,
    cross_entropy,
    generate,
    lm_forward,
    model_backward,
    register_mixer,
)
from linrec.numerics import Rng, ShapeError, allocation_count


def tiny_config(**kw):
    base = dict(d_model=8, d_state=4, n_layer=2, vocab_size=16,
                d_intermediate=16, mixer_types=["s5", "rglru"])
    base.update(kw)
    return ModelConfig(**base)


def tokens_for(cfg, B, L, seed=0):
    return Rng(seed).integers(0, cfg.vocab_size, (B, L))


# ---------------------------------------------------------------------- config

def test_config_defaults_and_json_round_trip():
    cfg = ModelConfig(d_model=4, d_state=4, n_layer=3, vocab_size=11)
    assert cfg.mixer_types == ["s5", "s5", "s5"]
    blob = cfg.to_json()
    back = ModelConfig.from_json(blob)
    assert back == cfg
    # serialized field names are part of the format
    import json

    keys = set(json.loads(blob))
    assert {"d_model", "d_state", "n_layer", "vocab_size", "d_intermediate",
            "mixer_types", "mixer_kwargs", "tie_embeddings"} <= keys


def test_config_accepts_mixed_case_kinds():
    cfg = ModelConfig(d_model=4, d_state=4, n_layer=2, vocab_size=8,
                      mixer_types=["S5", "RGLRU"])
    assert cfg.mixer_types == ["s5", "rglru"]


def test_config_validation():
    with pytest.raises(ValueError):
        ModelConfig(d_model=0, d_state=4, n_layer=1, vocab_size=8)
    with pytest.raises(ValueError):
        ModelConfig(d_model=4, d_state=4, n_layer=2, vocab_size=8,
                    mixer_types=["s5"])  # wrong length


def test_unknown_and_unsupported_mixers():
    with pytest.raises(UnknownMixer):
        build_model(tiny_config(mixer_types=["s5", "frobnicator"]))
    with pytest.raises(Unsupported):
        build_model(tiny_config(mixer_types=["s5", "attn"]))


def test_custom_mixer_registration():
    def factory(d_model, rng, dtype, **kwargs):
        return init_layer("lru", LayerConfig(d_model=d_model, d_state=6,
                                             dtype=dtype), rng)

    register_mixer("RingMixer", factory)
    try:
        assert "ringmixer" in MIXER_REGISTRY
        cfg = tiny_config(mixer_types=["ringmixer", "s5"])
        model = build_model(cfg, Rng(0))
        logits = lm_forward(model, tokens_for(cfg, 1, 6))
        assert logits.shape == (1, 6, cfg.vocab_size)
        assert np.all(np.isfinite(logits))
    finally:
        del MIXER_REGISTRY["ringmixer"]


# ------------------------------------------------------------------ components

def test_rmsnorm_value_oracle():
    norm = RMSNorm(5, "f64")
    norm.g[...] = Rng(1).normal((5,))
    x = Rng(2).normal((2, 7, 5))
    want = x / np.sqrt((x ** 2).mean(-1, keepdims=True) + 1e-5) * norm.g
    np.testing.assert_allclose(norm.forward(x), want, rtol=1e-14)


def test_gated_mlp_value_oracle():
    mlp = GatedMLP(4, 6, Rng(3), "f64")
    x = Rng(4).normal((2, 5, 4))
    a = x @ mlp.w1.T
    want = (a / (1 + np.exp(-a)) * (x @ mlp.w3.T)) @ mlp.w2.T
    np.testing.assert_allclose(mlp.forward(x), want, rtol=1e-13)


def test_cross_entropy_oracle():
    # uniform logits -> log(vocab); gradient rows sum to zero
    logits = np.zeros((2, 3, 7))
    targets = np.zeros((2, 3), dtype=np.int64)
    loss, grad = cross_entropy(logits, targets)
    assert loss == pytest.approx(np.log(7), rel=1e-12)
    np.testing.assert_allclose(grad.sum(-1), 0.0, atol=1e-15)
    # concentrated logits on the target -> loss near zero
    logits2 = np.full((1, 2, 5), -30.0)
    t2 = np.array([[3, 1]])
    logits2[0, 0, 3] = 30.0
    logits2[0, 1, 1] = 30.0
    loss2, _ = cross_entropy(logits2, t2)
    assert loss2 < 1e-12
    with pytest.raises(ShapeError):
        cross_entropy(np.zeros((1, 2, 5)), np.zeros((1, 3), dtype=int))


def test_cross_entropy_matches_hand_computation():
    logits = np.array([[[1.0, 2.0, 0.5]]])
    targets = np.array([[2]])
    loss, grad = cross_entropy(logits, targets)
    p = np.exp(logits[0, 0]) / np.exp(logits[0, 0]).sum()
    assert loss == pytest.approx(-np.log(p[2]), rel=1e-12)
    want = p.copy()
    want[2] -= 1.0
    np.testing.assert_allclose(grad[0, 0], want, rtol=1e-12)


# --------------------------------------------------------------------- forward

def test_forward_shapes_and_dtype():
    cfg = tiny_config()
    model = build_model(cfg, Rng(0))
    toks = tokens_for(cfg, 3, 12)
    logits = lm_forward(model, toks)
    assert logits.shape == (3, 12, cfg.vocab_size)
    assert logits.dtype == np.float64
    one_d = lm_forward(model, toks[0])
    np.testing.assert_array_equal(one_d, logits[0])

    cfg32 = tiny_config(dtype="f32")
    m32 = build_model(cfg32, Rng(0))
    assert lm_forward(m32, toks).dtype == np.float32


def test_token_range_enforced():
    cfg = tiny_config()
    model = build_model(cfg, Rng(0))
    bad = tokens_for(cfg, 1, 5)
    bad[0, 2] = cfg.vocab_size
    with pytest.raises(TokenOutOfRange):
        lm_forward(model, bad)
    bad[0, 2] = -1
    with pytest.raises(TokenOutOfRange):
        lm_forward(model, bad)
    with pytest.raises(TokenOutOfRange):
        generate(model, bad, 2)


def test_causality_is_bitwise():
    cfg = tiny_config(mixer_types=["s4d", "s6"])
    model = build_model(cfg, Rng(1))
    toks = tokens_for(cfg, 2, 40, seed=5)
    base = lm_forward(model, toks)
    toks2 = toks.copy()
    toks2[:, 33] = (toks2[:, 33] + 1) % cfg.vocab_size
    after = lm_forward(model, toks2)
    np.testing.assert_array_equal(after[:, :33], base[:, :33])
    assert np.any(after[:, 33:] != base[:, 33:])


def test_batch_rows_are_independent():
    cfg = tiny_config()
    model = build_model(cfg, Rng(2))
    toks = tokens_for(cfg, 4, 15, seed=7)
    base = lm_forward(model, toks)
    perm = np.array([2, 0, 3, 1])
    np.testing.assert_array_equal(lm_forward(model, toks[perm]), base[perm])


def test_heterogeneous_stack_all_kinds():
    cfg = ModelConfig(d_model=8, d_state=4, n_layer=5, vocab_size=16,
                      d_intermediate=8,
                      mixer_types=["s4d", "s5", "lru", "s6", "rglru"])
    model = build_model(cfg, Rng(3))
    logits = lm_forward(model, tokens_for(cfg, 2, 10))
    assert np.all(np.isfinite(logits))
    par = lm_forward(model, tokens_for(cfg, 2, 10), "parallel", workers=2)
    np.testing.assert_allclose(par, logits, rtol=1e-10, atol=1e-11)


def test_parameter_inventory_at_realistic_scale():
    cfg = ModelConfig(d_model=256, d_state=64, n_layer=4, vocab_size=1024,
                      d_intermediate=512, mixer_types=["s5"] * 4,
                      tie_embeddings=True, dtype="f32")
    model = build_model(cfg, Rng(0))
    params = model.parameters()
    assert "head" not in params  # tied
    assert params["embedding"].shape == (1024, 256)
    assert params["blocks.0.mlp.w1"].shape == (512, 256)
    assert params["blocks.0.mlp.w2"].shape == (256, 512)
    P, m, dI, V = 32, 256, 512, 1024
    mixer = 3 * P + 4 * P * m + m          # lambda pair, log_delta, B, C, D
    block = 2 * m + 3 * dI * m + mixer     # two norms + gated mlp + mixer
    want = V * m + 4 * block + m           # embedding + blocks + final norm
    assert sum(v.size for v in params.values()) == want
    assert all(v.dtype in (np.float32, np.complex64) or v.dtype == np.float32
               for v in params.values())


def test_parameter_paths_are_live():
    cfg = tiny_config()
    model = build_model(cfg, Rng(0))
    toks = tokens_for(cfg, 1, 6)
    before = lm_forward(model, toks)
    model.parameters()["blocks.0.norm.g"][...] = 0.0
    after = lm_forward(model, toks)
    assert np.any(after != before)


# ------------------------------------------------------- prefill / step replay

def test_prefill_state_matches_full_forward():
    cfg = tiny_config(mixer_types=["lru", "s6"])
    model = build_model(cfg, Rng(4))
    toks = tokens_for(cfg, 2, 20, seed=9)
    full = lm_forward(model, toks)
    pre, states = lm_forward(model, toks[:, :12], return_state=True)
    np.testing.assert_array_equal(pre, full[:, :12])
    assert len(states) == cfg.n_layer
    for st in states:
        assert st.k == 12


def test_step_replay_f32_model():
    cfg = tiny_config(dtype="f32", mixer_types=["s5", "s6"])
    model = build_model(cfg, Rng(5))
    toks = tokens_for(cfg, 2, 24, seed=11)
    full = lm_forward(model, toks)
    out = generate(model, toks[:, :4], 0)
    np.testing.assert_array_equal(out, toks[:, :4])
    # replay the remaining positions through single steps via greedy forcing is
    # covered in generation tests; here check prefill logits agree with the
    # batch forward at f32 tolerance
    pre, _ = lm_forward(model, toks, return_state=True)
    ref = max(float(np.max(np.abs(full))), 1e-6)
    assert np.max(np.abs(pre - full)) / ref < 1e-4


# ------------------------------------------------------------------ generation

def test_greedy_generation_matches_full_recompute():
    cfg = ModelConfig(d_model=16, d_state=8, n_layer=2, vocab_size=32,
                      d_intermediate=32, mixer_types=["s5", "rglru"])
    model = build_model(cfg, Rng(6))
    prompt = tokens_for(cfg, 2, 7, seed=13)
    out = generate(model, prompt, 20)
    assert out.shape == (2, 27)
    np.testing.assert_array_equal(out[:, :7], prompt)
    cur = prompt.copy()
    for _ in range(20):
        logits = lm_forward(model, cur)
        nxt = logits[:, -1].argmax(-1)
        cur = np.concatenate([cur, nxt[:, None]], axis=1)
    np.testing.assert_array_equal(out, cur)


def test_generation_is_deterministic_and_1d_friendly():
    cfg = tiny_config()
    model = build_model(cfg, Rng(7))
    prompt = tokens_for(cfg, 1, 5, seed=15)[0]
    a = generate(model, prompt, 8)
    b = generate(model, prompt, 8)
    np.testing.assert_array_equal(a, b)
    assert a.ndim == 1 and a.shape == (13,)


def test_temperature_sampling_determinism():
    cfg = tiny_config()
    model = build_model(cfg, Rng(8))
    prompt = tokens_for(cfg, 2, 4, seed=17)
    a = generate(model, prompt, 10, mode="temperature", temperature=1.3, seed=5)
    b = generate(model, prompt, 10, mode="temperature", temperature=1.3, seed=5)
    np.testing.assert_array_equal(a, b)
    assert np.all((a >= 0) & (a < cfg.vocab_size))
    c = generate(model, prompt, 10, mode="temperature", temperature=1.3, seed=6)
    assert not np.array_equal(a, c)
    with pytest.raises(ValueError):
        generate(model, prompt, 4, mode="beam")


def test_generation_steps_do_not_allocate():
    cfg = tiny_config(mixer_types=["s4d", "s6"])
    model = build_model(cfg, Rng(9))
    prompt = tokens_for(cfg, 2, 5, seed=19)
    generate(model, prompt, 3)  # warm any lazy setup
    n0 = allocation_count()
    generate(model, prompt, 3)
    short = allocation_count() - n0
    n0 = allocation_count()
    generate(model, prompt, 43)
    long = allocation_count() - n0
    assert long == short  # setup-only; extra steps add zero buffers


# -------------------------------------------------------------------- training

def test_model_gradients_match_finite_differences():
    cfg = ModelConfig(d_model=4, d_state=4, n_layer=2, vocab_size=7,
                      d_intermediate=6, mixer_types=["s5", "s6"],
                      tie_embeddings=True)
    model = build_model(cfg, Rng(10))
    toks = tokens_for(cfg, 2, 6, seed=21)
    targets = tokens_for(cfg, 2, 6, seed=22)
    params = model.parameters()

    logits, tape = lm_forward(model, toks, tape=True)
    _, gl = cross_entropy(logits, targets)
    analytic = model_backward(model, tape, gl)
    assert set(analytic) == set(params)

    rep = finite_diff_check(
        lambda: lm_forward(model, toks),
        params,
        lambda y: cross_entropy(y, targets)[0],
        analytic,
        max_elements=12,
        rng=Rng(23),
    )
    assert rep.passed, str(rep)


def test_model_tape_is_single_use():
    cfg = tiny_config()
    model = build_model(cfg, Rng(11))
    toks = tokens_for(cfg, 1, 5)
    logits, tape = lm_forward(model, toks, tape=True)
    _, gl = cross_entropy(logits, tokens_for(cfg, 1, 5, seed=1))
    model_backward(model, tape, gl)
    with pytest.raises(TapeConsumed):
        model_backward(model, tape, gl)


def test_tied_embeddings_receive_head_gradient():
    cfg = tiny_config(tie_embeddings=True, n_layer=1, mixer_types=["lru"],
                      d_intermediate=0)
    model = build_model(cfg, Rng(12))
    toks = tokens_for(cfg, 1, 6, seed=25)
    logits, tape = lm_forward(model, toks, tape=True)
    _, gl = cross_entropy(logits, tokens_for(cfg, 1, 6, seed=26))
    grads = model_backward(model, tape, gl)
    # every vocab row gets head-side gradient even if the token never occurs
    unused = np.setdiff1d(np.arange(cfg.vocab_size), toks)
    assert unused.size > 0
    assert np.any(grads["embedding"][unused] != 0.0)


def test_adam_descends_and_training_is_deterministic():
    def run():
        cfg = ModelConfig(d_model=8, d_state=4, n_layer=2, vocab_size=12,
                          d_intermediate=16, mixer_types=["lru", "rglru"])
        model = build_model(cfg, Rng(30))
        data = np.tile((np.arange(24) * 5 + 2) % 12, 2)[None, :]
        opt = Adam(model.parameters(), lr=5e-3)
        losses = []
        for _ in range(12):
            logits, tape = lm_forward(model, data[:, :-1], tape=True)
            loss, gl = cross_entropy(logits, data[:, 1:])
            opt.step(model_backward(model, tape, gl))
            losses.append(loss)
        return losses

    l1, l2 = run(), run()
    assert l1 == l2  # bitwise deterministic training
    assert l1[-1] < l1[0]  # descent on a repeating pattern
