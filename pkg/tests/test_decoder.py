import numpy as np
import pytest

from sketchshape import autodiff as ad
from sketchshape import decoder as dec
from sketchshape.gradcheck import finite_difference_check


def make_setup(seed=0, n=4, d=8, depth=1, use_text=True):
    rng = np.random.default_rng(seed)
    queries = ad.tensor(rng.normal(scale=0.5, size=(n, d)))
    emb = dec.EmbeddingBundle(
        visual=ad.tensor(rng.normal(size=(5, d))),
        text=ad.tensor(rng.normal(size=(3, d))) if use_text else None,
    )
    blocks = dec.init_decoder_blocks(rng, depth, d, use_text=use_text)
    return queries, emb, blocks


def zero_weights(blocks):
    for block in blocks:
        for p in block.parameters():
            if "norm" not in p.name:
                p.value[...] = 0.0


def test_single_token_attention_collapses():
    rng = np.random.default_rng(1)
    d = 6
    params = dec._init_attention(rng, d, "a")
    q = ad.tensor(rng.normal(size=(4, d)))
    kv = ad.tensor(rng.normal(size=(1, d)))
    out = dec.attention(q, kv, params)
    expected = (kv.data @ params.wv.value) @ params.wo.value
    assert np.allclose(out.data, np.repeat(expected, 4, axis=0), atol=1e-12)


def test_zero_query_key_gives_uniform_attention():
    rng = np.random.default_rng(2)
    d = 6
    params = dec._init_attention(rng, d, "a")
    params.wq.value[...] = 0.0
    params.wk.value[...] = 0.0
    q = ad.tensor(rng.normal(size=(3, d)))
    kv = ad.tensor(rng.normal(size=(7, d)))
    out = dec.attention(q, kv, params)
    mean_value = (kv.data @ params.wv.value).mean(axis=0, keepdims=True) @ params.wo.value
    assert np.allclose(out.data, np.repeat(mean_value, 3, axis=0), atol=1e-12)


def test_attention_weights_rows_sum_to_one_and_grads():
    rng = np.random.default_rng(3)
    d = 6
    params = dec._init_attention(rng, d, "a")
    q_arr = rng.normal(size=(3, d))
    kv_arr = rng.normal(size=(4, d))
    target = ad.tensor(rng.normal(size=(3, d)) + 2.0)

    def loss_fn(tape):
        out = dec.attention(ad.tensor(q_arr), ad.tensor(kv_arr), params, tape)
        return ad.mse(out, target)

    err = finite_difference_check(loss_fn, params.parameters(), seed=3)
    assert err < 1e-4


def test_zero_weights_identity_with_norms_disabled():
    queries, emb, blocks = make_setup(seed=4)
    zero_weights(blocks)
    out = dec.decode(queries, emb, blocks, norm_mode="none")
    assert np.array_equal(out.data, queries.data)


def test_token_order_invariance():
    queries, emb, blocks = make_setup(seed=5)
    out = dec.decode(queries, emb, blocks)
    rng = np.random.default_rng(0)
    vperm = rng.permutation(emb.visual.rows)
    tperm = rng.permutation(emb.text.rows)
    shuffled = dec.EmbeddingBundle(
        visual=ad.tensor(emb.visual.data[vperm]), text=ad.tensor(emb.text.data[tperm])
    )
    out2 = dec.decode(queries, shuffled, blocks)
    assert np.abs(out.data - out2.data).max() < 1e-12


def test_one_block_equals_decoder_block():
    queries, emb, blocks = make_setup(seed=6, depth=1)
    a = dec.decode(queries, emb, blocks)
    b = dec.decoder_block(queries, emb, blocks[0])
    assert np.array_equal(a.data, b.data)


def test_decode_deterministic():
    queries, emb, blocks = make_setup(seed=7, depth=2)
    a = dec.decode(queries, emb, blocks)
    b = dec.decode(queries, emb, blocks)
    assert np.array_equal(a.data, b.data)


def test_block_gradients_finite_differences():
    rng = np.random.default_rng(8)
    n, d = 3, 4
    queries = ad.Parameter("q", rng.normal(scale=0.5, size=(n, d)))
    emb = dec.EmbeddingBundle(
        visual=ad.tensor(rng.normal(size=(3, d))), text=ad.tensor(rng.normal(size=(2, d)))
    )
    blocks = dec.init_decoder_blocks(rng, 1, d)
    target = ad.tensor(rng.normal(size=(n, d)) + 2.0)

    def loss_fn(tape):
        out = dec.decode(tape.watch(queries), emb, blocks, tape)
        return ad.mse(out, target)

    params = [queries] + blocks[0].parameters()
    err = finite_difference_check(loss_fn, params, coords_per_param=3, seed=8)
    assert err < 1e-4


def test_every_block_parameter_gets_nonzero_gradient():
    rng = np.random.default_rng(9)
    n, d = 4, 6
    queries = ad.Parameter("q", rng.normal(scale=0.5, size=(n, d)))
    emb = dec.EmbeddingBundle(
        visual=ad.tensor(rng.normal(size=(4, d))), text=ad.tensor(rng.normal(size=(3, d)))
    )
    blocks = dec.init_decoder_blocks(rng, 2, d)
    target = ad.tensor(rng.normal(size=(n, d)))

    with ad.GradTape() as tape:
        out = dec.decode(tape.watch(queries), emb, blocks, tape)
        tape.backward(ad.mse(out, target))

    dead = [
        p.name
        for block in blocks
        for p in block.parameters()
        if np.abs(p.grad).max() == 0.0
    ]
    assert dead == []


def test_twelve_blocks_runtime_budget():
    import time

    rng = np.random.default_rng(10)
    n, d = 16, 64
    queries = ad.tensor(rng.normal(scale=0.02, size=(n, d)))
    emb = dec.EmbeddingBundle(
        visual=ad.tensor(rng.normal(size=(64, d))), text=ad.tensor(rng.normal(size=(6, d)))
    )
    blocks = dec.init_decoder_blocks(rng, 12, d)
    dec.decode(queries, emb, blocks)  # warm caches
    t0 = time.perf_counter()
    dec.decode(queries, emb, blocks)
    assert time.perf_counter() - t0 < 0.05


def test_parallel_variant_differs_but_valid():
    queries, emb, blocks = make_setup(seed=11)
    seq = dec.decode(queries, emb, blocks, cross_attention="sequential")
    par = dec.decode(queries, emb, blocks, cross_attention="parallel")
    assert seq.shape == par.shape
    assert not np.array_equal(seq.data, par.data)


def test_text_disabled_blocks_skip_text():
    queries, emb, blocks = make_setup(seed=12, use_text=False)
    out = dec.decode(queries, emb, blocks)
    assert out.shape == queries.shape
    assert blocks[0].text_attn is None


def test_embedding_bundle_width_mismatch():
    with pytest.raises(ValueError):
        dec.EmbeddingBundle(visual=ad.tensor(np.zeros((2, 4))), text=ad.tensor(np.zeros((2, 5))))
