import numpy as np
import pytest

from casvsr import blocks, model, ops
from casvsr.blocks import (
    ABLATION_ROWS,
    WindowConfig,
    block_forward,
    glssb_forward,
    glssm,
    wfsab,
    window_attention,
    window_partition,
    window_reverse,
    window_scan_order,
)
from casvsr.compass import ScanOrder, raster_order
from casvsr.scan import scan_recurrence
from casvsr.sequence import TokenSequence, desequentialize, interleave
from casvsr.tensor import Tensor

from conftest import fd_gradient, relative_gradient_error


def make_block_weights(rng_seed, c, heads, win, n, prefix="blk", mode="wfsab-glssm", gamma=True):
    rng = np.random.Generator(np.random.PCG64(rng_seed))
    params: dict[str, np.ndarray] = {}
    if mode in ("wfsab", "wfsab-wfsab", "wfsab-glssm"):
        model._add_attn(params, rng, f"{prefix}.attn", c, heads, win)
    if mode == "wfsab-wfsab":
        model._add_attn(params, rng, f"{prefix}.attn2", c, heads, win)
    if mode in ("wfsab-glssm", "glssm-glssm"):
        model._add_glssm(params, rng, f"{prefix}.glssm", c, n)
    if mode == "glssm-glssm":
        model._add_glssm(params, rng, f"{prefix}.glssm2", c, n)
    if mode == "wfsab-glssm" and gamma:
        params[f"{prefix}.gamma"] = np.ones(c, np.float32)
    return {k: Tensor(v, requires_grad=True) for k, v in params.items()}


# ---------------------------------------------------------------------------
# window tiling
# ---------------------------------------------------------------------------


def test_window_single_window_identity(rng):
    x = rng.standard_normal((3, 4, 4)).astype(np.float32)
    wins, _ = window_partition(Tensor(x), 4)
    assert wins.shape == (1, 16, 3)
    assert np.array_equal(wins.data[0], x.reshape(3, 16).T)


def test_window_4x4_win2_enumeration():
    x = np.arange(16, dtype=np.float32).reshape(1, 4, 4)
    wins, _ = window_partition(Tensor(x), 2)
    assert wins.shape == (4, 4, 1)
    assert wins.data[:, :, 0].tolist() == [
        [0.0, 1.0, 4.0, 5.0],
        [2.0, 3.0, 6.0, 7.0],
        [8.0, 9.0, 12.0, 13.0],
        [10.0, 11.0, 14.0, 15.0],
    ]


def test_window_roundtrip_with_padding(rng):
    x = rng.standard_normal((3, 10, 14)).astype(np.float32)
    wins, _ = window_partition(Tensor(x), 8)
    back = window_reverse(wins, 8, 10, 14)
    assert np.array_equal(back.data, x)


def test_window_roundtrip_no_padding(rng):
    x = rng.standard_normal((2, 8, 8)).astype(np.float32)
    wins, _ = window_partition(Tensor(x), 4)
    back = window_reverse(wins, 4, 8, 8)
    assert np.array_equal(back.data, x)


def test_window_scan_order_groups_windows(rng):
    order = ScanOrder(perm=rng.permutation(16), source_grid=(4, 4), target_grid=(4, 4))
    wso = window_scan_order(order, 2, 4, 4)
    wso.validate()
    ys, xs = np.divmod(wso.perm, 4)
    wid = (ys // 2) * 2 + (xs // 2)
    # each window's sites are contiguous in the restructured order
    changes = np.count_nonzero(np.diff(wid))
    assert changes == 3
    # within each window the original relative order is kept
    ranks = order.inv
    for wv in np.unique(wid):
        seq = wso.perm[wid == wv]
        assert (np.diff(ranks[seq]) > 0).all()


def test_window_scan_order_raster_passthrough():
    wso = window_scan_order(raster_order(4, 4), 4, 4, 4)
    assert wso.perm.tolist() == list(range(16))


# ---------------------------------------------------------------------------
# attention sub-block
# ---------------------------------------------------------------------------


def uniform_attention_weights(c, heads, win, prefix="blk.attn"):
    """q = k = 0 (uniform attention), values and projection are identity."""
    params = {
        f"{prefix}.qkv_w": np.zeros((3 * c, c), np.float32),
        f"{prefix}.qkv_b": np.zeros(3 * c, np.float32),
        f"{prefix}.rel_bias": np.zeros(((2 * win - 1) ** 2, heads), np.float32),
        f"{prefix}.proj_w": np.eye(c, dtype=np.float32),
        f"{prefix}.proj_b": np.zeros(c, np.float32),
    }
    params[f"{prefix}.qkv_w"][2 * c :, :] = np.eye(c, dtype=np.float32)
    return {k: Tensor(v) for k, v in params.items()}


def test_uniform_attention_is_window_mean(rng):
    c, heads, win = 4, 2, 2
    w = uniform_attention_weights(c, heads, win)
    z = Tensor(rng.standard_normal((3, win * win, c)).astype(np.float32))
    out = window_attention(z, WindowConfig(win=win, heads=heads, dim=c), w, "blk.attn")
    want = z.data.mean(axis=1, keepdims=True).repeat(win * win, axis=1)
    assert np.abs(out.data - want).max() <= 1e-6


def test_single_pixel_window_attention_identity(rng):
    c, heads = 4, 2
    w = uniform_attention_weights(c, heads, 1)
    z = Tensor(rng.standard_normal((5, 1, c)).astype(np.float32))
    out = window_attention(z, WindowConfig(win=1, heads=heads, dim=c), w, "blk.attn")
    assert np.abs(out.data - z.data).max() <= 1e-6


def test_attention_rows_stochastic(rng, monkeypatch):
    captured = []
    real_softmax = ops.softmax

    def capture(x, axis=-1):
        out = real_softmax(x, axis=axis)
        captured.append(out.data)
        return out

    monkeypatch.setattr(blocks.ops, "softmax", capture)
    w = make_block_weights(3, 8, 2, 4, 4)
    x = Tensor(rng.standard_normal((8, 8, 8)).astype(np.float32))
    wfsab(x, WindowConfig(win=4, heads=2, dim=8), w, "blk.attn")
    assert captured, "attention softmax not exercised"
    for attn in captured:
        assert np.abs(attn.sum(axis=-1) - 1.0).max() <= 1e-6


def test_wfsab_window_permutation_consistency(rng):
    """No cross-window state: permuting whole windows commutes with the block."""
    c, win = 8, 4
    cfg = WindowConfig(win=win, heads=2, dim=c)
    w = make_block_weights(5, c, 2, win, 4)
    x = rng.standard_normal((c, 8, 8)).astype(np.float32)
    out = wfsab(Tensor(x), cfg, w, "blk.attn").data

    # swap the two top windows with the two bottom windows
    xs = x.copy()
    xs[:, :4], xs[:, 4:] = x[:, 4:], x[:, :4]
    out_swapped = wfsab(Tensor(xs), cfg, w, "blk.attn").data
    expect = out.copy()
    expect[:, :4], expect[:, 4:] = out[:, 4:], out[:, :4]
    assert np.array_equal(out_swapped, expect)


# ---------------------------------------------------------------------------
# state-space sub-block
# ---------------------------------------------------------------------------


def test_reordered_prefix_sum_composition(rng):
    """Interleave -> accumulator recurrence -> desequentialize equals a
    prefix sum along the scan order."""
    h, w, delta = 4, 4, 0.25
    frame = rng.standard_normal((1, h, w)).astype(np.float32)
    order = ScanOrder(perm=rng.permutation(h * w), source_grid=(h, w), target_grid=(h, w))
    seq = interleave([Tensor(frame)], order)
    length = h * w
    y = scan_recurrence(
        seq.data,
        Tensor(np.ones((length, 1, 1), np.float32)),
        Tensor(np.full((length, 1, 1), delta, np.float32)),
        Tensor(np.ones((length, 1), np.float32)),
        Tensor(np.zeros(1, np.float32)),
    )
    back = desequentialize(TokenSequence(y, order, 1))[0].data
    flat = frame.reshape(-1)
    want = np.zeros(h * w)
    acc = 0.0
    for rank, site in enumerate(order.perm):
        acc += float(flat[site])
        want[site] = delta * acc
    assert np.abs(back.reshape(-1) - want).max() <= 1e-5


def test_glssm_zero_input_zero_output(rng):
    c = 4
    w = make_block_weights(7, c, 2, 2, 4)
    frames = [Tensor(np.zeros((c, 4, 4), np.float32)) for _ in range(2)]
    out = glssm(frames, raster_order(4, 4), 2, w, "blk.glssm", patch=2, radius=1)
    for o in out:
        assert np.array_equal(o.data, np.zeros((c, 4, 4), np.float32))


def test_glssm_shape_contract(rng):
    c = 4
    w = make_block_weights(9, c, 2, 2, 4)
    frames = [Tensor(rng.standard_normal((c, 4, 6)).astype(np.float32)) for _ in range(3)]
    out = glssm(frames, raster_order(4, 6), 2, w, "blk.glssm", ref_index=1, patch=2, radius=1)
    assert len(out) == 3
    for o in out:
        assert o.shape == (c, 4, 6)


# ---------------------------------------------------------------------------
# fused block
# ---------------------------------------------------------------------------


def test_gamma_zero_isolates_attention(rng):
    c, win = 8, 4
    cfg = WindowConfig(win=win, heads=2, dim=c)
    w = make_block_weights(11, c, 2, win, 4)
    frames = [Tensor(rng.standard_normal((c, 8, 8)).astype(np.float32)) for _ in range(2)]
    fused = glssb_forward(frames, raster_order(8, 8), cfg, w, "blk", gamma_mode="zero", patch=4, radius=1)
    pure = [wfsab(f, cfg, w, "blk.attn") for f in frames]
    for a, b in zip(fused, pure):
        assert np.array_equal(a.data, b.data)


def test_gamma_frozen_one_matches_learnable_init(rng):
    c, win = 8, 4
    cfg = WindowConfig(win=win, heads=2, dim=c)
    w = make_block_weights(13, c, 2, win, 4)
    frames = [Tensor(rng.standard_normal((c, 8, 8)).astype(np.float32)) for _ in range(2)]
    frozen = glssb_forward(frames, raster_order(8, 8), cfg, w, "blk", gamma_mode="frozen_one", patch=4, radius=1)
    learnable = glssb_forward(frames, raster_order(8, 8), cfg, w, "blk", gamma_mode="learnable", patch=4, radius=1)
    for a, b in zip(frozen, learnable):
        assert np.array_equal(a.data, b.data)


def test_gamma_gradient_matches_fd(rng):
    c, win = 4, 2
    cfg = WindowConfig(win=win, heads=2, dim=c)
    w = make_block_weights(17, c, 2, win, 2)
    # scale the branch to O(1) so the finite-difference quotient resolves
    # the gamma sensitivity in float32
    w["blk.glssm.out_w"].data *= 20.0
    w["blk.glssm.gate_w"].data *= 20.0
    w["blk.gamma"].data = rng.normal(1.0, 0.5, c).astype(np.float32)
    frames = [Tensor(rng.standard_normal((c, 4, 4)).astype(np.float32)) for _ in range(2)]
    target = Tensor(rng.standard_normal((c, 4, 4)).astype(np.float32))

    def fn():
        out = glssb_forward(frames, raster_order(4, 4), cfg, w, "blk", patch=2, radius=1)
        return ops.charbonnier_loss(out[0], target)

    params = {"gamma": w["blk.gamma"]}
    analytic = ops.grad(fn, params)
    numeric = fd_gradient(fn, params)
    assert relative_gradient_error(analytic, numeric) <= 1e-3


@pytest.mark.parametrize("mode", ["wfsab", "wfsab-wfsab", "wfsab-glssm", "glssm-glssm"])
def test_all_block_modes_run(rng, mode):
    c, win = 8, 4
    cfg = WindowConfig(win=win, heads=2, dim=c)
    w = make_block_weights(19, c, 2, win, 4, mode=mode)
    frames = [Tensor(rng.standard_normal((c, 8, 8)).astype(np.float32)) for _ in range(2)]
    out = block_forward(frames, raster_order(8, 8), cfg, w, "blk", block_mode=mode, patch=4, radius=1)
    assert len(out) == 2
    for o in out:
        assert o.shape == (c, 8, 8)
        assert np.isfinite(o.data).all()


def test_ablation_row_names_cover_table():
    assert ABLATION_ROWS["WFSAB-GLSSM w/ gamma"] == ("wfsab-glssm", "learnable")
    assert ABLATION_ROWS["WFSAB-GLSSM w/o γ"] == ("wfsab-glssm", "frozen_one")
    modes = {v[0] for v in ABLATION_ROWS.values()}
    assert modes == {"wfsab", "wfsab-wfsab", "wfsab-glssm", "glssm-glssm"}
