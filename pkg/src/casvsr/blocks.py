"""Global-local refinement blocks.

Each block couples a window self-attention sub-block (local structure) with
a content-aware state-space sub-block (global dependencies). The attention
output feeds the state-space branch, whose contribution is fused back
through a learnable per-channel scale. Window tiling, token layouts and
weight names are fixed here; parameter creation lives in ``model``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .compass import ScanOrder
from .scan import SSMParams, selective_scan_seq
from .sequence import TokenSequence, desequentialize, interleave, patch_align
from .tensor import Tensor

from .config import ABLATION_ROWS, BLOCK_MODES, GAMMA_MODES  # noqa: F401  (re-export)


@dataclass(frozen=True)
class WindowConfig:
    win: int
    heads: int
    dim: int

    def __post_init__(self):
        if self.win < 1:
            raise ValueError("window edge must be >= 1")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} not divisible by heads {self.heads}")


@dataclass
class FusionParams:
    gamma: Tensor  # per-channel fusion scale, unconstrained sign


# ---------------------------------------------------------------------------
# window tiling
# ---------------------------------------------------------------------------


def window_partition(x: Tensor, win: int) -> tuple[Tensor, tuple[int, int]]:
    """Tile [C,H,W] into [nw, win*win, C] windows, raster order throughout.

    Extents that are not multiples of ``win`` are reflect-padded first;
    :func:`window_reverse` crops the padding away again, so the round trip
    is bit-exact. Returns the windows and the padded extents.
    """
    x = Tensor.astensor(x)
    c, h, w = x.shape
    hp = -(-h // win) * win
    wp = -(-w // win) * win
    if (hp, wp) != (h, w):
        rows = ops.reflect_index(h, hp)
        cols = ops.reflect_index(w, wp)
        site = (rows[:, None] * w + cols[None, :]).reshape(-1)
        x = x.reshape(c, h * w)[:, site].reshape(c, hp, wp)
    nh, nw = hp // win, wp // win
    wins = (
        x.reshape(c, nh, win, nw, win)
        .transpose(1, 3, 2, 4, 0)
        .reshape(nh * nw, win * win, c)
    )
    return wins, (hp, wp)


def window_reverse(wins: Tensor, win: int, h: int, w: int) -> Tensor:
    """Inverse tiling back to [C,H,W]; crops any reflect padding."""
    hp = -(-h // win) * win
    wp = -(-w // win) * win
    nh, nw = hp // win, wp // win
    c = wins.shape[2]
    x = (
        wins.reshape(nh, nw, win, win, c)
        .transpose(4, 0, 2, 1, 3)
        .reshape(c, hp, wp)
    )
    return x[:, :h, :w] if (hp, wp) != (h, w) else x


def window_scan_order(order: ScanOrder, win: int, h: int, w: int) -> ScanOrder:
    """Restrict a full-resolution scan order to window granularity: windows
    appear in order of their first visit, sites within a window keep their
    relative order."""
    if order.target_grid != (h, w):
        raise ValueError(f"order targets {order.target_grid}, expected {(h, w)}")
    ranks = order.inv
    ys, xs = np.divmod(np.arange(h * w, dtype=np.int64), w)
    nwx = -(-w // win)
    wid = (ys // win) * nwx + (xs // win)
    n_win = int(wid.max()) + 1
    first = np.full(n_win, h * w, dtype=np.int64)
    np.minimum.at(first, wid, ranks)
    visit = np.empty(n_win, dtype=np.int64)
    visit[np.argsort(first, kind="stable")] = np.arange(n_win)
    perm = np.lexsort((ranks, visit[wid]))
    return ScanOrder(perm=perm, source_grid=order.source_grid, target_grid=(h, w))


# ---------------------------------------------------------------------------
# window self-attention sub-block
# ---------------------------------------------------------------------------


def relative_position_index(win: int) -> np.ndarray:
    """[win*win, win*win] index into the (2*win-1)**2 relative-bias table."""
    coords = np.stack(np.meshgrid(np.arange(win), np.arange(win), indexing="ij"))
    flat = coords.reshape(2, -1)
    rel = flat[:, :, None] - flat[:, None, :]  # dy, dx in [-(win-1), win-1]
    return (rel[0] + win - 1) * (2 * win - 1) + (rel[1] + win - 1)


def window_attention(tokens: Tensor, cfg: WindowConfig, w: dict[str, Tensor], prefix: str) -> Tensor:
    """Multi-head self-attention within each window, with a learned relative
    position bias per head. tokens: [nw, t, C]."""
    nw, t, c = tokens.shape
    heads = cfg.heads
    dh = c // heads
    qkv = ops.linear(tokens, w[f"{prefix}.qkv_w"], w[f"{prefix}.qkv_b"])  # [nw,t,3C]
    qkv = qkv.reshape(nw, t, 3, heads, dh).transpose(2, 0, 3, 1, 4)  # [3,nw,h,t,dh]
    q, k, v = qkv[0], qkv[1], qkv[2]
    logits = (q @ k.transpose(0, 1, 3, 2)) * np.float32(1.0 / np.sqrt(dh))
    rel_idx = relative_position_index(cfg.win)
    bias = w[f"{prefix}.rel_bias"][rel_idx.reshape(-1)]  # [t*t, heads]
    logits = logits + bias.reshape(t, t, heads).transpose(2, 0, 1).reshape(1, heads, t, t)
    attn = ops.softmax(logits, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(nw, t, c)
    return ops.linear(out, w[f"{prefix}.proj_w"], w[f"{prefix}.proj_b"])


def wfsab(x: Tensor, cfg: WindowConfig, w: dict[str, Tensor], prefix: str) -> Tensor:
    """Window attention sub-block: pre-norm attention and a 2x-expansion
    GELU MLP, each with a residual connection."""
    c, h, wd = x.shape
    tokens, _ = window_partition(x, cfg.win)
    normed = ops.layer_norm(tokens, w[f"{prefix}.ln1_g"], w[f"{prefix}.ln1_b"])
    tokens = tokens + window_attention(normed, cfg, w, prefix)
    normed = ops.layer_norm(tokens, w[f"{prefix}.ln2_g"], w[f"{prefix}.ln2_b"])
    hidden = ops.linear(normed, w[f"{prefix}.fc1_w"], w[f"{prefix}.fc1_b"]).gelu()
    tokens = tokens + ops.linear(hidden, w[f"{prefix}.fc2_w"], w[f"{prefix}.fc2_b"])
    return window_reverse(tokens, cfg.win, h, wd)


# ---------------------------------------------------------------------------
# content-aware state-space sub-block
# ---------------------------------------------------------------------------


def _frame_norm(x: Tensor, gamma: Tensor, beta: Tensor) -> Tensor:
    return ops.layer_norm(x, gamma, beta, axis=0)


def _ssm_params(w: dict[str, Tensor], prefix: str) -> SSMParams:
    return SSMParams(
        a_log=w[f"{prefix}.a_log"],
        w_b=w[f"{prefix}.w_b"],
        w_c=w[f"{prefix}.w_c"],
        w_delta=w[f"{prefix}.w_delta"],
        b_delta=w[f"{prefix}.b_delta"],
        d=w[f"{prefix}.d"],
    )


def _bidirectional_scan(seq: Tensor, w: dict[str, Tensor], prefix: str) -> Tensor:
    """Forward scan plus reversed scan (separate parameters), summed."""
    length = seq.shape[0]
    fwd = selective_scan_seq(seq, _ssm_params(w, f"{prefix}.fwd"))
    rev_idx = np.arange(length - 1, -1, -1, dtype=np.int64)
    bwd = selective_scan_seq(seq[rev_idx], _ssm_params(w, f"{prefix}.bwd"))[rev_idx]
    return fwd + bwd


def glssm(
    frames_feat: list[Tensor],
    order: ScanOrder,
    win: int,
    w: dict[str, Tensor],
    prefix: str,
    ref_index: int = 0,
    align: bool = True,
    interleave_frames: bool = True,
    patch: int = 8,
    radius: int = 2,
) -> list[Tensor]:
    """State-space branch: pre-norm, coarse-align neighbors to the reference
    frame, interleave along the window-restricted scan order, run the
    bidirectional selective scan, return to image layout and apply a gated
    output projection.

    Outputs for neighbor frames are in reference-aligned coordinates; the
    caller that consumes only the reference frame (propagation) is
    unaffected. Per-frame residuals are the caller's job.
    """
    frames_feat = [Tensor.astensor(f) for f in frames_feat]
    c, h, wd = frames_feat[0].shape
    normed = [_frame_norm(f, w[f"{prefix}.ln_g"], w[f"{prefix}.ln_b"]) for f in frames_feat]
    if align and len(normed) > 1:
        aligned = [
            f if i == ref_index else patch_align(normed[ref_index], f, patch, radius)[0]
            for i, f in enumerate(normed)
        ]
    else:
        aligned = normed
    wso = window_scan_order(order, win, h, wd)

    def run(tokens: Tensor) -> Tensor:
        y = _bidirectional_scan(tokens, w, f"{prefix}.ssm")
        gate = ops.linear(tokens, w[f"{prefix}.gate_w"]).silu()
        return ops.linear(y * gate, w[f"{prefix}.out_w"])

    if interleave_frames:
        seq = interleave(aligned, wso)
        out = run(seq.data)
        return desequentialize(TokenSequence(out, wso, seq.frames))
    outs = []
    for f in aligned:
        seq = interleave([f], wso)
        out = run(seq.data)
        outs.append(desequentialize(TokenSequence(out, wso, 1))[0])
    return outs


# ---------------------------------------------------------------------------
# fused block
# ---------------------------------------------------------------------------


def fusion_params(w: dict[str, Tensor], prefix: str, gamma_mode: str, channels: int) -> FusionParams:
    """Per-channel fusion scale for the configured mode: the learnable
    tensor, or a frozen all-ones / all-zeros constant."""
    if gamma_mode == "learnable":
        return FusionParams(gamma=w[f"{prefix}.gamma"])
    if gamma_mode == "frozen_one":
        return FusionParams(gamma=Tensor(np.ones(channels, dtype=np.float32)))
    if gamma_mode == "zero":
        return FusionParams(gamma=Tensor(np.zeros(channels, dtype=np.float32)))
    raise ValueError(f"unknown gamma_mode {gamma_mode!r}")


def glssb_forward(
    frames_feat: list[Tensor],
    order: ScanOrder,
    cfg: WindowConfig,
    w: dict[str, Tensor],
    prefix: str,
    gamma_mode: str = "learnable",
    ref_index: int = 0,
    align: bool = True,
    interleave_frames: bool = True,
    patch: int = 8,
    radius: int = 2,
) -> list[Tensor]:
    """Canonical fused block: u = attention(x) per frame, then
    out = u + gamma * ssm_branch(u across frames)."""
    u = [wfsab(f, cfg, w, f"{prefix}.attn") for f in frames_feat]
    branch = glssm(
        u, order, cfg.win, w, f"{prefix}.glssm",
        ref_index=ref_index, align=align, interleave_frames=interleave_frames,
        patch=patch, radius=radius,
    )
    gamma = fusion_params(w, prefix, gamma_mode, cfg.dim).gamma.reshape(cfg.dim, 1, 1)
    return [ui + gamma * bi for ui, bi in zip(u, branch)]


def block_forward(
    frames_feat: list[Tensor],
    order: ScanOrder,
    cfg: WindowConfig,
    w: dict[str, Tensor],
    prefix: str,
    block_mode: str = "wfsab-glssm",
    gamma_mode: str = "learnable",
    ref_index: int = 0,
    align: bool = True,
    interleave_frames: bool = True,
    patch: int = 8,
    radius: int = 2,
) -> list[Tensor]:
    """Dispatch over the ablation block compositions."""
    if block_mode == "wfsab":
        return [wfsab(f, cfg, w, f"{prefix}.attn") for f in frames_feat]
    if block_mode == "wfsab-wfsab":
        mid = [wfsab(f, cfg, w, f"{prefix}.attn") for f in frames_feat]
        return [wfsab(f, cfg, w, f"{prefix}.attn2") for f in mid]
    if block_mode == "wfsab-glssm":
        return glssb_forward(
            frames_feat, order, cfg, w, prefix, gamma_mode=gamma_mode,
            ref_index=ref_index, align=align, interleave_frames=interleave_frames,
            patch=patch, radius=radius,
        )
    if block_mode == "glssm-glssm":
        kw = dict(ref_index=ref_index, align=align, interleave_frames=interleave_frames,
                  patch=patch, radius=radius)
        mid = glssm(frames_feat, order, cfg.win, w, f"{prefix}.glssm", **kw)
        u = [f + m for f, m in zip(frames_feat, mid)]
        out = glssm(u, order, cfg.win, w, f"{prefix}.glssm2", **kw)
        return [f + m for f, m in zip(u, out)]
    raise ValueError(f"unknown block_mode {block_mode!r}")
