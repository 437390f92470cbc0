"""Cascaded bidirectional refinement.

Stages alternate propagation direction (default: backward first). Within a
stage, time steps run strictly sequentially: the previous and
second-previous propagated features are warped by the matching flows, fused
with the current frame's stage input by a 3x3 convolution, then refined by
a stack of global-local blocks whose state-space branch aggregates the
local temporal window (previously visited neighbor, current, next).

Flow conventions: ``backward_flows[i]`` lives on frame i's grid and samples
from frame i+1 (consumed by backward propagation); ``forward_flows[i]``
lives on frame i+1's grid and samples from frame i (forward propagation).
Absent flows mean zero motion and warping is skipped (exact identity).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .blocks import WindowConfig, block_forward
from .compass import FiedlerSolveConfig, ScanOrder, compass_order, raster_order
from .config import ModelConfig
from .tensor import Tensor, concat, stack


@dataclass(frozen=True)
class PropagationConfig:
    """Stage layout for the recurrent cascade (subset of ModelConfig)."""

    stages: int = 2
    blocks_per_stage: int = 2
    channels: int = 64
    first_direction: str = "backward"

    def __post_init__(self):
        if self.stages < 1 or self.blocks_per_stage < 1:
            raise ValueError("stages and blocks_per_stage must be >= 1")


@dataclass
class FlowSet:
    """Optional externally supplied flows; zero motion when absent."""

    forward_flows: np.ndarray | None = None  # [T-1, 2, H, W]
    backward_flows: np.ndarray | None = None
    provenance: str = "zero"

    @classmethod
    def none(cls) -> "FlowSet":
        return cls()

    @classmethod
    def external(cls, forward_flows, backward_flows) -> "FlowSet":
        return cls(
            forward_flows=np.asarray(forward_flows, dtype=np.float32),
            backward_flows=np.asarray(backward_flows, dtype=np.float32),
            provenance="external",
        )

    def validate(self, t: int, h: int, w: int) -> None:
        for name, arr in (("forward_flows", self.forward_flows), ("backward_flows", self.backward_flows)):
            if arr is not None and arr.shape != (t - 1, 2, h, w):
                raise ValueError(f"{name} must be [{t - 1},2,{h},{w}], got {arr.shape}")


def _compose_flow(first: np.ndarray | None, second: np.ndarray | None) -> np.ndarray | None:
    """Flow for the second-order hop: follow ``first``, then ``second``
    resampled through ``first``."""
    if first is None and second is None:
        return None
    if first is None or second is None:
        return first if second is None else second
    warped = ops.bilinear_warp(Tensor(second), first).data
    return first + warped


def shared_compass(frames: list[Tensor], cfg: ModelConfig, weights) -> ScanOrder:
    """Scan order for the clip: computed once from the temporally-center
    frame's features at first-stage entry and reused by every stage."""
    _, h, w = frames[0].shape
    if cfg.scan_mode == "raster":
        return raster_order(h, w)
    center = frames[len(frames) // 2].detach()
    n_tokens = (h // cfg.compass_factor) * (w // cfg.compass_factor)
    top_k = min(cfg.compass_top_k, n_tokens - 1)
    return compass_order(
        center,
        cfg.compass_factor,
        weights["compass.embed_w"],
        weights["compass.embed_b"],
        top_k=top_k,
        blend=cfg.compass_blend,
        cfg=FiedlerSolveConfig(seed=cfg.seed),
    )


def _stage(
    feats: list[Tensor],
    flows: FlowSet,
    order: ScanOrder,
    cfg: ModelConfig,
    weights,
    stage: int,
    backward: bool,
) -> list[Tensor]:
    t_total = len(feats)
    c, h, w = feats[0].shape
    wincfg = WindowConfig(win=cfg.window, heads=cfg.heads, dim=cfg.channels)
    zeros = Tensor(np.zeros((c, h, w), dtype=np.float32))
    content_aware = cfg.scan_mode == "content_aware"

    visit = list(range(t_total - 1, -1, -1)) if backward else list(range(t_total))
    outs: list[Tensor | None] = [None] * t_total
    prev1: Tensor | None = None
    prev2: Tensor | None = None
    prev1_flow: np.ndarray | None = None  # step flow used to reach prev1's frame

    for k, t in enumerate(visit):
        if backward:
            flow1 = flows.backward_flows[t] if (flows.backward_flows is not None and t + 1 < t_total) else None
        else:
            flow1 = flows.forward_flows[t - 1] if (flows.forward_flows is not None and t - 1 >= 0) else None

        w1 = zeros if prev1 is None else (prev1 if flow1 is None else ops.bilinear_warp(prev1, flow1))
        if prev2 is None:
            w2 = zeros
        else:
            flow2 = _compose_flow(flow1, prev1_flow)
            w2 = prev2 if flow2 is None else ops.bilinear_warp(prev2, flow2)

        fused = ops.conv2d(
            concat([feats[t], w1, w2], axis=0),
            weights[f"prop.s{stage}.fuse_w"],
            weights[f"prop.s{stage}.fuse_b"],
            padding=1,
        )

        # local temporal window in visiting order: [came-from, current, goes-to];
        # out-of-range neighbors duplicate the current frame's stage input
        n_prev = feats[visit[k - 1]] if k > 0 else feats[t]
        n_next = feats[visit[k + 1]] if k + 1 < t_total else feats[t]
        window = [n_prev, fused, n_next]
        for b in range(cfg.blocks_per_stage):
            window = block_forward(
                window,
                order,
                wincfg,
                weights,
                f"prop.s{stage}.b{b}",
                block_mode=cfg.block_mode,
                gamma_mode=cfg.gamma_mode,
                ref_index=1,
                align=content_aware,
                interleave_frames=content_aware,
                patch=cfg.patch,
                radius=cfg.radius,
            )
        out = window[1]
        outs[t] = out
        prev2, prev1, prev1_flow = prev1, out, flow1
    return outs  # type: ignore[return-value]


def propagate(features, flows: FlowSet, cfg: ModelConfig, weights) -> Tensor:
    """Run the stage cascade over [T,C,H,W] features; output has the same
    shape. Stage s runs backward when s + (first_direction == 'forward') is
    even."""
    feats_in = features
    if isinstance(feats_in, Tensor):
        frames = [feats_in[i] for i in range(feats_in.shape[0])]
    else:
        frames = [Tensor.astensor(f) for f in feats_in]
    t_total = len(frames)
    _, h, w = frames[0].shape
    flows.validate(t_total, h, w)
    pc = PropagationConfig(
        stages=cfg.stages,
        blocks_per_stage=cfg.blocks_per_stage,
        channels=cfg.channels,
        first_direction=cfg.first_direction,
    )

    order = shared_compass(frames, cfg, weights)
    for s in range(pc.stages):
        backward = (s % 2 == 0) == (pc.first_direction == "backward")
        frames = _stage(frames, flows, order, cfg, weights, stage=s, backward=backward)
    return stack(frames, axis=0)
