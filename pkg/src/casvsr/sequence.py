"""Cross-frame sequentialization: coarse patch alignment of neighbor
features to a reference frame, then interleaving all frames along the
shared scan order into one token sequence.

Interleaving is position-major, frame-minor: the tokens of every frame at
scan rank j sit at rows j*T .. j*T+T-1 of the sequence, so temporally
corresponding tokens are adjacent and the scan state carries cross-frame
correspondence at lag one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .compass import ScanOrder
from .tensor import Tensor, stack


@dataclass
class PatchAlignment:
    """Integer patch-grid displacements chosen per reference patch.

    displacements[0] = dx (columns), displacements[1] = dy (rows), both in
    patch units; |d| <= radius componentwise. ``tied`` marks patches whose
    best correlation was shared by several candidates (resolved by the
    smallest-L1-then-raster rule).
    """

    patch: int
    radius: int
    displacements: np.ndarray  # int64 [2, H/patch, W/patch]
    tied: np.ndarray | None = None  # bool [H/patch, W/patch]

    @property
    def mean_abs_displacement(self) -> float:
        return float(np.abs(self.displacements).mean())

    @property
    def tie_rate(self) -> float:
        return float(self.tied.mean()) if self.tied is not None else 0.0


@dataclass
class TokenSequence:
    data: Tensor  # [T*L, C]
    order: ScanOrder
    frames: int
    layout: str = "position-major/frame-minor"


def _patch_view(arr: np.ndarray, patch: int) -> np.ndarray:
    """[C,H,W] -> zero-mean-ready float64 patches [gh, gw, C*patch*patch]."""
    c, h, w = arr.shape
    gh, gw = h // patch, w // patch
    v = arr.reshape(c, gh, patch, gw, patch).transpose(1, 3, 0, 2, 4)
    return v.reshape(gh, gw, c * patch * patch).astype(np.float64)


def patch_align(
    ref: Tensor, nbr: Tensor, patch: int, radius: int
) -> tuple[Tensor, PatchAlignment]:
    """Align ``nbr`` to ``ref`` by exhaustive integer patch matching.

    For every reference patch the candidate neighbor patch (displacements up
    to ``radius`` patches, out-of-bounds skipped) with the highest zero-mean
    normalized cross-correlation is copied into the output. Ties resolve to
    the smallest L1 displacement, then to candidate raster order, so the
    zero displacement always wins on identical inputs. Scores are computed
    in float64 so ties are exact. The argmax selection is a gradient
    barrier; the copy itself passes gradients into ``nbr``.
    """
    ref = Tensor.astensor(ref)
    nbr = Tensor.astensor(nbr)
    if ref.shape != nbr.shape:
        raise ValueError(f"patch_align shape mismatch: {ref.shape} vs {nbr.shape}")
    c, h, w = ref.shape
    if patch < 1 or h % patch or w % patch:
        raise ValueError(f"extents {h}x{w} not divisible by patch {patch}")
    if radius < 0:
        raise ValueError("radius must be >= 0")
    gh, gw = h // patch, w // patch

    rp = _patch_view(ref.data, patch)
    npv = _patch_view(nbr.data, patch)
    rp0 = rp - rp.mean(axis=2, keepdims=True)
    np0 = npv - npv.mean(axis=2, keepdims=True)
    rn = np.linalg.norm(rp0, axis=2)
    nn = np.linalg.norm(np0, axis=2)

    best_score = np.full((gh, gw), -np.inf)
    best_dy = np.zeros((gh, gw), dtype=np.int64)
    best_dx = np.zeros((gh, gw), dtype=np.int64)
    tied = np.zeros((gh, gw), dtype=bool)

    candidates = [(dy, dx) for dy in range(-radius, radius + 1) for dx in range(-radius, radius + 1)]
    candidates.sort(key=lambda d: (abs(d[0]) + abs(d[1]), (d[0] + radius) * (2 * radius + 1) + d[1] + radius))
    for dy, dx in candidates:
        r0, r1 = max(0, -dy), min(gh, gh - dy)
        c0, c1 = max(0, -dx), min(gw, gw - dx)
        if r0 >= r1 or c0 >= c1:
            continue
        num = np.einsum(
            "ijk,ijk->ij", rp0[r0:r1, c0:c1], np0[r0 + dy : r1 + dy, c0 + dx : c1 + dx]
        )
        den = rn[r0:r1, c0:c1] * nn[r0 + dy : r1 + dy, c0 + dx : c1 + dx]
        score = np.where(den > 1e-12, num / np.where(den > 1e-12, den, 1.0), 0.0)
        window = best_score[r0:r1, c0:c1]
        better = score > window
        tied[r0:r1, c0:c1][score == window] = True
        tied[r0:r1, c0:c1][better] = False
        window[better] = score[better]
        best_dy[r0:r1, c0:c1][better] = dy
        best_dx[r0:r1, c0:c1][better] = dx

    # gather the chosen neighbor patches; differentiable fancy index into nbr
    gy, gx = np.meshgrid(np.arange(gh), np.arange(gw), indexing="ij")
    src_gy, src_gx = gy + best_dy, gx + best_dx
    py, px = np.meshgrid(np.arange(patch), np.arange(patch), indexing="ij")
    rows = (src_gy[:, :, None, None] * patch + py[None, None]).reshape(gh, gw, patch, patch)
    cols = (src_gx[:, :, None, None] * patch + px[None, None]).reshape(gh, gw, patch, patch)
    site = (rows * w + cols).transpose(0, 2, 1, 3).reshape(h * w)
    aligned = nbr.reshape(c, h * w)[:, site].reshape(c, h, w)

    pa = PatchAlignment(
        patch=patch, radius=radius, displacements=np.stack([best_dx, best_dy]), tied=tied
    )
    return aligned, pa


def dump_alignment(pa: PatchAlignment, path_stem) -> None:
    """Debug export: displacement field as MVT1 plus a one-row CSV summary
    (mean |displacement| in patch units, tie rate)."""
    from pathlib import Path

    from .mvt import write_mvt

    stem = Path(path_stem)
    write_mvt(stem.with_suffix(".mvt"), pa.displacements.astype(np.float32))
    with open(stem.with_suffix(".csv"), "w") as f:
        f.write("mean_abs_displacement,tie_rate\n")
        f.write(f"{pa.mean_abs_displacement:.6f},{pa.tie_rate:.6f}\n")


def interleave(frames_feat: list[Tensor], order: ScanOrder) -> TokenSequence:
    """Interleave aligned frames along the scan order into [T*L, C]."""
    if not frames_feat:
        raise ValueError("interleave needs at least one frame")
    frames_feat = [Tensor.astensor(f) for f in frames_feat]
    c, h, w = frames_feat[0].shape
    for f in frames_feat:
        if f.shape != (c, h, w):
            raise ValueError("all frames must share the same extents")
    if order.target_grid != (h, w):
        raise ValueError(f"scan order targets {order.target_grid}, features are {(h, w)}")
    t = len(frames_feat)
    seq = (
        stack(frames_feat, axis=0)  # [T,C,H,W]
        .reshape(t, c, h * w)[:, :, order.perm]  # sites in scan order
        .transpose(2, 0, 1)  # [L,T,C]
        .reshape(t * h * w, c)
    )
    return TokenSequence(data=seq, order=order, frames=t)


def desequentialize(seq: TokenSequence) -> list[Tensor]:
    """Exact inverse of :func:`interleave`; bit-exact round trip."""
    t = seq.frames
    h, w = seq.order.target_grid
    total, c = seq.data.shape
    if total != t * h * w:
        raise ValueError(f"sequence length {total} is not {t} frames of {h}x{w} sites")
    cube = (
        seq.data.reshape(h * w, t, c)
        .transpose(1, 2, 0)[:, :, seq.order.inv]  # undo the site permutation
        .reshape(t, c, h, w)
    )
    return [cube[i] for i in range(t)]
