"""Shared scan-order construction.

A similarity graph over downsampled tokens gives a normalized Laplacian;
sorting its Fiedler vector yields a spatial scan order that is expanded to
full resolution and shared across refinement stages. Graph math runs in
float64: it is order-defining preprocessing, not model math, and the sign
and tie conventions below make the result bit-reproducible.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class ConvergenceError(RuntimeError):
    """Eigen-iteration failed to reach the residual tolerance."""


@dataclass(frozen=True)
class FiedlerSolveConfig:
    tol: float = 1e-6
    max_iter: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("FiedlerSolveConfig requires tol > 0 and max_iter >= 1")


@dataclass
class ScanOrder:
    """A permutation over spatial sites plus its inverse.

    perm[j] is the site visited at rank j; inv[site] is that site's rank.
    """

    perm: np.ndarray
    inv: np.ndarray = field(default=None)  # type: ignore[assignment]
    source_grid: tuple[int, int] = (0, 0)
    target_grid: tuple[int, int] = (0, 0)

    def __post_init__(self):
        self.perm = np.asarray(self.perm, dtype=np.int64)
        n = self.perm.size
        if self.inv is None:
            inv = np.empty(n, dtype=np.int64)
            inv[self.perm] = np.arange(n, dtype=np.int64)
            self.inv = inv
        else:
            self.inv = np.asarray(self.inv, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        n = self.perm.size
        if not (np.sort(self.perm) == np.arange(n)).all():
            raise ValueError("perm is not a bijection")
        if not (self.inv[self.perm] == np.arange(n)).all():
            raise ValueError("inv is not the inverse of perm")

    def __len__(self) -> int:
        return int(self.perm.size)


@dataclass
class SimilarityGraph:
    """Symmetric nonnegative affinity matrix over coarse tokens."""

    w: np.ndarray
    grid: tuple[int, int]

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64)
        n = self.w.shape[0]
        if self.w.shape != (n, n) or n != self.grid[0] * self.grid[1]:
            raise ValueError("affinity matrix extent does not match the token grid")
        if np.abs(self.w - self.w.T).max(initial=0.0) > 1e-6:
            raise ValueError("affinity matrix is not symmetric")
        if (self.w < 0).any():
            raise ValueError("affinities must be nonnegative")
        if np.abs(np.diag(self.w)).max(initial=0.0) != 0.0:
            raise ValueError("affinity diagonal must be zero")

    @property
    def n(self) -> int:
        return self.w.shape[0]


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def embed_downsample(feat: Tensor, factor: int, weight: Tensor, bias: Tensor) -> Tensor:
    """Non-overlapping patch embedding: a stride-``factor`` convolution with
    kernel extent ``factor``, written as reshape + matmul.

    feat: [C,H,W] with H, W divisible by factor; weight: [C', C*factor**2];
    returns [C', H/factor, W/factor].
    """
    feat = Tensor.astensor(feat)
    c, h, w = feat.shape
    if factor < 1 or h % factor or w % factor:
        raise ValueError(f"extents {h}x{w} not divisible by downsample factor {factor}")
    hc, wc = h // factor, w // factor
    patches = (
        feat.reshape(c, hc, factor, wc, factor)
        .transpose(1, 3, 0, 2, 4)
        .reshape(hc * wc, c * factor * factor)
    )
    tokens = patches @ weight.transpose(1, 0) + bias
    cp = weight.shape[0]
    return tokens.reshape(hc, wc, cp).transpose(2, 0, 1)


def build_similarity(tokens, top_k: int, blend: float) -> SimilarityGraph:
    """Dual-branch affinities: dense row-softmax of scaled dot products,
    blended with its top-k-masked renormalization, then symmetrized with a
    zero diagonal.
    """
    arr = tokens.data if isinstance(tokens, Tensor) else np.asarray(tokens)
    cdim, hc, wc = arr.shape
    n = hc * wc
    if n < 2:
        raise ValueError("similarity graph needs at least two tokens")
    if not 1 <= top_k < n:
        raise ValueError(f"top_k must be in [1, {n - 1}], got {top_k}")
    if not 0.0 <= blend <= 1.0:
        raise ValueError("blend must lie in [0, 1]")

    x = arr.reshape(cdim, n).T.astype(np.float64)
    logits = (x @ x.T) / np.sqrt(cdim)
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    dense = e / e.sum(axis=1, keepdims=True)

    # stable descending sort: ties resolved toward the lower raster index
    order = np.argsort(-dense, axis=1, kind="stable")
    keep = np.zeros_like(dense, dtype=bool)
    np.put_along_axis(keep, order[:, :top_k], True, axis=1)
    sparse = np.where(keep, dense, 0.0)
    sparse /= sparse.sum(axis=1, keepdims=True)

    w = blend * dense + (1.0 - blend) * sparse
    w = 0.5 * (w + w.T)
    np.fill_diagonal(w, 0.0)
    return SimilarityGraph(w=w, grid=(hc, wc))


def laplacian(g: SimilarityGraph) -> np.ndarray:
    """Symmetric normalized Laplacian I - D^(-1/2) W D^(-1/2); rows and
    columns of isolated (zero-degree) nodes reduce to identity rows."""
    deg = g.w.sum(axis=1)
    inv_sqrt = np.where(deg > 0.0, 1.0 / np.sqrt(np.where(deg > 0.0, deg, 1.0)), 0.0)
    lap = -inv_sqrt[:, None] * g.w * inv_sqrt[None, :]
    np.fill_diagonal(lap, 1.0)
    return lap


def degree_null_vector(g: SimilarityGraph) -> np.ndarray:
    """D^(1/2) * 1, normalized: the known null direction of the normalized
    Laplacian on each connected component's union."""
    deg = g.w.sum(axis=1)
    v = np.sqrt(np.maximum(deg, 0.0))
    nrm = np.linalg.norm(v)
    return v / nrm if nrm > 0 else np.ones(g.n) / np.sqrt(g.n)


def fiedler_vector(
    lap: np.ndarray,
    cfg: FiedlerSolveConfig = FiedlerSolveConfig(),
    null_vector: np.ndarray | None = None,
) -> np.ndarray:
    """Unit eigenvector for the second-smallest eigenvalue of a symmetric
    PSD matrix, by shifted inverse power iteration with explicit deflation.

    ``null_vector`` is the known smallest-eigenvalue direction to deflate
    against: D^(1/2)*1 for normalized Laplacians (see
    :func:`degree_null_vector`), the constant vector for unnormalized ones
    (the default). Sign is fixed so the first component exceeding 1e-9 in
    magnitude is positive, making the result unique and reproducible.
    """
    lap = np.asarray(lap, dtype=np.float64)
    n = lap.shape[0]
    if n < 2:
        raise ValueError("fiedler_vector needs at least a 2x2 matrix")
    u = np.ones(n) if null_vector is None else np.asarray(null_vector, dtype=np.float64)
    u = u / np.linalg.norm(u)

    shift = 1e-4
    m_inv = np.linalg.inv(lap + shift * np.eye(n))
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    v = rng.standard_normal(n)
    v -= (u @ v) * u
    v /= np.linalg.norm(v)

    lam = 0.0
    for _ in range(cfg.max_iter):
        v = m_inv @ v
        v -= (u @ v) * u
        nrm = np.linalg.norm(v)
        if nrm == 0.0:
            raise ConvergenceError("iteration collapsed onto the deflated direction")
        v /= nrm
        lv = lap @ v
        lam = v @ lv
        if np.linalg.norm(lv - lam * v) <= cfg.tol:
            break
    else:
        raise ConvergenceError(
            f"no convergence to tol={cfg.tol} within {cfg.max_iter} iterations"
        )

    for comp in v:
        if abs(comp) > 1e-9:
            if comp < 0:
                v = -v
            break
    return v


def order_from_fiedler(v: np.ndarray, grid: tuple[int, int]) -> ScanOrder:
    """Sort token indices by ascending Fiedler value; ties fall back to the
    raster index (stable sort)."""
    v = np.asarray(v, dtype=np.float64)
    hc, wc = grid
    if v.size != hc * wc:
        raise ValueError(f"vector length {v.size} does not cover a {hc}x{wc} grid")
    perm = np.argsort(v, kind="stable")
    return ScanOrder(perm=perm, source_grid=grid, target_grid=grid)


def raster_order(h: int, w: int) -> ScanOrder:
    """Identity permutation in row-major order (the ablation baseline)."""
    if h < 1 or w < 1:
        raise ValueError("raster_order needs positive extents")
    perm = np.arange(h * w, dtype=np.int64)
    return ScanOrder(perm=perm, source_grid=(h, w), target_grid=(h, w))


def expand_order(order: ScanOrder, target: tuple[int, int]) -> ScanOrder:
    """Expand a coarse order to ``target`` resolution: coarse sites are
    visited in perm order, the pixels of each site's block in raster order."""
    hc, wc = order.target_grid
    h, w = target
    if h % hc or w % wc or h // hc != w // wc:
        raise ValueError(f"no integer expansion factor from {(hc, wc)} to {target}")
    f = h // hc
    rows = order.perm // wc
    cols = order.perm % wc
    dy, dx = np.meshgrid(np.arange(f), np.arange(f), indexing="ij")
    block = (dy * w + dx).reshape(-1)  # raster offsets inside one block
    perm = ((rows * f)[:, None] * w + (cols * f)[:, None] + block[None, :]).reshape(-1)
    return ScanOrder(perm=perm, source_grid=order.source_grid, target_grid=target)


def compass_order(
    feat: Tensor,
    factor: int,
    weight: Tensor,
    bias: Tensor,
    top_k: int,
    blend: float,
    cfg: FiedlerSolveConfig = FiedlerSolveConfig(),
) -> ScanOrder:
    """Full pipeline: embed -> similarity -> Laplacian -> Fiedler -> sort ->
    expand back to the feature resolution. Order construction is a gradient
    barrier; it never feeds gradients back into the embedding."""
    _, h, w = feat.shape
    tokens = embed_downsample(feat, factor, weight, bias)
    flat = tokens.data.reshape(tokens.shape[0], -1)
    if flat.shape[1] < 2 or np.all(flat == flat[:, :1]):
        # a lone token, or identical tokens, carry no spectral information:
        # every site ties, and the tie-break is the raster order
        return raster_order(h, w)
    graph = build_similarity(tokens, top_k=top_k, blend=blend)
    lap = laplacian(graph)
    v = fiedler_vector(lap, cfg, null_vector=degree_null_vector(graph))
    coarse = order_from_fiedler(v, graph.grid)
    return expand_order(coarse, (h, w))


# ---------------------------------------------------------------------------
# scan-viz export
# ---------------------------------------------------------------------------


def scan_order_csv(order: ScanOrder, path) -> None:
    """CSV export ``site_index,rank`` for every spatial site."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["site_index", "rank"])
        for site, rank in enumerate(order.inv):
            writer.writerow([site, int(rank)])


def scan_order_rank_map(order: ScanOrder) -> np.ndarray:
    """8-bit grayscale rank map (rank scaled to 0..255) at target resolution."""
    h, w = order.target_grid
    n = len(order)
    ranks = order.inv.reshape(h, w).astype(np.float64)
    if n > 1:
        ranks = ranks * (255.0 / (n - 1))
    return np.round(ranks).astype(np.uint8)
