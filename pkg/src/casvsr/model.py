"""End-to-end model: shallow features -> cascaded refinement ->
pixel-shuffle reconstruction over a global bicubic residual, plus the
desk-scale Adam trainer and weight (de)serialization.

The final reconstruction convolution is zero-initialized, so a freshly
initialized model reproduces the bicubic baseline exactly.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from . import ops
from .config import ModelConfig, config_hash
from .propagation import FlowSet, propagate
from .tensor import NonFiniteError, Tensor, stack

WEIGHTS_MAGIC = b"MVSRW1"


class WeightsFormatError(ValueError):
    """Malformed weights container."""


class TruncatedWeightsError(WeightsFormatError):
    """Container ended inside an entry; carries the offending name."""


class DuplicateWeightError(WeightsFormatError):
    """The same tensor name appears twice."""


class WeightsMismatchError(ValueError):
    """Loaded tensors do not fit the configuration's slots."""


class ModelWeights:
    """Named-tensor container with creation metadata."""

    def __init__(self, tensors: dict[str, Tensor], config_digest: str = "", seed: int = 0):
        self.tensors = tensors
        self.config_digest = config_digest
        self.seed = seed

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()


def count_params(weights: ModelWeights) -> int:
    return sum(t.size for t in weights.values())


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.normal(0.0, std, shape)
    return np.clip(x, -2.0 * std, 2.0 * std).astype(np.float32)


def _conv_init(rng: np.random.Generator, shape) -> np.ndarray:
    fan_in = int(np.prod(shape[1:]))
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape).astype(np.float32)


def _add_attn(params: dict, rng, prefix: str, c: int, heads: int, win: int) -> None:
    params[f"{prefix}.ln1_g"] = np.ones(c, np.float32)
    params[f"{prefix}.ln1_b"] = np.zeros(c, np.float32)
    params[f"{prefix}.qkv_w"] = _trunc_normal(rng, (3 * c, c))
    params[f"{prefix}.qkv_b"] = np.zeros(3 * c, np.float32)
    params[f"{prefix}.rel_bias"] = _trunc_normal(rng, ((2 * win - 1) ** 2, heads))
    params[f"{prefix}.proj_w"] = _trunc_normal(rng, (c, c))
    params[f"{prefix}.proj_b"] = np.zeros(c, np.float32)
    params[f"{prefix}.ln2_g"] = np.ones(c, np.float32)
    params[f"{prefix}.ln2_b"] = np.zeros(c, np.float32)
    params[f"{prefix}.fc1_w"] = _trunc_normal(rng, (2 * c, c))
    params[f"{prefix}.fc1_b"] = np.zeros(2 * c, np.float32)
    params[f"{prefix}.fc2_w"] = _trunc_normal(rng, (c, 2 * c))
    params[f"{prefix}.fc2_b"] = np.zeros(c, np.float32)


def _add_glssm(params: dict, rng, prefix: str, c: int, n: int) -> None:
    params[f"{prefix}.ln_g"] = np.ones(c, np.float32)
    params[f"{prefix}.ln_b"] = np.zeros(c, np.float32)
    for direction in ("fwd", "bwd"):
        p = f"{prefix}.ssm.{direction}"
        params[f"{p}.a_log"] = np.tile(np.log(np.arange(1, n + 1, dtype=np.float32)), (c, 1))
        params[f"{p}.w_b"] = _trunc_normal(rng, (n, c))
        params[f"{p}.w_c"] = _trunc_normal(rng, (n, c))
        params[f"{p}.w_delta"] = _trunc_normal(rng, (c, c))
        params[f"{p}.b_delta"] = np.full(c, float(np.log(np.expm1(0.1))), np.float32)
        params[f"{p}.d"] = np.ones(c, np.float32)
    params[f"{prefix}.gate_w"] = _trunc_normal(rng, (c, c))
    params[f"{prefix}.out_w"] = _trunc_normal(rng, (c, c))


def init_weights(cfg: ModelConfig) -> ModelWeights:
    """Deterministic weight construction for a configuration.

    The reconstruction output convolution starts at zero so the initial
    model is exactly the bicubic baseline.
    """
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    c, n = cfg.channels, cfg.state_dim
    f = cfg.compass_factor
    params: dict[str, np.ndarray] = {}

    params["shallow.w"] = _conv_init(rng, (c, 3, 3, 3))
    params["shallow.b"] = np.zeros(c, np.float32)
    params["compass.embed_w"] = _trunc_normal(rng, (c, c * f * f))
    params["compass.embed_b"] = np.zeros(c, np.float32)

    for s in range(cfg.stages):
        params[f"prop.s{s}.fuse_w"] = _conv_init(rng, (c, 3 * c, 3, 3))
        params[f"prop.s{s}.fuse_b"] = np.zeros(c, np.float32)
        for b in range(cfg.blocks_per_stage):
            prefix = f"prop.s{s}.b{b}"
            if cfg.block_mode in ("wfsab", "wfsab-wfsab", "wfsab-glssm"):
                _add_attn(params, rng, f"{prefix}.attn", c, cfg.heads, cfg.window)
            if cfg.block_mode == "wfsab-wfsab":
                _add_attn(params, rng, f"{prefix}.attn2", c, cfg.heads, cfg.window)
            if cfg.block_mode in ("wfsab-glssm", "glssm-glssm"):
                _add_glssm(params, rng, f"{prefix}.glssm", c, n)
            if cfg.block_mode == "glssm-glssm":
                _add_glssm(params, rng, f"{prefix}.glssm2", c, n)
            if cfg.block_mode == "wfsab-glssm" and cfg.gamma_mode == "learnable":
                params[f"{prefix}.gamma"] = np.ones(c, np.float32)

    params["recon.up1_w"] = _conv_init(rng, (4 * c, c, 3, 3))
    params["recon.up1_b"] = np.zeros(4 * c, np.float32)
    params["recon.up2_w"] = _conv_init(rng, (4 * c, c, 3, 3))
    params["recon.up2_b"] = np.zeros(4 * c, np.float32)
    params["recon.out_w"] = np.zeros((3, c, 3, 3), np.float32)
    params["recon.out_b"] = np.zeros(3, np.float32)

    tensors = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
    return ModelWeights(tensors, config_digest=config_hash(cfg), seed=cfg.seed)


def validate_weights(weights: ModelWeights, cfg: ModelConfig) -> None:
    """Every configuration slot must load a matching-shape tensor."""
    skeleton = init_weights(cfg)
    missing = [k for k in skeleton if k not in weights]
    extra = [k for k in weights if k not in skeleton.tensors]
    if missing or extra:
        raise WeightsMismatchError(f"weight names do not match config (missing {missing}, unexpected {extra})")
    for k, t in skeleton.items():
        if weights[k].shape != t.shape:
            raise WeightsMismatchError(
                f"shape mismatch for {k}: file has {weights[k].shape}, config needs {t.shape}"
            )


# ---------------------------------------------------------------------------
# forward
# ---------------------------------------------------------------------------


def shallow_features(frame: Tensor, weights: ModelWeights) -> Tensor:
    """3x3 shallow extraction conv with reflect padding, so constant frames
    produce exactly constant features (no border artifacts feeding the
    compass)."""
    padded = ops.reflect_pad2d(frame, 1)
    return ops.conv2d(padded, weights["shallow.w"], weights["shallow.b"], padding=0)


def forward(lr_clip, flows: FlowSet | None, cfg: ModelConfig, weights: ModelWeights) -> Tensor:
    """Super-resolve a clip: [T,3,H,W] in [0,1] -> [T,3,4H,4W].

    Output is bicubic(lr) plus the learned residual and is left unclamped;
    clamping to [0,1] happens only at image export.
    """
    lr = Tensor.astensor(lr_clip)
    if lr.ndim != 4 or lr.shape[1] != 3:
        raise ValueError(f"expected a clip [T,3,H,W], got {lr.shape}")
    if lr.data.min() < -1e-5 or lr.data.max() > 1.0 + 1e-5:
        raise ValueError("input pixel values must lie in [0, 1]")
    flows = flows or FlowSet.none()
    t_total = lr.shape[0]

    shallow = [shallow_features(lr[i], weights) for i in range(t_total)]
    feats = propagate(shallow, flows, cfg, weights)

    out_frames = []
    for i in range(t_total):
        r = ops.conv2d(feats[i], weights["recon.up1_w"], weights["recon.up1_b"], padding=1)
        r = ops.pixel_shuffle(r, 2).gelu()
        r = ops.conv2d(r, weights["recon.up2_w"], weights["recon.up2_b"], padding=1)
        r = ops.pixel_shuffle(r, 2).gelu()
        r = ops.conv2d(r, weights["recon.out_w"], weights["recon.out_b"], padding=1)
        base = ops.bicubic_resize(lr[i], 4.0)
        out_frames.append(base + r)
    return stack(out_frames, axis=0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


class AdamState:
    """Adam moments per named tensor; beta1=0.9, beta2=0.99, eps=1e-8."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, weights: ModelWeights, lr_rate: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1**self.step_count
        bc2 = 1.0 - b2**self.step_count
        for name, p in weights.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            v = self.v[name]
            m = b1 * m + (1.0 - b1) * g
            v = b2 * v + (1.0 - b2) * g * g
            self.m[name], self.v[name] = m, v
            update = lr_rate * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data = (p.data - update).astype(np.float32)


def cosine_lr(base_lr: float, step: int, total_steps: int, min_lr: float = 0.0) -> float:
    """Cosine annealing from base_lr down to min_lr over total_steps."""
    if total_steps <= 1:
        return base_lr
    t = min(max(step, 0), total_steps - 1) / (total_steps - 1)
    return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + np.cos(np.pi * t))


def train_step(
    batch: list[tuple],
    cfg: ModelConfig,
    weights: ModelWeights,
    opt: AdamState,
    lr_rate: float,
    flows: FlowSet | None = None,
) -> float:
    """One Adam update on the mean-per-pixel Charbonnier loss.

    Returns the loss value before the update. A non-finite loss aborts with
    diagnostics instead of corrupting the weights.
    """
    weights.zero_grad()
    losses = []
    for lr_clip, hr_clip in batch:
        sr = forward(lr_clip, flows, cfg, weights)
        losses.append(ops.charbonnier_loss_mean(sr, Tensor.astensor(hr_clip)))
    total = losses[0]
    for extra in losses[1:]:
        total = total + extra
    loss = total * np.float32(1.0 / len(losses))
    if not np.isfinite(loss.data):
        raise NonFiniteError(
            f"training loss is non-finite at optimizer step {opt.step_count + 1}"
        )
    loss.backward()
    value = float(loss.data)
    opt.step(weights, lr_rate)
    return value


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_weights(weights: ModelWeights, path) -> None:
    """Write the MVSRW1 container: magic, u32 entry count, then per entry
    u16 name length + UTF-8 name + u8 rank + u32 extents + f32 payload,
    all little-endian."""
    with open(path, "wb") as f:
        f.write(WEIGHTS_MAGIC)
        f.write(struct.pack("<I", len(weights.tensors)))
        for name, t in weights.items():
            encoded = name.encode("utf-8")
            arr = np.ascontiguousarray(t.data, dtype="<f4")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_weights(path) -> ModelWeights:
    raw = Path(path).read_bytes()
    if raw[: len(WEIGHTS_MAGIC)] != WEIGHTS_MAGIC:
        raise WeightsFormatError(
            f"{path}: bad magic {raw[:len(WEIGHTS_MAGIC)]!r}, expected {WEIGHTS_MAGIC!r}"
        )
    off = len(WEIGHTS_MAGIC)
    if len(raw) < off + 4:
        raise TruncatedWeightsError(f"{path}: truncated before the entry count")
    (count,) = struct.unpack_from("<I", raw, off)
    off += 4
    tensors: dict[str, Tensor] = {}
    for i in range(count):
        where = f"entry {i + 1}/{count}"
        if len(raw) < off + 2:
            raise TruncatedWeightsError(f"{path}: truncated at {where} (name length)")
        (name_len,) = struct.unpack_from("<H", raw, off)
        off += 2
        if len(raw) < off + name_len:
            raise TruncatedWeightsError(f"{path}: truncated at {where} (name)")
        name = raw[off : off + name_len].decode("utf-8")
        off += name_len
        if name in tensors:
            raise DuplicateWeightError(f"{path}: duplicate tensor name {name!r}")
        if len(raw) < off + 1:
            raise TruncatedWeightsError(f"{path}: truncated at {name!r} (rank)")
        rank = raw[off]
        off += 1
        if len(raw) < off + 4 * rank:
            raise TruncatedWeightsError(f"{path}: truncated at {name!r} (extents)")
        shape = struct.unpack_from(f"<{rank}I", raw, off)
        off += 4 * rank
        n_vals = int(np.prod(shape)) if rank else 1
        if len(raw) < off + 4 * n_vals:
            raise TruncatedWeightsError(f"{path}: truncated at {name!r} (payload)")
        data = np.frombuffer(raw, dtype="<f4", offset=off, count=n_vals).reshape(shape)
        off += 4 * n_vals
        tensors[name] = Tensor(data.copy(), requires_grad=True)
    if off != len(raw):
        raise WeightsFormatError(f"{path}: {len(raw) - off} trailing bytes after the last entry")
    return ModelWeights(tensors)
