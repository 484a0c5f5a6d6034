"""Miniature conditional spatiotemporal transformer used as the noise predictor.

Everything is plain numpy.  The forward pass keeps an explicit cache and
:func:`backward` walks it in reverse, so gradients are exact for this fixed
architecture and can be checked against finite differences.

Linear weights are stored ``(out, in)`` and applied as ``x @ W.T + b`` so that
a low-rank delta ``B @ A`` has the same layout as the base matrix.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

LN_EPS = 1e-5
_GELU_C = np.sqrt(2.0 / np.pi)


@dataclass(frozen=True)
class ModelConfig:
    num_frames: int = 9
    height: int = 32
    width: int = 32
    patch: int = 4
    dim: int = 128
    heads: int = 4
    blocks: int = 6
    timesteps: int = 200

    def __post_init__(self):
        if self.num_frames < 2:
            raise ValueError(f"num_frames must be >= 2, got {self.num_frames}")
        if min(self.patch, self.dim, self.heads, self.blocks, self.timesteps) < 1:
            raise ValueError("all config sizes must be positive")
        if self.height % self.patch or self.width % self.patch:
            raise ValueError(
                f"canvas {self.height}x{self.width} is not divisible by patch {self.patch}"
            )
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")

    @property
    def patches_per_frame(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def tokens(self) -> int:
        return self.num_frames * self.patches_per_frame

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * 3

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Conditioning:
    """Clean first frame ``(H, W, 3)`` or ``(B, H, W, 3)``.

    ``context_token`` overrides the learned neutral context vector stored in
    the parameters (key ``"context"``); leave it ``None`` to use the learned one.
    """

    first_frame: np.ndarray
    context_token: np.ndarray | None = None


def tensor_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    d, k = cfg.dim, cfg.patch_dim
    shapes = {
        "patch.w": (d, k),
        "patch.b": (d,),
        "pos.frame": (cfg.num_frames, d),
        "pos.patch": (cfg.patches_per_frame, d),
        "time.w": (d, d),
        "time.b": (d,),
        "cond.w": (d, k),
        "cond.b": (d,),
        "context": (d,),
    }
    for i in range(cfg.blocks):
        p = f"blocks.{i}."
        shapes[p + "ln1.g"] = (d,)
        shapes[p + "ln1.b"] = (d,)
        for proj in "qkvo":
            shapes[p + f"attn.{proj}.w"] = (d, d)
            shapes[p + f"attn.{proj}.b"] = (d,)
        shapes[p + "ln2.g"] = (d,)
        shapes[p + "ln2.b"] = (d,)
        shapes[p + "mlp.fc1.w"] = (4 * d, d)
        shapes[p + "mlp.fc1.b"] = (4 * d,)
        shapes[p + "mlp.fc2.w"] = (d, 4 * d)
        shapes[p + "mlp.fc2.b"] = (d,)
    shapes["final_ln.g"] = (d,)
    shapes["final_ln.b"] = (d,)
    shapes["head.w"] = (k, d)
    shapes["head.b"] = (k,)
    return shapes


def param_count(cfg: ModelConfig) -> int:
    """Closed-form parameter count, independent of :func:`tensor_shapes`."""
    d, k, F, Np, L = cfg.dim, cfg.patch_dim, cfg.num_frames, cfg.patches_per_frame, cfg.blocks
    embed = (d * k + d) + F * d + Np * d + (d * d + d) + (d * k + d) + d
    block = 2 * d + 4 * (d * d + d) + 2 * d + (4 * d * d + 4 * d) + (4 * d * d + d)
    out = 2 * d + k * d + k
    return embed + L * block + out


def hash_tensors(tensors: dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        h.update(name.encode())
        h.update(str(arr.dtype).encode())
        h.update(str(arr.shape).encode())
        h.update(arr.tobytes())
    return h.hexdigest()


@dataclass
class DenoiserParams:
    config: ModelConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def hash(self) -> str:
        return hash_tensors(self.tensors)

    def copy(self) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.copy() for k, v in self.tensors.items()})

    def astype(self, dtype) -> "DenoiserParams":
        return DenoiserParams(self.config, {k: v.astype(dtype) for k, v in self.tensors.items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))


def init_params(cfg: ModelConfig, seed: int = 0) -> DenoiserParams:
    """Scaled Gaussian init.

    Matrices use std ``1/sqrt(fan_in)``; the residual output projections
    (``attn.o``, ``mlp.fc2``) are further divided by ``sqrt(2 * blocks)``.
    Positional embeddings and the context vector use std 0.02.  Norm gains are
    ones, every offset and bias is zero.
    """
    rng = np.random.default_rng(seed)
    out = {}
    for name, shape in tensor_shapes(cfg).items():
        if name.endswith(".g"):
            arr = np.ones(shape)
        elif name.endswith(".b"):
            arr = np.zeros(shape)
        elif name.startswith("pos.") or name == "context":
            arr = 0.02 * rng.standard_normal(shape)
        else:
            std = 1.0 / np.sqrt(shape[1])
            if name.endswith("attn.o.w") or name.endswith("mlp.fc2.w"):
                std /= np.sqrt(2 * cfg.blocks)
            arr = std * rng.standard_normal(shape)
        out[name] = arr.astype(np.float32)
    return DenoiserParams(cfg, out)


# ---------------------------------------------------------------------------
# layout helpers


def patchify(x: np.ndarray, patch: int) -> np.ndarray:
    """``(..., H, W, 3)`` -> ``(..., (H/P)*(W/P), P*P*3)``, raster patch order."""
    *lead, H, W, C = x.shape
    h, w = H // patch, W // patch
    x = x.reshape(*lead, h, patch, w, patch, C)
    n = len(lead)
    x = x.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, h * w, patch * patch * C)


def unpatchify(tokens: np.ndarray, patch: int, height: int, width: int) -> np.ndarray:
    *lead, _, _ = tokens.shape
    h, w = height // patch, width // patch
    x = tokens.reshape(*lead, h, w, patch, patch, 3)
    n = len(lead)
    x = x.transpose(*range(n), n, n + 2, n + 1, n + 3, n + 4)
    return x.reshape(*lead, height, width, 3)


def timestep_embedding(t: np.ndarray, dim: int) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def _ln_fwd(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_bwd(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    dx = rstd * (
        dxhat
        - dxhat.mean(-1, keepdims=True)
        - xhat * (dxhat * xhat).mean(-1, keepdims=True)
    )
    dg = (dy * xhat).reshape(-1, dy.shape[-1]).sum(0)
    db = dy.reshape(-1, dy.shape[-1]).sum(0)
    return dx, dg, db


def _gelu(u):
    """tanh-approximated GELU; also returns the tanh term for the backward pass."""
    u2 = u * u
    th = np.tanh(u * (_GELU_C + _GELU_C * 0.044715 * u2))
    return 0.5 * u * (1.0 + th), th


def _gelu_grad(u, th):
    u2 = u * u
    return 0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * (_GELU_C + 3 * _GELU_C * 0.044715 * u2)


def _split_heads(x, heads):
    B, N, d = x.shape
    return x.reshape(B, N, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    B, H, N, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, H * dh)


def _flat(x):
    return x.reshape(-1, x.shape[-1])


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class ForwardCache:
    batch: int
    weights: dict
    patches: np.ndarray
    cond_patches: np.ndarray
    temb_in: np.ndarray
    blocks: list
    final: tuple
    z: np.ndarray
    single: bool


def _weights(params: DenoiserParams, lora) -> dict[str, np.ndarray]:
    w = dict(params.tensors)
    if lora is not None:
        w.update(lora.effective_weights(params.tensors))
    return w


def _prepare(params, v_t, t, cond):
    cfg = params.config
    dtype = params.tensors["patch.w"].dtype
    v = np.asarray(v_t, dtype=dtype)
    single = v.ndim == 4
    if single:
        v = v[None]
    B = v.shape[0]
    expected = (cfg.num_frames, cfg.height, cfg.width, 3)
    if v.shape[1:] != expected:
        raise ValueError(f"video shape {v.shape[1:]} does not match model {expected}")
    x0 = np.asarray(cond.first_frame, dtype=dtype)
    if x0.ndim == 3:
        x0 = np.broadcast_to(x0, (B,) + x0.shape)
    if x0.shape != (B, cfg.height, cfg.width, 3):
        raise ValueError(f"conditioning frame shape {x0.shape} does not match batch {B}")
    t = np.broadcast_to(np.asarray(t).reshape(-1), (B,))
    return v, x0, t, single, dtype


def forward(params: DenoiserParams, v_t, t, cond: Conditioning, lora=None, keep_cache=False):
    """Predict the noise in ``v_t``; returns the prediction (and cache if asked)."""
    cfg = params.config
    v, x0, t, single, dtype = _prepare(params, v_t, t, cond)
    B, F, Np, P = v.shape[0], cfg.num_frames, cfg.patches_per_frame, cfg.patch
    W = _weights(params, lora)
    heads = cfg.heads
    scale = 1.0 / np.sqrt(cfg.dim // heads)

    patches = patchify(v, P).reshape(B, F * Np, -1)
    cond_patches = patchify(x0, P)
    temb_in = timestep_embedding(t, cfg.dim).astype(dtype)

    ctx_tok = W["context"] if cond.context_token is None else np.asarray(cond.context_token, dtype)
    cond_tok = cond_patches @ W["cond.w"].T + W["cond.b"]  # (B, Np, d)
    temb = temb_in @ W["time.w"].T + W["time.b"]  # (B, d)
    pos = (W["pos.frame"][:, None, :] + W["pos.patch"][None, :, :]).reshape(F * Np, -1)
    x = patches @ W["patch.w"].T + W["patch.b"] + pos
    x = x.reshape(B, F, Np, -1) + cond_tok[:, None]
    x = x.reshape(B, F * Np, -1) + temb[:, None, :] + ctx_tok

    caches = []
    for i in range(cfg.blocks):
        p = f"blocks.{i}."
        a, ln1 = _ln_fwd(x, W[p + "ln1.g"], W[p + "ln1.b"])
        q = _split_heads(a @ W[p + "attn.q.w"].T + W[p + "attn.q.b"], heads)
        k = _split_heads(a @ W[p + "attn.k.w"].T + W[p + "attn.k.b"], heads)
        vv = _split_heads(a @ W[p + "attn.v.w"].T + W[p + "attn.v.b"], heads)
        s = (q @ k.transpose(0, 1, 3, 2)) * scale
        s -= s.max(-1, keepdims=True)
        pr = np.exp(s)
        pr /= pr.sum(-1, keepdims=True)
        ctx = _merge_heads(pr @ vv)
        h = x + ctx @ W[p + "attn.o.w"].T + W[p + "attn.o.b"]
        m, ln2 = _ln_fwd(h, W[p + "ln2.g"], W[p + "ln2.b"])
        u = m @ W[p + "mlp.fc1.w"].T + W[p + "mlp.fc1.b"]
        g, th = _gelu(u)
        x_next = h + g @ W[p + "mlp.fc2.w"].T + W[p + "mlp.fc2.b"]
        if keep_cache:
            caches.append((a, ln1, q, k, vv, pr, ctx, m, ln2, u, g, th))
        x = x_next

    z, lnf = _ln_fwd(x, W["final_ln.g"], W["final_ln.b"])
    out_tok = z @ W["head.w"].T + W["head.b"]
    out = unpatchify(out_tok.reshape(B, F, Np, -1), P, cfg.height, cfg.width)
    if single:
        out = out[0]
    if not keep_cache:
        return out
    cache = ForwardCache(B, W, patches, cond_patches, temb_in, caches, lnf, z, single)
    return out, cache


def backward(params: DenoiserParams, cache: ForwardCache | None, d_out, lora=None, trainable="base"):
    """Reverse-mode gradients of a scalar loss given ``d_out = dL/d(prediction)``.

    ``trainable`` is ``"base"`` (every base tensor), ``"lora"`` (adapter A/B
    only) or an explicit set of base tensor names.  Returned keys are base
    tensor names, or ``"<layer>.A"`` / ``"<layer>.B"`` for adapters.
    """
    if cache is None:
        raise RuntimeError("backward called without a cached forward pass")
    cfg = params.config
    B, F, Np, P = cache.batch, cfg.num_frames, cfg.patches_per_frame, cfg.patch
    W = cache.weights
    heads = cfg.heads
    scale = 1.0 / np.sqrt(cfg.dim // heads)

    if trainable == "base":
        base_train = set(params.tensors)
    elif trainable == "lora":
        base_train = set()
    else:
        base_train = set(trainable)
    adapted = set(lora.layers) if lora is not None else set()
    if trainable == "lora" and lora is None:
        raise ValueError("trainable='lora' requires an adapter")

    def want(name):
        return name in base_train or name in adapted

    grads: dict[str, np.ndarray] = {}

    def acc_linear(wname, bname, dy, x_in):
        if want(wname):
            grads[wname] = _flat(dy).T @ _flat(x_in)
        if bname in base_train:
            grads[bname] = _flat(dy).sum(0)

    d_out = np.asarray(d_out, dtype=W["patch.w"].dtype)
    if cache.single:
        d_out = d_out[None]
    d_tok = patchify(d_out, P).reshape(B, F * Np, -1)

    acc_linear("head.w", "head.b", d_tok, cache.z)
    dz = d_tok @ W["head.w"]
    dx, dg, db = _ln_bwd(dz, W["final_ln.g"], cache.final)
    if "final_ln.g" in base_train:
        grads["final_ln.g"], grads["final_ln.b"] = dg, db

    for i in reversed(range(cfg.blocks)):
        p = f"blocks.{i}."
        a, ln1, q, k, vv, pr, ctx, m, ln2, u, g, th = cache.blocks[i]
        # mlp branch
        acc_linear(p + "mlp.fc2.w", p + "mlp.fc2.b", dx, g)
        du = (dx @ W[p + "mlp.fc2.w"]) * _gelu_grad(u, th)
        acc_linear(p + "mlp.fc1.w", p + "mlp.fc1.b", du, m)
        dm = du @ W[p + "mlp.fc1.w"]
        dh_ln, dg, db = _ln_bwd(dm, W[p + "ln2.g"], ln2)
        if p + "ln2.g" in base_train:
            grads[p + "ln2.g"], grads[p + "ln2.b"] = dg, db
        dh = dx + dh_ln
        # attention branch
        acc_linear(p + "attn.o.w", p + "attn.o.b", dh, ctx)
        dctx = _split_heads(dh @ W[p + "attn.o.w"], heads)
        dpr = dctx @ vv.transpose(0, 1, 3, 2)
        dvv = pr.transpose(0, 1, 3, 2) @ dctx
        ds = pr * (dpr - (dpr * pr).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 1, 3, 2) @ q
        da = np.zeros_like(a)
        for proj, dproj in (("q", dq), ("k", dk), ("v", dvv)):
            dproj = _merge_heads(dproj)
            acc_linear(p + f"attn.{proj}.w", p + f"attn.{proj}.b", dproj, a)
            da += dproj @ W[p + f"attn.{proj}.w"]
        dx_ln, dg, db = _ln_bwd(da, W[p + "ln1.g"], ln1)
        if p + "ln1.g" in base_train:
            grads[p + "ln1.g"], grads[p + "ln1.b"] = dg, db
        dx = dh + dx_ln

    # embeddings: x = patch_embed + pos + cond (per patch) + temb + context
    acc_linear("patch.w", "patch.b", dx, cache.patches)
    dx4 = dx.reshape(B, F, Np, -1)
    if "pos.frame" in base_train:
        grads["pos.frame"] = dx4.sum(axis=(0, 2))
    if "pos.patch" in base_train:
        grads["pos.patch"] = dx4.sum(axis=(0, 1))
    if "cond.w" in base_train or "cond.b" in base_train:
        dcond = dx4.sum(axis=1)
        acc_linear("cond.w", "cond.b", dcond, cache.cond_patches)
    if "time.w" in base_train or "time.b" in base_train:
        acc_linear("time.w", "time.b", dx.sum(axis=1), cache.temb_in)
    if "context" in base_train:
        grads["context"] = _flat(dx).sum(0)

    if lora is not None:
        lora_grads = lora.chain_grads({n: grads[n] for n in adapted})
        for n in adapted:
            if n not in base_train:
                del grads[n]
        if trainable == "lora":
            return lora_grads
        grads.update(lora_grads)
    return grads
