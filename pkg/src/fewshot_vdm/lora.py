"""Low-rank adapters over selected linear layers of the denoiser."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .denoiser import DenoiserParams, ModelConfig, hash_tensors


class TargetSpec(str, enum.Enum):
    QK = "QK"
    VO = "VO"
    QKVO = "QKVO"
    ALL_LINEAR = "AllLinear"

    @classmethod
    def parse(cls, value) -> "TargetSpec":
        if isinstance(value, cls):
            return value
        for member in cls:
            if member.value.lower() == str(value).lower():
                return member
        raise ValueError(f"unknown LoRA target spec {value!r}; expected one of {[m.value for m in cls]}")


def target_layers(cfg: ModelConfig, spec) -> list[str]:
    """Resolve a target spec to weight names.

    ``AllLinear`` covers every per-block matrix (Q, K, V, O, both MLP layers)
    plus the output head; patch, conditioning and timestep embeddings are
    never adapted.
    """
    spec = TargetSpec.parse(spec)
    projs = {
        TargetSpec.QK: ["attn.q", "attn.k"],
        TargetSpec.VO: ["attn.v", "attn.o"],
        TargetSpec.QKVO: ["attn.q", "attn.k", "attn.v", "attn.o"],
        TargetSpec.ALL_LINEAR: ["attn.q", "attn.k", "attn.v", "attn.o", "mlp.fc1", "mlp.fc2"],
    }[spec]
    names = [f"blocks.{i}.{p}.w" for i in range(cfg.blocks) for p in projs]
    if spec is TargetSpec.ALL_LINEAR:
        names.append("head.w")
    return names


def rank_cap(shape) -> int:
    return min(shape) // 2


@dataclass
class LoraAdapter:
    rank: int
    alpha: float
    targets: TargetSpec
    base_config_hash: str
    A: dict[str, np.ndarray] = field(default_factory=dict)
    B: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def layers(self) -> list[str]:
        return list(self.A)

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    def tensors(self) -> dict[str, np.ndarray]:
        out = {f"{n}.A": a for n, a in self.A.items()}
        out.update({f"{n}.B": b for n, b in self.B.items()})
        return out

    def set_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for key, val in tensors.items():
            layer, which = key.rsplit(".", 1)
            getattr(self, which)[layer] = val

    def hash(self) -> str:
        return hash_tensors(self.tensors())

    def num_parameters(self) -> int:
        return int(sum(a.size + self.B[n].size for n, a in self.A.items()))

    def copy(self) -> "LoraAdapter":
        return LoraAdapter(
            self.rank, self.alpha, self.targets, self.base_config_hash,
            {k: v.copy() for k, v in self.A.items()},
            {k: v.copy() for k, v in self.B.items()},
        )

    def astype(self, dtype) -> "LoraAdapter":
        out = self.copy()
        out.A = {k: v.astype(dtype) for k, v in out.A.items()}
        out.B = {k: v.astype(dtype) for k, v in out.B.items()}
        return out

    def effective_weights(self, base: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        return {n: effective_weight(base[n], self.A[n], self.B[n], self.scale) for n in self.A}

    def chain_grads(self, d_eff: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Map gradients w.r.t. effective weights onto A and B."""
        out = {}
        s = self.scale
        for n, g in d_eff.items():
            out[f"{n}.A"] = s * (self.B[n].T @ g)
            out[f"{n}.B"] = s * (g @ self.A[n].T)
        return out


def effective_weight(base: np.ndarray, A: np.ndarray, B: np.ndarray, scale: float) -> np.ndarray:
    """``base + scale * B @ A`` with ``B: (d, r)``, ``A: (r, k)``."""
    if B.shape[0] != base.shape[0] or A.shape[1] != base.shape[1] or B.shape[1] != A.shape[0]:
        raise ValueError(
            f"adapter shapes B{B.shape} A{A.shape} do not fit base {base.shape}"
        )
    return base + (scale * (B @ A)).astype(base.dtype)


def attach(params: DenoiserParams, spec="QKVO", rank: int = 8, alpha: float = 32.0, seed: int = 0) -> LoraAdapter:
    """Create a zero-delta adapter: ``A ~ N(0, 1/r)``, ``B = 0``."""
    spec = TargetSpec.parse(spec)
    if rank < 1:
        raise ValueError(f"rank must be positive, got {rank}")
    names = target_layers(params.config, spec)
    for n in names:
        if n not in params.tensors:
            raise KeyError(f"target layer {n} missing from parameters")
        cap = rank_cap(params.tensors[n].shape)
        if rank > cap:
            raise ValueError(
                f"rank {rank} exceeds cap {cap} for layer {n} with shape {params.tensors[n].shape}"
            )
    rng = np.random.default_rng(seed)
    dtype = params.tensors[names[0]].dtype
    adapter = LoraAdapter(rank, float(alpha), spec, params.config.hash())
    for n in names:
        d, k = params.tensors[n].shape
        adapter.A[n] = (rng.standard_normal((rank, k)) / np.sqrt(rank)).astype(dtype)
        adapter.B[n] = np.zeros((d, rank), dtype=dtype)
    return adapter


def max_rank(params: DenoiserParams, spec) -> int:
    return min(rank_cap(params.tensors[n].shape) for n in target_layers(params.config, spec))


def merge(params: DenoiserParams, adapter: LoraAdapter) -> DenoiserParams:
    """Fold the adapter deltas into a new parameter store (inputs untouched)."""
    if adapter.base_config_hash != params.config.hash():
        raise ValueError("adapter was attached to a different model config")
    merged = params.copy()
    merged.tensors.update(adapter.effective_weights(params.tensors))
    return merged
