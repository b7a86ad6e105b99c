"""Transformer encoder, projection head and predictor, plus checkpoint persistence."""

from __future__ import annotations

import dataclasses
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn


@dataclass
class EncoderConfig:
    blocks: int = 12
    heads: int = 8
    embed_dim: int = 512
    dropout: float = 0.1
    input_layernorm_count: int = 2
    max_len: int = 64
    positional_encoding: str = "learned"
    input_dim: int | None = None
    mlp_ratio: int = 4
    padding_mask: bool = False

    def check(self) -> None:
        if self.blocks < 1:
            raise ValueError("blocks must be >= 1")
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim {self.embed_dim} not divisible by heads {self.heads}")
        if self.input_layernorm_count not in (0, 1, 2):
            raise ValueError("input_layernorm_count must be 0, 1 or 2")
        if self.positional_encoding not in ("learned", "sinusoidal"):
            raise ValueError(f"unknown positional_encoding {self.positional_encoding!r}")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must lie in [0, 1)")


@dataclass
class HeadConfig:
    projection_hidden: int = 512
    projection_out: int = 128
    predictor_hidden: int = 128


def _init_dense(module: nn.Module) -> None:
    if isinstance(module, nn.Linear):
        nn.init.trunc_normal_(module.weight, std=0.02, a=-0.04, b=0.04)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.MultiheadAttention):
        nn.init.trunc_normal_(module.in_proj_weight, std=0.02, a=-0.04, b=0.04)
        nn.init.zeros_(module.in_proj_bias)


def sinusoidal_table(max_len: int, dim: int) -> torch.Tensor:
    pos = torch.arange(max_len, dtype=torch.float64)[:, None]
    i = torch.arange(0, dim, 2, dtype=torch.float64)
    angle = pos / torch.pow(10000.0, i / dim)
    table = torch.zeros(max_len, dim, dtype=torch.float64)
    table[:, 0::2] = torch.sin(angle)
    table[:, 1::2] = torch.cos(angle[:, : dim // 2])
    return table.float()


class SkeletonEncoder(nn.Module):
    """Per-frame linear embedding, input layer norms, positions, pre-norm blocks, mean-pool."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        cfg.check()
        if cfg.input_dim is None:
            raise ValueError("EncoderConfig.input_dim must be set (landmarks * coords)")
        self.cfg = cfg
        d = cfg.embed_dim
        self.embed = nn.Linear(cfg.input_dim, d)
        self.input_norms = nn.ModuleList(nn.LayerNorm(d) for _ in range(cfg.input_layernorm_count))
        if cfg.positional_encoding == "learned":
            self.pos = nn.Parameter(torch.zeros(cfg.max_len, d))
            nn.init.trunc_normal_(self.pos, std=0.02, a=-0.04, b=0.04)
        else:
            self.register_buffer("pos", sinusoidal_table(cfg.max_len, d), persistent=False)
        self.dropout = nn.Dropout(cfg.dropout)
        layer = nn.TransformerEncoderLayer(
            d,
            cfg.heads,
            dim_feedforward=cfg.mlp_ratio * d,
            dropout=cfg.dropout,
            activation="gelu",
            batch_first=True,
            norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(layer, cfg.blocks, enable_nested_tensor=False)
        self.apply(_init_dense)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() == 4:
            x = x.flatten(2)
        if x.dim() != 3 or x.shape[-1] != self.cfg.input_dim:
            raise ValueError(f"expected (B, N, {self.cfg.input_dim}) input, got {tuple(x.shape)}")
        n = x.shape[1]
        if n > self.cfg.max_len:
            raise ValueError(f"sequence length {n} exceeds max_len {self.cfg.max_len}")
        mask = None
        if self.cfg.padding_mask:
            mask = (x == 0).all(dim=-1)
            mask[:, 0] = False
        h = self.embed(x)
        for norm in self.input_norms:
            h = norm(h)
        h = self.dropout(h + self.pos[:n].to(h.dtype))
        h = self.blocks(h, src_key_padding_mask=mask)
        if mask is None:
            return h.mean(dim=1)
        keep = (~mask).to(h.dtype)[..., None]
        return (h * keep).sum(dim=1) / keep.sum(dim=1)


class ProjectionHead(nn.Module):
    def __init__(self, in_dim: int, hidden: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)
        self.apply(_init_dense)

    def pre_activation(self, y: torch.Tensor) -> torch.Tensor:
        return self.fc1(y)

    def forward(self, y):
        return self.fc2(torch.relu(self.fc1(y)))


class Predictor(ProjectionHead):
    pass


class SLFPN(nn.Module):
    """Shared encoder ``f`` and head ``h`` over three branches, predictor ``P`` on the original."""

    def __init__(self, encoder_cfg: EncoderConfig, head_cfg: HeadConfig | None = None):
        super().__init__()
        head_cfg = head_cfg or HeadConfig()
        self.encoder_cfg = encoder_cfg
        self.head_cfg = head_cfg
        self.encoder = SkeletonEncoder(encoder_cfg)
        self.projection = ProjectionHead(encoder_cfg.embed_dim, head_cfg.projection_hidden, head_cfg.projection_out)
        self.predictor = Predictor(head_cfg.projection_out, head_cfg.predictor_hidden, head_cfg.projection_out)

    def encode(self, x):
        y = self.encoder(x)
        if not torch.isfinite(y).all():
            raise FloatingPointError("non-finite encoder activations")
        return y

    def project(self, y):
        return self.projection(y)

    def predict(self, z):
        return self.predictor(z)

    def forward_three_branch(self, x, x1, x2):
        if not (x.shape == x1.shape == x2.shape):
            raise ValueError(f"branch shapes differ: {tuple(x.shape)}, {tuple(x1.shape)}, {tuple(x2.shape)}")
        b = x.shape[0]
        # one batched pass keeps the three branches on literally the same weights
        y = self.encode(torch.cat([x, x1, x2], dim=0))
        zz = self.project(y)
        z, z1, z2 = zz[:b], zz[b : 2 * b], zz[2 * b :]
        return z, z1, z2, self.predict(z)

    forward = forward_three_branch


def parameter_count(encoder_cfg: EncoderConfig, head_cfg: HeadConfig | None = None) -> int:
    """Closed-form count of trainable parameters."""
    head_cfg = head_cfg or HeadConfig()
    d, f = encoder_cfg.embed_dim, encoder_cfg.mlp_ratio * encoder_cfg.embed_dim
    n = encoder_cfg.input_dim * d + d
    n += 2 * d * encoder_cfg.input_layernorm_count
    if encoder_cfg.positional_encoding == "learned":
        n += encoder_cfg.max_len * d
    per_block = (3 * d * d + 3 * d) + (d * d + d) + (d * f + f) + (f * d + d) + 4 * d
    n += encoder_cfg.blocks * per_block
    ph, po, qh = head_cfg.projection_hidden, head_cfg.projection_out, head_cfg.predictor_hidden
    n += d * ph + ph + ph * po + po
    n += po * qh + qh + qh * po + po
    return n


# ------------------------------------------------------------------ checkpoints


@dataclass
class Checkpoint:
    encoder: EncoderConfig
    head: HeadConfig
    params: dict[str, np.ndarray]
    step: int = 0
    rng_state: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_model(cls, model: SLFPN, step: int = 0, rng_state: dict | None = None, meta: dict | None = None):
        params = {k: v.detach().cpu().numpy().astype(np.float32) for k, v in model.state_dict().items()}
        return cls(model.encoder_cfg, model.head_cfg, params, step, rng_state or {}, meta or {})

    def build(self, dtype=torch.float32) -> SLFPN:
        model = SLFPN(dataclasses.replace(self.encoder), dataclasses.replace(self.head))
        state = {k: torch.from_numpy(v.copy()) for k, v in self.params.items()}
        model.load_state_dict(state)
        return model.to(dtype)

    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (
            self.encoder == other.encoder
            and self.head == other.head
            and self.step == other.step
            and self.rng_state == other.rng_state
            and self.params.keys() == other.params.keys()
            and all(self.params[k].tobytes() == other.params[k].tobytes() for k in self.params)
        )


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    index = []
    for i, (name, arr) in enumerate(sorted(ckpt.params.items())):
        fname = f"{i:04d}_{name}.f32"
        data = np.ascontiguousarray(arr, dtype="<f4")
        if not np.isfinite(data).all():
            raise ValueError(f"parameter {name} has non-finite values")
        (path / fname).write_bytes(data.tobytes())
        index.append({"name": name, "file": fname, "shape": list(data.shape)})
    doc = {
        "version": 1,
        "encoder": dataclasses.asdict(ckpt.encoder),
        "head": dataclasses.asdict(ckpt.head),
        "step": ckpt.step,
        "rng_state": ckpt.rng_state,
        "meta": ckpt.meta,
        "parameters": index,
    }
    tmp = path / "checkpoint.json.tmp"
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    os.replace(tmp, path / "checkpoint.json")


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    doc_path = path / "checkpoint.json"
    if not doc_path.is_file():
        raise FileNotFoundError(f"no checkpoint.json in {path}")
    doc = json.loads(doc_path.read_text())
    params = {}
    for entry in doc["parameters"]:
        raw = (path / entry["file"]).read_bytes()
        shape = tuple(entry["shape"])
        if len(raw) != 4 * math.prod(shape):
            raise ValueError(f"{entry['file']}: size does not match shape {shape}")
        params[entry["name"]] = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32)
    return Checkpoint(
        encoder=EncoderConfig(**doc["encoder"]),
        head=HeadConfig(**doc["head"]),
        params=params,
        step=doc["step"],
        rng_state=doc["rng_state"],
        meta=doc.get("meta", {}),
    )
