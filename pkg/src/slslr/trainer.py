"""Self-supervised pretraining loop, collapse monitoring and the ablation suite."""

from __future__ import annotations

import copy
import csv
import dataclasses
import io
import logging
import time
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch

from .augment import AugmentationConfig, make_positive_pair
from .data import Dataset
from .loss import ablation_loss
from .model import Checkpoint, EncoderConfig, HeadConfig, SLFPN

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "l1", "l2", "l3", "total", "embedding_std")
ABLATION_VARIANTS = ("full", "without_p_and_LN", "without_p_with_LN", "without_o", "perm")


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class PretrainConfig:
    epochs: int = 200
    batch_size: int = 512
    learning_rate: float = 0.001
    momentum: float = 0.9
    weight_decay: float = 0.0
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    no_predictor: bool = False
    no_layernorm: bool = False
    no_original: bool = False
    permuted_branches: bool = False
    normalize_embeddings: bool = False
    seed: int = 0
    collapse_log_every: int = 1
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    head: HeadConfig = field(default_factory=HeadConfig)

    def check(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (embedding std needs two rows)")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.collapse_log_every < 1:
            raise ValueError("collapse_log_every must be >= 1")
        if self.no_original and self.permuted_branches:
            raise ValueError("no_original and permuted_branches cannot be combined")

    def encoder_for(self, dataset: Dataset) -> EncoderConfig:
        enc = dataclasses.replace(self.encoder)
        enc.input_dim = dataset.landmark_count * dataset.coord_dim
        if self.no_layernorm:
            enc.input_layernorm_count = 0
        return enc


@dataclass
class TrainLog:
    records: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.records], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOG_COLUMNS)
        for r in self.records:
            w.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "TrainLog":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls([{k: (int(r[k]) if k == "step" else float(r[k])) for k in LOG_COLUMNS} for r in rows])


def embedding_std(z) -> float:
    """Population std of each dimension across the batch, averaged over dimensions."""
    z = torch.as_tensor(z)
    if z.dim() != 2 or z.shape[0] < 2:
        raise ValueError(f"need a (B >= 2, n) batch, got shape {tuple(z.shape)}")
    return float(z.detach().std(dim=0, unbiased=False).mean())


def sample_seed(seed: int, epoch: int, sample_id: str) -> list[int]:
    return [seed, epoch, zlib.crc32(sample_id.encode())]


def _rng_state(np_rng: np.random.Generator) -> dict:
    return {
        "numpy": np_rng.bit_generator.state,
        "torch": torch.get_rng_state().numpy().tobytes().hex(),
    }


def build_model(dataset: Dataset, cfg: PretrainConfig, init: Checkpoint | None = None) -> SLFPN:
    if init is not None:
        return init.build()
    return SLFPN(cfg.encoder_for(dataset), dataclasses.replace(cfg.head))


def pretrain(
    dataset: Dataset,
    cfg: PretrainConfig,
    init: Checkpoint | None = None,
    dtype: torch.dtype = torch.float32,
) -> tuple[Checkpoint, TrainLog]:
    """Minimise the three-branch loss with SGD; deterministic given ``cfg.seed``."""
    cfg.check()
    if len(dataset) == 0:
        raise ValueError("cannot pretrain on an empty dataset")
    if len(dataset) < 2:
        raise ValueError("need at least two samples to form a batch")

    torch.manual_seed(cfg.seed)
    model = build_model(dataset, cfg, init).to(dtype)
    max_len = model.encoder_cfg.max_len
    x_all = dataset.stacked(max_len)
    ids = [s.sample_id for s in dataset.samples]
    m = len(dataset)
    batch = min(cfg.batch_size, m)
    steps_per_epoch = m // batch

    opt = torch.optim.SGD(
        model.parameters(), lr=cfg.learning_rate, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    order_rng = np.random.default_rng([cfg.seed, 0x5EED])
    mode = cfg.augmentation.mode
    trainlog = TrainLog()
    started = time.perf_counter()
    step = 0

    model.train()
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(m)
        for b in range(steps_per_epoch):
            idx = order[b * batch : (b + 1) * batch]
            v1, v2 = [], []
            for i in idx:
                r = np.random.default_rng(sample_seed(cfg.seed, epoch, ids[i]))
                a, c = make_positive_pair(x_all[i], mode, cfg.augmentation, r)
                v1.append(a)
                v2.append(c)
            x = torch.from_numpy(x_all[idx]).to(dtype)
            x1 = torch.from_numpy(np.stack(v1)).to(dtype)
            x2 = torch.from_numpy(np.stack(v2)).to(dtype)

            z, z1, z2, p = model.forward_three_branch(x, x1, x2)
            parts = ablation_loss(
                z,
                z1,
                z2,
                p,
                no_predictor=cfg.no_predictor,
                no_original=cfg.no_original,
                permuted_branches=cfg.permuted_branches,
                predictor=model.predictor,
                normalize=cfg.normalize_embeddings,
            )
            values = parts.as_floats()
            if not all(np.isfinite(v) for v in values.values()):
                raise TrainingDiverged(f"non-finite loss at step {step}: {values}")

            opt.zero_grad(set_to_none=True)
            parts.total.backward()
            opt.step()

            if step % cfg.collapse_log_every == 0:
                trainlog.records.append({"step": step, **values, "embedding_std": embedding_std(z)})
            step += 1
        log.debug("epoch %d done, step %d, loss %.5f", epoch, step, values["total"])

    trainlog.wall_clock = time.perf_counter() - started
    ckpt = Checkpoint.from_model(
        model,
        step=step,
        rng_state=_rng_state(order_rng),
        meta={"seed": cfg.seed, "augmentation": mode},
    )
    return ckpt, trainlog


def ablation_config(base: PretrainConfig, variant: str) -> PretrainConfig:
    cfg = copy.deepcopy(base)
    cfg.no_predictor = cfg.no_layernorm = cfg.no_original = cfg.permuted_branches = False
    if variant == "full":
        pass
    elif variant == "without_p_and_LN":
        cfg.no_predictor = cfg.no_layernorm = True
    elif variant == "without_p_with_LN":
        cfg.no_predictor = True
    elif variant == "without_o":
        cfg.no_original = True
    elif variant == "perm":
        cfg.permuted_branches = True
    else:
        raise ValueError(f"unknown ablation variant {variant!r}")
    return cfg


def run_ablation_suite(dataset: Dataset, base_cfg: PretrainConfig, variants=ABLATION_VARIANTS):
    out = {}
    for v in variants:
        log.info("ablation variant %s", v)
        out[v] = pretrain(dataset, ablation_config(base_cfg, v))
    return out
