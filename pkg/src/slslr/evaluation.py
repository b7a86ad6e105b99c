"""Downstream protocols: linear probe, semi-supervised fine-tuning, transfer,
inertia, top-k accuracy and a 2-D PCA export of the representation."""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import stats
from torch import nn

from .data import Dataset
from .model import Checkpoint, SLFPN


@dataclass
class EvalConfig:
    probe_epochs: int = 100
    probe_lr: float = 0.01
    probe_batch_size: int = 64
    probe_on: str = "representation"
    finetune_epochs: int = 1000
    warmup_steps: int = 600
    finetune_lr: float = 0.01
    finetune_batch_size: int = 64
    label_fraction: float = 0.3
    repeats: int = 8
    momentum: float = 0.9
    seed: int = 0

    def check(self) -> None:
        if not 0 < self.label_fraction <= 1:
            raise ValueError(f"label_fraction must lie in (0, 1], got {self.label_fraction}")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.probe_on not in ("representation", "projection"):
            raise ValueError(f"probe_on must be 'representation' or 'projection', got {self.probe_on!r}")


@dataclass
class EvalReport:
    protocol: str
    top1_mean: float
    top1_ci95: float
    top5_mean: float | None
    top5_ci95: float | None
    inertia: float
    top1_runs: list[float]
    top5_runs: list[float] | None
    source: str | None = None
    target: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# ------------------------------------------------------------------- metrics


def top_k_accuracy(scores, labels, k: int) -> float:
    """Share of rows whose label is among the ``k`` best scores (ties go to lower class index)."""
    scores = np.asarray(scores)
    labels = np.asarray(labels)
    m, c = scores.shape
    if not 1 <= k <= c:
        raise ValueError(f"k must lie in [1, {c}], got {k}")
    if m == 0:
        return 0.0
    ranked = np.argsort(-scores, axis=1, kind="stable")[:, :k]
    return float((ranked == labels[:, None]).any(axis=1).mean())


def intra_class_inertia(embeddings, labels) -> float:
    """Sum over classes of squared distances to the class centroid."""
    e = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if e.ndim != 2 or e.shape[0] != labels.shape[0]:
        raise ValueError(f"{labels.shape[0]} labels for {e.shape[0]} embeddings")
    if e.shape[0] == 0:
        raise ValueError("need at least one embedding")
    total = 0.0
    for c in np.unique(labels):
        members = e[labels == c]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def mean_ci95(values) -> tuple[float, float]:
    """Mean and Student-t 95% half-width."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), 0.0
    half = stats.t.ppf(0.975, v.size - 1) * v.std(ddof=1) / math.sqrt(v.size)
    return float(v.mean()), float(half)


def warmup_linear_lr(step: int, warmup_steps: int, total_steps: int, peak: float) -> float:
    """Linear ramp 0 -> peak over ``warmup_steps``, then linear decay to 0 at ``total_steps``."""
    if step < warmup_steps:
        return peak * step / warmup_steps
    if step >= total_steps:
        return 0.0
    return peak * (total_steps - step) / (total_steps - warmup_steps)


def stratified_subsample(labels, fraction: float, seed: int, class_count: int | None = None) -> np.ndarray:
    """Sorted indices keeping ``round(fraction * class size)`` items of every class."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    classes = range(class_count) if class_count is not None else np.unique(labels)
    keep = []
    for c in classes:
        idx = np.flatnonzero(labels == c)
        n = int(round(fraction * idx.size))
        if n == 0:
            raise ValueError(f"class {c} has no samples at label_fraction={fraction} ({idx.size} available)")
        keep.extend(rng.choice(idx, size=n, replace=False).tolist())
    return np.sort(np.array(keep, dtype=np.int64))


# ---------------------------------------------------------------- features


@torch.no_grad()
def extract(model: SLFPN, dataset: Dataset, probe_on: str = "representation", batch_size: int = 256) -> np.ndarray:
    model.eval()
    x = dataset.stacked(model.encoder_cfg.max_len)
    dtype = next(model.parameters()).dtype
    out = []
    for i in range(0, len(x), batch_size):
        xb = torch.from_numpy(x[i : i + batch_size]).to(dtype)
        y = model.encode(xb)
        out.append((y if probe_on == "representation" else model.project(y)).double().numpy())
    if not out:
        return np.zeros((0, model.encoder_cfg.embed_dim))
    return np.concatenate(out)


def _check_pair(train: Dataset, test: Dataset):
    if not (train.is_labeled and test.is_labeled):
        raise ValueError("linear evaluation needs labeled train and test datasets")
    if train.class_count != test.class_count:
        raise ValueError(f"class count mismatch: train {train.class_count}, test {test.class_count}")


def _check_shape(ckpt: Checkpoint, ds: Dataset):
    need = ckpt.encoder.input_dim
    got = ds.landmark_count * ds.coord_dim
    if need != got:
        raise ValueError(
            f"dataset frames have {ds.landmark_count}x{ds.coord_dim}={got} values, checkpoint expects {need}"
        )


def train_probe(
    f_train: np.ndarray,
    y_train: np.ndarray,
    class_count: int,
    cfg: EvalConfig,
    seed,
) -> nn.Linear:
    """Softmax-regression layer fitted with minibatch SGD on fixed features."""
    gen = torch.Generator().manual_seed(int(np.random.SeedSequence(seed).generate_state(1)[0]))
    probe = nn.Linear(f_train.shape[1], class_count).double()
    nn.init.normal_(probe.weight, std=0.01, generator=gen)
    nn.init.zeros_(probe.bias)
    opt = torch.optim.SGD(probe.parameters(), lr=cfg.probe_lr, momentum=cfg.momentum)
    x = torch.from_numpy(f_train)
    t = torch.from_numpy(y_train)
    m = len(x)
    bs = min(cfg.probe_batch_size, m)
    for _ in range(cfg.probe_epochs):
        order = torch.randperm(m, generator=gen)
        for i in range(0, m, bs):
            idx = order[i : i + bs]
            loss = nn.functional.cross_entropy(probe(x[idx]), t[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
    return probe


def _standardize(train: np.ndarray, *others: np.ndarray):
    mu = train.mean(axis=0)
    sd = train.std(axis=0) + 1e-8
    return [(a - mu) / sd for a in (train, *others)]


def _report(protocol, top1, top5, inertia, class_count, **kw) -> EvalReport:
    t1, c1 = mean_ci95(top1)
    if class_count >= 5:
        t5, c5 = mean_ci95(top5)
        top5_runs = [float(v) for v in top5]
    else:
        t5 = c5 = top5_runs = None
    return EvalReport(protocol, t1, c1, t5, c5, inertia, [float(v) for v in top1], top5_runs, **kw)


def linear_eval(
    ckpt: Checkpoint,
    train: Dataset,
    test: Dataset,
    cfg: EvalConfig,
    labels_override: np.ndarray | None = None,
    protocol: str = "linear",
) -> EvalReport:
    """Fit a linear classifier on frozen features, ``cfg.repeats`` times.

    Features are standardized with train statistics before the probe; the
    encoder is never updated. ``labels_override`` replaces the train labels
    (used for chance-level checks).
    """
    cfg.check()
    _check_pair(train, test)
    _check_shape(ckpt, train)
    _check_shape(ckpt, test)
    model = ckpt.build(torch.float64)
    f_train = extract(model, train, cfg.probe_on)
    f_test = extract(model, test, cfg.probe_on)
    inertia = intra_class_inertia(extract(model, test), test.labels)
    y_train = train.labels if labels_override is None else np.asarray(labels_override, dtype=np.int64)
    y_test = test.labels
    s_train, s_test = _standardize(f_train, f_test)
    c = train.class_count
    top1, top5 = [], []
    for r in range(cfg.repeats):
        probe = train_probe(s_train, y_train, c, cfg, [cfg.seed, r])
        with torch.no_grad():
            scores = probe(torch.from_numpy(s_test)).numpy()
        top1.append(top_k_accuracy(scores, y_test, 1))
        top5.append(top_k_accuracy(scores, y_test, min(5, c)))
    return _report(protocol, top1, top5, inertia, c)


def transfer_eval(
    ckpt: Checkpoint,
    train_b: Dataset,
    test_b: Dataset,
    cfg: EvalConfig,
    source: str = "A",
    target: str = "B",
) -> EvalReport:
    report = linear_eval(ckpt, train_b, test_b, cfg, protocol="transfer")
    report.source, report.target = source, target
    return report


def finetune(ckpt: Checkpoint, train: Dataset, test: Dataset, cfg: EvalConfig) -> EvalReport:
    """Train encoder and a fresh linear head on a stratified label subset.

    Learning rate ramps linearly for ``warmup_steps`` optimizer steps and then
    decays linearly to zero at the last step.
    """
    cfg.check()
    _check_pair(train, test)
    _check_shape(ckpt, train)
    _check_shape(ckpt, test)
    c = train.class_count
    top1, top5 = [], []
    inertia = 0.0
    used = 0
    for r in range(cfg.repeats):
        seed = [cfg.seed, r]
        keep = stratified_subsample(train.labels, cfg.label_fraction, seed, c)
        sub = train.subset(keep)
        used = len(sub)
        model = ckpt.build()
        torch.manual_seed(int(np.random.SeedSequence(seed).generate_state(1)[0]))
        head = nn.Linear(model.encoder_cfg.embed_dim, c)
        nn.init.normal_(head.weight, std=0.01)
        nn.init.zeros_(head.bias)
        params = list(model.encoder.parameters()) + list(head.parameters())
        opt = torch.optim.SGD(params, lr=cfg.finetune_lr, momentum=cfg.momentum)

        x = torch.from_numpy(sub.stacked(model.encoder_cfg.max_len))
        t = torch.from_numpy(sub.labels)
        bs = min(cfg.finetune_batch_size, len(sub))
        steps_per_epoch = math.ceil(len(sub) / bs)
        total = cfg.finetune_epochs * steps_per_epoch
        if not cfg.warmup_steps < total:
            raise ValueError(f"warmup_steps ({cfg.warmup_steps}) must be < total steps ({total})")
        sched = torch.optim.lr_scheduler.LambdaLR(
            opt, lambda s: warmup_linear_lr(s, cfg.warmup_steps, total, 1.0)
        )
        order_rng = np.random.default_rng(seed)
        model.train()
        for _ in range(cfg.finetune_epochs):
            order = torch.from_numpy(order_rng.permutation(len(sub)))
            for i in range(0, len(sub), bs):
                idx = order[i : i + bs]
                loss = nn.functional.cross_entropy(head(model.encode(x[idx])), t[idx])
                opt.zero_grad()
                loss.backward()
                opt.step()
                sched.step()

        model.eval()
        with torch.no_grad():
            y = model.encode(torch.from_numpy(test.stacked(model.encoder_cfg.max_len)))
            scores = head(y).numpy()
        top1.append(top_k_accuracy(scores, test.labels, 1))
        top5.append(top_k_accuracy(scores, test.labels, min(5, c)))
        inertia = intra_class_inertia(y.double().numpy(), test.labels)
    return _report("finetune", top1, top5, inertia, c, extra={"labeled_samples": used})


# ------------------------------------------------------------------- export


def pca_2d(embeddings: np.ndarray) -> np.ndarray:
    """Project centered rows on the top two principal axes (exact SVD).

    Each axis is signed so its largest-magnitude loading is positive.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    if e.shape[0] < 2:
        raise ValueError("need at least two embeddings for PCA")
    centered = e - e.mean(axis=0)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    axes = vt[:2]
    if axes.shape[0] < 2:
        axes = np.vstack([axes, np.zeros_like(axes)])
    signs = np.sign(axes[np.arange(2), np.abs(axes).argmax(axis=1)])
    signs[signs == 0] = 1
    return centered @ (axes * signs[:, None]).T


def export_embeddings_2d(ckpt: Checkpoint, dataset: Dataset, probe_on: str = "representation"):
    if len(dataset) < 2:
        raise ValueError("need at least two samples to export a 2-D projection")
    _check_shape(ckpt, dataset)
    uv = pca_2d(extract(ckpt.build(torch.float64), dataset, probe_on))
    return [
        (s.sample_id, s.label, float(u), float(v)) for s, (u, v) in zip(dataset.samples, uv)
    ]


def write_embeddings_csv(rows, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", "label", "u", "v"])
        for sid, label, u, v in rows:
            w.writerow([sid, "" if label is None else label, repr(u), repr(v)])
