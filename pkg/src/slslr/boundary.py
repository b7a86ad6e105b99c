"""Boundary-importance search: how many leading / trailing frames can be
shuffled between positive pairs before linear-probe accuracy stops improving."""

from __future__ import annotations

import copy
import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

from .data import Dataset, stratified_split
from .evaluation import EvalConfig, linear_eval
from .trainer import PretrainConfig, pretrain

STOP_RULES = ("paper_literal", "peak")


@dataclass
class BoundaryResult:
    ks_star: int
    ke_star: int
    trace_first: list[tuple[int, float]] = field(default_factory=list)
    trace_last: list[tuple[int, float]] = field(default_factory=list)
    stop_rule: str = "paper_literal"

    def to_json(self) -> str:
        doc = asdict(self)
        doc["trace_first"] = [list(t) for t in self.trace_first]
        doc["trace_last"] = [list(t) for t in self.trace_last]
        return json.dumps(doc, indent=1) + "\n"

    @staticmethod
    def write_trace(trace, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "accuracy"])
            for k, a in trace:
                w.writerow([k, repr(float(a))])


def default_boundaries(n: int) -> tuple[int, int]:
    """Shuffle the first third and the last quarter of an ``n``-frame sequence."""
    if n < 3:
        raise ValueError(f"need n >= 3, got {n}")
    return math.ceil(n / 3), math.ceil(n / 4)


def walk_k(evaluate: Callable[[int], float], n: int, stop_rule: str = "paper_literal"):
    """Greedy scan k = 1, 2, ... while accuracy strictly increases.

    Returns ``(k, trace)``. ``paper_literal`` returns the first k whose accuracy
    did not improve (or ``n`` if the scan ran out); ``peak`` returns the last k
    that did improve.
    """
    if stop_rule not in STOP_RULES:
        raise ValueError(f"stop_rule must be one of {STOP_RULES}, got {stop_rule!r}")
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    trace = []

    def ev(k):
        a = float(evaluate(k))
        trace.append((k, a))
        return a

    k = 1
    prev = ev(k)
    k = 2
    curr = ev(k)
    while k < n and curr > prev:
        prev = curr
        k += 1
        curr = ev(k)
    if stop_rule == "peak" and not curr > prev:
        return k - 1, trace
    return k, trace


def find_optimal_k(evaluate: Callable[[int], float], n: int, stop_rule: str = "paper_literal") -> int:
    return walk_k(evaluate, n, stop_rule)[0]


def sweep_k(evaluate: Callable[[int], float], n: int) -> list[tuple[int, float]]:
    """Evaluate every k in 1..n (the exhaustive counterpart of the greedy scan)."""
    return [(k, float(evaluate(k))) for k in range(1, n + 1)]


def _split(dataset: Dataset, test: Dataset | None, seed: int):
    if not dataset.is_labeled:
        raise ValueError("boundary search needs a labeled dataset")
    if test is not None:
        return dataset, test
    return stratified_split(dataset, 0.3, seed)


def segment_eval(
    k: int,
    dataset: Dataset,
    position: str,
    train_cfg: PretrainConfig,
    eval_cfg: EvalConfig,
    test: Dataset | None = None,
) -> float:
    """Pretrain with the first/last ``k`` frames shuffled between views; return probe top-1."""
    n = train_cfg.encoder.max_len
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}], got {k}")
    if position not in ("first", "last"):
        raise ValueError(f"position must be 'first' or 'last', got {position!r}")
    train, held_out = _split(dataset, test, train_cfg.seed)
    cfg = copy.deepcopy(train_cfg)
    cfg.augmentation.mode = "segment"
    cfg.augmentation.segment_k = k
    cfg.augmentation.segment_position = position
    ckpt, _ = pretrain(train, cfg)
    return linear_eval(ckpt, train, held_out, eval_cfg).top1_mean


def segment_evaluator(dataset, position, train_cfg, eval_cfg, test=None):
    train, held_out = _split(dataset, test, train_cfg.seed)
    return lambda k: segment_eval(k, train, position, train_cfg, eval_cfg, held_out)


def search_boundary(
    dataset: Dataset,
    train_cfg: PretrainConfig,
    eval_cfg: EvalConfig,
    stop_rule: str = "paper_literal",
    test: Dataset | None = None,
) -> BoundaryResult:
    n = train_cfg.encoder.max_len
    ks, trace_first = walk_k(segment_evaluator(dataset, "first", train_cfg, eval_cfg, test), n, stop_rule)
    ke, trace_last = walk_k(segment_evaluator(dataset, "last", train_cfg, eval_cfg, test), n, stop_rule)
    return BoundaryResult(ks, ke, trace_first, trace_last, stop_rule)
