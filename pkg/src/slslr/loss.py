"""Three-branch MSE objective with a stop-gradient on the second view."""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass
class LossBreakdown:
    l1: torch.Tensor
    l2: torch.Tensor
    l3: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in ("l1", "l2", "l3", "total")}


def _check(*tensors):
    shape = tensors[0].shape
    for t in tensors[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch: {tuple(shape)} vs {tuple(t.shape)}")


def mse(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """``(1/n) * ||a - b||^2`` over the last axis; leading axes are kept."""
    if a.shape[-1:] != b.shape[-1:] or a.shape != b.shape:
        raise ValueError(f"length mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).pow(2).mean(dim=-1)


def stop_gradient(z: torch.Tensor) -> torch.Tensor:
    return z.detach()


def _prep(normalize, *zs):
    if not normalize:
        return zs
    return tuple(F.normalize(z, dim=-1) for z in zs)


def sl_fpn_loss(z, z1, z2, p, normalize: bool = False) -> LossBreakdown:
    """Batch mean of the three per-sample terms.

    l1 pulls the two views together, l2 pulls the original towards the second
    view, l3 pulls the predicted original towards the (constant) first view.
    """
    _check(z, z1, z2, p)
    z, z1, z2, p = _prep(normalize, z, z1, z2, p)
    l1 = mse(z1, z2).mean()
    l2 = mse(z, z2).mean()
    l3 = mse(p, stop_gradient(z1)).mean()
    return LossBreakdown(l1, l2, l3, l1 + l2 + l3)


def ablation_loss(
    z,
    z1,
    z2,
    p,
    *,
    no_predictor: bool = False,
    no_original: bool = False,
    permuted_branches: bool = False,
    predictor=None,
    normalize: bool = False,
) -> LossBreakdown:
    """Loss for the ablation variants.

    ``no_predictor`` uses the identity in place of the predictor. ``no_original``
    drops l2 and replaces l3 by ``mse(P(z2), sg(z1))``. ``permuted_branches``
    swaps the original and the second view. Variants that apply the predictor to
    ``z2`` need ``predictor``.
    """
    if no_original and permuted_branches:
        raise ValueError("no_original and permuted_branches are contradictory: there is no original to permute")
    if not (no_predictor or no_original or permuted_branches):
        return sl_fpn_loss(z, z1, z2, p, normalize=normalize)
    _check(z, z1, z2, p)

    def pred(t):
        if no_predictor:
            return t
        if predictor is None:
            raise ValueError("this ablation needs the predictor to be passed in")
        return predictor(t)

    if permuted_branches:
        z, z2 = z2, z
        p = pred(z)
    elif no_predictor:
        p = z

    if no_original:
        z1n, z2n, pn = _prep(normalize, z1, z2, pred(z2))
        l1 = mse(z1n, z2n).mean()
        l2 = torch.zeros((), dtype=z1.dtype, device=z1.device)
        l3 = mse(pn, stop_gradient(z1n)).mean()
        return LossBreakdown(l1, l2, l3, l1 + l2 + l3)

    z, z1, z2, p = _prep(normalize, z, z1, z2, p)
    l1 = mse(z1, z2).mean()
    l2 = mse(z, z2).mean()
    l3 = mse(p, stop_gradient(z1)).mean()
    return LossBreakdown(l1, l2, l3, l1 + l2 + l3)
