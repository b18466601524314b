"""Arc-margin softmax and the multi-view multi-task objective."""
from __future__ import annotations

import math

import numpy as np

from avsv import autodiff as ad
from avsv.autodiff import Tensor
from avsv.errors import DimensionError
from avsv.models.config import ArcConfig

CLAMP = 1e-7


def cosine_logits(embeddings: Tensor, class_weights: Tensor) -> Tensor:
    """(N, K) matrix of cosines between L2-normalised rows."""
    if embeddings.ndim != 2 or class_weights.ndim != 2 or embeddings.shape[1] != class_weights.shape[1]:
        raise DimensionError(
            f"arc margin: embeddings {embeddings.shape} do not match class weights {class_weights.shape}"
        )
    e = ad.l2_normalize(embeddings)
    w = ad.l2_normalize(class_weights)
    return ad.matmul(e, ad.transpose(w, (1, 0)))


def arc_logits(cos: Tensor, labels, scale: float, margin: float) -> Tensor:
    """Scaled cosines with the target column replaced by ``s * cos(theta_y + m)``."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = cos.shape
    if labels.shape != (n,) or (n and (labels.min() < 0 or labels.max() >= k)):
        raise ValueError(f"labels must be {n} ints in [0, {k})")
    dt = cos.dtype.type
    s, cm, sm = dt(scale), dt(math.cos(margin)), dt(math.sin(margin))
    rows = np.arange(n)
    raw = cos.data[rows, labels]
    lo, hi = dt(-1 + CLAMP), dt(1 - CLAMP)
    c = np.clip(raw, lo, hi)
    sin = np.sqrt(1 - c * c)
    out = cos.data * s
    out[rows, labels] = s * (c * cm - sin * sm)
    inside = (raw > lo) & (raw < hi)

    def back(g):
        gc = g * s
        dtarget = cm + sm * c / sin
        gc[rows, labels] = g[rows, labels] * s * dtarget * inside
        return (gc,)

    return ad.record((cos,), out, back)


def arc_margin_loss(embeddings: Tensor, class_weights: Tensor, labels, arc: ArcConfig) -> Tensor:
    """Mean cross-entropy of additive-angular-margin logits."""
    cos = cosine_logits(embeddings, class_weights)
    if arc.margin == 0:
        logits = ad.scale(cos, arc.scale)
    else:
        logits = arc_logits(cos, labels, arc.scale, arc.margin)
    return ad.cross_entropy(logits, labels)


def multitask_loss(loss_a, loss_v, lambda_a: float = 1.0, lambda_v: float = 1.0):
    """Weighted sum ``lambda_a * loss_a + lambda_v * loss_v``."""
    if lambda_a < 0 or lambda_v < 0:
        raise ValueError("multi-task weights must be nonnegative")
    if not isinstance(loss_a, Tensor) and not isinstance(loss_v, Tensor):
        return lambda_a * float(loss_a) + lambda_v * float(loss_v)
    la = loss_a if isinstance(loss_a, Tensor) else Tensor(np.asarray(loss_a, dtype=loss_v.dtype))
    lv = loss_v if isinstance(loss_v, Tensor) else Tensor(np.asarray(loss_v, dtype=la.dtype))
    return ad.add(ad.scale(la, lambda_a), ad.scale(lv, lambda_v))
