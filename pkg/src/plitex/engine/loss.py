"""Temperature-scaled contrastive objective over cosine similarities.

For a batch of 2N projections with positive index pairs Omega, the loss of an
ordered pair (i, j) contrasts their similarity against all 2N - 1 other batch
entries:

    l(i, j) = -log( exp(s(i,j)/tau) / sum_{k != i} exp(s(i,k)/tau) )

and the total is the mean of both orders over the batch,
L = 1/(2N) * sum_{(i,j) in Omega} [ l(i,j) + l(j,i) ].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ..errors import DataError
from .autodiff import Tensor

NORM_FLOOR = 1e-12


@dataclass
class LossReport:
    total: float
    pair_losses: np.ndarray          # ordered losses, both directions per pair
    pair_indices: List[Tuple[int, int]]
    gradient_norm: Optional[float] = None


def info_nce(z: Tensor | np.ndarray, pairs: Sequence[Tuple[int, int]],
             tau: float = 0.5) -> Tuple[Tensor, LossReport]:
    """Contrastive loss of a (2N, d) projection batch.

    Returns the scalar loss tensor (differentiable when ``z`` is) and a
    report with the per-direction pair losses.  Zero vectors are handled by
    flooring the norm at 1e-12.
    """
    if tau <= 0:
        raise DataError("temperature must be positive")
    if not isinstance(z, Tensor):
        z = Tensor(z)
    n2 = z.shape[0]
    pairs = list(pairs)
    if 2 * len(pairs) != n2:
        raise DataError("pair list must cover the batch (2 per pair)")
    norms = (z * z).sum(axis=1, keepdims=True).sqrt().clip_min(NORM_FLOOR)
    unit = z / norms
    sim = unit @ unit.T
    logits = sim * (1.0 / tau)
    rows = np.array([i for i, j in pairs] + [j for i, j in pairs])
    cols = np.array([j for i, j in pairs] + [i for i, j in pairs])
    # l(i,j) = log sum_{k != i} exp(logit_ik - logit_ij): shifting by the
    # positive logit keeps the positive term exactly 1, so the sole-negative
    # case (N = 1) yields log(1) = 0 exactly and large logits cannot overflow.
    row_logits = logits.take(rows)
    positive = logits.take_pairs(rows, cols)
    shifted = (row_logits - positive.reshape(-1, 1)).exp()
    mask = np.ones((rows.size, n2), dtype=z.data.dtype)
    mask[np.arange(rows.size), rows] = 0.0
    losses = (shifted * Tensor(mask)).sum(axis=1).log()
    total = losses.sum() * (1.0 / n2)
    report = LossReport(total=float(total.data),
                        pair_losses=losses.data.copy(),
                        pair_indices=pairs)
    return total, report
