"""AUC, probability-shift RMSE and the background-only diagnostic."""

from __future__ import annotations

import logging
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .forest import ForestModel, predict_proba

logger = logging.getLogger(__name__)


class UndefinedAUC(ValueError):
    pass


def binary_auc(scores, truth) -> float:
    """Mann-Whitney AUC: P(score_pos > score_neg) with ties counted 1/2."""
    s = np.asarray(scores, dtype=np.float64)
    t = np.asarray(truth, dtype=bool)
    if s.shape != t.shape or s.ndim != 1:
        raise ValueError("scores and truth must be 1-D and equally long")
    if np.isnan(s).any():
        raise ValueError("NaN score")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUC(f"AUC undefined with {n_pos} positives and {n_neg} negatives")
    ranks = rankdata(s)  # average ranks for ties
    u = ranks[t].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def macro_auc(probs: np.ndarray, truth: Sequence[str], classes: Sequence[str]):
    """One-vs-rest AUC per class column and their unweighted mean.

    Returns ``(per_class, macro, skipped)``.  Classes lacking positives or
    negatives in ``truth`` are skipped and listed in ``skipped``.
    """
    P = np.asarray(probs, dtype=np.float64)
    truth = [str(x) for x in truth]
    classes = list(classes)
    if P.shape != (len(truth), len(classes)):
        raise ValueError(f"probability matrix {P.shape} does not match "
                         f"{len(truth)} items x {len(classes)} classes")
    unknown = sorted(set(truth) - set(classes))
    if unknown:
        raise ValueError(f"truth labels without a probability column: {unknown}")
    truth_arr = np.asarray(truth, dtype=object)
    per_class, skipped = {}, []
    for j, c in enumerate(classes):
        pos = truth_arr == c
        if pos.all() or not pos.any():
            skipped.append(c)
            continue
        per_class[c] = binary_auc(P[:, j], pos)
    if not per_class:
        raise UndefinedAUC("no class has both positives and negatives")
    if skipped:
        logger.debug("macro AUC: skipped classes %s", skipped)
    macro = float(np.mean(list(per_class.values())))
    return per_class, macro, skipped


def rmse_shift(p_adv, p_ref) -> float:
    a = np.asarray(p_adv, dtype=np.float64)
    b = np.asarray(p_ref, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def background_only_diagnostic(model: ForestModel, features, owners: Sequence[str | None]):
    """Classify background-only clips and score them against their owners.

    An unconfounded model should land near chance (0.5 macro AUC).
    Returns ``(per_class, macro, skipped, probs)``.
    """
    if any(o is None or o == "" for o in owners):
        raise ValueError("background clips must carry owner labels")
    P = predict_proba(model, features)
    per_class, macro, skipped = macro_auc(P, owners, model.classes)
    return per_class, macro, skipped, P
