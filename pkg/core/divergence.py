"""
KL divergences between transition laws
+inf is returned as a value when absolute continuity fails.
"""

import math

import numpy as np
from scipy.special import rel_entr

from core.errors import InvalidInputError


def kl_divergence(p, q) -> float:
    """KL(p || q) with 0 ln(0/q) = 0 and +inf when p_i > 0 = q_i"""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape:
        raise InvalidInputError(f"dimension mismatch: {p.shape} vs {q.shape}")
    value = float(np.sum(rel_entr(p, q)))
    if math.isinf(value):
        return math.inf
    return max(value, 0.0)


def absolutely_continuous(transition: np.ndarray) -> np.ndarray:
    """Mask ac[s, a, a_bar] = P(s, a_bar) << P(s, a)"""
    positive = np.asarray(transition) > 0
    return np.all(positive[:, None, :, :] <= positive[:, :, None, :], axis=-1)


def pairwise_kernel_kl(transition: np.ndarray) -> np.ndarray:
    """kl[s, a, a_bar] = KL(P(s, a_bar) || P(s, a)), +inf outside the absolutely continuous set"""
    transition = np.asarray(transition, dtype=float)
    kl = np.sum(rel_entr(transition[:, None, :, :], transition[:, :, None, :]), axis=-1)
    return np.where(np.isinf(kl), np.inf, np.maximum(kl, 0.0))


def row_kl(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """KL between matching rows of two stacked distributions, last axis summed"""
    kl = np.sum(rel_entr(np.asarray(p, dtype=float), np.asarray(q, dtype=float)), axis=-1)
    return np.where(np.isinf(kl), np.inf, np.maximum(kl, 0.0))
