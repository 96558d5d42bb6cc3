"""Closed-form reward arithmetic: gains, intrinsic and composite rewards.

All functions are pure and operate on scalars or 1-D preference rows
(one row of the current shaped reward matrix per user).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class GainPair:
    sim: float  # cosine to the target user's preference row, in [-1, 1]
    div: float  # mean (1 - cosine) against already-selected rows, in [0, 2]


@dataclass(frozen=True)
class PenaltyCoeffs:
    lambda_u: float = 0.1
    lambda_e: float = 0.1
    lambda_s: float = 1.0
    lambda_d: float = 0.1

    def __post_init__(self):
        for name in ("lambda_u", "lambda_e", "lambda_s", "lambda_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine of a zero-norm vector is undefined")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def similarity_gain(p_u, p_cand) -> float:
    """Cosine between the target user's preference row and a candidate's."""
    return cosine(p_u, p_cand)


def diversity_gain(cand, selected) -> float:
    """Mean dissimilarity, 1 - cos, of a candidate against selected rows.

    Zero by definition when nothing has been selected yet.
    """
    if len(selected) == 0:
        return 0.0
    return float(np.mean([1.0 - cosine(row, cand) for row in selected]))


def intrinsic_reward(r_hat: float, g: GainPair, c: PenaltyCoeffs) -> float:
    """Selection-step reward: estimate plus weighted similarity/diversity gains."""
    return float(r_hat + c.lambda_s * g.sim + c.lambda_d * g.div)


def shape_reward(ref_rewards) -> float:
    """Aggregate reward estimate over the reference users: plain mean."""
    if len(ref_rewards) == 0:
        raise ValueError("cannot shape a reward from an empty reference set")
    return float(np.mean(np.asarray(ref_rewards, dtype=np.float64)))


def dynamic_uncertainty(r_new, r_prev, mean_sim, mean_div, eps=1e-6) -> float:
    """Reward-change magnitude scaled by how representative the selection was.

    The denominator is clamped at eps: anti-similar reference pools would
    otherwise flip the sign or divide by zero.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    return float(abs(r_new - r_prev) / max(mean_sim + mean_div, eps))


def recommender_reward(r_hat, p_u, p_e, c: PenaltyCoeffs) -> float:
    """Composite training reward: estimate minus uncertainty plus entropy term.

    Used with either the dynamic or the static uncertainty value.
    """
    return float(r_hat - c.lambda_u * p_u + c.lambda_e * p_e)
