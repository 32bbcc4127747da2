"""Adversarial, cycle, and identity losses, plus their closed-form oracles.

The adversarial loss normalizes the discriminator's raw score map through
five activations in parallel (ReLU, ELU, SELU, LReLU, Sigmoid), forms
alpha * mean-L1 + beta * mean-L2 against a scalar target label for each,
and keeps the smallest.  Gradients flow only through the winning branch;
ties resolve to the earliest activation in the fixed order.

Target labels derive from the constraints (b - c) = 1 and (b - a) = 2,
giving b = 1 (real target for D), a = -1 (fake target for D), c = 0
(target for G on both its terms).

Two analytic results are implemented as test oracles rather than training
code: the optimal discriminator against a frozen generator,

    D*(y) = [(beta*b - alpha/2) p_y + (beta*a - alpha/2) p_hat]
            / [beta (p_y + p_hat)]

and the closed-form generator objective at that optimum for alpha=0,
beta=1, which reduces to a Pearson chi-square divergence.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .blocks import ACTIVATION_ORDER, ActivationKind, apply_activation
from .tensor import Tensor

_EXACT = 1e-12


@dataclass(frozen=True)
class TargetLabels:
    a: float = -1.0
    b: float = 1.0
    c: float = 0.0

    def __post_init__(self):
        if abs((self.b - self.c) - 1.0) > _EXACT:
            raise ValueError("labels must satisfy b - c = 1")
        if abs((self.b - self.a) - 2.0) > _EXACT:
            raise ValueError("labels must satisfy b - a = 2")


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.5
    beta: float = 0.5
    w_rec: float = 1.0
    w_id: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("alpha and beta must lie in [0, 1]")
        if abs(self.alpha + self.beta - 1.0) > _EXACT:
            raise ValueError("alpha + beta must equal 1")
        if self.w_rec < 0 or self.w_id < 0:
            raise ValueError("loss weights must be nonnegative")

    @staticmethod
    def from_alpha(alpha: float, w_rec: float = 1.0, w_id: float = 1.0) -> "LossWeights":
        return LossWeights(alpha=alpha, beta=1.0 - alpha, w_rec=w_rec, w_id=w_id)


@dataclass
class LossReport:
    """Per-epoch loss record; `full` is the weighted adversarial + cycle + identity sum."""

    epoch: int
    adv_g_xy: float
    adv_g_yx: float
    adv_d_x: float
    adv_d_y: float
    rec_total: float
    id_total: float
    full: float
    eta_g: float
    eta_d: float


def weighted_l1_l2(values: Tensor, target: float, w: LossWeights) -> Tensor:
    """alpha * mean|v - t| + beta * mean (v - t)^2, as a scalar graph node."""
    diff = values - target
    return w.alpha * diff.abs().mean() + w.beta * diff.square().mean()


def adaptive_norm_min(f: Tensor, target: float, w: LossWeights,
                      elementwise: bool = False, return_kind: bool = False):
    """Minimum over the five activation normalizations of the L1/L2 blend.

    By default the minimum is over the per-batch scalar losses (one number
    per activation).  With ``elementwise=True`` the minimum is instead
    taken per score-map element before averaging; this variant exists for
    ablation only.
    """
    if not np.all(np.isfinite(f.data)):
        raise ValueError("score map contains non-finite values")
    if elementwise:
        loss = _elementwise_min(f, target, w)
        return (loss, None) if return_kind else loss
    best = None
    best_kind = None
    for kind in ACTIVATION_ORDER:
        branch = weighted_l1_l2(apply_activation(kind, f), target, w)
        if best is None or branch.item() < best.item():
            best = branch
            best_kind = kind
    return (best, best_kind) if return_kind else best


def _elementwise_min(f: Tensor, target: float, w: LossWeights) -> Tensor:
    branches = []
    values = []
    for kind in ACTIVATION_ORDER:
        diff = apply_activation(kind, f) - target
        combined = w.alpha * diff.abs() + w.beta * diff.square()
        branches.append(combined)
        values.append(combined.data)
    winner = np.argmin(np.stack(values), axis=0)  # first minimum wins ties
    total = None
    for k, branch in enumerate(branches):
        mask = (winner == k).astype(f.data.dtype)
        if not mask.any():
            continue
        term = (branch * Tensor(mask)).sum()
        total = term if total is None else total + term
    return total * (1.0 / f.size)


def adversarial_loss_d(disc, real_batch: Tensor, fake_batch: Tensor,
                       labels: TargetLabels = TargetLabels(),
                       w: LossWeights = LossWeights()) -> Tensor:
    """Discriminator objective: push real scores to b and fake scores to a.

    The fake batch must be detached; the discriminator phase never
    backpropagates into the generator that produced it.
    """
    if fake_batch.requires_grad:
        raise ValueError("fake batch must be detached from the generator graph")
    real_term = adaptive_norm_min(disc.forward(real_batch), labels.b, w)
    fake_term = adaptive_norm_min(disc.forward(fake_batch), labels.a, w)
    return 0.5 * real_term + 0.5 * fake_term


def adversarial_loss_g(disc, real_batch: Tensor, converted_batch: Tensor,
                       labels: TargetLabels = TargetLabels(),
                       w: LossWeights = LossWeights()) -> Tensor:
    """Generator objective: both the real and converted scores target c."""
    real_term = adaptive_norm_min(disc.forward(real_batch), labels.c, w)
    conv_term = adaptive_norm_min(disc.forward(converted_batch), labels.c, w)
    return 0.5 * real_term + 0.5 * conv_term


def total_adversarial(adv_g_xy: float, adv_d_y: float,
                      adv_g_yx: float, adv_d_x: float) -> float:
    """Sum of both directions' generator and discriminator losses."""
    return (adv_g_xy + adv_d_y) + (adv_g_yx + adv_d_x)


def reconstruction_loss(g_xy, g_yx, x_batch: Tensor, y_batch: Tensor) -> Tensor:
    """L1 of both cycle round trips: y->x on G_xy(x), and x->y on G_yx(y)."""
    cycle_x = (g_yx.forward(g_xy.forward(x_batch)) - x_batch).abs().mean()
    cycle_y = (g_xy.forward(g_yx.forward(y_batch)) - y_batch).abs().mean()
    return cycle_x + cycle_y


def identity_loss(g_xy, g_yx, x_batch: Tensor, y_batch: Tensor) -> Tensor:
    """L1 penalty for disturbing features already in the output domain."""
    id_x = (g_yx.forward(x_batch) - x_batch).abs().mean()
    id_y = (g_xy.forward(y_batch) - y_batch).abs().mean()
    return id_x + id_y


def full_loss(adv_total: float, rec_total: float, id_total: float,
              w: LossWeights = LossWeights()) -> float:
    """Adversarial + weighted cycle + weighted identity; unit weights give the plain sum."""
    return adv_total + w.w_rec * rec_total + w.w_id * id_total


# -- closed-form oracles -------------------------------------------------------


@dataclass
class DiscreteDistPair:
    """A (p_y, p_hat_y) pair over a shared finite support, for oracle tests."""

    p_y: np.ndarray
    p_hat_y: np.ndarray
    normalized: bool = False

    def __post_init__(self):
        self.p_y = np.asarray(self.p_y, dtype=np.float64)
        self.p_hat_y = np.asarray(self.p_hat_y, dtype=np.float64)
        if self.p_y.shape != self.p_hat_y.shape or self.p_y.ndim != 1:
            raise ValueError("distributions must be 1-D vectors over a shared support")
        if (self.p_y < 0).any() or (self.p_hat_y < 0).any():
            raise ValueError("probabilities must be nonnegative")
        if self.normalized:
            for name, p in (("p_y", self.p_y), ("p_hat_y", self.p_hat_y)):
                if abs(p.sum() - 1.0) > 1e-9:
                    raise ValueError(f"{name} does not sum to 1")


def optimal_discriminator(dist: DiscreteDistPair,
                          labels: TargetLabels = TargetLabels(),
                          w: LossWeights = LossWeights()) -> np.ndarray:
    """Pointwise minimizer of the weighted L1/L2 discriminator loss.

    Zero-mass points are outside the evaluated support; they come back as
    NaN rather than an arbitrary value.
    """
    if w.beta <= 0:
        raise ValueError("L2 weight must be positive for the closed form")
    p, q = dist.p_y, dist.p_hat_y
    mass = p + q
    num = (w.beta * labels.b - 0.5 * w.alpha) * p + (w.beta * labels.a - 0.5 * w.alpha) * q
    out = np.full_like(p, np.nan)
    support = mass > 0
    out[support] = num[support] / (w.beta * mass[support])
    return out


def pearson_chi_square(p: np.ndarray, q: np.ndarray) -> float:
    """Sum of (Q - P)^2 / P over the support of P."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 1:
        raise ValueError("P and Q must be 1-D vectors over a shared support")
    if (p < 0).any() or (q < 0).any():
        raise ValueError("P and Q must be nonnegative")
    bad = (p == 0) & (q > 0)
    if bad.any():
        raise ValueError("P must be positive wherever Q is")
    support = p > 0
    diff = q[support] - p[support]
    return float((diff * diff / p[support]).sum())


def closed_form_generator_objective(dist: DiscreteDistPair) -> float:
    """Generator objective at the optimal discriminator (alpha=0, beta=1 algebra).

    Half the mass difference plus chi-square of (p_y + p_hat) against
    2 * p_hat; zero exactly when the distributions coincide and are
    normalized.
    """
    p, q = dist.p_y, dist.p_hat_y
    return 0.5 * float(p.sum() - q.sum()) + pearson_chi_square(p + q, 2.0 * q)
