"""Boosted learning-rate strategy: coupled per-epoch rate adjustment.

Epoch 1 only records the losses.  From epoch 2 on, the scheduler compares
the scaled generator loss movement against the discriminator's:

    lambda * |dG| > |dD|  ->  eta_g -= c1,  eta_d += c2
    lambda * |dG| < |dD|  ->  eta_g += c2,  eta_d -= c1
    equal                 ->  both unchanged

then clamps both rates into [floor, ceiling].  The asymmetry (small c1
decrement, larger c2 boost) deliberately speeds up whichever side is
currently the slower learner.  The raw rule is unbounded, so an unclamped
mode exists for fidelity experiments; long one-sided runs will walk a rate
out of useful range there.

The step is a pure function of (state, g_loss, d_loss); replaying a loss
log reproduces a rate trace bitwise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

DEFAULT_ETA_G = 2e-4
DEFAULT_ETA_D = 1e-4
DEFAULT_LAMBDA = 5e-2
DEFAULT_C1 = 1e-6
DEFAULT_C2 = 1e-5
DEFAULT_FLOOR = 1e-7
DEFAULT_CEILING = 1e-2


@dataclass(frozen=True)
class BlrsState:
    eta_g: float = DEFAULT_ETA_G
    eta_d: float = DEFAULT_ETA_D
    lambda_scale: float = DEFAULT_LAMBDA
    c1: float = DEFAULT_C1
    c2: float = DEFAULT_C2
    floor: float = DEFAULT_FLOOR
    ceiling: float = DEFAULT_CEILING
    clamp: bool = True
    epoch: int = 1
    prev_g_loss: float = None
    prev_d_loss: float = None

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if self.clamp and not (0 < self.floor <= self.ceiling):
            raise ValueError("guardrails must satisfy 0 < floor <= ceiling")
        if self.epoch < 1:
            raise ValueError("epoch counts from 1")
        if (self.prev_g_loss is None) != (self.prev_d_loss is None):
            raise ValueError("previous losses must be recorded together")
        if self.epoch >= 2 and self.prev_g_loss is None:
            raise ValueError("previous losses are absent only before epoch 2")


def blrs_step(state: BlrsState, g_loss: float, d_loss: float) -> BlrsState:
    """Consume one epoch's (g_loss, d_loss) and return the next state."""
    g_loss, d_loss = float(g_loss), float(d_loss)
    if not (math.isfinite(g_loss) and math.isfinite(d_loss)):
        raise ValueError("losses fed to the scheduler must be finite")
    eta_g, eta_d = state.eta_g, state.eta_d
    if state.epoch >= 2:
        delta_g = abs(g_loss - state.prev_g_loss)
        delta_d = abs(d_loss - state.prev_d_loss)
        scaled = state.lambda_scale * delta_g
        if scaled > delta_d:
            eta_g -= state.c1
            eta_d += state.c2
        elif scaled < delta_d:
            eta_g += state.c2
            eta_d -= state.c1
        if state.clamp:
            eta_g = min(max(eta_g, state.floor), state.ceiling)
            eta_d = min(max(eta_d, state.floor), state.ceiling)
    return replace(
        state,
        eta_g=eta_g,
        eta_d=eta_d,
        epoch=state.epoch + 1,
        prev_g_loss=g_loss,
        prev_d_loss=d_loss,
    )


def blrs_trace(initial: BlrsState, loss_sequence) -> list:
    """Fold blrs_step over (g_loss, d_loss) pairs.

    Entry i holds the rates after feeding epoch i's losses, i.e. the rates
    the trainer will use at epoch i+1.
    """
    pairs = list(loss_sequence)
    if not pairs:
        raise ValueError("loss sequence must be nonempty")
    state = initial
    trace = []
    for g_loss, d_loss in pairs:
        state = blrs_step(state, g_loss, d_loss)
        trace.append((state.eta_g, state.eta_d))
    return trace


def write_trace_csv(path, initial: BlrsState, loss_sequence) -> None:
    """Trace export: epoch, rates after that epoch's step, and the inputs."""
    pairs = list(loss_sequence)
    rows = blrs_trace(initial, pairs)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "eta_g", "eta_d", "g_loss", "d_loss"])
        epoch = initial.epoch
        for (eta_g, eta_d), (g_loss, d_loss) in zip(rows, pairs):
            writer.writerow([epoch, repr(eta_g), repr(eta_d), repr(float(g_loss)), repr(float(d_loss))])
            epoch += 1
