"""Variational fusion of multi-channel score sequences.

Each channel's score sequence is treated as a noisy Gaussian observation of
the latent summary, with an isotropic per-channel variance predicted from the
mean absolute values of its m-order differences. The fused output is the
closed-form posterior mean under a Gaussian prior; `elbo_value` evaluates the
corresponding variational objective for a diagonal Gaussian and exists purely
as a test oracle for the posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeError, SpivgError
from .gradtape import Tape, Tensor


@dataclass
class ChannelObservation:
    k: np.ndarray
    sigma_sq: float

    def __post_init__(self):
        self.k = np.asarray(self.k, dtype=np.float64)
        if self.k.ndim != 1 or self.k.size == 0:
            raise ShapeError("channel_observation", [self.k.shape], "expected a sequence")
        if not self.sigma_sq > 0:
            raise SpivgError(f"channel variance must be positive, got {self.sigma_sq}")


@dataclass
class FusionParams:
    """Variance-model weights (w per order, bias per channel) plus the prior.

    sigma0_sq may be math.inf for a flat prior. sigmay_inv is the optional
    extra precision term in the posterior denominator; 0 recovers the
    standard conjugate-Gaussian posterior.
    """

    orders: tuple = (1, 2, 3)
    w: np.ndarray = None
    b: np.ndarray = None
    mu0: float = 0.15
    sigma0_sq: float = 10.0
    sigmay_inv: float = 0.0
    n_channels: int = 4

    def __post_init__(self):
        self.orders = tuple(int(m) for m in self.orders)
        if not self.orders or any(m < 1 for m in self.orders):
            raise SpivgError("fusion: orders must be a nonempty set of positive ints")
        if self.w is None:
            self.w = np.zeros(len(self.orders))
        if self.b is None:
            self.b = np.zeros(self.n_channels)
        self.w = np.asarray(self.w, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.w.shape != (len(self.orders),):
            raise ShapeError("fusion_params", [self.w.shape, (len(self.orders),)], "w per order")
        if not self.sigma0_sq > 0:
            raise SpivgError("fusion: sigma0_sq must be positive")
        if self.sigmay_inv < 0:
            raise SpivgError("fusion: sigmay_inv must be nonnegative")


def diff_abs_mean(k: np.ndarray, m: int) -> float:
    """Mean absolute m-step difference, averaged over the T-m valid terms."""
    k = np.asarray(k, dtype=np.float64)
    return diff_abs_mean_op(Tape(), Tensor(k), m).item()


def diff_abs_mean_op(tape: Tape, k: Tensor, m: int) -> Tensor:
    t = k.shape[0]
    if not 1 <= m < t:
        raise SpivgError(f"diff_abs_mean: order {m} outside [1, {t - 1}]")
    lead = tape.slice_rows(k, m, t)
    lag = tape.slice_rows(k, 0, t - m)
    return tape.mean(tape.abs(tape.sub(lead, lag)))


def variance_exponent_op(tape: Tape, w: Tensor, b: Tensor, channel: int, k: Tensor,
                         orders) -> Tensor:
    """b_i + sum_m w_m * delta_i^m as a scalar tensor."""
    deltas = [tape.reshape(diff_abs_mean_op(tape, k, m), (1,)) for m in orders]
    dvec = tape.concat(deltas) if len(deltas) > 1 else deltas[0]
    dot = tape.matmul(w, dvec)
    b_i = tape.reshape(tape.slice_rows(b, channel, channel + 1), ())
    return tape.add(dot, b_i)


def channel_variance(params: FusionParams, channel: int, k: np.ndarray) -> float:
    """sigma_i^2 = exp(b_i + sum_m w_m * delta_i^m); strictly positive."""
    tape = Tape()
    expo = variance_exponent_op(tape, Tensor(params.w), Tensor(params.b), channel,
                                Tensor(np.asarray(k, dtype=np.float64)), params.orders)
    return tape.exp(expo).item()


def posterior_from_precisions_op(tape: Tape, ks: list[Tensor], precisions: list[Tensor],
                                 mu0: float, sigma0_sq: float, sigmay_inv: float) -> Tensor:
    """Per-frame posterior mean given channel sequences and scalar precisions."""
    t = ks[0].shape[0]
    p0 = 0.0 if math.isinf(sigma0_sq) else 1.0 / sigma0_sq
    numer = tape.hadamard(precisions[0], ks[0])
    denom = precisions[0]
    for k, prec in zip(ks[1:], precisions[1:]):
        numer = tape.add(numer, tape.hadamard(prec, k))
        denom = tape.add(denom, prec)
    numer = tape.add(numer, Tensor(np.full(t, p0 * mu0)))
    denom = tape.add(denom, Tensor(np.asarray(p0 + sigmay_inv)))
    return tape.hadamard(numer, tape.reciprocal(denom))


def posterior_mean(params: FusionParams, observations: list[ChannelObservation]) -> np.ndarray:
    """Closed-form fused posterior mean over the frame axis."""
    if not observations:
        raise SpivgError("posterior_mean: need at least one observation")
    t = observations[0].k.shape[0]
    for obs in observations:
        if obs.k.shape[0] != t:
            raise ShapeError("posterior_mean", [o.k.shape for o in observations],
                             "sequence lengths differ")
    tape = Tape()
    ks = [Tensor(o.k) for o in observations]
    precs = [Tensor(np.asarray(1.0 / o.sigma_sq)) for o in observations]
    return posterior_from_precisions_op(
        tape, ks, precs, params.mu0, params.sigma0_sq, params.sigmay_inv
    ).numpy()


def fuse_channels(params: FusionParams, channels: list[np.ndarray]):
    """Estimate each channel's variance, then fuse. Returns (mu, observations)."""
    observations = [
        ChannelObservation(k, channel_variance(params, i, k))
        for i, k in enumerate(channels)
    ]
    return posterior_mean(params, observations), observations


def elbo_value(params: FusionParams, observations: list[ChannelObservation],
               q_mean: np.ndarray, q_var: float) -> float:
    """Variational objective for a diagonal Gaussian q (up to an additive
    constant). Test oracle only: its argmax over q_mean is the posterior mean.
    """
    if not q_var > 0:
        raise SpivgError("elbo_value: q_var must be positive")
    q_mean = np.asarray(q_mean, dtype=np.float64)
    p0 = 0.0 if math.isinf(params.sigma0_sq) else 1.0 / params.sigma0_sq
    precision = p0 + params.sigmay_inv + sum(1.0 / o.sigma_sq for o in observations)
    drive = p0 * params.mu0 + sum(o.k / o.sigma_sq for o in observations)
    quad = -0.5 * precision * (q_var + q_mean * q_mean) + drive * q_mean
    return float(np.sum(quad) + 0.5 * q_mean.size * math.log(q_var))
