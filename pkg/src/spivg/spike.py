"""Spiking keyframe extractor.

A stack of spiking neurons turns the frame-feature difference sequence into a
binary keyframe sequence. Two execution modes exist: the hard mode simulates
threshold/reset/refractory dynamics exactly (inference), and the relaxed mode
replaces the threshold with a piecewise-linear ramp whose derivative is the
rectangular surrogate window, with a soft reset and no refractory clamp, so
the whole stack is differentiable end to end (training).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpivgError
from .gradtape import Tape, Tensor

NEURON_KINDS = ("LIF", "IF", "QIF", "EIF")
_EXPARG_CLAMP = 50.0


@dataclass
class NeuronConfig:
    kind: str = "LIF"
    c_m: float = 1.0
    g_l: float = 0.2
    e_l: float = 0.0
    threshold: float = 1.0
    v_reset: float = 0.0
    refractory_steps: int = 1
    qif_a: float = 1.0
    qif_vc: float = 0.5
    eif_delta: float = 0.2
    eif_vt: float = 0.8

    def __post_init__(self):
        if self.kind not in NEURON_KINDS:
            raise SpivgError(f"unknown neuron kind '{self.kind}'")
        if self.c_m <= 0:
            raise SpivgError("neuron: c_m must be > 0")
        if self.g_l < 0:
            raise SpivgError("neuron: g_l must be >= 0")
        if self.refractory_steps < 0:
            raise SpivgError("neuron: refractory_steps must be >= 0")
        if not self.threshold > self.v_reset:
            raise SpivgError("neuron: threshold must exceed v_reset")
        if self.eif_delta <= 0:
            raise SpivgError("neuron: eif_delta must be > 0")


@dataclass
class MembraneTrace:
    """Per-layer simulation record. `v` holds the pre-reset potential at each
    step (so v[t] >= threshold exactly when spikes[t] == 1); `refractory` holds
    the counter as the step was entered."""

    v: np.ndarray
    spikes: np.ndarray
    refractory: np.ndarray


def _drive(cfg: NeuronConfig, v: float, z: float,
           c_m=None, g_l=None, e_l=None) -> float:
    """Right-hand side of the membrane recurrence (before dividing by c_m)."""
    g_l = cfg.g_l if g_l is None else g_l
    e_l = cfg.e_l if e_l is None else e_l
    if cfg.kind == "LIF":
        return -g_l * (v - e_l) + z
    if cfg.kind == "IF":
        return z
    if cfg.kind == "QIF":
        return cfg.qif_a * (v - e_l) * (v - cfg.qif_vc) + z
    # EIF: leak plus exponential spike-initiation term
    arg = min((v - cfg.eif_vt) / cfg.eif_delta, _EXPARG_CLAMP)
    return -g_l * (v - e_l) + g_l * cfg.eif_delta * np.exp(arg) + z


def _drive_partials(cfg: NeuronConfig, v: float, g_l: float, e_l: float):
    """(d drive/dv, d drive/dg_l, d drive/de_l) at (v, params)."""
    if cfg.kind == "LIF":
        return -g_l, -(v - e_l), g_l
    if cfg.kind == "IF":
        return 0.0, 0.0, 0.0
    if cfg.kind == "QIF":
        return cfg.qif_a * (2.0 * v - e_l - cfg.qif_vc), 0.0, -cfg.qif_a * (v - cfg.qif_vc)
    arg = (v - cfg.eif_vt) / cfg.eif_delta
    e = np.exp(min(arg, _EXPARG_CLAMP))
    inside = float(arg <= _EXPARG_CLAMP)
    return (-g_l + g_l * e * inside,
            -(v - e_l) + cfg.eif_delta * e,
            g_l)


def frame_diff(x: np.ndarray) -> np.ndarray:
    """Euclidean norm of consecutive frame-feature differences, length T-1."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise SpivgError("frame_diff: sequence too short (need at least 2 frames)")
    return frame_diff_op(Tape(), Tensor(x)).numpy()


def frame_diff_op(tape: Tape, x: Tensor) -> Tensor:
    if x.data.ndim != 2 or x.shape[0] < 2:
        raise SpivgError("frame_diff: sequence too short (need at least 2 frames)")
    t = x.shape[0]
    later = tape.slice_rows(x, 1, t)
    earlier = tape.slice_rows(x, 0, t - 1)
    return tape.l2_norm_rows(tape.sub(later, earlier))


def standardize_op(tape: Tape, seq: Tensor, eps: float = 1e-8) -> Tensor:
    """Z-score a sequence over the video; zero sequences stay zero."""
    mu = tape.mean(seq)
    centered = tape.sub(seq, mu)
    var = tape.mean(tape.hadamard(centered, centered))
    std = tape.sqrt(tape.add(var, Tensor(eps)))
    return tape.hadamard(centered, tape.reciprocal(std))


def neuron_step(cfg: NeuronConfig, v_prev: float, z_t: float, refractory: int):
    """One membrane update. Returns (v_t, spike, refractory').

    v_t is the recorded (pre-reset) potential. After a spike the caller must
    carry cfg.v_reset as the next membrane state; during refractory the
    membrane is held at cfg.v_reset and cannot spike.
    """
    if refractory > 0:
        return cfg.v_reset, 0, refractory - 1
    v_t = v_prev + _drive(cfg, v_prev, z_t) / cfg.c_m
    if v_t >= cfg.threshold:
        return v_t, 1, cfg.refractory_steps
    return v_t, 0, 0


def snn_forward(cfg: NeuronConfig, n_layers: int, delta: np.ndarray,
                gains: np.ndarray | None = None):
    """Hard-threshold stack. Layer 1 integrates the (gain-scaled) difference
    sequence; each deeper layer integrates the previous layer's spikes scaled
    by its gain. n_layers == 0 returns the input sequence unchanged.

    Returns (output sequence, list of MembraneTrace per layer).
    """
    if n_layers < 0:
        raise SpivgError("snn_forward: n_layers must be >= 0")
    seq = np.asarray(delta, dtype=np.float64)
    if n_layers == 0:
        return seq.copy(), []
    if gains is None:
        gains = np.ones(n_layers)
    gains = np.asarray(gains, dtype=np.float64)
    if gains.shape != (n_layers,):
        raise SpivgError(f"snn_forward: expected {n_layers} gains, got shape {gains.shape}")
    traces = []
    for layer in range(n_layers):
        gain = float(gains[layer])
        v_carry = cfg.e_l
        refr = 0
        n = seq.shape[0]
        vs = np.empty(n)
        ss = np.zeros(n)
        rs = np.empty(n, dtype=np.int64)
        for t in range(n):
            rs[t] = refr
            v_t, s, refr = neuron_step(cfg, v_carry, gain * float(seq[t]), refr)
            vs[t] = v_t
            ss[t] = s
            v_carry = cfg.v_reset if s else v_t
        traces.append(MembraneTrace(v=vs, spikes=ss, refractory=rs))
        seq = ss
    return seq.copy(), traces


def surrogate_spike_grad(v, threshold: float, width: float = 0.5):
    """Backward substitute for d(spike)/dv: rectangular window of area 1."""
    v = np.asarray(v, dtype=np.float64)
    out = np.where(np.abs(v - threshold) < width, 1.0 / (2.0 * width), 0.0)
    return float(out) if out.ndim == 0 else out


def _ramp(u: np.ndarray, threshold: float, width: float) -> np.ndarray:
    """Relaxed spike: hard-sigmoid ramp whose derivative is the surrogate."""
    return np.clip((u - threshold) / (2.0 * width) + 0.5, 0.0, 1.0)


def snn_forward_relaxed(tape: Tape, delta: Tensor, cfg: NeuronConfig, n_layers: int,
                        c_m: Tensor, g_l: Tensor, e_l: Tensor, gains: Tensor,
                        width: float = 0.5) -> Tensor:
    """Surrogate-relaxed stack as one fused tape op (BPTT backward).

    Relaxed dynamics per step: membrane update as in the hard mode, spike
    value s = ramp(v), then a soft reset v <- v*(1-s) + v_reset*s. Gradients
    flow to the difference sequence, c_m, g_l, e_l and the per-layer gains.
    """
    if n_layers < 0:
        raise SpivgError("snn_forward_relaxed: n_layers must be >= 0")
    if n_layers == 0:
        return delta
    if gains.shape != (n_layers,):
        raise SpivgError(f"snn_forward_relaxed: expected {n_layers} gains, got {gains.shape}")
    cm_v = float(c_m.data)
    gl_v = float(g_l.data)
    el_v = float(e_l.data)
    gain_v = gains.data
    thr, vr = cfg.threshold, cfg.v_reset
    n = delta.shape[0]

    z_layers = []   # input sequence of each layer
    v_in_layers = []  # membrane entering each step
    u_layers = []   # pre-reset potential
    s_layers = []   # relaxed spike values
    seq = delta.data
    for layer in range(n_layers):
        gain = float(gain_v[layer])
        v = el_v
        v_in = np.empty(n)
        u_arr = np.empty(n)
        s_arr = np.empty(n)
        for t in range(n):
            v_in[t] = v
            u = v + _drive(cfg, v, gain * float(seq[t]), g_l=gl_v, e_l=el_v) / cm_v
            s = float(_ramp(np.asarray(u), thr, width))
            v = u * (1.0 - s) + vr * s
            u_arr[t] = u
            s_arr[t] = s
        z_layers.append(seq)
        v_in_layers.append(v_in)
        u_layers.append(u_arr)
        s_layers.append(s_arr)
        seq = s_arr
    out = seq.copy()

    def backward(g_out):
        d_cm = 0.0
        d_gl = 0.0
        d_el = 0.0
        d_gain = np.zeros(n_layers)
        ds_above = np.array(g_out, dtype=np.float64, copy=True)
        for layer in range(n_layers - 1, -1, -1):
            gain = float(gain_v[layer])
            z = z_layers[layer]
            v_in = v_in_layers[layer]
            u_arr = u_layers[layer]
            s_arr = s_layers[layer]
            dz = np.zeros(n)
            dv_next = 0.0
            for t in range(n - 1, -1, -1):
                u = u_arr[t]
                s = s_arr[t]
                ds_t = ds_above[t] + dv_next * (vr - u)
                du = dv_next * (1.0 - s)
                if abs(u - thr) < width:
                    du += ds_t / (2.0 * width)
                dd_v, dd_gl, dd_el = _drive_partials(cfg, v_in[t], gl_v, el_v)
                drive_val = (u - v_in[t]) * cm_v
                d_cm += du * (-drive_val / (cm_v * cm_v))
                d_gl += du * dd_gl / cm_v
                d_el += du * dd_el / cm_v
                din = du / cm_v
                d_gain[layer] += din * float(z[t])
                dz[t] = din * gain
                dv_next = du * (1.0 + dd_v / cm_v)
            d_el += dv_next  # initial membrane state is e_l
            ds_above = dz
        return (ds_above, np.asarray(d_cm), np.asarray(d_gl), np.asarray(d_el), d_gain)

    return tape.record("snn_relaxed", (delta, c_m, g_l, e_l, gains), out, backward)
