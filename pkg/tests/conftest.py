"""Shared test helpers: a central finite-difference oracle for gradients."""

import numpy as np
from hypothesis import settings

from spivg import gradtape as gt

# identical example sequences on every run; the suite doubles as a
# reproducibility gate, so test inputs must be as deterministic as the code
settings.register_profile("deterministic", derandomize=True)
settings.load_profile("deterministic")


def central_fd(build, inputs, h=1e-4):
    """Finite-difference gradients of a scalar tape program.

    `build(tape, tensors)` must return a scalar Tensor and be deterministic
    (seed any RNG it uses internally). Returns one gradient array per input.
    """

    def value(arrays):
        tape = gt.Tape()
        tensors = [gt.Tensor(a) for a in arrays]
        return build(tape, tensors).item()

    grads = []
    for k, x in enumerate(inputs):
        g = np.zeros_like(np.asarray(x, dtype=np.float64))
        flat = g.reshape(-1)
        base = [np.array(a, dtype=np.float64) for a in inputs]
        for i in range(flat.size):
            xp = [a.copy() for a in base]
            xm = [a.copy() for a in base]
            xp[k].reshape(-1)[i] += h
            xm[k].reshape(-1)[i] -= h
            flat[i] = (value(xp) - value(xm)) / (2.0 * h)
        grads.append(g)
    return grads


def fd_check(build, inputs, h=1e-4, tol=1e-4):
    """Assert analytic gradients match central finite differences.

    Error metric per element: |ad - fd| / max(1, |ad|, |fd|).
    """
    tensors = [gt.Tensor(x, requires_grad=True) for x in inputs]
    tape = gt.Tape()
    loss = build(tape, tensors)
    tape.backward(loss)
    fd = central_fd(build, inputs, h=h)
    worst = 0.0
    for t, g_fd in zip(tensors, fd):
        denom = np.maximum(1.0, np.maximum(np.abs(t.grad), np.abs(g_fd)))
        err = np.max(np.abs(t.grad - g_fd) / denom) if t.grad.size else 0.0
        worst = max(worst, float(err))
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol}"
    return worst
