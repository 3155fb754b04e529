"""Shared test oracles: finite differences and tape-vs-eager runners."""

from __future__ import annotations

import numpy as np

import noiselab.gradkit as gk


def finite_diff_grads(f, arrays, h: float = 1e-6):
    """Central-difference gradients of a scalar function of numpy arrays.

    ``f`` takes the list of arrays and returns a float.  Arrays are
    perturbed in place and restored, one coordinate at a time.
    """
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat, gf = a.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gf[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def tape_value_and_grads(build, arrays):
    """Record ``build`` on a tape and return (loss value, leaf grads)."""
    xs = [gk.tensor(a.copy(), requires_grad=True) for a in arrays]
    with gk.Tape():
        loss = build(xs)
    gk.backward(loss)
    return float(loss.values), [x.grad for x in xs]


def eager_value(build, arrays) -> float:
    xs = [gk.tensor(a) for a in arrays]
    return float(build(xs).values)


def max_rel_err(got, want) -> float:
    got, want = np.asarray(got), np.asarray(want)
    scale = max(1e-12, float(np.max(np.abs(want))))
    return float(np.max(np.abs(got - want))) / scale


def assert_grads_close(build, arrays, rel: float = 1e-6, h: float = 1e-6):
    """FD oracle check: tape gradients match central differences."""
    _, grads = tape_value_and_grads(build, arrays)
    fd = finite_diff_grads(lambda arrs: eager_value(build, arrs), arrays, h=h)
    worst = 0.0
    for g, g_fd in zip(grads, fd):
        assert g is not None, "no gradient reached a leaf the oracle perturbs"
        worst = max(worst, max_rel_err(g, g_fd))
    assert worst <= rel, f"gradient mismatch vs finite differences: {worst:.3e} > {rel:.0e}"
    return worst
