"""Random small conic programs and an exhaustive grid minimiser for cross-checks."""

from __future__ import annotations

import itertools

import numpy as np

from mgjcc.conic import Affine, ConicProgram

BOX = 1.0


def random_program(rng: np.random.Generator, n: int):
    """A random feasible convex program on ``n <= 3`` variables inside ``[-1, 1]^n``.

    Returns the program and a vectorised ``(objective, feasible)`` evaluator.
    """
    p = ConicProgram()
    x = p.add_variables("x", n)
    w = rng.uniform(0.0, 2.0, n)
    off = rng.uniform(-1.5, 1.5, n)
    lin = rng.uniform(-1.0, 1.0, n)
    p.add_quadratic("f", x, w, off, lin)
    p.add_le("box", Affine(n, -BOX).add(1.0, x))
    p.add_le("box", Affine(n, -BOX).add(-1.0, x))
    # random half-planes through a strictly interior anchor
    anchor = rng.uniform(-0.5, 0.5, n)
    A = rng.normal(size=(2, n))
    c = A @ anchor + rng.uniform(0.05, 0.5, 2)
    rows = []
    for k in range(2):
        e = Affine(1, -c[k])
        for j in range(n):
            e.add(A[k, j], x[j])
        p.add_le("half", e)
        rows.append((A[k], c[k]))
    # one second-order cone: ||x - centre|| <= radius
    centre = anchor + rng.uniform(-0.2, 0.2, n)
    radius = float(np.linalg.norm(anchor - centre) + rng.uniform(0.2, 0.8))
    cone = Affine(1 + n, np.concatenate([[radius], -centre]))
    for j in range(n):
        cone.add(np.eye(1 + n)[1 + j], x[j])
    p.add_soc("ball", cone, 1 + n)

    def evaluate(pts):
        f = pts**2 @ w - 2 * pts @ (w * off) + np.sum(w * off**2) + pts @ lin
        ok = np.all(np.abs(pts) <= BOX, axis=1)
        for a, b in rows:
            ok &= pts @ a <= b
        ok &= np.linalg.norm(pts - centre, axis=1) <= radius
        return f, ok

    lip = float(np.max(np.abs(2 * w * (BOX + np.abs(off))) + np.abs(lin)) * np.sqrt(n))
    return p, evaluate, lip


def _grid(lo, hi, h):
    axes = [np.arange(a, b + h / 2, h) for a, b in zip(lo, hi)]
    return np.array(list(itertools.product(*axes))) if len(axes) > 1 else axes[0][:, None]


def grid_minimum(evaluate, n: int, h: float = 1e-3, coarse: float = 0.02):
    """Minimum over the feasible points of a resolution-``h`` grid on the box.

    One and two variables use the full grid; three variables use a coarse
    pass over the whole box then the full resolution near the best point.
    """
    if n <= 2:
        pts = _grid([-BOX] * n, [BOX] * n, h)
        f, ok = evaluate(pts)
        return (float(f[ok].min()), pts[ok][np.argmin(f[ok])]) if ok.any() else (np.inf, None)
    pts = _grid([-BOX] * n, [BOX] * n, coarse)
    f, ok = evaluate(pts)
    if not ok.any():
        return np.inf, None
    best = pts[ok][np.argmin(f[ok])]
    half = 3 * coarse
    lo = np.round(np.maximum(best - half, -BOX) / h) * h
    hi = np.round(np.minimum(best + half, BOX) / h) * h
    fine = _grid(lo, hi, h)
    f2, ok2 = evaluate(fine)
    return float(min(f[ok].min(), f2[ok2].min())), fine[ok2][np.argmin(f2[ok2])]
