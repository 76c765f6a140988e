"""Independent reference implementations used only by the tests."""

import cvxpy as cp
import numpy as np


def _clip_length(px, py, dx, dy, x0, x1, y0, y1):
    """Length of the line ``p + u d`` (unit ``d``) inside the box, Liang-Barsky
    style, with the half-open convention for lines lying on a box edge."""
    if dx == 0.0:
        if not (x0 <= px < x1):
            return 0.0
        return y1 - y0
    if dy == 0.0:
        if not (y0 <= py < y1):
            return 0.0
        return x1 - x0
    ua, ub = sorted(((x0 - px) / dx, (x1 - px) / dx))
    va, vb = sorted(((y0 - py) / dy, (y1 - py) / dy))
    return max(0.0, min(ub, vb) - max(ua, va))


def dense_radon_exact(angles, offsets, n):
    """Chord-length matrix by clipping every ray against every pixel box."""
    h = 2.0 / n
    A = np.zeros((len(angles) * len(offsets), n * n))
    r = 0
    for th in angles:
        c, s = np.cos(th), np.sin(th)
        if abs(c) < 1e-14:
            c = 0.0
        if abs(s) < 1e-14:
            s = 0.0
        for t in offsets:
            px, py = t * c, t * s
            for i in range(n):
                for j in range(n):
                    A[r, i * n + j] = _clip_length(px, py, -s, c, -1 + j * h, -1 + (j + 1) * h,
                                                   -1 + i * h, -1 + (i + 1) * h)
            r += 1
    return A


def dense_radon_sampled(angles, offsets, n, n_samples=200_001):
    """Chord lengths by dense point sampling along each ray (first-order accurate)."""
    u = np.linspace(-1.5, 1.5, n_samples)
    du = u[1] - u[0]
    A = np.zeros((len(angles) * len(offsets), n * n))
    r = 0
    for th in angles:
        c, s = np.cos(th), np.sin(th)
        for t in offsets:
            x = t * c - u * s
            y = t * s + u * c
            col = np.floor((x + 1) * n / 2).astype(int)
            row = np.floor((y + 1) * n / 2).astype(int)
            ok = (col >= 0) & (col < n) & (row >= 0) & (row < n)
            np.add.at(A[r], row[ok] * n + col[ok], du)
            r += 1
    return A


def tv_cvx_oracle(M, y, gamma, n):
    """Convex-programming reference for the TV-regularized nonnegative least squares."""
    v = cp.Variable(n * n)
    V = cp.reshape(v, (n, n), order="C")
    d1 = V - cp.hstack([np.zeros((n, 1)), V[:, :-1]])
    d2 = V - cp.vstack([np.zeros((1, n)), V[:-1, :]])
    tv_expr = cp.sum(cp.norm(cp.vstack([cp.vec(d1, order="C"), cp.vec(d2, order="C")]), 2, axis=0))
    cp.Problem(cp.Minimize(0.5 * cp.sum_squares(M @ v - y) + gamma * tv_expr), [v >= 0]).solve(solver="CLARABEL")
    return np.maximum(v.value, 0.0)
