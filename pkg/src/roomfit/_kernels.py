"""Low-level winding-number kernels over flat pixel-center arrays.

Each kernel exists twice: a plain numpy implementation (the reference, always
available) and a numba-compiled version used when numba imports cleanly. Both
compute identical formulas; tests assert agreement to float precision.

The soft kernel implements the saturating-sign winding sum

    W(m) = (1/2pi) * sum_edges  s(det(um, vm)) * angle(u, m, v)

with s(d) = c*d / (1 + |c*d|) and angle = arccos of the clamped normalized
dot product. Its gradient with respect to every vertex coordinate is derived
analytically; where the dot product is clamped the angle term's derivative is
zero (matching the actual, clamped value path).
"""
from __future__ import annotations

import numpy as np

TWO_PI = 2.0 * np.pi
COS_CLAMP = 1.0 - 1e-7
_NORM_FLOOR = 1e-24  # guards zero-length point-to-vertex vectors


def _soft_values_np(verts: np.ndarray, px: np.ndarray, py: np.ndarray, c: float) -> np.ndarray:
    u = verts
    v = np.roll(verts, -1, axis=0)
    ax = u[:, 0, None] - px[None, :]
    ay = u[:, 1, None] - py[None, :]
    bx = v[:, 0, None] - px[None, :]
    by = v[:, 1, None] - py[None, :]
    det = ax * by - ay * bx
    dot = ax * bx + ay * by
    na2 = np.maximum(ax * ax + ay * ay, _NORM_FLOOR)
    nb2 = np.maximum(bx * bx + by * by, _NORM_FLOOR)
    g = np.clip(dot / np.sqrt(na2 * nb2), -COS_CLAMP, COS_CLAMP)
    theta = np.arccos(g)
    cd = c * det
    s = cd / (1.0 + np.abs(cd))
    return (s * theta).sum(axis=0) / TWO_PI


def _soft_values_grad_np(
    verts: np.ndarray, px: np.ndarray, py: np.ndarray, c: float
) -> tuple[np.ndarray, np.ndarray]:
    n = len(verts)
    u = verts
    v = np.roll(verts, -1, axis=0)
    ax = u[:, 0, None] - px[None, :]
    ay = u[:, 1, None] - py[None, :]
    bx = v[:, 0, None] - px[None, :]
    by = v[:, 1, None] - py[None, :]
    det = ax * by - ay * bx
    dot = ax * bx + ay * by
    na2 = np.maximum(ax * ax + ay * ay, _NORM_FLOOR)
    nb2 = np.maximum(bx * bx + by * by, _NORM_FLOOR)
    g_raw = dot / np.sqrt(na2 * nb2)
    g = np.clip(g_raw, -COS_CLAMP, COS_CLAMP)
    theta = np.arccos(g)
    cd = c * det
    acd = np.abs(cd)
    s = cd / (1.0 + acd)
    w = (s * theta).sum(axis=0) / TWO_PI

    sp = c / (1.0 + acd) ** 2
    dthdg = np.where(np.abs(g_raw) >= COS_CLAMP, 0.0, -1.0 / np.sqrt(1.0 - g * g))
    inv_na = 1.0 / np.sqrt(na2)
    inv_nb = 1.0 / np.sqrt(nb2)
    ahx, ahy = ax * inv_na, ay * inv_na
    bhx, bhy = bx * inv_nb, by * inv_nb
    sd = s * dthdg
    # d(term)/d(u), d(term)/d(v); det derivatives: d det/du = (by, -bx),
    # d det/dv = (-ay, ax); dot-direction derivatives via unit vectors.
    tux = (sp * by * theta + sd * inv_na * (bhx - g * ahx)) / TWO_PI
    tuy = (sp * (-bx) * theta + sd * inv_na * (bhy - g * ahy)) / TWO_PI
    tvx = (sp * (-ay) * theta + sd * inv_nb * (ahx - g * bhx)) / TWO_PI
    tvy = (sp * ax * theta + sd * inv_nb * (ahy - g * bhy)) / TWO_PI

    grad = np.zeros((n, 2, len(px)))
    grad[:, 0, :] += tux
    grad[:, 1, :] += tuy
    nxt = (np.arange(n) + 1) % n
    np.add.at(grad, (nxt, 0), tvx)
    np.add.at(grad, (nxt, 1), tvy)
    return w, grad


def _hard_values_np(verts: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Signed angle-sum winding (float, not yet rounded)."""
    u = verts
    v = np.roll(verts, -1, axis=0)
    ax = u[:, 0, None] - px[None, :]
    ay = u[:, 1, None] - py[None, :]
    bx = v[:, 0, None] - px[None, :]
    by = v[:, 1, None] - py[None, :]
    det = ax * by - ay * bx
    dot = ax * bx + ay * by
    na2 = np.maximum(ax * ax + ay * ay, _NORM_FLOOR)
    nb2 = np.maximum(bx * bx + by * by, _NORM_FLOOR)
    g = np.clip(dot / np.sqrt(na2 * nb2), -COS_CLAMP, COS_CLAMP)
    theta = np.arccos(g)
    return (np.sign(det) * theta).sum(axis=0) / TWO_PI


def min_edge_distance(verts: np.ndarray, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest polygon edge."""
    pts = np.stack([px, py], axis=1)
    n = len(verts)
    best = np.full(len(pts), np.inf)
    for i in range(n):
        a = verts[i]
        b = verts[(i + 1) % n]
        ab = b - a
        denom = max(float(ab @ ab), _NORM_FLOOR)
        t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
        proj = a + t[:, None] * ab
        np.minimum(best, np.linalg.norm(pts - proj, axis=1), out=best)
    return best


try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False


if HAVE_NUMBA:
    # The compiled kernels replace libm arccos with a minimax polynomial
    # (|error| < 3e-8 rad); the gradient path differentiates the polynomial
    # itself, so analytic gradients and finite differences of the kernel's
    # value agree to float precision everywhere, including near the clamp.

    @njit(cache=True, fastmath=True, inline="always")
    def _acos_pair(x):  # pragma: no cover - compiled
        """(acos approximation, its exact derivative) for x in (-1, 1)."""
        neg = x < 0.0
        xa = -x if neg else x
        p = -0.0012624911
        dp = 7.0 * p
        p = p * xa + 0.0066700901
        dp = dp * xa + 6.0 * 0.0066700901
        p = p * xa - 0.0170881256
        dp = dp * xa - 5.0 * 0.0170881256
        p = p * xa + 0.0308918810
        dp = dp * xa + 4.0 * 0.0308918810
        p = p * xa - 0.0501743046
        dp = dp * xa - 3.0 * 0.0501743046
        p = p * xa + 0.0889789874
        dp = dp * xa + 2.0 * 0.0889789874
        p = p * xa - 0.2145988016
        dp = dp * xa - 0.2145988016
        p = p * xa + 1.5707963050
        s1 = np.sqrt(1.0 - xa)
        f = s1 * p
        # d/dxa of sqrt(1-xa)*P(xa); same value serves both half-domains.
        fp = -p / (2.0 * s1) + s1 * dp
        theta = np.pi - f if neg else f
        return theta, fp

    @njit(cache=True, fastmath=True)
    def _soft_values_nb(verts, px, py, c):  # pragma: no cover - compiled
        n = verts.shape[0]
        m = px.shape[0]
        out = np.zeros(m)
        for e in range(n):
            ux, uy = verts[e, 0], verts[e, 1]
            e2 = (e + 1) % n
            vx, vy = verts[e2, 0], verts[e2, 1]
            for k in range(m):
                ax = ux - px[k]
                ay = uy - py[k]
                bx = vx - px[k]
                by = vy - py[k]
                det = ax * by - ay * bx
                dot = ax * bx + ay * by
                na2 = ax * ax + ay * ay
                nb2 = bx * bx + by * by
                if na2 < _NORM_FLOOR:
                    na2 = _NORM_FLOOR
                if nb2 < _NORM_FLOOR:
                    nb2 = _NORM_FLOOR
                g = dot / np.sqrt(na2 * nb2)
                g = min(max(g, -COS_CLAMP), COS_CLAMP)
                theta, _ = _acos_pair(g)
                cd = c * det
                s = cd / (1.0 + abs(cd))
                out[k] += s * theta
        out *= 1.0 / TWO_PI
        return out

    @njit(cache=True, fastmath=True)
    def _soft_values_grad_nb(verts, px, py, c):  # pragma: no cover - compiled
        n = verts.shape[0]
        m = px.shape[0]
        out = np.zeros(m)
        grad = np.zeros((n, 2, m))
        for e in range(n):
            ux, uy = verts[e, 0], verts[e, 1]
            e2 = (e + 1) % n
            vx, vy = verts[e2, 0], verts[e2, 1]
            gu = grad[e]
            gv = grad[e2]
            for k in range(m):
                ax = ux - px[k]
                ay = uy - py[k]
                bx = vx - px[k]
                by = vy - py[k]
                det = ax * by - ay * bx
                dot = ax * bx + ay * by
                na2 = ax * ax + ay * ay
                nb2 = bx * bx + by * by
                if na2 < _NORM_FLOOR:
                    na2 = _NORM_FLOOR
                if nb2 < _NORM_FLOOR:
                    nb2 = _NORM_FLOOR
                g_raw = dot / np.sqrt(na2 * nb2)
                g = min(max(g_raw, -COS_CLAMP), COS_CLAMP)
                live = 1.0 if (-COS_CLAMP < g_raw < COS_CLAMP) else 0.0
                theta, dth = _acos_pair(g)
                cd = c * det
                acd = abs(cd)
                inv1 = 1.0 / (1.0 + acd)
                s = cd * inv1
                out[k] += s * theta
                sp = c * inv1 * inv1
                sd = live * s * dth
                inv_na = 1.0 / np.sqrt(na2)
                inv_nb = 1.0 / np.sqrt(nb2)
                ahx = ax * inv_na
                ahy = ay * inv_na
                bhx = bx * inv_nb
                bhy = by * inv_nb
                gu[0, k] += sp * by * theta + sd * inv_na * (bhx - g * ahx)
                gu[1, k] += sp * (-bx) * theta + sd * inv_na * (bhy - g * ahy)
                gv[0, k] += sp * (-ay) * theta + sd * inv_nb * (ahx - g * bhx)
                gv[1, k] += sp * ax * theta + sd * inv_nb * (ahy - g * bhy)
        out *= 1.0 / TWO_PI
        grad *= 1.0 / TWO_PI
        return out, grad

    @njit(cache=True, fastmath=True)
    def _hard_values_nb(verts, px, py):  # pragma: no cover - compiled
        n = verts.shape[0]
        m = px.shape[0]
        out = np.zeros(m)
        for e in range(n):
            ux, uy = verts[e, 0], verts[e, 1]
            e2 = (e + 1) % n
            vx, vy = verts[e2, 0], verts[e2, 1]
            for k in range(m):
                ax = ux - px[k]
                ay = uy - py[k]
                bx = vx - px[k]
                by = vy - py[k]
                det = ax * by - ay * bx
                dot = ax * bx + ay * by
                na2 = ax * ax + ay * ay
                nb2 = bx * bx + by * by
                if na2 < _NORM_FLOOR:
                    na2 = _NORM_FLOOR
                if nb2 < _NORM_FLOOR:
                    nb2 = _NORM_FLOOR
                g = dot / np.sqrt(na2 * nb2)
                g = min(max(g, -COS_CLAMP), COS_CLAMP)
                theta = np.arccos(g)
                sgn = 0.0
                if det > 0.0:
                    sgn = 1.0
                elif det < 0.0:
                    sgn = -1.0
                out[k] += sgn * theta
        out *= 1.0 / TWO_PI
        return out

    soft_values = _soft_values_nb
    soft_values_grad = _soft_values_grad_nb
    hard_values = _hard_values_nb
else:  # pragma: no cover
    soft_values = _soft_values_np
    soft_values_grad = _soft_values_grad_np
    hard_values = _hard_values_np
