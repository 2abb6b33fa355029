"""Gauss rules and adaptive panel construction for the stencil integrals.

Rules are built once per stencil offset from the real (unstretched) integrand and
then reused for every row, so all the adaptivity cost is per offset.
"""
from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import special


class QuadratureWarning(UserWarning):
    pass


@lru_cache(maxsize=None)
def gauss_rule(order):
    x, w = np.polynomial.legendre.leggauss(order)
    return x, w


@lru_cache(maxsize=None)
def jacobi_rule(order, beta, end):
    """Rule on [-1, 1] for the weight ``(1 + x)**beta`` (end='left') or ``(1 - x)**beta``."""
    if end == "left":
        x, w = special.roots_jacobi(order, 0.0, beta)
    else:
        x, w = special.roots_jacobi(order, beta, 0.0)
    return x, w


def interval_rule(a, b, order, singular=None, beta=0.0):
    """Nodes and weights on ``[a, b]``.

    With ``singular='left'``/``'right'`` the rule integrates ``|x - end|**beta * smooth``
    exactly for polynomial ``smooth``; the weights are divided by the weight function so
    callers can pass the full integrand.
    """
    half = 0.5 * (b - a)
    if singular is None or beta == 0.0:
        x, w = gauss_rule(order)
        return a + half * (x + 1.0), half * w
    x, w = jacobi_rule(order, float(beta), singular)
    nodes = a + half * (x + 1.0)
    dist = nodes - a if singular == "left" else b - nodes
    return nodes, half ** (beta + 1.0) * w / dist**beta


def adaptive_interval(f, a, b, order=8, tol=1e-12, singular=None, beta=0.0, max_depth=40):
    """Adaptive composite rule on ``[a, b]``; returns ``(nodes, weights, converged)``.

    ``f`` may return shape ``(n,)`` or ``(n, J)``; with several test functions a panel
    is accepted only when all of them meet ``tol``.

    ``singular`` marks an endpoint with ``|x - end|**beta`` behaviour; only panels
    touching it use the Jacobi rule.
    """
    nodes, weights = [], []
    converged = True
    stack = [(a, b, singular, 0, None)]
    while stack:
        lo, hi, sing, depth, parent_val = stack.pop()
        x, w = interval_rule(lo, hi, order, sing, beta)
        if parent_val is None:
            parent_val = np.dot(w, f(x))
        mid = 0.5 * (lo + hi)
        sl = sing if sing == "left" else None
        sr = sing if sing == "right" else None
        xl, wl = interval_rule(lo, mid, order, sl, beta)
        xr, wr = interval_rule(mid, hi, order, sr, beta)
        vl = np.dot(wl, f(xl))
        vr = np.dot(wr, f(xr))
        if np.max(np.abs(vl + vr - parent_val)) <= tol:
            nodes.append(x)
            weights.append(w)
            continue
        if depth >= max_depth:
            converged = False
            nodes.extend([xl, xr])
            weights.extend([wl, wr])
            continue
        stack.append((mid, hi, sr, depth + 1, vr))
        stack.append((lo, mid, sl, depth + 1, vl))
    return np.concatenate(nodes), np.concatenate(weights), converged


def square_rule(box, order, singular_u0=False, beta=0.0):
    """Tensor rule on ``box = (u0, u1, v0, v1)``; Jacobi in ``u`` when ``singular_u0``."""
    u0, u1, v0, v1 = box
    su, wu = interval_rule(u0, u1, order, "left" if singular_u0 else None, beta)
    sv, wv = interval_rule(v0, v1, order)
    uu, vv = np.meshgrid(su, sv, indexing="ij")
    ww = np.outer(wu, wv)
    return np.stack([uu.ravel(), vv.ravel()], axis=1), ww.ravel()


@lru_cache(maxsize=None)
def _unit_square(order, singular, beta):
    """Reference nodes on ``[0, 1]^2`` and weights summing to 1 (Jacobi-weighted in ``u`` if singular)."""
    if singular and beta != 0.0:
        x, w = jacobi_rule(order, float(beta), "left")
        xu = 0.5 * (x + 1.0)
        wu = 0.5 * w / (1.0 + x) ** beta
    else:
        x, w = gauss_rule(order)
        xu, wu = 0.5 * (x + 1.0), 0.5 * w
    xv, wv = gauss_rule(order)
    xv, wv = 0.5 * (xv + 1.0), 0.5 * wv
    uu, vv = np.meshgrid(xu, xv, indexing="ij")
    return uu.ravel(), vv.ravel(), np.outer(wu, wv).ravel()


def _box_nodes(boxes, sing, order, beta):
    """Nodes ``(B, q, 2)`` and weights ``(B, q)`` for boxes ``(B, 4)``; ``sing`` flags the u-edge rule."""
    ur, vr, wr = _unit_square(order, False, 0.0)
    us, vs, ws = _unit_square(order, True, beta)
    du = boxes[:, 1] - boxes[:, 0]
    dv = boxes[:, 3] - boxes[:, 2]
    s = sing[:, None]
    uu = np.where(s, us[None, :], ur[None, :])
    vv = np.where(s, vs[None, :], vr[None, :])
    ww = np.where(s, ws[None, :], wr[None, :])
    nodes = np.stack([boxes[:, :1] + du[:, None] * uu, boxes[:, 2:3] + dv[:, None] * vv], axis=-1)
    return nodes, ww * (du * dv)[:, None]


def _integrate_boxes(f, boxes, sing, order, beta):
    nodes, w = _box_nodes(boxes, sing, order, beta)
    b, q = w.shape
    vals = f(nodes.reshape(b * q, 2))
    vals = vals.reshape((b, q) + vals.shape[1:])
    return nodes, w, np.einsum("bq,bq...->b...", w, vals)


def adaptive_square(f, box, order=6, tol=1e-12, singular_u0=False, beta=0.0, max_depth=7,
                    max_leaves=4096):
    """Quadtree-adaptive tensor rule on a rectangle; returns ``(nodes, weights, converged)``.

    ``singular_u0`` flags ``u**beta`` behaviour along the edge ``u = u0``.  As in
    :func:`adaptive_interval`, ``f`` may return several test functions per node.
    Boxes are processed a whole level at a time so ``f`` is called once per level.
    """
    u_edge = box[0]
    active = np.array([box], dtype=float)
    act_sing = np.array([bool(singular_u0) and beta != 0.0])
    _, _, parent = _integrate_boxes(f, active, act_sing, order, beta)
    out_nodes, out_w = [], []
    converged = True
    leaves = 0
    depth = 0
    while active.shape[0]:
        u0, u1, v0, v1 = active.T
        um, vm = 0.5 * (u0 + u1), 0.5 * (v0 + v1)
        kids = np.stack([
            np.stack([u0, um, v0, vm], 1), np.stack([u0, um, vm, v1], 1),
            np.stack([um, u1, v0, vm], 1), np.stack([um, u1, vm, v1], 1),
        ], axis=1)  # (B, 4, 4)
        b = active.shape[0]
        kid_sing = np.repeat(act_sing[:, None], 4, axis=1) & (kids[..., 0] == u_edge)
        kn, kw, kv = _integrate_boxes(f, kids.reshape(4 * b, 4), kid_sing.reshape(-1), order, beta)
        kv = kv.reshape((b, 4) + kv.shape[1:])
        err = np.abs(kv.sum(axis=1) - parent)
        if err.ndim > 1:
            err = err.reshape(b, -1).max(axis=1)
        done = err <= tol
        if np.any(done):
            pn, pw = _box_nodes(active[done], act_sing[done], order, beta)
            out_nodes.append(pn.reshape(-1, 2))
            out_w.append(pw.reshape(-1))
            leaves += int(done.sum())
        todo = ~done
        if not np.any(todo):
            break
        depth += 1
        kn = kn.reshape(b, 4, -1, 2)
        kw = kw.reshape(b, 4, -1)
        if depth > max_depth or leaves + 4 * int(todo.sum()) > max_leaves:
            converged = False
            out_nodes.append(kn[todo].reshape(-1, 2))
            out_w.append(kw[todo].reshape(-1))
            break
        active = kids[todo].reshape(-1, 4)
        act_sing = kid_sing[todo].reshape(-1)
        parent = kv[todo].reshape((-1,) + kv.shape[2:])
    return np.concatenate(out_nodes), np.concatenate(out_w), converged
