"""Pure-numpy reference kernels (fallback path).

Vectorized over pixels within a tile; the per-gaussian loop stays in python.
Semantics are identical to the numba kernels: per-pixel front-to-back
compositing in the given depth order, traversal stops once transmittance
drops below ``stop_t``, effective alpha clamped at ``alpha_max``.
"""

from __future__ import annotations

import numpy as np


def _tile_range(extent: int, tile: int):
    for t0 in range(0, extent, tile):
        yield t0, min(t0 + tile, extent)


def composite_forward(mean2d, conic, color, opacity, radius, order, n_order,
                      background, height, width, tile, stop_t, alpha_max):
    """Alpha-composite depth-ordered 2D Gaussians into images.

    mean2d (M,N,2), conic (M,N,3) = inverse-covariance (a,b,c), color (M,N,3),
    opacity (M,N), radius (M,N), order (M,N) int32 depth-sorted indices of
    which the first n_order[m] are live. Returns (out_color (M,H,W,3),
    trans (M,H,W), n_contrib (M,H,W) int32).
    """
    M = mean2d.shape[0]
    dt = mean2d.dtype
    out_color = np.zeros((M, height, width, 3), dtype=dt)
    trans = np.ones((M, height, width), dtype=dt)
    n_contrib = np.zeros((M, height, width), dtype=np.int32)
    bg = np.asarray(background, dtype=dt)
    for m in range(M):
        live = order[m, :n_order[m]]
        if live.size == 0:
            out_color[m] = bg
            continue
        mx, my = mean2d[m, live, 0], mean2d[m, live, 1]
        rad = radius[m, live]
        for y0, y1 in _tile_range(height, tile):
            for x0, x1 in _tile_range(width, tile):
                hit = ((mx + rad >= x0) & (mx - rad <= x1 - 1)
                       & (my + rad >= y0) & (my - rad <= y1 - 1))
                idxs = live[hit]
                if idxs.size == 0:
                    trans_tile = trans[m, y0:y1, x0:x1]
                    out_color[m, y0:y1, x0:x1] += trans_tile[..., None] * bg
                    continue
                xs = np.arange(x0, x1, dtype=dt)
                ys = np.arange(y0, y1, dtype=dt)
                T = np.ones((y1 - y0, x1 - x0), dtype=dt)
                C = np.zeros((y1 - y0, x1 - x0, 3), dtype=dt)
                nc = np.zeros((y1 - y0, x1 - x0), dtype=np.int32)
                for s, g in enumerate(idxs):
                    active = T >= stop_t
                    if not active.any():
                        break
                    nc = np.where(active, s + 1, nc)
                    dx = xs - mean2d[m, g, 0]
                    dy = ys - mean2d[m, g, 1]
                    rr = dx[None, :] ** 2 + dy[:, None] ** 2
                    ia, ib, ic = conic[m, g]
                    q = (ia * dx[None, :] ** 2 + 2 * ib * dy[:, None] * dx[None, :]
                         + ic * dy[:, None] ** 2)
                    hit = active & (rr <= radius[m, g] ** 2) & (q <= 40.0)
                    a_eff = np.where(
                        hit, np.minimum(opacity[m, g] * np.exp(-0.5 * np.where(hit, q, 0)),
                                        dt.type(alpha_max)), 0)
                    w = a_eff * T
                    C += w[..., None] * color[m, g]
                    T = T * (1 - a_eff)
                out_color[m, y0:y1, x0:x1] = C + T[..., None] * bg
                trans[m, y0:y1, x0:x1] = T
                n_contrib[m, y0:y1, x0:x1] = nc
    return out_color, trans, n_contrib


def composite_backward(mean2d, conic, color, opacity, radius, order, n_order,
                       background, tile, stop_t, alpha_max,
                       trans, n_contrib, g_color, g_trans):
    """Gradients of composite_forward w.r.t. mean2d, conic, color, opacity.

    g_color (M,H,W,3) and g_trans (M,H,W) seed the outputs; returns
    (g_mean2d, g_conic, g_color_in, g_opacity) shaped like the inputs.
    """
    M, N = opacity.shape
    height, width = trans.shape[1:]
    dt = mean2d.dtype
    gm = np.zeros((M, N, 2), dtype=dt)
    gc = np.zeros((M, N, 3), dtype=dt)
    gcol = np.zeros((M, N, 3), dtype=dt)
    gop = np.zeros((M, N), dtype=dt)
    bg = np.asarray(background, dtype=dt)
    for m in range(M):
        live = order[m, :n_order[m]]
        if live.size == 0:
            continue
        mx, my = mean2d[m, live, 0], mean2d[m, live, 1]
        rad = radius[m, live]
        for y0, y1 in _tile_range(height, tile):
            for x0, x1 in _tile_range(width, tile):
                hit = ((mx + rad >= x0) & (mx - rad <= x1 - 1)
                       & (my + rad >= y0) & (my - rad <= y1 - 1))
                idxs = live[hit]
                if idxs.size == 0:
                    continue
                xs = np.arange(x0, x1, dtype=dt)
                ys = np.arange(y0, y1, dtype=dt)
                T_fin = trans[m, y0:y1, x0:x1]
                nc = n_contrib[m, y0:y1, x0:x1]
                gC = g_color[m, y0:y1, x0:x1]
                gT_fin = g_trans[m, y0:y1, x0:x1]
                T = T_fin.copy()
                S = T_fin[..., None] * bg
                for s in range(idxs.size - 1, -1, -1):
                    g = idxs[s]
                    part = s < nc
                    if not part.any():
                        continue
                    dx = xs - mean2d[m, g, 0]
                    dy = ys - mean2d[m, g, 1]
                    rr = dx[None, :] ** 2 + dy[:, None] ** 2
                    ia, ib, ic = conic[m, g]
                    qx = ia * dx[None, :] + ib * dy[:, None]
                    qy = ib * dx[None, :] + ic * dy[:, None]
                    q = qx * dx[None, :] + qy * dy[:, None]
                    part = part & (rr <= radius[m, g] ** 2) & (q <= 40.0)
                    if not part.any():
                        continue
                    gauss = np.exp(-0.5 * np.where(part, q, 0))
                    a_raw = opacity[m, g] * gauss
                    clamped = a_raw > alpha_max
                    a_eff = np.where(clamped, dt.type(alpha_max), a_raw)
                    a_eff = np.where(part, a_eff, 0)
                    one_m = 1 - a_eff
                    T_here = np.where(part, T / one_m, T)
                    w = a_eff * T_here
                    # dC/dalpha' = T*c - S/(1-a'); dT_fin/dalpha' = -T_fin/(1-a')
                    da = (gC * (T_here[..., None] * color[m, g][None, None]
                                - S / one_m[..., None])).sum(-1)
                    da = da - gT_fin * T_fin / one_m
                    da = np.where(part & ~clamped, da, 0)
                    wpart = np.where(part, w, 0)
                    gcol[m, g] += (wpart[..., None] * gC).sum((0, 1))
                    gop[m, g] += float((da * gauss).sum())
                    dq = da * (-0.5 * a_raw)
                    gc[m, g, 0] += float((dq * dx[None, :] ** 2).sum())
                    gc[m, g, 1] += float((dq * 2 * dx[None, :] * dy[:, None]).sum())
                    gc[m, g, 2] += float((dq * dy[:, None] ** 2).sum())
                    gm[m, g, 0] += float((dq * (-2 * qx)).sum())
                    gm[m, g, 1] += float((dq * (-2 * qy)).sum())
                    S = S + np.where(part, w, 0)[..., None] * color[m, g]
                    T = T_here
    return gm, gc, gcol, gop


def farthest_point_sample(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point subsample; returns k indices, deterministic."""
    n = points.shape[0]
    if k >= n:
        return np.arange(n, dtype=np.int64)
    points = np.asarray(points, dtype=np.float64)
    sel = np.empty(k, dtype=np.int64)
    sel[0] = start
    dist = np.sum((points - points[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(dist))
        sel[i] = nxt
        d = np.sum((points - points[nxt]) ** 2, axis=1)
        np.minimum(dist, d, out=dist)
    return sel


def sinkhorn_forward(C, base, fac, us, vs):
    """Annealed log-domain Sinkhorn iterations with uniform marginals.

    C (B,M,M); base (B,) temperature scale; fac (T+1,) per-iteration decay;
    us/vs (T+1,B,M) are filled in place (row 0 stays zero).
    """
    B, M, _ = C.shape
    iters = us.shape[0] - 1
    ln_ab = -np.log(M)
    for t in range(1, iters + 1):
        eps = base * fac[t]
        e = eps[:, None, None]
        x = (vs[t - 1][:, None, :] - C) / e
        mx = x.max(axis=2, keepdims=True)
        lse = (mx + np.log(np.exp(x - mx).sum(axis=2, keepdims=True))).squeeze(2)
        us[t] = eps * ln_ab - eps * lse
        x = (us[t][:, :, None] - C) / e
        mx = x.max(axis=1, keepdims=True)
        lse = (mx + np.log(np.exp(x - mx).sum(axis=1, keepdims=True))).squeeze(1)
        vs[t] = eps * ln_ab - eps * lse


def sinkhorn_backward(C, base, fac, us, vs, gu, gv, gC, g_base):
    """Reverse sweep of the unrolled Sinkhorn loop.

    Consumes seed gradients gu/gv on the final potentials, accumulates into
    gC (B,M,M) and g_base (B,); gu/gv are destroyed.
    """
    B, M, _ = C.shape
    iters = us.shape[0] - 1
    for t in range(iters, 0, -1):
        eps = base * fac[t]
        e = eps[:, None, None]
        # col update v_t from u_t: weights w_u = M * exp((u_t + v_t - C)/eps)
        w_u = M * np.exp((us[t][:, :, None] + vs[t][:, None, :] - C) / e)
        geps = (gv * (vs[t] / eps[:, None]
                      + (w_u * (us[t][:, :, None] - C)).sum(axis=1) / eps[:, None])
                ).sum(axis=1)
        guv = -w_u * gv[:, None, :]
        gu += guv.sum(axis=2)
        gC -= guv
        # row update u_t from v_{t-1}: w_v = M * exp((u_t + v_{t-1} - C)/eps)
        w_v = M * np.exp((us[t][:, :, None] + vs[t - 1][:, None, :] - C) / e)
        geps += (gu * (us[t] / eps[:, None]
                       + (w_v * (vs[t - 1][:, None, :] - C)).sum(axis=2) / eps[:, None])
                 ).sum(axis=1)
        gvu = -w_v * gu[:, :, None]
        gv[:] = gvu.sum(axis=1)
        gC -= gvu
        gu[:] = 0
        g_base += geps * fac[t]
