"""Numba @njit kernels (default path). Same contracts as numpy_impl."""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _composite_forward_impl(mean2d, conic, color, opacity, radius, order,
                            n_order, bg, height, width, tile, stop_t,
                            alpha_max, out_color, trans, n_contrib):
    M, N = opacity.shape
    tile_list = np.empty(N, dtype=np.int32)
    for m in range(M):
        live_n = n_order[m]
        for ty0 in range(0, height, tile):
            ty1 = min(ty0 + tile, height)
            for tx0 in range(0, width, tile):
                tx1 = min(tx0 + tile, width)
                count = 0
                for s in range(live_n):
                    g = order[m, s]
                    r = radius[m, g]
                    mx = mean2d[m, g, 0]
                    my = mean2d[m, g, 1]
                    if (mx + r >= tx0 and mx - r <= tx1 - 1
                            and my + r >= ty0 and my - r <= ty1 - 1):
                        tile_list[count] = g
                        count += 1
                for py in range(ty0, ty1):
                    for px in range(tx0, tx1):
                        T = 1.0
                        c0 = 0.0
                        c1 = 0.0
                        c2 = 0.0
                        nc = 0
                        for s in range(count):
                            if T < stop_t:
                                break
                            nc = s + 1
                            g = tile_list[s]
                            dx = px - mean2d[m, g, 0]
                            dy = py - mean2d[m, g, 1]
                            r = radius[m, g]
                            if dx * dx + dy * dy > r * r:
                                continue
                            q = (conic[m, g, 0] * dx * dx
                                 + 2.0 * conic[m, g, 1] * dx * dy
                                 + conic[m, g, 2] * dy * dy)
                            if q > 40.0:
                                continue
                            a_eff = opacity[m, g] * np.exp(-0.5 * q)
                            if a_eff > alpha_max:
                                a_eff = alpha_max
                            w = a_eff * T
                            c0 += w * color[m, g, 0]
                            c1 += w * color[m, g, 1]
                            c2 += w * color[m, g, 2]
                            T *= 1.0 - a_eff
                        out_color[m, py, px, 0] = c0 + T * bg[0]
                        out_color[m, py, px, 1] = c1 + T * bg[1]
                        out_color[m, py, px, 2] = c2 + T * bg[2]
                        trans[m, py, px] = T
                        n_contrib[m, py, px] = nc


@njit(cache=True)
def _composite_backward_impl(mean2d, conic, color, opacity, radius, order,
                             n_order, bg, height, width, tile, stop_t,
                             alpha_max, trans, n_contrib, g_color, g_trans,
                             gm, gc, gcol, gop):
    M, N = opacity.shape
    tile_list = np.empty(N, dtype=np.int32)
    for m in range(M):
        live_n = n_order[m]
        for ty0 in range(0, height, tile):
            ty1 = min(ty0 + tile, height)
            for tx0 in range(0, width, tile):
                tx1 = min(tx0 + tile, width)
                count = 0
                for s in range(live_n):
                    g = order[m, s]
                    r = radius[m, g]
                    mx = mean2d[m, g, 0]
                    my = mean2d[m, g, 1]
                    if (mx + r >= tx0 and mx - r <= tx1 - 1
                            and my + r >= ty0 and my - r <= ty1 - 1):
                        tile_list[count] = g
                        count += 1
                if count == 0:
                    continue
                for py in range(ty0, ty1):
                    for px in range(tx0, tx1):
                        nc = n_contrib[m, py, px]
                        if nc == 0:
                            continue
                        Tf = trans[m, py, px]
                        gC0 = g_color[m, py, px, 0]
                        gC1 = g_color[m, py, px, 1]
                        gC2 = g_color[m, py, px, 2]
                        gTf = g_trans[m, py, px]
                        T = Tf
                        S0 = Tf * bg[0]
                        S1 = Tf * bg[1]
                        S2 = Tf * bg[2]
                        for s in range(nc - 1, -1, -1):
                            g = tile_list[s]
                            dx = px - mean2d[m, g, 0]
                            dy = py - mean2d[m, g, 1]
                            r = radius[m, g]
                            if dx * dx + dy * dy > r * r:
                                continue
                            qx = conic[m, g, 0] * dx + conic[m, g, 1] * dy
                            qy = conic[m, g, 1] * dx + conic[m, g, 2] * dy
                            q = qx * dx + qy * dy
                            if q > 40.0:
                                continue
                            gauss = np.exp(-0.5 * q)
                            a_raw = opacity[m, g] * gauss
                            clamped = a_raw > alpha_max
                            a_eff = alpha_max if clamped else a_raw
                            one_m = 1.0 - a_eff
                            T_here = T / one_m
                            w = a_eff * T_here
                            gcol[m, g, 0] += w * gC0
                            gcol[m, g, 1] += w * gC1
                            gcol[m, g, 2] += w * gC2
                            if not clamped:
                                da = (gC0 * (T_here * color[m, g, 0] - S0 / one_m)
                                      + gC1 * (T_here * color[m, g, 1] - S1 / one_m)
                                      + gC2 * (T_here * color[m, g, 2] - S2 / one_m))
                                da -= gTf * Tf / one_m
                                gop[m, g] += da * gauss
                                dq = da * (-0.5 * a_raw)
                                gc[m, g, 0] += dq * dx * dx
                                gc[m, g, 1] += dq * 2.0 * dx * dy
                                gc[m, g, 2] += dq * dy * dy
                                gm[m, g, 0] += dq * (-2.0 * qx)
                                gm[m, g, 1] += dq * (-2.0 * qy)
                            S0 += w * color[m, g, 0]
                            S1 += w * color[m, g, 1]
                            S2 += w * color[m, g, 2]
                            T = T_here


def composite_forward(mean2d, conic, color, opacity, radius, order, n_order,
                      background, height, width, tile, stop_t, alpha_max):
    M = mean2d.shape[0]
    dt = mean2d.dtype
    out_color = np.zeros((M, height, width, 3), dtype=dt)
    trans = np.ones((M, height, width), dtype=dt)
    n_contrib = np.zeros((M, height, width), dtype=np.int32)
    bg = np.ascontiguousarray(background, dtype=dt)
    _composite_forward_impl(mean2d, conic, color, opacity, radius, order,
                            n_order, bg, height, width, tile, stop_t,
                            alpha_max, out_color, trans, n_contrib)
    return out_color, trans, n_contrib


def composite_backward(mean2d, conic, color, opacity, radius, order, n_order,
                       background, tile, stop_t, alpha_max,
                       trans, n_contrib, g_color, g_trans):
    M, N = opacity.shape
    height, width = trans.shape[1:]
    dt = mean2d.dtype
    gm = np.zeros((M, N, 2), dtype=dt)
    gc = np.zeros((M, N, 3), dtype=dt)
    gcol = np.zeros((M, N, 3), dtype=dt)
    gop = np.zeros((M, N), dtype=dt)
    bg = np.ascontiguousarray(background, dtype=dt)
    _composite_backward_impl(mean2d, conic, color, opacity, radius, order,
                             n_order, bg, height, width, tile, stop_t,
                             alpha_max, trans, n_contrib,
                             np.ascontiguousarray(g_color),
                             np.ascontiguousarray(g_trans), gm, gc, gcol, gop)
    return gm, gc, gcol, gop


@njit(cache=True)
def _fps_impl(points, k, start, sel, dist):
    n = points.shape[0]
    for i in range(n):
        dx = points[i, 0] - points[start, 0]
        dy = points[i, 1] - points[start, 1]
        dz = points[i, 2] - points[start, 2]
        dist[i] = dx * dx + dy * dy + dz * dz
    sel[0] = start
    for j in range(1, k):
        best = 0
        best_d = dist[0]
        for i in range(1, n):
            if dist[i] > best_d:
                best_d = dist[i]
                best = i
        sel[j] = best
        for i in range(n):
            dx = points[i, 0] - points[best, 0]
            dy = points[i, 1] - points[best, 1]
            dz = points[i, 2] - points[best, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < dist[i]:
                dist[i] = d


def farthest_point_sample(points: np.ndarray, k: int, start: int = 0) -> np.ndarray:
    n = points.shape[0]
    if k >= n:
        return np.arange(n, dtype=np.int64)
    sel = np.empty(k, dtype=np.int64)
    dist = np.empty(n, dtype=np.float64)
    _fps_impl(np.ascontiguousarray(points, dtype=np.float64), k, start, sel, dist)
    return sel


@njit(cache=True)
def _sinkhorn_forward_impl(C, base, fac, us, vs, ln_ab):
    B, M, _ = C.shape
    iters = us.shape[0] - 1
    for b in range(B):
        for t in range(1, iters + 1):
            eps = base[b] * fac[t]
            for i in range(M):
                mx = (vs[t - 1, b, 0] - C[b, i, 0]) / eps
                for j in range(1, M):
                    val = (vs[t - 1, b, j] - C[b, i, j]) / eps
                    if val > mx:
                        mx = val
                s = 0.0
                for j in range(M):
                    s += np.exp((vs[t - 1, b, j] - C[b, i, j]) / eps - mx)
                us[t, b, i] = eps * ln_ab - eps * (mx + np.log(s))
            for j in range(M):
                mx = (us[t, b, 0] - C[b, 0, j]) / eps
                for i in range(1, M):
                    val = (us[t, b, i] - C[b, i, j]) / eps
                    if val > mx:
                        mx = val
                s = 0.0
                for i in range(M):
                    s += np.exp((us[t, b, i] - C[b, i, j]) / eps - mx)
                vs[t, b, j] = eps * ln_ab - eps * (mx + np.log(s))


def sinkhorn_forward(C, base, fac, us, vs):
    _sinkhorn_forward_impl(C, base, fac, us, vs, -np.log(C.shape[1]))


@njit(cache=True)
def _sinkhorn_backward_impl(C, base, fac, us, vs, gu, gv, gC, g_base):
    B, M, _ = C.shape
    iters = us.shape[0] - 1
    fM = float(M)
    for b in range(B):
        for t in range(iters, 0, -1):
            eps = base[b] * fac[t]
            geps = 0.0
            # col update v_t from u_t: w_u = M * exp((u_t + v_t - C)/eps)
            for j in range(M):
                gvj = gv[b, j]
                acc = 0.0
                for i in range(M):
                    w = fM * np.exp((us[t, b, i] + vs[t, b, j] - C[b, i, j]) / eps)
                    acc += w * (us[t, b, i] - C[b, i, j])
                    guv = -w * gvj
                    gu[b, i] += guv
                    gC[b, i, j] -= guv
                geps += gvj * (vs[t, b, j] + acc) / eps
            # row update u_t from v_{t-1}: w_v = M * exp((u_t + v_{t-1} - C)/eps)
            for j in range(M):
                gv[b, j] = 0.0
            for i in range(M):
                gui = gu[b, i]
                acc = 0.0
                for j in range(M):
                    w = fM * np.exp((us[t, b, i] + vs[t - 1, b, j] - C[b, i, j]) / eps)
                    acc += w * (vs[t - 1, b, j] - C[b, i, j])
                    gvu = -w * gui
                    gv[b, j] += gvu
                    gC[b, i, j] -= gvu
                geps += gui * (us[t, b, i] + acc) / eps
            for i in range(M):
                gu[b, i] = 0.0
            g_base[b] += geps * fac[t]


def sinkhorn_backward(C, base, fac, us, vs, gu, gv, gC, g_base):
    _sinkhorn_backward_impl(C, base, fac, us, vs, gu, gv, gC, g_base)
