"""Per-pixel compositing kernels (numba).  Serial loops in fixed index order, so results
do not depend on threading."""
import numpy as np
from numba import njit


@njit(cache=True)
def build_lists(order, umin, umax, vmin, vmax, W, H):
    """CSR lists of components touching each pixel, in the given (depth) order."""
    counts = np.zeros(H * W + 1, np.int64)
    for i in order:
        for v in range(vmin[i], vmax[i] + 1):
            for u in range(umin[i], umax[i] + 1):
                counts[v * W + u + 1] += 1
    ptr = np.cumsum(counts)
    comp = np.empty(ptr[-1], np.int64)
    fill = ptr[:-1].copy()
    for i in order:
        for v in range(vmin[i], vmax[i] + 1):
            for u in range(umin[i], umax[i] + 1):
                p = v * W + u
                comp[fill[p]] = i
                fill[p] += 1
    return ptr, comp


@njit(cache=True)
def build_lists_tiled(order, umin, umax, vmin, vmax, W, H, tile):
    """Same output as build_lists, assembled through a coarse tile grid first."""
    tw = (W + tile - 1) // tile
    th = (H + tile - 1) // tile
    tcount = np.zeros(tw * th + 1, np.int64)
    for i in order:
        for ty in range(vmin[i] // tile, vmax[i] // tile + 1):
            for tx in range(umin[i] // tile, umax[i] // tile + 1):
                tcount[ty * tw + tx + 1] += 1
    tptr = np.cumsum(tcount)
    tcomp = np.empty(tptr[-1], np.int64)
    tfill = tptr[:-1].copy()
    for i in order:
        for ty in range(vmin[i] // tile, vmax[i] // tile + 1):
            for tx in range(umin[i] // tile, umax[i] // tile + 1):
                t = ty * tw + tx
                tcomp[tfill[t]] = i
                tfill[t] += 1
    counts = np.zeros(H * W + 1, np.int64)
    for v in range(H):
        for u in range(W):
            t = (v // tile) * tw + u // tile
            c = 0
            for k in range(tptr[t], tptr[t + 1]):
                i = tcomp[k]
                if umin[i] <= u <= umax[i] and vmin[i] <= v <= vmax[i]:
                    c += 1
            counts[v * W + u + 1] = c
    ptr = np.cumsum(counts)
    comp = np.empty(ptr[-1], np.int64)
    for v in range(H):
        for u in range(W):
            t = (v // tile) * tw + u // tile
            f = ptr[v * W + u]
            for k in range(tptr[t], tptr[t + 1]):
                i = tcomp[k]
                if umin[i] <= u <= umax[i] and vmin[i] <= v <= vmax[i]:
                    comp[f] = i
                    f += 1
    return ptr, comp


@njit(cache=True)
def composite(ptr, comp, mean2d, conic, alpha, color, bg, W, t_min):
    """Front-to-back alpha compositing with early termination.

    Compositing stops right after the component that brings transmittance below t_min,
    so the omitted remainder is bounded by t_min times the largest color.
    """
    P = ptr.shape[0] - 1
    n_pairs = comp.shape[0]
    image = np.empty((P, 3))
    a_pair = np.zeros(n_pairs)
    g_pair = np.zeros(n_pairs)
    t_pair = np.zeros(n_pairs)
    n_used = np.zeros(P, np.int64)
    t_final = np.empty(P)
    for p in range(P):
        px = (p % W) + 0.5
        py = (p // W) + 0.5
        T = 1.0
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        used = 0
        for k in range(ptr[p], ptr[p + 1]):
            i = comp[k]
            dx = px - mean2d[i, 0]
            dy = py - mean2d[i, 1]
            q = 0.5 * (conic[i, 0] * dx * dx + 2.0 * conic[i, 1] * dx * dy + conic[i, 2] * dy * dy)
            g = np.exp(-q)
            a = alpha[i] * g
            t_new = T * (1.0 - a)
            w = a * T
            c0 += color[i, 0] * w
            c1 += color[i, 1] * w
            c2 += color[i, 2] * w
            a_pair[k] = a
            g_pair[k] = g
            t_pair[k] = T
            T = t_new
            used += 1
            if T < t_min:
                break
        image[p, 0] = c0 + T * bg[0]
        image[p, 1] = c1 + T * bg[1]
        image[p, 2] = c2 + T * bg[2]
        n_used[p] = used
        t_final[p] = T
    return image, a_pair, g_pair, t_pair, n_used, t_final


@njit(cache=True)
def replay(ptr, comp, n_used, a_pair, t_pair, color, t_final, bg):
    P = ptr.shape[0] - 1
    image = np.empty((P, 3))
    for p in range(P):
        c0 = 0.0
        c1 = 0.0
        c2 = 0.0
        for k in range(ptr[p], ptr[p] + n_used[p]):
            i = comp[k]
            w = a_pair[k] * t_pair[k]
            c0 += color[i, 0] * w
            c1 += color[i, 1] * w
            c2 += color[i, 2] * w
        image[p, 0] = c0 + t_final[p] * bg[0]
        image[p, 1] = c1 + t_final[p] * bg[1]
        image[p, 2] = c2 + t_final[p] * bg[2]
    return image


@njit(cache=True)
def composite_backward(ptr, comp, n_used, a_pair, g_pair, t_pair, mean2d, conic, alpha,
                       color, bg, d_image, W, N):
    """Gradients of the composited image w.r.t. per-component opacity, 2D mean, conic
    (xx, xy, yy) and color, for a fixed sort order and footprint."""
    P = ptr.shape[0] - 1
    g_alpha = np.zeros(N)
    g_mean = np.zeros((N, 2))
    g_conic = np.zeros((N, 3))
    g_color = np.zeros((N, 3))
    for p in range(P):
        gc0 = d_image[p, 0]
        gc1 = d_image[p, 1]
        gc2 = d_image[p, 2]
        if gc0 == 0.0 and gc1 == 0.0 and gc2 == 0.0:
            continue
        px = (p % W) + 0.5
        py = (p // W) + 0.5
        s0 = bg[0]
        s1 = bg[1]
        s2 = bg[2]
        start = ptr[p]
        for k in range(start + n_used[p] - 1, start - 1, -1):
            i = comp[k]
            a = a_pair[k]
            T = t_pair[k]
            w = a * T
            g_color[i, 0] += gc0 * w
            g_color[i, 1] += gc1 * w
            g_color[i, 2] += gc2 * w
            ga = T * (gc0 * (color[i, 0] - s0) + gc1 * (color[i, 1] - s1) + gc2 * (color[i, 2] - s2))
            s0 = color[i, 0] * a + (1.0 - a) * s0
            s1 = color[i, 1] * a + (1.0 - a) * s1
            s2 = color[i, 2] * a + (1.0 - a) * s2
            g = g_pair[k]
            g_alpha[i] += ga * g
            gg = ga * alpha[i] * g
            dx = px - mean2d[i, 0]
            dy = py - mean2d[i, 1]
            g_mean[i, 0] += gg * (conic[i, 0] * dx + conic[i, 1] * dy)
            g_mean[i, 1] += gg * (conic[i, 1] * dx + conic[i, 2] * dy)
            g_conic[i, 0] += -0.5 * gg * dx * dx
            g_conic[i, 1] += -gg * dx * dy
            g_conic[i, 2] += -0.5 * gg * dy * dy
    return g_alpha, g_mean, g_conic, g_color
