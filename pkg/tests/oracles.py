"""Slow, independent reference implementations used only by the tests.

Everything here is written with explicit Python loops and shares no code
with the package.
"""
import itertools
import math

import numpy as np


def conv3d_loops(x, w, b):
    """tanh(b + sum_c sum_{k,i,j} w[c,k,i,j] * x[c, s+k, y+i, x+j]) for one kernel."""
    C, T, H, W = x.shape
    _, mt, kh, kw = w.shape
    out = np.zeros((T - mt + 1, H - kh + 1, W - kw + 1))
    for s in range(out.shape[0]):
        for yy in range(out.shape[1]):
            for xx in range(out.shape[2]):
                acc = float(b)
                for c in range(C):
                    for k in range(mt):
                        for i in range(kh):
                            for j in range(kw):
                                acc += float(w[c, k, i, j]) * float(x[c, s + k, yy + i, xx + j])
                out[s, yy, xx] = math.tanh(acc)
    return out


def conv2d_loops(x, w, b):
    H, W = x.shape
    kh, kw = w.shape
    out = np.zeros((H - kh + 1, W - kw + 1))
    for yy in range(out.shape[0]):
        for xx in range(out.shape[1]):
            acc = float(b)
            for i in range(kh):
                for j in range(kw):
                    acc += float(w[i, j]) * float(x[yy + i, xx + j])
            out[yy, xx] = math.tanh(acc)
    return out


def maxpool_loops(x, ph, pw):
    """Truncated trailing windows; first maximal cell in row-major order wins."""
    H, W = x.shape
    Ho, Wo = -(-H // ph), -(-W // pw)
    out = np.zeros((Ho, Wo))
    arg = np.zeros((Ho, Wo), dtype=int)
    for a in range(Ho):
        for c in range(Wo):
            best, where = -math.inf, None
            for i in range(a * ph, min(H, a * ph + ph)):
                for j in range(c * pw, min(W, c * pw + pw)):
                    if x[i, j] > best:
                        best, where = x[i, j], i * W + j
            out[a, c], arg[a, c] = best, where
    return out, arg


def bilinear_loops(img, out_h, out_w):
    """Half-pixel-centre bilinear resampling with edge clamping."""
    H, W = img.shape
    out = np.zeros((out_h, out_w))
    for r in range(out_h):
        fy = (r + 0.5) * H / out_h - 0.5
        fy = min(max(fy, 0.0), H - 1.0)
        y0 = int(math.floor(fy))
        y1 = min(y0 + 1, H - 1)
        dy = fy - y0
        for c in range(out_w):
            fx = (c + 0.5) * W / out_w - 0.5
            fx = min(max(fx, 0.0), W - 1.0)
            x0 = int(math.floor(fx))
            x1 = min(x0 + 1, W - 1)
            dx = fx - x0
            top = img[y0, x0] * (1 - dx) + img[y0, x1] * dx
            bot = img[y1, x0] * (1 - dx) + img[y1, x1] * dx
            out[r, c] = top * (1 - dy) + bot * dy
    return out


def count_segmentations(A, M, tau, m, first=1):
    """Recursive count of valid (s_i, t_i) chains starting at or after ``first``."""
    if M == 0:
        return 1
    total = 0
    for s in range(first, A + 1):
        for t in range(tau, m + 1):
            if s + t - 1 <= A:
                total += count_segmentations(A, M - 1, tau, m, s + t)
    return total


def all_segmentations(A, M, tau, m):
    """Every valid segmentation as a (s1, t1, ..., sM, tM) tuple, via itertools."""
    wins = [(s, t) for s in range(1, A + 1) for t in range(tau, m + 1) if s + t - 1 <= A]
    out = []
    for combo in itertools.product(wins, repeat=M):
        if all(combo[i][0] + combo[i][1] <= combo[i + 1][0] for i in range(M - 1)):
            out.append(tuple(v for w in combo for v in w))
    return sorted(out)


def greedy_dedup(gray, target):
    """Remove frames one at a time: the frame closest to its current predecessor goes."""
    keep = list(range(gray.shape[0]))
    while len(keep) > target:
        best, who = None, None
        for pos in range(1, len(keep)):
            d = float(np.mean(np.abs(gray[keep[pos]].astype(np.float64)
                                     - gray[keep[pos - 1]].astype(np.float64))))
            if best is None or d < best:
                best, who = d, pos
        del keep[who]
    return keep


def clique_zero_pad_reference(frames, cp, config, t):
    """Inactivation reference: zero-pad the window to m frames, run the full
    pipeline, then zero every temporal map whose receptive field reaches a
    padded frame.

    ``frames`` holds exactly ``t`` frames. Uses the package's layer primitives
    through the grouped conv and pooling calls only for speed; the masking
    logic is independent.
    """
    from reconfnet.network import clique_pipeline

    C, T, H, W = frames.shape
    padded = np.zeros((C, config.m, H, W), dtype=frames.dtype)
    padded[:, :t] = frames
    maps, _ = clique_pipeline(padded, cp, config)
    # output map k of the cascade sees input frames k .. k + shrink
    shrink = config.temporal_shrink
    out = maps.copy()
    for k in range(out.shape[3]):
        if k + shrink >= t:
            out[:, :, :, k] = 0.0
    return out.ravel()


def finite_difference(f, x, h=1e-5):
    g = np.zeros_like(x, dtype=np.float64)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def rel_err(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))
