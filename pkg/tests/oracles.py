"""Independent brute-force references the kernel tests check against.

Everything here is deliberately written as plain nested loops over scalars,
sharing no code path with the package implementations.
"""

import math

import numpy as np


def conv3d_oracle(x, w, stride, padding, bias):
    c_in, t, h, wd = x.shape
    c_out = w.shape[0]
    kt, kh, kw = w.shape[2:]
    st, sh, sw = stride
    pt, ph, pw = padding
    ot = (t + 2 * pt - kt) // st + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((c_out, ot, oh, ow))
    for o in range(c_out):
        for it in range(ot):
            for ih in range(oh):
                for iw in range(ow):
                    acc = 0.0
                    for c in range(c_in):
                        for a in range(kt):
                            for b in range(kh):
                                for d in range(kw):
                                    zt = it * st + a - pt
                                    zh = ih * sh + b - ph
                                    zw = iw * sw + d - pw
                                    if 0 <= zt < t and 0 <= zh < h and 0 <= zw < wd:
                                        acc += x[c, zt, zh, zw] * w[o, c, a, b, d]
                    out[o, it, ih, iw] = acc + (bias[o] if bias is not None else 0.0)
    return out


def pool3d_max_oracle(x, kernel, stride, padding):
    c, t, h, wd = x.shape
    kt, kh, kw = kernel
    st, sh, sw = stride
    pt, ph, pw = padding
    ot = (t + 2 * pt - kt) // st + 1
    oh = (h + 2 * ph - kh) // sh + 1
    ow = (wd + 2 * pw - kw) // sw + 1
    out = np.zeros((c, ot, oh, ow))
    for ch in range(c):
        for it in range(ot):
            for ih in range(oh):
                for iw in range(ow):
                    best = None
                    for a in range(kt):
                        for b in range(kh):
                            for d in range(kw):
                                zt = it * st + a - pt
                                zh = ih * sh + b - ph
                                zw = iw * sw + d - pw
                                if 0 <= zt < t and 0 <= zh < h and 0 <= zw < wd:
                                    v = x[ch, zt, zh, zw]
                                    if best is None or v > best:
                                        best = v
                    out[ch, it, ih, iw] = best
    return out


def linear_oracle(x, w, b):
    rows = x.reshape(-1, x.shape[-1])
    out = np.zeros((rows.shape[0], w.shape[1]))
    for i in range(rows.shape[0]):
        for j in range(w.shape[1]):
            acc = b[j] if b is not None else 0.0
            for k in range(w.shape[0]):
                acc += rows[i, k] * w[k, j]
            out[i, j] = acc
    return out.reshape(x.shape[:-1] + (w.shape[1],))


def softmax_oracle(x, axis):
    x = np.asarray(x, dtype=np.float64)
    moved = np.moveaxis(x, axis, -1)
    flat = moved.reshape(-1, moved.shape[-1])
    out = np.zeros_like(flat)
    for i in range(flat.shape[0]):
        m = max(flat[i])
        exps = [math.exp(v - m) for v in flat[i]]
        total = sum(exps)
        for j, e in enumerate(exps):
            out[i, j] = e / total
    return np.moveaxis(out.reshape(moved.shape), -1, axis)


def batch_norm_oracle(x, mean, var, gamma, beta, eps):
    out = np.zeros_like(x)
    flat_in = x.reshape(x.shape[0], -1)
    flat_out = out.reshape(x.shape[0], -1)
    for c in range(x.shape[0]):
        for i in range(flat_in.shape[1]):
            flat_out[c, i] = gamma[c] * (flat_in[c, i] - mean[c]) / math.sqrt(var[c] + eps) + beta[c]
    return out


def layer_norm_oracle(x, gamma, beta, eps):
    rows = x.reshape(-1, x.shape[-1])
    out = np.zeros_like(rows)
    for i in range(rows.shape[0]):
        n = rows.shape[1]
        mean = sum(rows[i]) / n
        var = sum((v - mean) ** 2 for v in rows[i]) / n
        for j in range(n):
            out[i, j] = gamma[j] * (rows[i, j] - mean) / math.sqrt(var + eps) + beta[j]
    return out.reshape(x.shape)


def global_avg_pool_oracle(x):
    c = x.shape[0]
    out = np.zeros(c)
    for ch in range(c):
        acc = 0.0
        count = 0
        for t in range(x.shape[1]):
            for h in range(x.shape[2]):
                for w in range(x.shape[3]):
                    acc += x[ch, t, h, w]
                    count += 1
        out[ch] = acc / count
    return out


def attention_oracle(tokens, wq, wk, wv, bq, bk, bv):
    s, d = tokens.shape
    q = linear_oracle(tokens, wq, bq)
    k = linear_oracle(tokens, wk, bk)
    v = linear_oracle(tokens, wv, bv)
    scores = np.zeros((s, s))
    for i in range(s):
        for j in range(s):
            scores[i, j] = sum(q[i, a] * k[j, a] for a in range(d)) / math.sqrt(d)
    attn = softmax_oracle(scores, axis=-1)
    out = np.zeros((s, d))
    for i in range(s):
        for a in range(d):
            out[i, a] = sum(attn[i, j] * v[j, a] for j in range(s))
    return out


def nearest_resample_oracle(plane, out_h, out_w):
    in_h, in_w = plane.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            si = min(int((i + 0.5) * in_h / out_h), in_h - 1)
            sj = min(int((j + 0.5) * in_w / out_w), in_w - 1)
            out[i, j] = plane[si, sj]
    return out


def median_filter_oracle(frame, k):
    h, w = frame.shape
    r = k // 2
    out = np.zeros_like(frame)
    for i in range(h):
        for j in range(w):
            vals = []
            for a in range(-r, r + 1):
                for b in range(-r, r + 1):
                    zi = min(max(i + a, 0), h - 1)
                    zj = min(max(j + b, 0), w - 1)
                    vals.append(frame[zi, zj])
            vals.sort()
            out[i, j] = vals[len(vals) // 2]
    return out
