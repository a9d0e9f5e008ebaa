# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled training kernel. Same contract as ``_pykernels.train_batch``."""

import numpy as np

from libc.math cimport cos, exp, fabs, isfinite, log1p, sin, sqrt

BACKEND = "cython"

cdef enum:
    TRANSE = 0
    DISTMULT = 1
    COMPLEX = 2
    SIMPLE = 3
    ROTATE = 4


cdef inline double softplus(double x) noexcept nogil:
    if x > 0:
        return x + log1p(exp(-x))
    return log1p(exp(x))


cdef inline double sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef double score(int kind, const double* h, const double* r, const double* t,
                  int d, double margin, int p, const double* cs) noexcept nogil:
    # cs: cos then sin of the RotatE phases, precomputed per relation row
    cdef int i, k = d // 2
    cdef double acc = 0.0, acc2 = 0.0, x, xr, xi, c, s
    if kind == TRANSE:
        if p == 1:
            for i in range(d):
                acc += fabs(h[i] + r[i] - t[i])
            return margin - acc
        for i in range(d):
            x = h[i] + r[i] - t[i]
            acc += x * x
        return margin - sqrt(acc)
    elif kind == DISTMULT:
        for i in range(d):
            acc += h[i] * t[i] * r[i]
        return acc
    elif kind == COMPLEX:
        for i in range(k):
            xr = h[i] * r[i] - h[i + k] * r[i + k]
            xi = h[i] * r[i + k] + h[i + k] * r[i]
            acc += xr * t[i] + xi * t[i + k]
        return acc
    elif kind == SIMPLE:
        for i in range(k):
            acc += h[i] * r[i] * t[i + k]
            acc2 += t[i] * r[i + k] * h[i + k]
        return 0.5 * (acc + acc2)
    else:
        for i in range(k):
            c = cs[i]
            s = cs[i + k]
            xr = h[i] * c - h[i + k] * s - t[i]
            xi = h[i] * s + h[i + k] * c - t[i + k]
            acc += sqrt(xr * xr + xi * xi)
        return margin - acc


cdef void accum_grad(int kind, const double* h, const double* r, const double* t,
                     int d, int p, const double* cs, double w,
                     double* gh, double* gr, double* gt) noexcept nogil:
    """Add ``w * d score / d x`` into gh, gr, gt."""
    cdef int i, k = d // 2
    cdef double x, g, norm, xr, xi, c, s, dr, di, m, u, v
    if kind == TRANSE:
        if p == 1:
            for i in range(d):
                x = h[i] + r[i] - t[i]
                if x > 0:
                    g = -w
                elif x < 0:
                    g = w
                else:
                    continue
                gh[i] += g
                gr[i] += g
                gt[i] -= g
            return
        norm = 0.0
        for i in range(d):
            x = h[i] + r[i] - t[i]
            norm += x * x
        norm = sqrt(norm)
        if norm == 0:
            return
        for i in range(d):
            g = -w * (h[i] + r[i] - t[i]) / norm
            gh[i] += g
            gr[i] += g
            gt[i] -= g
    elif kind == DISTMULT:
        for i in range(d):
            gh[i] += w * r[i] * t[i]
            gr[i] += w * h[i] * t[i]
            gt[i] += w * h[i] * r[i]
    elif kind == COMPLEX:
        for i in range(k):
            gh[i] += w * (r[i] * t[i] + r[i + k] * t[i + k])
            gh[i + k] += w * (r[i] * t[i + k] - r[i + k] * t[i])
            gr[i] += w * (h[i] * t[i] + h[i + k] * t[i + k])
            gr[i + k] += w * (h[i] * t[i + k] - h[i + k] * t[i])
            gt[i] += w * (h[i] * r[i] - h[i + k] * r[i + k])
            gt[i + k] += w * (h[i] * r[i + k] + h[i + k] * r[i])
    elif kind == SIMPLE:
        for i in range(k):
            gh[i] += 0.5 * w * r[i] * t[i + k]
            gh[i + k] += 0.5 * w * t[i] * r[i + k]
            gr[i] += 0.5 * w * h[i] * t[i + k]
            gr[i + k] += 0.5 * w * t[i] * h[i + k]
            gt[i] += 0.5 * w * r[i + k] * h[i + k]
            gt[i + k] += 0.5 * w * h[i] * r[i]
    else:
        for i in range(k):
            c = cs[i]
            s = cs[i + k]
            xr = h[i] * c - h[i + k] * s
            xi = h[i] * s + h[i + k] * c
            dr = xr - t[i]
            di = xi - t[i + k]
            m = sqrt(dr * dr + di * di)
            if m == 0:
                continue
            u = -w * dr / m
            v = -w * di / m
            gh[i] += u * c + v * s
            gh[i + k] += v * c - u * s
            gr[i] += v * xr - u * xi
            gt[i] -= u
            gt[i + k] -= v


def train_batch(int kind, double[:, ::1] ent, double[:, ::1] rel,
                const long long[:, ::1] pos, const long long[:, ::1] neg,
                const unsigned char[:, ::1] corrupt_head,
                double margin, int p_norm, double alpha, double reg, double lr):
    cdef Py_ssize_t B = pos.shape[0], K = neg.shape[1]
    cdef int d = ent.shape[1], rd = rel.shape[1]
    cdef double[:, ::1] g_head = np.zeros((B, d))
    cdef double[:, ::1] g_tail = np.zeros((B, d))
    cdef double[:, ::1] g_rel = np.zeros((B, rd))
    cdef double[:, :, ::1] g_neg = np.zeros((B, K, d))
    cdef double[::1] s_neg = np.empty(K)
    cdef double[::1] prob = np.empty(K)
    cdef double[::1] ell = np.empty(K)
    cdef double[::1] cs = np.zeros(max(2 * rd, 1))
    cdef Py_ssize_t b, k, i
    cdef long long hi, ri, ti, ni
    cdef double s_pos, zmax, zsum, mean_ell, dk, total = 0.0, sq
    cdef const double* hp
    cdef const double* rp
    cdef const double* tp
    cdef const double* np_

    with nogil:
        for b in range(B):
            hi = pos[b, 0]
            ri = pos[b, 1]
            ti = pos[b, 2]
            hp = &ent[hi, 0]
            rp = &rel[ri, 0]
            tp = &ent[ti, 0]
            if kind == ROTATE:
                for i in range(rd):
                    cs[i] = cos(rp[i])
                    cs[i + rd] = sin(rp[i])
            s_pos = score(kind, hp, rp, tp, d, margin, p_norm, &cs[0])
            for k in range(K):
                np_ = &ent[neg[b, k], 0]
                if corrupt_head[b, k]:
                    s_neg[k] = score(kind, np_, rp, tp, d, margin, p_norm, &cs[0])
                else:
                    s_neg[k] = score(kind, hp, rp, np_, d, margin, p_norm, &cs[0])
            zmax = alpha * s_neg[0]
            for k in range(1, K):
                if alpha * s_neg[k] > zmax:
                    zmax = alpha * s_neg[k]
            zsum = 0.0
            for k in range(K):
                prob[k] = exp(alpha * s_neg[k] - zmax)
                zsum += prob[k]
            mean_ell = 0.0
            for k in range(K):
                prob[k] /= zsum
                ell[k] = softplus(s_neg[k])
                mean_ell += prob[k] * ell[k]
            total += softplus(-s_pos) + mean_ell

            accum_grad(kind, hp, rp, tp, d, p_norm, &cs[0], -sigmoid(-s_pos),
                       &g_head[b, 0], &g_rel[b, 0], &g_tail[b, 0])
            for k in range(K):
                dk = prob[k] * sigmoid(s_neg[k]) + alpha * prob[k] * (ell[k] - mean_ell)
                np_ = &ent[neg[b, k], 0]
                if corrupt_head[b, k]:
                    accum_grad(kind, np_, rp, tp, d, p_norm, &cs[0], dk,
                               &g_neg[b, k, 0], &g_rel[b, 0], &g_tail[b, 0])
                else:
                    accum_grad(kind, hp, rp, np_, d, p_norm, &cs[0], dk,
                               &g_head[b, 0], &g_rel[b, 0], &g_neg[b, k, 0])

            if reg > 0:
                sq = 0.0
                for i in range(d):
                    g_head[b, i] += 2.0 * reg * hp[i]
                    g_tail[b, i] += 2.0 * reg * tp[i]
                    sq += hp[i] * hp[i] + tp[i] * tp[i]
                for i in range(rd):
                    g_rel[b, i] += 2.0 * reg * rp[i]
                    sq += rp[i] * rp[i]
                for k in range(K):
                    np_ = &ent[neg[b, k], 0]
                    for i in range(d):
                        g_neg[b, k, i] += 2.0 * reg * np_[i]
                        sq += np_[i] * np_[i]
                total += reg * sq

        if lr != 0.0 and isfinite(total):
            for b in range(B):
                hi = pos[b, 0]
                ri = pos[b, 1]
                ti = pos[b, 2]
                for i in range(d):
                    ent[hi, i] -= lr * g_head[b, i]
                for i in range(d):
                    ent[ti, i] -= lr * g_tail[b, i]
                for i in range(rd):
                    rel[ri, i] -= lr * g_rel[b, i]
                for k in range(K):
                    ni = neg[b, k]
                    for i in range(d):
                        ent[ni, i] -= lr * g_neg[b, k, i]
    return total
