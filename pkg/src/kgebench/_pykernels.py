"""Pure numpy training kernel, used when the compiled extension is unavailable.

Mirrors ``_ckernels.train_batch`` exactly in semantics and update order.
"""

import numpy as np

from .models import ModelConfig, ModelKind, grad_rows

BACKEND = "python"


def _log_sigmoid(x):
    return -np.logaddexp(0.0, -x)


def _sigmoid(x):
    return np.exp(_log_sigmoid(x))


def train_batch(kind_code, ent, rel, pos, neg, corrupt_head,
                margin, p_norm, alpha, reg, lr):
    """Self-adversarial SGD step on one batch. Updates ``ent``/``rel`` in place.

    Gradients for every triple are computed from the table as it is on entry
    and then applied row by row: for each positive, head, tail, relation, then
    its corrupted entities in order. Returns the summed loss of the batch;
    when it is not finite the table is left untouched.
    """
    cfg = ModelConfig(ModelKind.from_code(kind_code), dim=ent.shape[1],
                      margin=margin, p_norm=p_norm)
    h, r, t = pos[:, 0], pos[:, 1], pos[:, 2]
    H, R, T = ent[h], rel[r], ent[t]
    N = ent[neg]
    is_head = corrupt_head.astype(bool)[..., None]

    s_pos, gh, gr, gt = grad_rows(cfg, H, R, T)
    Hn = np.where(is_head, N, H[:, None, :])
    Tn = np.where(is_head, T[:, None, :], N)
    s_neg, nh, nr, nt = grad_rows(cfg, Hn, R[:, None, :], Tn)

    # loss = -log sig(s+) - sum_k p_k log sig(-s_k),  p = softmax(alpha * s)
    z = alpha * s_neg
    z = z - z.max(axis=1, keepdims=True)
    p = np.exp(z)
    p /= p.sum(axis=1, keepdims=True)
    ell = -_log_sigmoid(-s_neg)
    mean_ell = (p * ell).sum(axis=1)
    loss = -_log_sigmoid(s_pos) + mean_ell
    d_pos = -_sigmoid(-s_pos)
    d_neg = p * _sigmoid(s_neg) + alpha * p * (ell - mean_ell[:, None])

    w = d_neg[..., None]
    g_head = d_pos[:, None] * gh + (np.where(is_head, 0.0, nh) * w).sum(axis=1)
    g_tail = d_pos[:, None] * gt + (np.where(is_head, nt, 0.0) * w).sum(axis=1)
    g_rel = d_pos[:, None] * gr + (nr * w).sum(axis=1)
    g_neg = np.where(is_head, nh, nt) * w

    if reg > 0:
        g_head = g_head + 2.0 * reg * H
        g_tail = g_tail + 2.0 * reg * T
        g_rel = g_rel + 2.0 * reg * R
        g_neg = g_neg + 2.0 * reg * N
        loss = loss + reg * ((H * H).sum(-1) + (T * T).sum(-1) + (R * R).sum(-1)
                             + (N * N).sum((-1, -2)))

    B, K = neg.shape
    d = ent.shape[1]
    rows = np.concatenate([h[:, None], t[:, None], neg], axis=1).reshape(-1)
    grads = np.concatenate([g_head[:, None], g_tail[:, None], g_neg], axis=1).reshape(B * (K + 2), d)
    total = float(loss.sum())
    if lr != 0.0 and np.isfinite(total):
        # entity rows in order head, tail, negatives per triple; relations separately
        np.subtract.at(ent, rows, lr * grads)
        np.subtract.at(rel, r, lr * g_rel)
    return total
