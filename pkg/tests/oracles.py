"""Brute-force reference implementations, deliberately naive and independent
of the package's vectorized/jitted code paths."""

from talkit.core import tiou


def brute_greedy_hits(dets, gts, thr):
    """dets: ranked list of (video, Segment); gts: list of (video, Segment)."""
    used = [False] * len(gts)
    hits = []
    for vid, seg in dets:
        best, best_iou = None, -1.0
        for j, (gv, gseg) in enumerate(gts):
            if gv != vid or used[j]:
                continue
            ov = tiou(seg, gseg)
            if ov > best_iou:
                best, best_iou = j, ov
        if best is not None and best_iou >= thr:
            used[best] = True
            hits.append(True)
        else:
            hits.append(False)
    return hits


def brute_ap(hits, num_gt):
    """Integrate max{precision_k : recall_k >= r} over r in [0, 1] piecewise."""
    points = []
    tp = 0
    for k, h in enumerate(hits, start=1):
        tp += h
        points.append((tp / num_gt, tp / k))
    recalls = sorted({r for r, _ in points} | {0.0})
    ap = 0.0
    for lo, hi in zip(recalls, recalls[1:]):
        # on (lo, hi] the envelope is the best precision at any recall >= hi
        ap += (hi - lo) * max(p for r, p in points if r >= hi)
    return ap


def brute_assign(points, instances, radius):
    """points: list of (c, stride, lo, hi); instances: list of (ts, te)."""
    out = []
    for c, s, lo, hi in points:
        best, best_len = -1, None
        for k, (ts, te) in enumerate(instances):
            mid = (ts + te) / 2
            if abs(c - mid) > radius * s:
                continue
            if not (ts < c < te):
                continue
            reach = max(c - ts, te - c)
            if not (lo <= reach < hi):
                continue
            if best_len is None or te - ts < best_len:
                best, best_len = k, te - ts
        out.append(best)
    return out


def brute_hard_nms(dets):
    """Same-class greedy NMS where any positive overlap suppresses."""
    remaining = sorted(dets, key=lambda d: (-d.score, d.segment.start, d.label_id))
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        remaining = [d for d in remaining if d.label_id != top.label_id or tiou(d.segment, top.segment) == 0]
    return kept


def brute_attention(q, k, v, key_valid, half_width):
    """Per-query softmax attention over keys within +-half_width, plain loops."""
    import math

    import numpy as np

    t, d = q.shape
    out = np.zeros_like(q)
    for i in range(t):
        idx = [j for j in range(t) if abs(i - j) <= half_width and key_valid[j]]
        s = np.array([q[i] @ k[j] / math.sqrt(d) for j in idx])
        w = np.exp(s - s.max())
        w /= w.sum()
        out[i] = sum(wj * v[j] for wj, j in zip(w, idx))
    return out


def finite_difference_gradients(loss_fn, params, h=1e-6, chunk=256):
    """Central differences of ``loss_fn(params)`` w.r.t. every parameter element.

    ``params`` maps names to float64 tensors; perturbations are evaluated in
    batches with torch.func.vmap.
    """
    import torch
    from torch.func import vmap

    grads = {}
    for name, p in params.items():
        n = p.numel()
        num = torch.empty(n, dtype=p.dtype)
        for lo in range(0, n, chunk):
            idx = torch.arange(lo, min(n, lo + chunk))
            delta = torch.zeros(len(idx), n, dtype=p.dtype)
            delta[torch.arange(len(idx)), idx] = h

            def at(d, name=name, p=p):
                return loss_fn({**params, name: p + d.view_as(p)})

            num[idx] = (vmap(at)(delta) - vmap(at)(-delta)) / (2 * h)
        grads[name] = num.view_as(p)
    return grads
