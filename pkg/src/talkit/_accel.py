"""Hot loops: SoftNMS, greedy detection/GT matching and point assignment.

Each kernel exists twice: a numba ``@njit`` loop and a vectorized numpy
version. Both take and return plain arrays so they are interchangeable.
The numba path is used when numba imports and ``TALKIT_USE_NUMBA`` is not
``"0"``; the numpy path is the fallback and the reference the tests compare
against.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("TALKIT_USE_NUMBA", "1") != "0"


def _njit(func):
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)


# --------------------------------------------------------------------------
# SoftNMS (one class). Inputs must be pre-sorted by (score desc, start asc)
# so that ties in the running maximum resolve toward the lower position.
# Returns kept positions in pick order and their final scores.
# --------------------------------------------------------------------------


def _soft_nms_loop(starts, ends, scores, sigma, floor):
    n = starts.shape[0]
    cur = scores.copy()
    alive = np.ones(n, dtype=np.bool_)
    keep = np.empty(n, dtype=np.int64)
    keep_scores = np.empty(n, dtype=np.float64)
    n_keep = 0
    for _ in range(n):
        best = -1
        best_score = -1.0
        for i in range(n):
            if alive[i] and cur[i] > best_score:
                best = i
                best_score = cur[i]
        if best < 0:
            break
        alive[best] = False
        keep[n_keep] = best
        keep_scores[n_keep] = best_score
        n_keep += 1
        bs = starts[best]
        be = ends[best]
        for i in range(n):
            if not alive[i]:
                continue
            inter = min(be, ends[i]) - max(bs, starts[i])
            if inter <= 0.0:
                continue
            union = max(be, ends[i]) - min(bs, starts[i])
            ov = inter / union
            cur[i] = cur[i] * np.exp(-(ov * ov) / sigma)
            if cur[i] < floor:
                alive[i] = False
    return keep[:n_keep], keep_scores[:n_keep]


def soft_nms_numpy(starts, ends, scores, sigma, floor):
    n = starts.shape[0]
    cur = np.asarray(scores, dtype=np.float64).copy()
    alive = np.ones(n, dtype=bool)
    keep, keep_scores = [], []
    while alive.any():
        masked = np.where(alive, cur, -1.0)
        best = int(np.argmax(masked))
        keep.append(best)
        keep_scores.append(cur[best])
        alive[best] = False
        inter = np.minimum(ends[best], ends) - np.maximum(starts[best], starts)
        union = np.maximum(ends[best], ends) - np.minimum(starts[best], starts)
        hit = alive & (inter > 0)
        ov = np.where(hit, inter / union, 0.0)
        cur[hit] = cur[hit] * np.exp(-(ov[hit] * ov[hit]) / sigma)
        alive &= ~(hit & (cur < floor))
    return np.asarray(keep, dtype=np.int64), np.asarray(keep_scores, dtype=np.float64)


# --------------------------------------------------------------------------
# Greedy one-to-one matching. Detections are processed in the given order;
# each takes its best-tIoU unmatched GT of the same group (video) and counts
# as a hit if that tIoU reaches the threshold. GTs are grouped CSR-style:
# group g owns gt rows gt_ptr[g]:gt_ptr[g+1].
# --------------------------------------------------------------------------


def _greedy_match_loop(det_group, det_starts, det_ends, gt_ptr, gt_starts, gt_ends, thr):
    n = det_group.shape[0]
    taken = np.zeros(gt_starts.shape[0], dtype=np.bool_)
    hit = np.zeros(n, dtype=np.bool_)
    for d in range(n):
        g = det_group[d]
        if g < 0:
            continue
        best = -1
        best_iou = -1.0
        for j in range(gt_ptr[g], gt_ptr[g + 1]):
            if taken[j]:
                continue
            inter = min(det_ends[d], gt_ends[j]) - max(det_starts[d], gt_starts[j])
            ov = 0.0
            if inter > 0.0:
                ov = inter / (max(det_ends[d], gt_ends[j]) - min(det_starts[d], gt_starts[j]))
            if ov > best_iou:
                best_iou = ov
                best = j
        if best >= 0 and best_iou >= thr:
            taken[best] = True
            hit[d] = True
    return hit


def greedy_match_numpy(det_group, det_starts, det_ends, gt_ptr, gt_starts, gt_ends, thr):
    n = det_group.shape[0]
    taken = np.zeros(gt_starts.shape[0], dtype=bool)
    hit = np.zeros(n, dtype=bool)
    for d in range(n):
        g = det_group[d]
        if g < 0:
            continue
        lo, hi = gt_ptr[g], gt_ptr[g + 1]
        if lo == hi:
            continue
        s, e = gt_starts[lo:hi], gt_ends[lo:hi]
        inter = np.minimum(det_ends[d], e) - np.maximum(det_starts[d], s)
        union = np.maximum(det_ends[d], e) - np.minimum(det_starts[d], s)
        ov = np.where(inter > 0, inter / union, 0.0)
        ov[taken[lo:hi]] = -1.0
        j = int(np.argmax(ov))
        if ov[j] >= thr and not taken[lo + j]:
            taken[lo + j] = True
            hit[d] = True
    return hit


# --------------------------------------------------------------------------
# Point assignment. For each point (center c, stride s, range [lo, hi)) find
# the shortest instance satisfying the center-radius, interior and range
# conditions; ties go to the lower instance index. -1 means negative.
# --------------------------------------------------------------------------


def _assign_loop(centers, strides, range_lo, range_hi, radius, inst_starts, inst_ends):
    n_pts = centers.shape[0]
    n_inst = inst_starts.shape[0]
    winner = np.full(n_pts, -1, dtype=np.int64)
    for p in range(n_pts):
        c = centers[p]
        best_len = np.inf
        for k in range(n_inst):
            ts = inst_starts[k]
            te = inst_ends[k]
            if not (ts < c and c < te):
                continue
            if abs(c - 0.5 * (ts + te)) > radius * strides[p]:
                continue
            reach = max(c - ts, te - c)
            if reach < range_lo[p] or reach >= range_hi[p]:
                continue
            length = te - ts
            if length < best_len:
                best_len = length
                winner[p] = k
    return winner


def assign_numpy(centers, strides, range_lo, range_hi, radius, inst_starts, inst_ends):
    if inst_starts.shape[0] == 0:
        return np.full(centers.shape[0], -1, dtype=np.int64)
    c = centers[:, None]
    ts, te = inst_starts[None, :], inst_ends[None, :]
    reach = np.maximum(c - ts, te - c)
    ok = (
        (ts < c)
        & (c < te)
        & (np.abs(c - 0.5 * (ts + te)) <= radius * strides[:, None])
        & (reach >= range_lo[:, None])
        & (reach < range_hi[:, None])
    )
    lengths = np.where(ok, te - ts, np.inf)
    winner = np.argmin(lengths, axis=1)
    return np.where(ok.any(axis=1), winner, -1).astype(np.int64)


soft_nms_numba = _njit(_soft_nms_loop)
greedy_match_numba = _njit(_greedy_match_loop)
assign_numba = _njit(_assign_loop)

if USE_NUMBA:
    soft_nms_kernel = soft_nms_numba
    greedy_match_kernel = greedy_match_numba
    assign_kernel = assign_numba
else:
    soft_nms_kernel = soft_nms_numpy
    greedy_match_kernel = greedy_match_numpy
    assign_kernel = assign_numpy
