"""Hot numeric kernels with a numba path and a pure-numpy path.

Every kernel exists twice: ``_np_<name>`` (vectorised numpy, always
available) and ``_nb_<name>`` (``@njit`` loops). The public names bound at
import time point at the numba versions unless numba is missing or the
environment variable ``CBBA_ETC_PURE_NUMPY`` is set to a truthy value.

Both paths are required to return identical results; ``tests/test_kernels.py``
checks them against each other and ``benchmarks/bench_kernels.py`` times them.
"""

from __future__ import annotations

import math
import os

import numpy as np

_TRUTHY = {"1", "true", "yes", "on"}

try:  # pragma: no cover - exercised implicitly by the import
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("CBBA_ETC_PURE_NUMPY", "").lower() not in _TRUTHY
BACKEND = "numba" if USE_NUMBA else "numpy"

TWO_PI = 2.0 * math.pi


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def _np_distances(px, py, pts):
    return np.hypot(pts[:, 0] - px, pts[:, 1] - py)


def _np_cone_mask(px, py, heading, pts, active, vision_range, half_angle):
    dx = pts[:, 0] - px
    dy = pts[:, 1] - py
    d = np.hypot(dx, dy)
    bearing = np.arctan2(dy, dx)
    off = np.abs((bearing - heading + math.pi) % TWO_PI - math.pi)
    return active & (d <= vision_range) & ((off <= half_angle) | (d == 0.0))


def _np_utility_row(px, py, color, pts, colors, eps, mismatch_factor):
    d = np.hypot(pts[:, 0] - px, pts[:, 1] - py)
    u = 1.0 / (d + eps)
    return np.where(colors == color, u, mismatch_factor * u)


def _np_greedy_bundle(util, avail, vid, capacity):
    idx = np.flatnonzero(avail)
    if idx.size == 0 or capacity <= 0:
        return np.empty(0, dtype=np.int64)
    # lexsort: last key is primary -> highest utility first, then lowest id
    order = np.lexsort((vid[idx], -util[idx]))
    return idx[order[:capacity]].astype(np.int64)


def _np_merge_state(y, z, st, vid, my, mz, mst, mvid, sender, me):
    has = (mvid >= 0) & (mz != me)
    newer = has & (mvid > vid)
    same = has & (mvid == vid)
    clear = same & (mz < 0) & (z == sender) & (mst > st)
    claim = same & (mz >= 0)
    local_none = claim & (z < 0)
    same_winner = claim & (z == mz) & (mst > st)
    sender_newer = claim & (z == sender) & (z != mz) & (mst > st)
    better = claim & (z >= 0) & (z != mz) & ((my > y) | ((my == y) & (mz < z)))
    adopt = newer | local_none | same_winner | sender_newer | better
    y[clear] = 0.0
    z[clear] = -1
    st[clear] = mst[clear]
    y[adopt] = my[adopt]
    z[adopt] = mz[adopt]
    st[adopt] = mst[adopt]
    vid[adopt] = mvid[adopt]


def _np_nearest_sq_dist(points, centers):
    diff = points[:, None, :] - centers[None, :, :]
    return np.min(np.sum(diff * diff, axis=2), axis=1)


def _np_lloyd(points, centers, max_iter):
    centers = centers.copy()
    k = centers.shape[0]
    labels = np.full(points.shape[0], -1, dtype=np.int64)
    for _ in range(max_iter):
        diff = points[:, None, :] - centers[None, :, :]
        new = np.argmin(np.sum(diff * diff, axis=2), axis=1).astype(np.int64)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = points[labels == c]
            if members.shape[0]:
                centers[c] = members.mean(axis=0)
    return labels, centers


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


def _nb_distances(px, py, pts):
    n = pts.shape[0]
    out = np.empty(n)
    for i in range(n):
        out[i] = math.hypot(pts[i, 0] - px, pts[i, 1] - py)
    return out


def _nb_cone_mask(px, py, heading, pts, active, vision_range, half_angle):
    n = pts.shape[0]
    out = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        if not active[i]:
            continue
        dx = pts[i, 0] - px
        dy = pts[i, 1] - py
        d = math.hypot(dx, dy)
        if d > vision_range:
            continue
        if d == 0.0:
            out[i] = True
            continue
        off = abs((math.atan2(dy, dx) - heading + math.pi) % TWO_PI - math.pi)
        out[i] = off <= half_angle
    return out


def _nb_utility_row(px, py, color, pts, colors, eps, mismatch_factor):
    n = pts.shape[0]
    out = np.empty(n)
    for i in range(n):
        u = 1.0 / (math.hypot(pts[i, 0] - px, pts[i, 1] - py) + eps)
        out[i] = u if colors[i] == color else mismatch_factor * u
    return out


def _nb_greedy_bundle(util, avail, vid, capacity):
    n = util.shape[0]
    taken = np.zeros(n, dtype=np.bool_)
    out = np.empty(max(capacity, 0), dtype=np.int64)
    k = 0
    while k < capacity:
        best = -1
        for i in range(n):
            if not avail[i] or taken[i]:
                continue
            if best < 0 or util[i] > util[best] or (util[i] == util[best] and vid[i] < vid[best]):
                best = i
        if best < 0:
            break
        taken[best] = True
        out[k] = best
        k += 1
    return out[:k]


def _nb_merge_state(y, z, st, vid, my, mz, mst, mvid, sender, me):
    for s in range(y.shape[0]):
        if mvid[s] < 0 or mz[s] == me:
            continue
        if mvid[s] > vid[s]:
            adopt = True
        elif mvid[s] < vid[s]:
            continue
        elif mz[s] < 0:
            if z[s] == sender and mst[s] > st[s]:
                y[s] = 0.0
                z[s] = -1
                st[s] = mst[s]
            continue
        elif z[s] < 0:
            adopt = True
        elif z[s] == mz[s]:
            adopt = mst[s] > st[s]
        elif z[s] == sender and mst[s] > st[s]:
            adopt = True
        else:
            adopt = my[s] > y[s] or (my[s] == y[s] and mz[s] < z[s])
        if adopt:
            y[s] = my[s]
            z[s] = mz[s]
            st[s] = mst[s]
            vid[s] = mvid[s]


def _nb_nearest_sq_dist(points, centers):
    n = points.shape[0]
    out = np.empty(n)
    for i in range(n):
        best = np.inf
        for c in range(centers.shape[0]):
            dx = points[i, 0] - centers[c, 0]
            dy = points[i, 1] - centers[c, 1]
            d = dx * dx + dy * dy
            if d < best:
                best = d
        out[i] = best
    return out


def _nb_lloyd(points, centers, max_iter):
    centers = centers.copy()
    n = points.shape[0]
    k = centers.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    for _ in range(max_iter):
        changed = False
        for i in range(n):
            best = 0
            bestd = np.inf
            for c in range(k):
                dx = points[i, 0] - centers[c, 0]
                dy = points[i, 1] - centers[c, 1]
                d = dx * dx + dy * dy
                if d < bestd:
                    bestd = d
                    best = c
            if labels[i] != best:
                labels[i] = best
                changed = True
        if not changed:
            break
        sums = np.zeros((k, 2))
        counts = np.zeros(k, dtype=np.int64)
        for i in range(n):
            sums[labels[i], 0] += points[i, 0]
            sums[labels[i], 1] += points[i, 1]
            counts[labels[i]] += 1
        for c in range(k):
            if counts[c] > 0:
                centers[c, 0] = sums[c, 0] / counts[c]
                centers[c, 1] = sums[c, 1] / counts[c]
    return labels, centers


_NAMES = (
    "distances",
    "cone_mask",
    "utility_row",
    "greedy_bundle",
    "merge_state",
    "nearest_sq_dist",
    "lloyd",
)

numpy_impl = {name: globals()[f"_np_{name}"] for name in _NAMES}

if HAVE_NUMBA:
    numba_impl = {name: numba.njit(cache=True)(globals()[f"_nb_{name}"]) for name in _NAMES}
else:  # pragma: no cover
    numba_impl = {}

_active = numba_impl if USE_NUMBA else numpy_impl

distances = _active["distances"]
cone_mask = _active["cone_mask"]
utility_row = _active["utility_row"]
greedy_bundle = _active["greedy_bundle"]
merge_state = _active["merge_state"]
nearest_sq_dist = _active["nearest_sq_dist"]
lloyd = _active["lloyd"]
