"""Independent reference implementations used to cross-check the package.

Everything here is written in the most literal way possible (pure-Python loops,
classic textbook algorithms) and deliberately shares no code with src/nvbleed.
"""

from __future__ import annotations

import math


# ---------------------------------------------------------------------------
# Wire format / packet scheduling
# ---------------------------------------------------------------------------

FLIT = 16                # bytes per flit
UNIT = 32                # minimum transmission granularity (2 flits)
PACKET_PAYLOAD_FLITS = 16  # max payload flits per packet (256 B)
PACKET_OVERHEAD_FLITS = 2  # header + metadata


def oracle_wire_payload_bytes(payload: int) -> int:
    """Round payload up to 32-byte units by literally counting units."""
    if payload <= 0:
        return 0
    units = 0
    covered = 0
    while covered < payload:
        units += 1
        covered += UNIT
    return units * UNIT


def oracle_schedule(payload: int, slots: int):
    """Enumerate 32-byte units into packets, stripe packets round-robin.

    Returns (per_slot_payload_flits, per_slot_overhead_flits, packet_count).
    """
    assert slots >= 1
    per_payload = [0] * slots
    per_overhead = [0] * slots
    units = oracle_wire_payload_bytes(payload) // UNIT
    packet = 0
    while units > 0:
        take = min(units, PACKET_PAYLOAD_FLITS // 2)  # units per packet
        slot = packet % slots
        per_payload[slot] += take * 2                 # 2 flits per unit
        per_overhead[slot] += PACKET_OVERHEAD_FLITS
        units -= take
        packet += 1
    return per_payload, per_overhead, packet


# ---------------------------------------------------------------------------
# Window statistics (12 features)
# ---------------------------------------------------------------------------

def _percentile_linear(sorted_vals, q):
    """Linear interpolation between closest ranks; q in [0, 100]."""
    n = len(sorted_vals)
    if n == 1:
        return float(sorted_vals[0])
    rank = (n - 1) * (q / 100.0)
    lo = int(math.floor(rank))
    hi = int(math.ceil(rank))
    if lo == hi:
        return float(sorted_vals[lo])
    frac = rank - lo
    return float(sorted_vals[lo]) * (1.0 - frac) + float(sorted_vals[hi]) * frac


def oracle_window_stats(values):
    """The 12 per-window statistics, computed with sequential pure-Python math."""
    vals = [float(v) for v in values]
    n = len(vals)
    assert n >= 1
    total = 0.0
    for v in vals:
        total += v
    mean = total / n
    sq = 0.0
    for v in vals:
        sq += (v - mean) ** 2
    var = sq / n                      # population variance
    std = math.sqrt(var)
    s = sorted(vals)
    if n % 2 == 1:
        median = s[n // 2]
    else:
        median = 0.5 * (s[n // 2 - 1] + s[n // 2])
    count_am = 0
    for v in vals:
        if v > mean:
            count_am += 1
    p25 = _percentile_linear(s, 25)
    p75 = _percentile_linear(s, 75)
    return {
        "mean": mean,
        "max": s[-1],
        "min": s[0],
        "median": median,
        "std": std,
        "var": var,
        "range": s[-1] - s[0],
        "sum": total,
        "count_am": float(count_am),
        "percent_25": p25,
        "percent_75": p75,
        "iqr_val": p75 - p25,
    }


# ---------------------------------------------------------------------------
# Levenshtein distance: classic full DP table
# ---------------------------------------------------------------------------

def oracle_levenshtein(a, b) -> int:
    n, m = len(a), len(b)
    prev = list(range(m + 1))
    for i in range(1, n + 1):
        cur = [i] + [0] * m
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + cost)
        prev = cur
    return prev[m]


# ---------------------------------------------------------------------------
# KNN: brute-force neighbor search with explicit tie rules
# ---------------------------------------------------------------------------

def _sqdist(a, b):
    total = 0.0
    for x, y in zip(a, b):
        d = float(x) - float(y)
        total += d * d
    return total


def oracle_knn_neighbors(train_x, query, k):
    """Indices of the k nearest training rows ordered by (distance, index)."""
    scored = sorted((_sqdist(row, query), i) for i, row in enumerate(train_x))
    return [i for _, i in scored[:k]], [d for d, _ in scored[:k]]


def oracle_knn_predict(train_x, train_y, query, k):
    """Majority vote; ties -> smaller summed distance, then lower label id."""
    idx, dist = oracle_knn_neighbors(train_x, query, k)
    votes = {}
    for i, d in zip(idx, dist):
        label = train_y[i]
        cnt, tot = votes.get(label, (0, 0.0))
        votes[label] = (cnt + 1, tot + d)
    best = sorted(votes.items(), key=lambda kv: (-kv[1][0], kv[1][1], kv[0]))
    return best[0][0]


def oracle_knn_regress(train_x, train_y, query, k):
    idx, _ = oracle_knn_neighbors(train_x, query, k)
    return sum(float(train_y[i]) for i in idx) / k


# ---------------------------------------------------------------------------
# Classification metrics (macro-averaged) via explicit confusion counting
# ---------------------------------------------------------------------------

def oracle_macro_metrics(y_true, y_pred):
    labels = sorted(set(list(y_true) + list(y_pred)))
    precs, recs, f1s = [], [], []
    for c in labels:
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        precs.append(prec)
        recs.append(rec)
        f1s.append(f1)
    n = len(labels)
    return sum(precs) / n, sum(recs) / n, sum(f1s) / n


def oracle_r2(y_true, y_pred):
    yt = [float(v) for v in y_true]
    yp = [float(v) for v in y_pred]
    mean = sum(yt) / len(yt)
    ss_tot = sum((v - mean) ** 2 for v in yt)
    ss_res = sum((t - p) ** 2 for t, p in zip(yt, yp))
    if ss_tot == 0:
        raise ValueError("R^2 undefined for constant targets")
    return 1.0 - ss_res / ss_tot


# ---------------------------------------------------------------------------
# Conv / pool candidate enumeration: brute force over the whole (F, S, P) box
# ---------------------------------------------------------------------------

def oracle_conv_candidates(elements: int, batch: int, w_prev: int):
    """All (w_out, channels, f, s, p) with w_out^2*c*batch == elements and a
    consistent integer conv geometry: s <= f <= floor(w_prev/2), p <= f,
    w_out == (w_prev - f + 2p)/s + 1 exactly."""
    if elements % batch:
        return []
    per = elements // batch
    out = []
    w = 1
    while w * w <= per:
        if per % (w * w) == 0:
            c = per // (w * w)
            for f in range(1, w_prev // 2 + 1):
                for s in range(1, f + 1):
                    for p in range(0, f + 1):
                        num = w_prev - f + 2 * p
                        if num >= 0 and num % s == 0 and num // s + 1 == w:
                            out.append((w, c, f, s, p))
        w += 1
    return sorted(out)


def oracle_pool_candidates(elements: int, batch: int, w_prev: int):
    """All (w_out, channels, f, s) with w_out^2*c*batch == elements and
    w_out == (w_prev - f)/s + 1, s <= f <= floor(w_prev/2)."""
    if elements % batch:
        return []
    per = elements // batch
    out = []
    w = 1
    while w * w <= per:
        if per % (w * w) == 0:
            c = per // (w * w)
            for f in range(1, w_prev // 2 + 1):
                for s in range(1, f + 1):
                    num = w_prev - f
                    if num >= 0 and num % s == 0 and num // s + 1 == w:
                        out.append((w, c, f, s))
        w += 1
    return sorted(out)
