"""Compiled inner loops (numba).

Everything here is a plain integer-array algorithm with a pure-Python twin
in the public modules; the twins are the reference implementations and the
test suite pins kernel output to them exactly.  If numba is unavailable the
package silently runs on the Python paths.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap


@njit(cache=True, nogil=True)
def stabilize_core(h, nbr, counts, cap):
    """Bulk-toppling FIFO stabilization, in place.

    Each dequeue topples a site as many times as its excess allows in one
    go.  Returns total topplings, or -1 if ``cap`` was exceeded.
    """
    n = h.shape[0]
    twod = nbr.shape[1]
    m = n + 1  # ring capacity; a site sits in the queue at most once
    queue = np.empty(m, np.int64)
    inq = np.zeros(n, np.uint8)
    head = 0
    tail = 0
    for i in range(n):
        if h[i] > twod:
            queue[tail] = i
            tail = (tail + 1) % m
            inq[i] = 1
    total = 0
    while head != tail:
        s = queue[head]
        head = (head + 1) % m
        inq[s] = 0
        excess = h[s] - twod
        if excess <= 0:
            continue
        k = (excess + twod - 1) // twod
        h[s] -= k * twod
        counts[s] += k
        total += k
        if total > cap:
            return -1
        for sl in range(twod):
            t = nbr[s, sl]
            if t >= 0:
                h[t] += k
                if h[t] > twod and inq[t] == 0:
                    queue[tail] = t
                    tail = (tail + 1) % m
                    inq[t] = 1
    return total


@njit(cache=True, nogil=True)
def add_rows_accumulate(hmat, nbr, x, counts_acc, cap):
    """Add one grain at site-index x in every row and stabilize it in place.

    counts_acc picks up the toppling numbers summed over rows (exact
    integers).  Returns -1 if any row exceeds the toppling cap.
    """
    m = hmat.shape[0]
    n = hmat.shape[1]
    row_counts = np.zeros(n, np.int64)
    for r in range(m):
        row = hmat[r]
        row[x] += 1
        for i in range(n):
            row_counts[i] = 0
        if stabilize_core(row, nbr, row_counts, cap) < 0:
            return -1
        for i in range(n):
            counts_acc[i] += row_counts[i]
    return 0


@njit(cache=True, nogil=True)
def wilson_walks(nbr, order, dirs, op, cur, pos, in_tree, parent_slot, last_slot):
    """Advance Wilson's algorithm as far as the random-direction buffer allows.

    order: site indices to start walks from; op: position in it.  cur is the
    in-flight walk position (-1 = start the next walk).  Walk steps consume
    ``dirs`` sequentially from ``pos``.  When a walk is absorbed (sink slot
    or a site already in the tree) the loop erasure is recovered by chasing
    last-exit slots from the start site, and that branch joins the tree.

    Returns (op, cur, pos, done).
    """
    n_dirs = dirs.shape[0]
    while op < order.shape[0]:
        s = order[op]
        if cur == -1:
            if in_tree[s] == 1:
                op += 1
                continue
            cur = s
        absorbed = False
        while not absorbed:
            if pos >= n_dirs:
                return op, cur, pos, 0
            slot = dirs[pos]
            pos += 1
            last_slot[cur] = slot
            t = nbr[cur, slot]
            if t < 0 or in_tree[t] == 1:
                u = s
                while u >= 0 and in_tree[u] == 0:
                    sl = last_slot[u]
                    parent_slot[u] = sl
                    in_tree[u] = 1
                    u = nbr[u, sl]
                cur = -1
                op += 1
                absorbed = True
            else:
                cur = t
    return op, cur, pos, 1


@njit(cache=True, nogil=True)
def component_flags(parent_slot, nbr, origin_idx):
    """1 for sites whose parent chain ends at origin_idx, 0 for the sink side.

    A chain longer than n sites means a parent cycle; every site is then
    reported as -2 (malformed).
    """
    n = parent_slot.shape[0]
    flag = np.full(n, -1, np.int8)
    if origin_idx >= 0:
        flag[origin_idx] = 1
    stack = np.empty(n, np.int64)
    for i in range(n):
        if flag[i] >= 0:
            continue
        u = i
        depth = 0
        while True:
            if u < 0:
                res = 0
                break
            if flag[u] >= 0:
                res = flag[u]
                break
            if depth >= n:
                return np.full(n, -2, np.int8)
            stack[depth] = u
            depth += 1
            u = nbr[u, parent_slot[u]]
        for k in range(depth):
            flag[stack[k]] = res
    return flag


@njit(cache=True, nogil=True)
def forest_heights(parent_slot, nbr, origin_idx):
    """Reconstruct heights from a rooted forest (single root or two roots).

    Returns (heights, times, status).  times[i] is the burn round of site i
    in the canonical schedule: distance to the sink for a single-root forest;
    for a two-root forest the origin component burns first (origin at round
    0) and the sink ignites one round after that component finishes.  The
    height of a site is read off from how many of its neighbor slots were
    burnt when it burnt, plus the rank of its parent slot among the slots
    burnt exactly one round earlier.  status -1 flags a malformed forest;
    the origin site (if any) carries height 0.
    """
    n = parent_slot.shape[0]
    twod = nbr.shape[1]
    heights = np.zeros(n, np.int64)
    comp = component_flags(parent_slot, nbr, origin_idx)
    if n > 0 and comp[0] == -2:
        return heights, np.full(n, -1, np.int64), -1
    # chain length to own root
    clen = np.full(n, -1, np.int64)
    if origin_idx >= 0:
        clen[origin_idx] = 0
    stack = np.empty(n, np.int64)
    for i in range(n):
        if clen[i] >= 0:
            continue
        u = i
        depth = 0
        base = 0
        while True:
            if u < 0:
                base = 0
                break
            if clen[u] >= 0:
                base = clen[u]
                break
            stack[depth] = u
            depth += 1
            u = nbr[u, parent_slot[u]]
        for k in range(depth - 1, -1, -1):
            base += 1
            clen[stack[k]] = base
    times = np.empty(n, np.int64)
    if origin_idx < 0:
        sink_time = 0
        for i in range(n):
            times[i] = clen[i]
    else:
        t_max = np.int64(0)
        for i in range(n):
            if comp[i] == 1 and clen[i] > t_max:
                t_max = clen[i]
        sink_time = t_max + 1
        for i in range(n):
            times[i] = clen[i] if comp[i] == 1 else sink_time + clen[i]
    for i in range(n):
        if i == origin_idx:
            continue
        t = times[i]
        c = 0
        c2 = 0
        rank = 0
        ok = False
        for sl in range(twod):
            tgt = nbr[i, sl]
            st = sink_time if tgt < 0 else times[tgt]
            if st <= t - 1:
                c += 1
                if st <= t - 2:
                    c2 += 1
                elif sl <= parent_slot[i]:
                    rank += 1
                    if sl == parent_slot[i]:
                        ok = True
        if not ok:
            return heights, times, -1
        heights[i] = twod - c + rank
    return heights, times, 0


@njit(cache=True, nogil=True)
def relax_wave(h, nbr, origin, toppled):
    """One wave: topple origin once, then relax every other unstable site.

    Origin stays frozen afterwards (it may sit above threshold).  toppled is
    zeroed here and marks the wave's sites.  Returns (wave_size, status);
    status -1 means some non-origin site went unstable twice, which a legal
    sandpile state never produces.
    """
    n = h.shape[0]
    twod = nbr.shape[1]
    for i in range(n):
        toppled[i] = 0
    h[origin] -= twod
    toppled[origin] = 1
    size = 1
    queue = np.empty(n + 1, np.int64)
    head = 0
    tail = 0
    for sl in range(twod):
        t = nbr[origin, sl]
        if t >= 0:
            h[t] += 1
            if h[t] > twod and t != origin:
                if toppled[t] == 1:
                    return size, -1
                queue[tail] = t
                tail += 1
                toppled[t] = 1
                size += 1
    while head < tail:
        s = queue[head]
        head += 1
        h[s] -= twod
        for sl in range(twod):
            t = nbr[s, sl]
            if t >= 0:
                h[t] += 1
                if h[t] > twod and t != origin and toppled[t] == 0:
                    queue[tail] = t
                    tail += 1
                    toppled[t] = 1
                    size += 1
    for i in range(n):
        if i != origin and h[i] > twod:
            return size, -1
    return size, 0


@njit(cache=True, nogil=True)
def chain_occupancy(h, nbr, site_draws, occ, cap):
    """Run the addition Markov chain and tally visited stable states.

    States are encoded in mixed radix: sum_i (h[i]-1) * (2d)^i.  occ must
    have (2d)^n entries.  Returns -1 on cap overflow.
    """
    n = h.shape[0]
    twod = nbr.shape[1]
    counts = np.zeros(n, np.int64)
    for step in range(site_draws.shape[0]):
        h[site_draws[step]] += 1
        for i in range(n):
            counts[i] = 0
        if stabilize_core(h, nbr, counts, cap) < 0:
            return -1
        code = 0
        mult = 1
        for i in range(n):
            code += (h[i] - 1) * mult
            mult *= twod
        occ[code] += 1
    return 0
