"""Loop-erased random walk, Wilson sampling, and the height/tree bijection.

Forests are stored as one parent slot per site: slot s of site x is the
s-th lattice direction in canonical (lexicographic) order, and points either
at another site, at the sink (slot leaves the box or hits a deleted site),
or at the distinguished origin root of a two-component forest.  Keeping
slots rather than just parent sites makes parallel sink edges
distinguishable, so the number of forests equals the determinant of the
toppling matrix exactly.

The bijection with recurrent configurations follows the burning schedule:
a site burning at round t picks its parent among the neighbor slots burnt
at round t-1, indexed by its height; conversely heights are reconstructed
from slot burn rounds.  Both directions share one fixed slot order (see
README for the resulting height-to-parent table).
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .engine import Configuration
from .recurrence import burning_test


class _Sink:
    __slots__ = ()

    def __repr__(self):
        return "SINK"


SINK = _Sink()

_WILSON_CHUNK = 8192


@dataclass
class Forest:
    """Rooted spanning forest of a wired volume.

    parent_slot[i] is the direction slot from site i toward its parent
    (-1 only for the origin root of a two-component forest).  origin is
    None for a plain sink-rooted spanning tree.
    """

    vol: object
    parent_slot: np.ndarray
    origin: tuple | None = None

    @property
    def roots(self):
        return (SINK,) if self.origin is None else (SINK, self.origin)

    def parent_vertex(self, site):
        """The parent of a site: another site tuple, or SINK."""
        vol = self.vol
        i = vol.index[tuple(site)]
        slot = int(self.parent_slot[i])
        if slot < 0:
            raise ValueError(f"{site} is a root")
        j = vol.nbr[i, slot]
        return SINK if j < 0 else vol.sites[j]

    def parent_map(self):
        """dict site -> parent vertex for every non-root site."""
        out = {}
        for i, s in enumerate(self.vol.sites):
            if self.parent_slot[i] >= 0:
                out[s] = self.parent_vertex(s)
        return out

    def key(self):
        """Canonical hashable identity of the forest (slots in site order)."""
        return self.parent_slot.tobytes()

    def has_edge(self, a, b):
        """True if the undirected lattice edge {a, b} is used by the forest."""
        a, b = tuple(a), tuple(b)
        for x, y in ((a, b), (b, a)):
            if x in self.vol.index:
                i = self.vol.index[x]
                if self.parent_slot[i] >= 0:
                    j = self.vol.nbr[i, self.parent_slot[i]]
                    if j >= 0 and self.vol.sites[j] == y:
                        return True
        return False


def loop_erase(path):
    """Chronological loop erasure: each revisit truncates back to the first
    visit.  Elements only need to be hashable."""
    if len(path) == 0:
        raise ValueError("empty path")
    out = []
    seen = {}
    for v in path:
        if v in seen:
            k = seen[v]
            for u in out[k + 1:]:
                del seen[u]
            del out[k + 1:]
        else:
            seen[v] = len(out)
            out.append(v)
    return out


class _DirFeed:
    """Chunked stream of uniform direction slots from one RNG.

    Both the compiled and the pure-Python Wilson paths consume this stream
    one slot per walk step, in the same order, so they build identical
    forests from identical generator states.
    """

    def __init__(self, rng, twod, chunk=_WILSON_CHUNK):
        self.rng = rng
        self.twod = twod
        self.chunk = chunk
        self.buf = rng.integers(0, twod, size=chunk, dtype=np.int64)
        self.pos = 0

    def refill(self):
        self.buf = self.rng.integers(0, self.twod, size=self.chunk, dtype=np.int64)
        self.pos = 0

    def take(self):
        if self.pos >= self.buf.shape[0]:
            self.refill()
        v = self.buf[self.pos]
        self.pos += 1
        return int(v)


def _wilson_python(nbr, order, feed, in_tree, parent_slot):
    for s in order:
        s = int(s)
        if in_tree[s]:
            continue
        path = [s]
        exit_slot = {}
        cur = s
        while True:
            slot = feed.take()
            exit_slot[cur] = slot
            t = int(nbr[cur, slot])
            if t < 0 or in_tree[t]:
                path.append(-1 - cur if t < 0 else t)  # unique sink marker per exit site
                break
            cur = t
            path.append(t)
        branch = loop_erase(path)
        for v in branch[:-1]:
            parent_slot[v] = exit_slot[v]
            in_tree[v] = 1


def _wilson_kernel(nbr, order, feed, in_tree, parent_slot):
    last_slot = np.zeros(nbr.shape[0], dtype=np.int8)
    op = 0
    cur = -1
    while True:
        op, cur, pos, done = _kernels.wilson_walks(
            nbr, order, feed.buf, op, cur, feed.pos, in_tree, parent_slot, last_slot
        )
        feed.pos = pos
        if done:
            return
        feed.refill()


def _run_wilson(vol, rng, order_idx, in_tree, parent_slot, use_kernel):
    feed = _DirFeed(rng, 2 * vol.d)
    if use_kernel and _kernels.HAVE_NUMBA:
        _wilson_kernel(vol.nbr, order_idx, feed, in_tree, parent_slot)
    else:
        _wilson_python(vol.nbr, order_idx, feed, in_tree, parent_slot)


def _order_indices(vol, enumeration):
    if enumeration is None:
        return np.arange(vol.n_sites, dtype=np.int64)
    return np.array([vol.index[tuple(s)] for s in enumeration], dtype=np.int64)


def wilson_ust(vol, rng, enumeration=None, use_kernel=True):
    """Uniform spanning tree of the wired volume, rooted at the sink.

    Loop-erased random walks are attached one after another, walking from
    each not-yet-covered site (in ``enumeration`` order, default row-major)
    until the sink or the growing tree is hit.  The output law is uniform
    over spanning trees with distinguishable sink edges, for any enumeration.
    """
    order = _order_indices(vol, enumeration)
    if enumeration is not None and len(set(order.tolist())) != vol.n_sites:
        raise ValueError("enumeration must cover every site exactly once")
    in_tree = np.zeros(vol.n_sites, dtype=np.uint8)
    parent_slot = np.full(vol.n_sites, -1, dtype=np.int8)
    _run_wilson(vol, rng, order, in_tree, parent_slot, use_kernel)
    return Forest(vol=vol, parent_slot=parent_slot, origin=None)


def wilson_two_component(vol, origin, rng, enumeration=None, use_kernel=True):
    """Uniform two-component spanning forest with roots {sink, origin}.

    Accepts either the full volume or its deleted-origin representation;
    walks run on the full box and may be absorbed by the piece growing from
    the origin or the piece growing from the sink.
    """
    origin = tuple(origin)
    if vol.deleted_site is not None:
        if vol.deleted_site != origin:
            raise ValueError("volume's deleted site differs from origin")
        full = vol.undeleted()
    else:
        full = vol
    if origin not in full:
        raise ValueError(f"origin {origin} not in volume")
    o = full.index[origin]
    order = _order_indices(full, enumeration)
    in_tree = np.zeros(full.n_sites, dtype=np.uint8)
    in_tree[o] = 1
    parent_slot = np.full(full.n_sites, -1, dtype=np.int8)
    _run_wilson(full, rng, order, in_tree, parent_slot, use_kernel)
    return Forest(vol=full, parent_slot=parent_slot, origin=origin)


def _parents_from_times(vol, heights, times, sink_time, origin_idx=-1):
    """Assign each burnt site its parent slot from the burn schedule."""
    nbr = vol.nbr
    twod = nbr.shape[1]
    parent_slot = np.full(vol.n_sites, -1, dtype=np.int8)
    for i in range(vol.n_sites):
        if i == origin_idx:
            continue
        t = times[i]
        c = 0
        c2 = 0
        want = heights[i]
        chosen = -1
        for sl in range(twod):
            tgt = nbr[i, sl]
            st = sink_time if tgt < 0 else times[tgt]
            if st <= t - 1:
                c += 1
                if st <= t - 2:
                    c2 += 1
        rank_needed = want - (twod - c)
        if rank_needed < 1 or rank_needed > c - c2:
            raise ValueError("burn schedule inconsistent with heights; input not recurrent?")
        r = 0
        for sl in range(twod):
            tgt = nbr[i, sl]
            st = sink_time if tgt < 0 else times[tgt]
            if st == t - 1:
                r += 1
                if r == rank_needed:
                    chosen = sl
                    break
        parent_slot[i] = chosen
    return parent_slot


def two_phase_burn_times(full, heights_full, origin_idx):
    """Burn rounds of the two-phase schedule on the full box.

    Phase one: the origin burns at round 0 and fire spreads with sink edges
    still unburnt.  When it stalls at round T, the sink ignites at T+1 and
    burning resumes with sink edges counted as burnt.  Returns
    (times, sink_time); unburnt sites keep -1.
    """
    nbr = full.nbr
    n = full.n_sites
    h = heights_full
    unburnt = np.ones(n, dtype=bool)
    unburnt[origin_idx] = False
    times = np.full(n, -1, dtype=np.int64)
    times[origin_idx] = 0
    sink_degree = np.sum(nbr < 0, axis=1)

    def rounds(t, count_sink_unburnt):
        while True:
            cnt = np.zeros(n, dtype=np.int64)
            for s in range(nbr.shape[1]):
                j = nbr[:, s]
                valid = j >= 0
                cnt[valid] += unburnt[j[valid]]
            if count_sink_unburnt:
                cnt += sink_degree
            burn_now = unburnt & (h > cnt)
            if not burn_now.any():
                return t
            times[burn_now] = t
            unburnt[burn_now] = False
            t += 1

    stop = rounds(1, True)
    sink_time = stop  # first round with no phase-one burn; sink ignites here
    rounds(sink_time + 1, False)
    if unburnt.any():
        raise ValueError("two-phase burning stalled; configuration not recurrent")
    return times, sink_time


def config_to_tree(cfg, origin=None):
    """Forest of a recurrent configuration under the burning correspondence.

    Without origin: the usual sink-rooted spanning tree of cfg's volume.
    With origin: cfg must live on the volume with the origin deleted; the
    result is the two-component forest on the full box whose origin
    component is the first-wave vertex set.
    """
    if origin is None:
        res = burning_test(cfg)
        if not res.recurrent:
            raise ValueError("configuration is not recurrent")
        parent_slot = _parents_from_times(cfg.vol, cfg.heights, res.burn_time, 0)
        return Forest(vol=cfg.vol, parent_slot=parent_slot, origin=None)
    origin = tuple(origin)
    if cfg.vol.deleted_site != origin:
        raise ValueError("cfg must live on the volume with the origin deleted")
    full = cfg.vol.undeleted()
    o = full.index[origin]
    h_full = np.zeros(full.n_sites, dtype=np.int64)
    for s, v in zip(cfg.vol.sites, cfg.heights):
        h_full[full.index[s]] = v
    times, sink_time = two_phase_burn_times(full, h_full, o)
    parent_slot = _parents_from_times(full, h_full, times, sink_time, origin_idx=o)
    return Forest(vol=full, parent_slot=parent_slot, origin=origin)


def parent_slots_batch(vol, height_rows, chunk=1 << 15):
    """Vectorized config_to_tree over many recurrent configurations.

    height_rows: int array [m, n_sites], every row recurrent.  Returns the
    parent-slot matrix [m, n_sites] (int8), row r matching
    config_to_tree(row r).parent_slot exactly.  Raises if a row is not
    recurrent.
    """
    rows = np.asarray(height_rows)
    m, n = rows.shape
    nbr = vol.nbr
    twod = nbr.shape[1]
    out = np.empty((m, n), dtype=np.int8)
    for start in range(0, m, chunk):
        h = rows[start:start + chunk].astype(np.int16)
        b = h.shape[0]
        unburnt = np.ones((b, n), dtype=bool)
        times = np.zeros((b, n), dtype=np.int16)
        t = 0
        while True:
            t += 1
            cnt = np.zeros((b, n), dtype=np.int16)
            for s in range(twod):
                j = nbr[:, s]
                valid = j >= 0
                cnt[:, valid] += unburnt[:, j[valid]]
            burn_now = unburnt & (h > cnt)
            if not burn_now.any():
                break
            times[burn_now] = t
            unburnt[burn_now] = False
        if unburnt.any():
            raise ValueError("non-recurrent row in batch")
        # slot burn times: sink slots burn with the sink at round 0
        st = np.zeros((b, n, twod), dtype=np.int16)
        for s in range(twod):
            j = nbr[:, s]
            valid = j >= 0
            st[:, valid, s] = times[:, j[valid]]
        tt = times[:, :, None]
        c = (st <= tt - 1).sum(axis=2, dtype=np.int16)
        c2 = (st <= tt - 2).sum(axis=2, dtype=np.int16)
        cand = st == tt - 1
        rank_needed = h - (twod - c)
        if (rank_needed < 1).any() or (rank_needed > c - c2).any():
            raise ValueError("burn schedule inconsistent with heights in batch")
        cum = cand.cumsum(axis=2, dtype=np.int16)
        match = cand & (cum == rank_needed[:, :, None])
        out[start:start + chunk] = match.argmax(axis=2).astype(np.int8)
    return out


def _forest_heights_python(parent_slot, nbr, origin_idx):
    """Reference mirror of _kernels.forest_heights."""
    n = parent_slot.shape[0]
    twod = nbr.shape[1]
    comp = np.full(n, -1, dtype=np.int64)
    if origin_idx >= 0:
        comp[origin_idx] = 1
    clen = np.full(n, -1, dtype=np.int64)
    if origin_idx >= 0:
        clen[origin_idx] = 0
    for i in range(n):
        chain = []
        u = i
        while u >= 0 and clen[u] < 0:
            if len(chain) >= n:
                raise ValueError("malformed forest: parent cycle")
            chain.append(u)
            u = int(nbr[u, parent_slot[u]])
        base = 0 if u < 0 else int(clen[u])
        side = 0 if u < 0 else int(comp[u])
        for v in reversed(chain):
            base += 1
            clen[v] = base
            comp[v] = side
    if origin_idx < 0:
        sink_time = 0
        times = clen.copy()
    else:
        t_max = int(clen[comp == 1].max()) if (comp == 1).any() else 0
        sink_time = t_max + 1
        times = np.where(comp == 1, clen, sink_time + clen)
        times[origin_idx] = 0
    heights = np.zeros(n, dtype=np.int64)
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
            raise ValueError("malformed forest: parent not burnt one round earlier")
        heights[i] = twod - c + rank
    return heights, times


def tree_to_config(forest, use_kernel=True):
    """The unique recurrent configuration mapping to this forest.

    Single-root forests give a configuration on the forest's volume;
    two-component forests give one on the volume with the origin deleted.
    Round trips with config_to_tree are exact in both directions.
    """
    vol = forest.vol
    o = vol.index[forest.origin] if forest.origin is not None else -1
    if use_kernel and _kernels.HAVE_NUMBA:
        heights, _times, status = _kernels.forest_heights(forest.parent_slot, vol.nbr, o)
        if status != 0:
            raise ValueError("malformed forest: parent not burnt one round earlier")
    else:
        heights, _times = _forest_heights_python(forest.parent_slot, vol.nbr, o)
    if forest.origin is None:
        return Configuration(vol, heights)
    deleted = vol.delete(forest.origin)
    idx = [vol.index[s] for s in deleted.sites]
    return Configuration(deleted, heights[idx])


def component_of(forest, site, use_kernel=True):
    """All sites whose parent chain reaches the same root as ``site``'s."""
    vol = forest.vol
    site = tuple(site)
    if site not in vol:
        raise ValueError(f"site {site} not in volume")
    o = vol.index[forest.origin] if forest.origin is not None else -1
    if use_kernel and _kernels.HAVE_NUMBA:
        flags = _kernels.component_flags(forest.parent_slot, vol.nbr, o)
    else:
        flags = _component_flags_python(forest.parent_slot, vol.nbr, o)
    if flags.size and flags[0] == -2:
        raise ValueError("malformed forest: parent cycle")
    side = flags[vol.index[site]]
    return frozenset(vol.sites[i] for i in np.flatnonzero(flags == side))


def _component_flags_python(parent_slot, nbr, origin_idx):
    n = parent_slot.shape[0]
    flags = np.full(n, -1, dtype=np.int8)
    if origin_idx >= 0:
        flags[origin_idx] = 1
    for i in range(n):
        chain = []
        u = i
        while u >= 0 and flags[u] < 0:
            if len(chain) >= n:
                return np.full(n, -2, dtype=np.int8)
            chain.append(u)
            u = int(nbr[u, parent_slot[u]])
        res = 0 if u < 0 else int(flags[u])
        for v in chain:
            flags[v] = res
    return flags


def origin_component_size(forest, use_kernel=True):
    """|component of the origin| of a two-component forest (origin included)."""
    if forest.origin is None:
        raise ValueError("forest has no origin root")
    vol = forest.vol
    o = vol.index[forest.origin]
    if use_kernel and _kernels.HAVE_NUMBA:
        flags = _kernels.component_flags(forest.parent_slot, vol.nbr, o)
    else:
        flags = _component_flags_python(forest.parent_slot, vol.nbr, o)
    if flags.size and flags[0] == -2:
        raise ValueError("malformed forest: parent cycle")
    return int(np.sum(flags == 1))


def check_forest(forest):
    """Structural validation: spanning, acyclic, parents along real slots.

    Returns True or raises AssertionError; meant for tests.
    """
    vol = forest.vol
    n = vol.n_sites
    o = vol.index[forest.origin] if forest.origin is not None else -1
    roots_seen = 0
    for i in range(n):
        slot = int(forest.parent_slot[i])
        if i == o:
            assert slot == -1, "origin root must have no parent"
            roots_seen += 1
            continue
        assert 0 <= slot < 2 * vol.d, f"site {vol.sites[i]} lacks a parent slot"
    for i in range(n):
        if i == o:
            continue
        seen = set()
        u = i
        while u >= 0 and u != o:
            assert u not in seen, "cycle in parent structure"
            seen.add(u)
            u = int(vol.nbr[u, forest.parent_slot[u]])
    return True
