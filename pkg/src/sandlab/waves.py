"""Wave decomposition of avalanches and its spanning-forest representation.

An avalanche started by one grain at the origin splits into waves: topple
the origin once, let every other site relax (each topples at most once),
and repeat while the origin is still unstable.  The number of waves equals
the origin's toppling number, the union of the waves is the avalanche
cluster, and the k-th wave is exactly the origin component of the
two-component forest of the configuration left on volume-minus-origin by
the first k-1 waves.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .engine import AvalancheReport, Configuration
from .recurrence import burning_test
from .trees import config_to_tree


@dataclass
class WaveDecomposition:
    origin: tuple
    waves: tuple  # frozensets of sites, in wave order
    intermediates: tuple  # Configuration after each wave (full volume)
    report: AvalancheReport

    @property
    def alpha(self):
        return len(self.waves)


def _relax_wave_python(h, nbr, origin, toppled):
    """Reference mirror of _kernels.relax_wave."""
    n = h.shape[0]
    twod = nbr.shape[1]
    toppled[:] = 0
    h[origin] -= twod
    toppled[origin] = 1
    queue = []
    for sl in range(twod):
        t = nbr[origin, sl]
        if t >= 0:
            h[t] += 1
            if h[t] > twod and t != origin:
                if toppled[t]:
                    return int(toppled.sum()), -1
                queue.append(t)
                toppled[t] = 1
    head = 0
    while head < len(queue):
        s = queue[head]
        head += 1
        h[s] -= twod
        for sl in range(twod):
            t = nbr[s, sl]
            if t >= 0:
                h[t] += 1
                if h[t] > twod and t != origin and not toppled[t]:
                    queue.append(t)
                    toppled[t] = 1
    for i in range(n):
        if i != origin and h[i] > twod:
            return int(toppled.sum()), -1
    return int(toppled.sum()), 0


def decompose_waves(cfg, origin, use_kernel=True):
    """Add one grain at the origin and carry out the avalanche wave by wave.

    Returns the ordered wave site-sets, the configuration after each wave,
    and an avalanche report assembled from the schedule (equal to an
    independent add() by the Abelian property).
    """
    if not cfg.is_stable:
        raise ValueError("wave decomposition requires a stable configuration")
    vol = cfg.vol
    origin = tuple(origin)
    o = vol.index[origin]
    twod = 2 * vol.d
    h = cfg.heights.copy()
    h[o] += 1
    counts = np.zeros(vol.n_sites, dtype=np.int64)
    toppled = np.zeros(vol.n_sites, dtype=np.uint8)
    waves = []
    intermediates = []
    relax = (
        _kernels.relax_wave
        if (use_kernel and _kernels.HAVE_NUMBA)
        else _relax_wave_python
    )
    while h[o] > twod:
        _size, status = relax(h, vol.nbr, o, toppled)
        if status != 0:
            raise RuntimeError("a site toppled twice within one wave")
        idx = np.flatnonzero(toppled)
        waves.append(frozenset(vol.sites[i] for i in idx))
        counts[idx] += 1
        intermediates.append(Configuration(vol, h.copy()))
    cluster = frozenset(vol.sites[i] for i in np.flatnonzero(counts))
    report = AvalancheReport(
        origin=origin,
        topple_count=counts,
        cluster=cluster,
        result=Configuration(vol, h.copy()),
    )
    return WaveDecomposition(
        origin=origin,
        waves=tuple(waves),
        intermediates=tuple(intermediates),
        report=report,
    )


def wave_operator(cfg, validate=True):
    """One wave seen from the deleted-origin volume: drop a grain on each
    in-volume neighbor of the deleted site and stabilize there.

    Maps recurrent configurations of volume-minus-origin to recurrent ones
    bijectively; iterating it k-1 times produces the state whose forest
    represents the k-th wave.
    """
    from .engine import stabilize

    vol = cfg.vol
    if vol.deleted_site is None:
        raise ValueError("wave operator lives on a volume with a deleted site")
    if validate:
        if not burning_test(cfg).recurrent:
            raise ValueError("wave operator requires a recurrent configuration")
    origin = vol.deleted_site
    h = cfg.heights.copy()
    hit = False
    for e in vol.directions:
        s = tuple(c + de for c, de in zip(origin, e))
        if s in vol.index:
            h[vol.index[s]] += 1
            hit = True
    if not hit:
        return Configuration(vol, h)
    out, _counts = stabilize(Configuration(vol, h))
    return out


def wave_tree(cfg, origin, k, use_kernel=True):
    """Forest representing the k-th wave of the avalanche at ``origin``.

    cfg is a recurrent configuration on the full volume.  The origin
    component of the returned two-component forest has vertex set equal to
    the k-th wave.  Raises if k exceeds the number of waves.
    """
    if k < 1:
        raise ValueError("wave index starts at 1")
    origin = tuple(origin)
    dec = decompose_waves(cfg, origin, use_kernel=use_kernel)
    if k > dec.alpha:
        raise ValueError(f"no wave {k}: avalanche has {dec.alpha} wave(s)")
    deleted = cfg.vol.delete(origin)
    xi = cfg.restrict(deleted)
    for _ in range(k - 1):
        xi = wave_operator(xi, validate=False)
    return config_to_tree(xi, origin=origin)


def find_multiwave_instances(vol, origin, rng, count=3, min_alpha=2, max_tries=200000):
    """Search uniform recurrent samples for avalanches with several waves.

    Returns a list of (heights tuple, alpha) with alpha >= min_alpha; used to
    pin multi-wave regression fixtures.  Deterministic given the generator.
    """
    from .recurrence import sample_recurrent

    origin = tuple(origin)
    twod = 2 * vol.d
    o = vol.index[origin]
    found = []
    for _ in range(max_tries):
        cfg = sample_recurrent(vol, rng)
        if cfg.heights[o] != twod:
            continue
        dec = decompose_waves(cfg, origin)
        if dec.alpha >= min_alpha:
            found.append((tuple(int(x) for x in cfg.heights), dec.alpha))
            if len(found) >= count:
                break
    return found
