"""Toppling engine: stabilization, addition operators and their inverses,
the addition Markov chain, and Poisson-clock dynamics.

Heights live in {1, ..., 2d} when stable (the 1-based convention: a site
topples when its height exceeds 2d).  Stabilization is order-free by the
Abelian property; the engine uses a FIFO queue with bulk topplings for
speed and the test suite checks that randomized legal toppling orders give
the same result and toppling counts.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .lattice import Volume, toppling_matrix

DEFAULT_TOPPLE_CAP = 1 << 34


@dataclass
class Configuration:
    """Heights on a volume.  May be unstable (heights above 2d) in transit."""

    vol: Volume
    heights: np.ndarray

    def __post_init__(self):
        self.heights = np.asarray(self.heights, dtype=np.int64)
        if self.heights.shape != (self.vol.n_sites,):
            raise ValueError("height vector does not match volume")

    @property
    def is_stable(self):
        return bool(np.all(self.heights <= 2 * self.vol.d))

    def copy(self):
        return Configuration(self.vol, self.heights.copy())

    def height_at(self, site):
        return int(self.heights[self.vol.index[tuple(site)]])

    def restrict(self, subvol):
        """Heights of this configuration on the sites of another volume."""
        idx = [self.vol.index[s] for s in subvol.sites]
        return Configuration(subvol, self.heights[idx].copy())

    def key(self):
        """Hashable identity of the height vector."""
        return self.heights.tobytes()

    def __eq__(self, other):
        return (
            isinstance(other, Configuration)
            and self.vol.signature == other.vol.signature
            and np.array_equal(self.heights, other.heights)
        )


@dataclass
class AvalancheReport:
    """Everything the avalanche after one addition did."""

    origin: tuple
    topple_count: np.ndarray
    cluster: frozenset
    result: Configuration

    @property
    def size(self):
        return len(self.cluster)


def config(vol, heights):
    """Configuration from any height sequence."""
    return Configuration(vol, np.asarray(list(heights), dtype=np.int64))


def topple(cfg, site):
    """Topple one site unconditionally: it loses 2d grains, each in-volume
    neighbor gains one, sink edges swallow the rest.

    Returns (new configuration, legal) where legal means the site was
    unstable beforehand.
    """
    vol = cfg.vol
    i = vol.index[tuple(site)]
    twod = 2 * vol.d
    h = cfg.heights.copy()
    legal = h[i] > twod
    h[i] -= twod
    for j in vol.nbr[i]:
        if j >= 0:
            h[j] += 1
    return Configuration(vol, h), bool(legal)


def _stabilize_python(h, nbr, counts, cap):
    # mirror of _kernels.stabilize_core, kept as the reference path
    n = h.shape[0]
    twod = nbr.shape[1]
    from collections import deque

    queue = deque(i for i in range(n) if h[i] > twod)
    inq = np.zeros(n, dtype=bool)
    inq[list(queue)] = True
    total = 0
    while queue:
        s = queue.popleft()
        inq[s] = False
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
                if h[t] > twod and not inq[t]:
                    queue.append(t)
                    inq[t] = True
    return total


def stabilize(cfg, cap=DEFAULT_TOPPLE_CAP, use_kernel=True):
    """Stabilize a configuration; returns (stable configuration, toppling counts).

    The counts are the number of topplings per site, independent of order.
    Raises RuntimeError if the toppling cap is exceeded (cannot happen for
    finite volumes with a sink unless the cap is set too low).
    """
    if np.any(cfg.heights < 1):
        raise ValueError("heights must be >= 1")
    h = cfg.heights.copy()
    counts = np.zeros(cfg.vol.n_sites, dtype=np.int64)
    if use_kernel and _kernels.HAVE_NUMBA:
        total = _kernels.stabilize_core(h, cfg.vol.nbr, counts, cap)
    else:
        total = _stabilize_python(h, cfg.vol.nbr, counts, cap)
    if total < 0:
        raise RuntimeError(f"stabilization exceeded {cap} topplings")
    return Configuration(cfg.vol, h), counts


def stabilize_random_order(cfg, rng):
    """Reference stabilization toppling one random unstable site at a time.

    Exists to exercise the Abelian property against the FIFO engine.
    """
    vol = cfg.vol
    twod = 2 * vol.d
    h = cfg.heights.copy()
    counts = np.zeros(vol.n_sites, dtype=np.int64)
    nbr = vol.nbr
    while True:
        unstable = np.flatnonzero(h > twod)
        if unstable.size == 0:
            break
        s = int(unstable[rng.integers(0, unstable.size)])
        h[s] -= twod
        counts[s] += 1
        for t in nbr[s]:
            if t >= 0:
                h[t] += 1
    return Configuration(vol, h), counts


def add(cfg, site, cap=DEFAULT_TOPPLE_CAP, validate=True):
    """Drop one grain at ``site`` and stabilize; returns an AvalancheReport."""
    if validate and not cfg.is_stable:
        raise ValueError("addition requires a stable configuration")
    vol = cfg.vol
    site = tuple(site)
    i = vol.index[site]
    h = cfg.heights.copy()
    h[i] += 1
    counts = np.zeros(vol.n_sites, dtype=np.int64)
    if _kernels.HAVE_NUMBA:
        total = _kernels.stabilize_core(h, vol.nbr, counts, cap)
    else:
        total = _stabilize_python(h, vol.nbr, counts, cap)
    if total < 0:
        raise RuntimeError(f"avalanche exceeded {cap} topplings")
    cluster = frozenset(vol.sites[j] for j in np.flatnonzero(counts))
    return AvalancheReport(origin=site, topple_count=counts, cluster=cluster,
                           result=Configuration(vol, h))


def add_inverse(cfg, site, validate=True):
    """Undo one addition at ``site`` on a recurrent configuration.

    The addition operator restricted to recurrent configurations is a
    bijection, so iterating it from cfg must return to cfg; the predecessor
    on that cycle is the inverse image.  Iteration is capped by the number
    of recurrent configurations.
    """
    from .recurrence import burning_test

    if validate:
        res = burning_test(cfg)
        if not res.recurrent:
            raise ValueError("inverse addition is defined only on recurrent configurations")
    from .lattice import recurrent_count_via_det

    cap = recurrent_count_via_det(cfg.vol)
    target = cfg.key()
    prev = cfg
    cur = add(cfg, site, validate=False).result
    steps = 1
    while cur.key() != target:
        prev = cur
        cur = add(cur, site, validate=False).result
        steps += 1
        if steps > cap:
            raise RuntimeError("addition orbit failed to close; input not recurrent?")
    return prev


def markov_step(cfg, p, rng):
    """One step of the addition Markov chain: add at a p-distributed site."""
    p = np.asarray(p, dtype=float)
    if p.shape != (cfg.vol.n_sites,):
        raise ValueError("site distribution has wrong length")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ValueError("site distribution must be nonnegative and sum to 1")
    i = int(rng.choice(cfg.vol.n_sites, p=p))
    return add(cfg, cfg.vol.sites[i]).result


def poisson_run(cfg, rates, t, rng):
    """Run independent Poisson addition clocks over [0, t].

    rates: positive rate per site.  Returns (final configuration, event log)
    where the log lists (time, site) in time order.  Simulation is exact:
    exponential inter-arrival times for the superposed process, the site
    chosen proportionally to its rate.
    """
    rates = np.asarray(rates, dtype=float)
    if rates.shape != (cfg.vol.n_sites,):
        raise ValueError("rate vector has wrong length")
    if np.any(rates <= 0):
        raise ValueError("rates must be positive")
    if t < 0:
        raise ValueError("duration must be nonnegative")
    total = float(rates.sum())
    probs = rates / total
    cur = cfg
    log = []
    clock = 0.0
    while True:
        clock += rng.exponential(1.0 / total)
        if clock > t:
            break
        i = int(rng.choice(cfg.vol.n_sites, p=probs))
        site = cfg.vol.sites[i]
        cur = add(cur, site).result
        log.append((clock, site))
    return cur, log


def conservation_residual(cfg, report):
    """result - (heights + e_origin - Delta^T counts); all-zero iff the
    avalanche bookkeeping is exact."""
    vol = cfg.vol
    delta = toppling_matrix(vol)
    e = np.zeros(vol.n_sites, dtype=np.int64)
    e[vol.index[report.origin]] = 1
    predicted = cfg.heights + e - delta.T @ report.topple_count
    return report.result.heights - predicted
