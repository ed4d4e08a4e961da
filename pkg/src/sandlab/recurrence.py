"""Burning algorithm, recurrence tests, enumeration, and exact sampling.

A stable configuration is recurrent exactly when burning consumes every
site: starting from the sink, a synchronous round burns every site whose
height exceeds its current number of unburnt neighbors.  If the process
stalls, the leftover set is itself a forbidden subconfiguration and is
returned as the witness.
"""

from dataclasses import dataclass

import numpy as np


@dataclass
class BurnResult:
    recurrent: bool
    burn_time: np.ndarray  # round at which each site burned; -1 if never
    forbidden_witness: frozenset | None


def burning_test(cfg):
    """Synchronous burning from the sink; see module docstring.

    Requires a stable configuration.  burn_time is 1-based (the sink burns
    at round 0).
    """
    if not cfg.is_stable:
        raise ValueError("burning test requires a stable configuration")
    vol = cfg.vol
    nbr = vol.nbr
    h = cfg.heights
    n = vol.n_sites
    unburnt = np.ones(n, dtype=bool)
    burn_time = np.full(n, -1, dtype=np.int64)
    t = 0
    while True:
        t += 1
        # count unburnt in-volume neighbors of each site
        cnt = np.zeros(n, dtype=np.int64)
        for s in range(nbr.shape[1]):
            j = nbr[:, s]
            valid = j >= 0
            cnt[valid] += unburnt[j[valid]]
        burn_now = unburnt & (h > cnt)
        if not burn_now.any():
            break
        burn_time[burn_now] = t
        unburnt[burn_now] = False
    if unburnt.any():
        witness = frozenset(vol.sites[i] for i in np.flatnonzero(unburnt))
        return BurnResult(False, burn_time, witness)
    return BurnResult(True, burn_time, None)


def recurrent_mask(vol, height_rows):
    """Vectorized burning test over many stable configurations at once.

    height_rows: integer array [m, n_sites].  Returns a boolean mask of the
    rows that are recurrent.  Agrees row-for-row with burning_test.
    """
    hmat = np.asarray(height_rows)
    if hmat.ndim != 2 or hmat.shape[1] != vol.n_sites:
        raise ValueError("height matrix shape mismatch")
    nbr = vol.nbr
    m, n = hmat.shape
    unburnt = np.ones((m, n), dtype=bool)
    while True:
        cnt = np.zeros((m, n), dtype=np.int16)
        for s in range(nbr.shape[1]):
            j = nbr[:, s]
            valid = j >= 0
            cnt[:, valid] += unburnt[:, j[valid]]
        burn_now = unburnt & (hmat > cnt)
        if not burn_now.any():
            break
        unburnt &= ~burn_now
    return ~unburnt.any(axis=1)


ENUMERATION_CAP = 1 << 24


def enumerate_recurrent(vol, cap=ENUMERATION_CAP, chunk=1 << 16):
    """All recurrent configurations of a small volume.

    Returns an int8 array with one height vector per row, in lexicographic
    order (first site most significant).  Refuses volumes with more than
    ``cap`` stable configurations.
    """
    n = vol.n_sites
    twod = 2 * vol.d
    total = twod**n
    if total > cap:
        raise ValueError(f"{total} stable configurations exceed the cap {cap}")
    weights = twod ** np.arange(n - 1, -1, -1, dtype=np.int64)
    keep = []
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        rows = (codes[:, None] // weights[None, :]) % twod + 1
        mask = recurrent_mask(vol, rows)
        if mask.any():
            keep.append(rows[mask].astype(np.int8))
    return np.concatenate(keep, axis=0)


def sample_recurrent(vol, rng):
    """One exactly-uniform recurrent configuration.

    Samples a uniform spanning tree of the wired graph with Wilson's
    algorithm and maps it through the height/parent correspondence, so the
    output law is uniform on the recurrent set with no burn-in error.
    """
    from .trees import tree_to_config, wilson_ust

    return tree_to_config(wilson_ust(vol, rng))
