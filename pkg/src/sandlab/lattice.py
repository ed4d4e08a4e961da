"""Finite boxes of Z^d with wired (absorbing) boundary.

A Volume is a box ``lo <= x <= hi`` in Z^d.  Every site has exactly 2d
neighbor slots, one per lattice direction; slots that point outside the box
(or at a deleted site) are wired to a single absorbing sink.  Slots are kept
distinguishable throughout the package: parallel edges to the sink count
separately, which is what makes spanning-tree counts match the determinant
of the toppling matrix exactly.

Deleting a site produces the graph in which that site's former neighbors
each gain one sink edge; it is how the package represents "volume minus the
addition site" for wave bookkeeping.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

from .exact import det_bareiss, det_fraction, invert_exact, solve_exact


def lattice_directions(d):
    """The 2d unit steps of Z^d in lexicographic order (the canonical slot order)."""
    dirs = []
    for axis in range(d):
        for s in (1, -1):
            e = [0] * d
            e[axis] = s
            dirs.append(tuple(e))
    return tuple(sorted(dirs))


@dataclass(frozen=True, eq=False)
class Volume:
    """A finite box of Z^d with wired boundary and optional deleted site.

    ``sites`` lists the lattice points in row-major order (deleted site
    excluded), ``index`` inverts it, and ``nbr[i, s]`` gives the site index
    reached from site i through direction slot s, or -1 if that slot is a
    sink edge.
    """

    d: int
    lo: tuple
    hi: tuple
    deleted_site: tuple | None
    directions: tuple
    sites: tuple
    index: dict = field(repr=False)
    nbr: np.ndarray = field(repr=False)

    @property
    def n_sites(self):
        return len(self.sites)

    @property
    def signature(self):
        """Structural identity: volumes with equal signatures are the same graph."""
        return (self.d, self.lo, self.hi, self.deleted_site)

    @property
    def shape(self):
        return tuple(h - l + 1 for l, h in zip(self.lo, self.hi))

    def __contains__(self, site):
        return tuple(site) in self.index

    def in_box(self, site):
        return all(l <= c <= h for c, l, h in zip(site, self.lo, self.hi))

    def sink_degree(self, site):
        return int(np.sum(self.nbr[self.index[tuple(site)]] < 0))

    def neighbors(self, site):
        """In-volume neighbors of a site, in slot order."""
        i = self.index[tuple(site)]
        return tuple(self.sites[j] for j in self.nbr[i] if j >= 0)

    def boundary_mask(self):
        """True for sites with at least one neighbor outside the box proper."""
        mask = np.zeros(self.n_sites, dtype=bool)
        for i, site in enumerate(self.sites):
            for e in self.directions:
                if not self.in_box(tuple(c + de for c, de in zip(site, e))):
                    mask[i] = True
                    break
        return mask

    def undeleted(self):
        """The same box with no deleted site."""
        if self.deleted_site is None:
            return self
        return make_volume(self.d, self.lo, self.hi)

    def delete(self, site):
        """The same box with ``site`` removed (its neighbors gain a sink edge)."""
        if self.deleted_site is not None:
            raise ValueError("volume already has a deleted site")
        return make_volume(self.d, self.lo, self.hi, deleted=site)

    def __repr__(self):
        box = "x".join(str(s) for s in self.shape)
        extra = f" minus {self.deleted_site}" if self.deleted_site else ""
        return f"Volume(d={self.d}, box {box} at {self.lo}{extra})"


def make_volume(d, lo, hi, deleted=None):
    """Build a wired-boundary box volume.

    lo, hi: per-axis coordinate bounds (inclusive).  deleted: optional site
    to remove from the volume.  Raises ValueError on an empty box or a
    deleted site outside it.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    lo = tuple(int(c) for c in lo)
    hi = tuple(int(c) for c in hi)
    if len(lo) != d or len(hi) != d:
        raise ValueError("lo/hi must have one coordinate per axis")
    if any(l > h for l, h in zip(lo, hi)):
        raise ValueError("empty box: lo > hi on some axis")
    if deleted is not None:
        deleted = tuple(int(c) for c in deleted)
        if not all(l <= c <= h for c, l, h in zip(deleted, lo, hi)):
            raise ValueError(f"deleted site {deleted} outside box")
    ranges = [range(l, h + 1) for l, h in zip(lo, hi)]
    sites = tuple(s for s in product(*ranges) if s != deleted)
    if not sites:
        raise ValueError("volume has no sites")
    index = {s: i for i, s in enumerate(sites)}
    dirs = lattice_directions(d)
    nbr = np.full((len(sites), 2 * d), -1, dtype=np.int64)
    for i, s in enumerate(sites):
        for k, e in enumerate(dirs):
            t = tuple(c + de for c, de in zip(s, e))
            nbr[i, k] = index.get(t, -1)
    nbr.setflags(write=False)
    return Volume(d=d, lo=lo, hi=hi, deleted_site=deleted,
                  directions=dirs, sites=sites, index=index, nbr=nbr)


def cube(d, n, deleted=None):
    """Convenience: the n^d box [0, n-1]^d."""
    return make_volume(d, (0,) * d, (n - 1,) * d, deleted=deleted)


def toppling_matrix(vol):
    """Degree-minus-adjacency matrix of the volume: 2d on the diagonal, -1 per
    in-volume neighbor pair."""
    n = vol.n_sites
    m = np.zeros((n, n), dtype=np.int64)
    np.fill_diagonal(m, 2 * vol.d)
    for i in range(n):
        for j in vol.nbr[i]:
            if j >= 0:
                m[i, j] -= 1
    return m


def recurrent_count_via_det(vol):
    """Number of recurrent configurations = spanning-tree count of the wired
    graph = exact integer determinant of the toppling matrix."""
    m = toppling_matrix(vol)
    return det_bareiss(m.tolist())


def green_function(vol):
    """Float inverse of the toppling matrix (entrywise accurate to ~1e-12)."""
    m = toppling_matrix(vol).astype(float)
    return np.linalg.solve(m, np.eye(vol.n_sites))


def green_function_exact(vol):
    """Exact rational inverse of the toppling matrix, as nested Fraction lists.

    Meant for volumes small enough to enumerate; use green_block_exact for a
    few columns of a larger volume.
    """
    return invert_exact(toppling_matrix(vol).tolist())


def green_block_exact(vol, sites):
    """Exact columns of the inverse toppling matrix.

    Solves one exact linear system per requested column site and returns
    {(row_site, col_site): Fraction} covering every row of those columns.
    """
    m = toppling_matrix(vol).tolist()
    n = vol.n_sites
    cols = []
    idxs = []
    for s in sites:
        j = vol.index[tuple(s)]
        idxs.append(j)
        e = [0] * n
        e[j] = 1
        cols.append(e)
    sols = solve_exact(m, cols)
    block = {}
    for col, j in zip(sols, idxs):
        for i in range(n):
            block[(vol.sites[i], vol.sites[j])] = col[i]
    return block


def neighborhood_block(vol, site):
    """The closed lattice-ball of radius 1 around ``site``, intersected with
    the volume, in site order."""
    site = tuple(site)
    ball = [site] + [tuple(c + de for c, de in zip(site, e)) for e in vol.directions]
    return [s for s in vol.sites if s in set(ball)]


def removal_ratio(vol, site):
    """Exact ratio (recurrent count of vol minus site) / (recurrent count of vol).

    Deleting a site perturbs the toppling matrix only on the closed
    neighborhood N of the site, so the ratio of determinants collapses to
    det(I + G P) evaluated on the N-block, with G the exact rational inverse
    of the toppling matrix and P the local perturbation.  Equals the value
    obtained by counting both volumes independently.
    """
    if vol.deleted_site is not None:
        raise ValueError("volume already has a deleted site")
    site = tuple(site)
    if site not in vol:
        raise ValueError(f"site {site} not in volume")
    block_sites = neighborhood_block(vol, site)
    r = len(block_sites)
    pos = {s: k for k, s in enumerate(block_sites)}
    twod = 2 * vol.d
    # P = (matrix of the deleted volume, with the deleted row/column replaced
    # by the identity unit vector) minus the original toppling matrix: its
    # support is the site's row and column inside N.
    p = [[0] * r for _ in range(r)]
    p[pos[site]][pos[site]] = 1 - twod
    for s in vol.neighbors(site):
        p[pos[site]][pos[s]] = 1
        p[pos[s]][pos[site]] = 1
    g = green_block_exact(vol, block_sites)
    m = [[Fraction(0)] * r for _ in range(r)]
    for a in range(r):
        for b in range(r):
            acc = Fraction(1 if a == b else 0)
            for c in range(r):
                if p[c][b]:
                    acc += g[(block_sites[a], block_sites[c])] * p[c][b]
            m[a][b] = acc
    return det_fraction(m)
