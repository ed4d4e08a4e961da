from itertools import combinations, product

import numpy as np
import pytest

from sandlab.engine import config
from sandlab.harness import chi_square_uniform, stream
from sandlab.lattice import cube, make_volume, recurrent_count_via_det
from sandlab.recurrence import (
    burning_test,
    enumerate_recurrent,
    recurrent_mask,
    sample_recurrent,
)

V1 = make_volume(2, (0, 0), (0, 0))
V21 = make_volume(2, (0, 0), (1, 0))


def forbidden_subset_exists(cfg):
    """Independent oracle: search every site subset for the forbidden
    inequality (height at most the number of neighbors inside the subset)."""
    vol = cfg.vol
    sites = list(vol.sites)
    for r in range(1, len(sites) + 1):
        for subset in combinations(sites, r):
            inside = set(subset)
            if all(
                cfg.height_at(x) <= sum(1 for y in vol.neighbors(x) if y in inside)
                for x in subset
            ):
                return True
    return False


def test_single_site_all_recurrent():
    for k in (1, 2, 3, 4):
        assert burning_test(config(V1, [k])).recurrent


def test_two_site_hand_cases():
    res = burning_test(config(V21, [1, 1]))
    assert not res.recurrent
    assert res.forbidden_witness == {(0, 0), (1, 0)}
    n_rec = 0
    for a in range(1, 5):
        for b in range(1, 5):
            n_rec += burning_test(config(V21, [a, b])).recurrent
    assert n_rec == 15


def test_burning_rejects_unstable():
    with pytest.raises(ValueError):
        burning_test(config(V1, [5]))


def test_burn_times_form_valid_schedule():
    rng = stream(104, 0)
    for trial in range(40):
        vol = cube(2, 3) if trial % 2 else cube(3, 2)
        cfg = config(vol, rng.integers(1, 2 * vol.d + 1, size=vol.n_sites))
        res = burning_test(cfg)
        if not res.recurrent:
            continue
        t_of = res.burn_time
        for i, s in enumerate(vol.sites):
            t = t_of[i]
            assert t >= 1

            def unburnt_at(probe):
                return sum(1 for y in vol.neighbors(s) if t_of[vol.index[y]] >= probe)

            # threshold met at the burn round, and not one round earlier
            assert cfg.heights[i] > unburnt_at(t)
            if t >= 2:
                assert cfg.heights[i] <= unburnt_at(t - 1)


def test_witness_is_forbidden():
    rng = stream(104, 1)
    seen = 0
    for trial in range(300):
        vol = cube(2, 2)
        cfg = config(vol, rng.integers(1, 5, size=4))
        res = burning_test(cfg)
        if res.recurrent:
            continue
        seen += 1
        w = res.forbidden_witness
        for x in w:
            inside = sum(1 for y in vol.neighbors(x) if y in w)
            assert cfg.height_at(x) <= inside
    assert seen > 0


def test_burning_matches_subset_oracle_exhaustively():
    for vol in (
        make_volume(2, (0, 0), (1, 0)),
        make_volume(2, (0, 0), (2, 0)),
        make_volume(2, (0, 0), (1, 1)),
        make_volume(3, (0, 0, 0), (1, 1, 0)),
    ):
        twod = 2 * vol.d
        for heights in product(range(1, twod + 1), repeat=vol.n_sites):
            cfg = config(vol, heights)
            assert burning_test(cfg).recurrent == (not forbidden_subset_exists(cfg))


def test_recurrent_mask_matches_burning_test():
    rng = stream(104, 2)
    for vol in (cube(2, 3), cube(3, 2), make_volume(2, (0, 0), (2, 1), deleted=(1, 0))):
        rows = rng.integers(1, 2 * vol.d + 1, size=(300, vol.n_sites))
        mask = recurrent_mask(vol, rows)
        for row, m in zip(rows, mask):
            assert burning_test(config(vol, row)).recurrent == bool(m)


def test_enumeration_counts_and_order():
    R = enumerate_recurrent(V1)
    assert R.shape == (4, 1)
    R = enumerate_recurrent(make_volume(2, (0, 0), (1, 1)))
    assert R.shape[0] == 192 == recurrent_count_via_det(make_volume(2, (0, 0), (1, 1)))
    # lexicographic order
    keys = [tuple(row) for row in R]
    assert keys == sorted(keys)
    v32 = make_volume(2, (0, 0), (2, 1))
    assert enumerate_recurrent(v32).shape[0] == recurrent_count_via_det(v32)


def test_enumeration_cap():
    with pytest.raises(ValueError):
        enumerate_recurrent(cube(2, 4), cap=1000)


def test_restriction_of_recurrent_stays_recurrent():
    # every sub-box restriction of every recurrent configuration is recurrent
    vol = make_volume(2, (0, 0), (2, 1))
    R = enumerate_recurrent(vol)
    subboxes = []
    for lo0 in range(3):
        for hi0 in range(lo0, 3):
            for lo1 in range(2):
                for hi1 in range(lo1, 2):
                    subboxes.append(make_volume(2, (lo0, lo1), (hi0, hi1)))
    for row in R[:: max(1, R.shape[0] // 400)]:
        cfg = config(vol, row.tolist())
        for sub in subboxes:
            assert burning_test(cfg.restrict(sub)).recurrent


def test_sampler_outputs_recurrent_and_uniform():
    # every draw passes the burning test; on the single site the law is
    # uniform on {1,2,3,4}
    counts = np.zeros(4, dtype=int)
    n = 100_000
    for i in range(n):
        cfg = sample_recurrent(V1, stream(104, 3, i))
        assert cfg.heights[0] in (1, 2, 3, 4)
        counts[cfg.heights[0] - 1] += 1
    stat, dof, p = chi_square_uniform(counts, 4)
    assert p > 0.01

    for i in range(50):
        vol = make_volume(2, (0, 0), (2, 1), deleted=(1, 0)) if i % 2 else cube(3, 2)
        assert burning_test(sample_recurrent(vol, stream(104, 4, i))).recurrent
