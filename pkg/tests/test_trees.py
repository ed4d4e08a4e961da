import numpy as np
import pytest

from sandlab.engine import config
from sandlab.harness import stream
from sandlab.lattice import cube, make_volume, recurrent_count_via_det
from sandlab.recurrence import burning_test, enumerate_recurrent
from sandlab.trees import (
    SINK,
    check_forest,
    component_of,
    config_to_tree,
    loop_erase,
    origin_component_size,
    parent_slots_batch,
    tree_to_config,
    wilson_two_component,
    wilson_ust,
)

V1 = make_volume(2, (0, 0), (0, 0))
V21 = make_volume(2, (0, 0), (1, 0))
V22 = make_volume(2, (0, 0), (1, 1))


def test_loop_erase_hand_cases():
    assert loop_erase(["a", "b", "a", "c"]) == ["a", "c"]
    assert loop_erase([0, 1, 2, 1, 3]) == [0, 1, 3]
    assert loop_erase([5]) == [5]
    assert loop_erase([1, 2, 3]) == [1, 2, 3]
    with pytest.raises(ValueError):
        loop_erase([])


def test_loop_erase_random_walk_paths():
    rng = stream(105, 0)
    for _ in range(200):
        steps = rng.integers(0, 4, size=int(rng.integers(1, 60)))
        pos = (0, 0)
        path = [pos]
        moves = ((1, 0), (-1, 0), (0, 1), (0, -1))
        for s in steps:
            pos = (pos[0] + moves[s][0], pos[1] + moves[s][1])
            path.append(pos)
        out = loop_erase(path)
        assert len(set(out)) == len(out)  # simple
        assert out[0] == path[0] and out[-1] == path[-1]
        for a, b in zip(out, out[1:]):  # still a lattice path
            assert abs(a[0] - b[0]) + abs(a[1] - b[1]) == 1


def test_wilson_output_is_spanning_tree():
    for trial in range(25):
        vol = (cube(2, 3), cube(3, 2), make_volume(2, (0, 0), (3, 1), deleted=(1, 0)))[trial % 3]
        f = wilson_ust(vol, stream(105, 1, trial))
        check_forest(f)
        assert f.origin is None
        assert component_of(f, vol.sites[0]) == frozenset(vol.sites)


def test_wilson_kernel_equals_python():
    for trial in range(20):
        vol = cube(2, 4) if trial % 2 else cube(3, 2)
        f1 = wilson_ust(vol, stream(105, 2, trial), use_kernel=True)
        f2 = wilson_ust(vol, stream(105, 2, trial), use_kernel=False)
        assert f1.key() == f2.key()
        o = vol.sites[trial % vol.n_sites]
        g1 = wilson_two_component(vol, o, stream(105, 3, trial), use_kernel=True)
        g2 = wilson_two_component(vol, o, stream(105, 3, trial), use_kernel=False)
        assert g1.key() == g2.key()


def test_wilson_enumeration_validation():
    with pytest.raises(ValueError):
        wilson_ust(V22, stream(105, 4), enumeration=[(0, 0), (0, 0), (1, 1), (1, 0)])


def test_single_site_parent_slots_track_heights():
    # four sink slots, one per direction; height k picks the k-th slot
    for k in (1, 2, 3, 4):
        f = config_to_tree(config(V1, [k]))
        assert int(f.parent_slot[0]) == k - 1
        assert f.parent_vertex((0, 0)) is SINK
        back = tree_to_config(f)
        assert list(back.heights) == [k]


def test_two_site_hand_tree():
    f = config_to_tree(config(V21, [4, 4]))
    assert f.parent_vertex((0, 0)) is SINK
    assert f.parent_vertex((1, 0)) is SINK


def test_bijection_injective_and_inverse():
    for vol in (V1, V21, V22, make_volume(2, (0, 0), (2, 1))):
        R = enumerate_recurrent(vol)
        det = recurrent_count_via_det(vol)
        keys = set()
        for row in R:
            cfg = config(vol, row.tolist())
            f = config_to_tree(cfg)
            keys.add(f.key())
            assert tree_to_config(f) == cfg
        assert len(keys) == det == R.shape[0]


def test_forest_to_config_to_forest_roundtrip():
    for trial in range(30):
        vol = cube(2, 5) if trial % 2 else cube(3, 3)
        f = wilson_ust(vol, stream(105, 5, trial))
        cfg = tree_to_config(f)
        assert burning_test(cfg).recurrent
        assert config_to_tree(cfg).key() == f.key()


def test_tree_to_config_python_matches_kernel():
    for trial in range(20):
        vol = cube(2, 4)
        f = wilson_ust(vol, stream(105, 6, trial))
        assert tree_to_config(f, use_kernel=True) == tree_to_config(f, use_kernel=False)
        g = wilson_two_component(vol, (1, 1), stream(105, 7, trial))
        assert tree_to_config(g, use_kernel=True) == tree_to_config(g, use_kernel=False)


def test_config_to_tree_rejects_transient():
    with pytest.raises(ValueError):
        config_to_tree(config(V21, [1, 1]))


def test_malformed_forest_rejected():
    f = wilson_ust(V22, stream(105, 8))
    # force a cycle between the first two sites
    bad = f.parent_slot.copy()
    bad[V22.index[(0, 0)]] = 2  # (0,0) -> (0,1)
    bad[V22.index[(0, 1)]] = 1  # (0,1) -> (0,0)
    from sandlab.trees import Forest

    broken = Forest(vol=V22, parent_slot=bad, origin=None)
    with pytest.raises(ValueError):
        tree_to_config(broken)


def test_two_component_structure():
    for trial in range(25):
        vol = cube(2, 4) if trial % 2 else cube(3, 3)
        origin = vol.sites[int(stream(105, 9, trial).integers(0, vol.n_sites))]
        f = wilson_two_component(vol, origin, stream(105, 10, trial))
        check_forest(f)
        assert f.roots == (SINK, origin)
        comp = component_of(f, origin)
        assert origin in comp
        assert len(comp) == origin_component_size(f)
        other = component_of(f, vol.sites[0]) if vol.sites[0] not in comp else None
        if other is not None:
            assert len(comp) + len(other) == vol.n_sites


def test_two_component_accepts_deleted_representation():
    full = cube(2, 3)
    deleted = full.delete((1, 1))
    f = wilson_two_component(deleted, (1, 1), stream(105, 11))
    assert f.vol.deleted_site is None
    assert f.origin == (1, 1)
    with pytest.raises(ValueError):
        wilson_two_component(deleted, (0, 0), stream(105, 11))


def test_two_component_bijection_small():
    full = V21
    deleted = full.delete((0, 0))
    R = enumerate_recurrent(deleted)
    det0 = recurrent_count_via_det(deleted)
    keys = set()
    for row in R:
        cfg = config(deleted, row.tolist())
        f = config_to_tree(cfg, origin=(0, 0))
        keys.add(f.key())
        assert tree_to_config(f) == cfg
    assert len(keys) == det0 == R.shape[0] == 4


def test_config_to_tree_two_component_requires_deleted_volume():
    with pytest.raises(ValueError):
        config_to_tree(config(V22, [4, 4, 4, 4]), origin=(0, 0))


def test_parent_slots_batch_matches_single():
    vol = make_volume(2, (0, 0), (2, 1))
    R = enumerate_recurrent(vol)
    slots = parent_slots_batch(vol, R)
    for i in range(0, R.shape[0], 97):
        f = config_to_tree(config(vol, R[i].tolist()))
        assert np.array_equal(slots[i], f.parent_slot)


def test_wilson_chunk_size_is_invisible(monkeypatch):
    # walks suspend and resume across random-buffer refills; the sampled
    # forest must not depend on the chunk size, on either path
    import sandlab.trees as trees_mod

    keys = {}
    for chunk in (3, 17, 8192):
        class SizedFeed(trees_mod._DirFeed):
            def __init__(self, rng, twod, chunk=chunk):
                super().__init__(rng, twod, chunk=chunk)

        monkeypatch.setattr(trees_mod, "_DirFeed", SizedFeed)
        for trial in range(5):
            f_k = wilson_ust(cube(2, 4), stream(105, 13, trial), use_kernel=True)
            f_p = wilson_ust(cube(2, 4), stream(105, 13, trial), use_kernel=False)
            assert f_k.key() == f_p.key()
            keys.setdefault(trial, f_k.key())
            assert keys[trial] == f_k.key()


def test_sampled_configs_always_recurrent():
    ok = 0
    for i in range(2000):
        vol = V22
        cfg = tree_to_config(wilson_ust(vol, stream(105, 12, i)))
        ok += burning_test(cfg).recurrent
    assert ok == 2000
