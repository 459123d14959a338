from __future__ import annotations

import pytest
from hypothesis import given
from hypothesis import strategies as st

from slotuner.knobs import KnobDim, KnobSpace, KnobVector, clamp, live_k0, live_space, neighbors, sim_space


def test_live_space_bounds_and_steps():
    sp = live_space()
    assert [(d.name, d.min, d.max, d.step) for d in sp.dims] == [
        ("conc", 2, 16, 2),
        ("max_seqs", 4, 16, 3),
        ("spec_tokens", 0, 16, 4),
    ]
    assert list(sp.toggles) == ["spec_enabled"]


def test_sim_space_order_and_bounds():
    sp = sim_space()
    assert sp.names == ["W", "k", "B", "max_wait_ms"]
    assert (sp.dims[0].min, sp.dims[0].max) == (1, 4)
    assert sp.dims[3].max == 50
    assert [d.step for d in sp.dims] == [1, 2, 4, 10]


def test_clamp_examples():
    sp = live_space()
    k = live_k0()
    assert clamp(sp, k.replace(conc=18))["conc"] == 16
    assert clamp(sp, k.replace(spec_tokens=-4))["spec_tokens"] == 0
    assert clamp(sp, k) == k


def test_clamp_missing_dim_raises():
    sp = live_space()
    with pytest.raises(KeyError):
        clamp(sp, KnobVector.of({"conc": 8, "max_seqs": 8}, {"spec_enabled": True}))


def test_neighbors_of_k0_in_documented_order():
    nb = neighbors(live_space(), live_k0())
    got = [(n["conc"], n["max_seqs"], n["spec_tokens"], n["spec_enabled"]) for n in nb]
    assert got == [
        (6, 8, 8, True),
        (10, 8, 8, True),
        (8, 5, 8, True),
        (8, 11, 8, True),
        (8, 8, 4, True),
        (8, 8, 12, True),
        (8, 8, 8, False),
    ]


def test_neighbors_drop_clamped_to_self():
    sp = live_space()
    nb = neighbors(sp, live_k0().replace(conc=16))
    assert len(nb) == 6
    assert all(n["conc"] in (14, 16) for n in nb)
    nb = neighbors(sp, live_k0().replace(spec_tokens=0))
    assert [n["spec_tokens"] for n in nb].count(0) == 5  # everything except the +4 move keeps 0


def test_neighbors_sim_corner_only_upward():
    sp = sim_space()
    k = sp.vector({"W": 1, "k": 2, "B": 12, "max_wait_ms": 0})
    nb = neighbors(sp, k)
    assert [n.to_dict() for n in nb] == [
        {"W": 2, "k": 2, "B": 12, "max_wait_ms": 0},
        {"W": 1, "k": 4, "B": 12, "max_wait_ms": 0},
        {"W": 1, "k": 2, "B": 8, "max_wait_ms": 0},
        {"W": 1, "k": 2, "B": 16, "max_wait_ms": 0},
        {"W": 1, "k": 2, "B": 12, "max_wait_ms": 10},
    ]


def test_clamped_step_that_does_not_collapse_is_kept():
    sp = KnobSpace(dims=(KnobDim("x", 0, 5, 4, ""),))
    nb = neighbors(sp, sp.vector({"x": 3}))
    assert [n["x"] for n in nb] == [0, 5]


def test_duplicate_names_rejected():
    with pytest.raises(ValueError):
        KnobSpace(dims=(KnobDim("a", 0, 1, 1, ""), KnobDim("a", 0, 1, 1, "")))


def test_bad_dim_rejected():
    with pytest.raises(ValueError):
        KnobDim("a", 3, 1, 1, "")
    with pytest.raises(ValueError):
        KnobDim("a", 0, 1, 0, "")


def test_vector_dict_round_trip():
    k = live_k0()
    assert KnobVector.from_dict(k.to_dict()) == k
    assert hash(KnobVector.from_dict(k.to_dict())) == hash(k)


def _vectors(space):
    return st.fixed_dictionaries({d.name: st.integers(d.min, d.max) for d in space.dims}).flatmap(
        lambda vals: st.fixed_dictionaries({t: st.booleans() for t in space.toggles}).map(
            lambda togs: space.vector({**vals, **togs})
        )
    )


@given(st.sampled_from([live_space(), sim_space()]).flatmap(lambda sp: st.tuples(st.just(sp), _vectors(sp))))
def test_neighbor_properties(args):
    sp, k = args
    nb = neighbors(sp, k)
    assert len(nb) <= 2 * len(sp.dims) + len(sp.toggles)
    assert len(set(nb)) == len(nb)
    assert k not in nb
    assert all(sp.contains(n) for n in nb)
    assert nb == neighbors(sp, k)
    # every neighbor differs from k in exactly one knob
    for n in nb:
        diff = [name for name, v in n.to_dict().items() if k[name] != v]
        assert len(diff) == 1


@given(st.integers(-100, 100), st.integers(-100, 100), st.integers(-100, 100))
def test_clamp_lands_in_bounds(c, m, s):
    sp = live_space()
    k = clamp(sp, KnobVector.of({"conc": c, "max_seqs": m, "spec_tokens": s}, {"spec_enabled": True}))
    assert sp.contains(k)
    for d in sp.dims:
        raw = {"conc": c, "max_seqs": m, "spec_tokens": s}[d.name]
        if d.min <= raw <= d.max:
            assert k[d.name] == raw
