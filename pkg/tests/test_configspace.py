import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ontic.configspace import (
    ConfigLabel,
    define_macropartition,
    dumps_space,
    loads_space,
    macro_measure,
    new_config_space,
    uniform_space,
    wrap_angle,
)
from ontic.errors import DuplicateLabel, LengthMismatch, NonPositiveWeight, UnknownMacrostate


def test_uniform_measure_total():
    space = new_config_space(range(4), [0.25] * 4)
    assert space.total_weight == 1.0
    assert space.size == 4


def test_direct_sum_total():
    space = new_config_space(range(3), [0.5, 0.3, 0.2])
    assert math.isclose(space.total_weight, 1.0, rel_tol=1e-12)


@pytest.mark.parametrize("weights", [[0.5, 0.0], [0.5, -1.0], [0.5, float("nan")], [1.0, float("inf")]])
def test_degenerate_weight(weights):
    with pytest.raises(NonPositiveWeight):
        new_config_space(range(2), weights)


def test_length_and_duplicates():
    with pytest.raises(LengthMismatch):
        new_config_space(range(3), [1.0, 1.0])
    with pytest.raises(LengthMismatch):
        new_config_space([], [])
    with pytest.raises(DuplicateLabel):
        new_config_space([1, 1], [1.0, 1.0])
    with pytest.raises(LengthMismatch):
        new_config_space([(0.0,), (0.0, 1.0)], [1.0, 1.0])


def test_weights_are_read_only():
    space = uniform_space(3)
    with pytest.raises(ValueError):
        space.weights[0] = 2.0


def test_labels():
    lab = ConfigLabel.of_field([0.5, -0.25])
    assert lab.is_field and lab.field == (0.5, -0.25)
    assert ConfigLabel.decode(lab.encode()) == lab
    g = lab.with_gauge(-math.pi / 2)
    assert math.isclose(g.gauge, 3 * math.pi / 2)
    assert ConfigLabel.decode(g.encode()) == g
    with pytest.raises(ValueError):
        ConfigLabel(id=1, gauge=7.0)
    with pytest.raises(ValueError):
        ConfigLabel()


def test_wrap_angle_edges():
    assert wrap_angle(2 * math.pi) == 0.0
    assert wrap_angle(-1e-300) == 0.0
    assert 0.0 <= wrap_angle(-1e-17) < 2 * math.pi


def test_define_macropartition_examples():
    space = uniform_space(3)
    p = define_macropartition(space, ["A", "A", "B"])
    assert dict(p.macrostates) == {"A": (0, 1), "B": (2,)}
    single = define_macropartition(space, ["A"] * 3)
    assert dict(single.macrostates) == {"A": (0, 1, 2)}
    with pytest.raises(LengthMismatch):
        define_macropartition(space, ["A", "B"])


def test_macro_measure_examples():
    space = new_config_space(range(4), [0.25] * 4)
    p = define_macropartition(space, ["A", "A", "A", "B"])
    assert macro_measure(space, p, "A") == 0.75
    assert macro_measure(space, p, "B") == 0.25
    whole = define_macropartition(space, [0] * 4)
    assert macro_measure(space, whole, 0) == space.total_weight
    with pytest.raises(UnknownMacrostate):
        macro_measure(space, p, "C")


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.floats(1e-6, 1e3), min_size=1, max_size=40).flatmap(
        lambda w: st.tuples(st.just(w), st.lists(st.integers(0, 4), min_size=len(w), max_size=len(w)))
    )
)
def test_partition_is_disjoint_cover(data):
    weights, assignment = data
    space = new_config_space(range(len(weights)), weights)
    p = define_macropartition(space, assignment)
    members = [i for idx in p.macrostates.values() for i in idx]
    assert sorted(members) == list(range(len(weights)))
    total = math.fsum(macro_measure(space, p, a) for a in p.ids)
    assert math.isclose(total, space.total_weight, rel_tol=1e-12)
    assert define_macropartition(space, assignment) == p


def test_serialization_round_trip_exact():
    rng = np.random.default_rng(4)
    w = rng.random(12) * 10 + 1e-3
    labels = [ConfigLabel.of_field(rng.standard_normal(3)) for _ in range(12)]
    space = new_config_space(labels, w)
    part = define_macropartition(space, ["x", 3, "y"] * 4)
    back, bpart = loads_space(dumps_space(space, part))
    assert back.labels == space.labels
    assert np.array_equal(back.weights, space.weights)
    assert bpart == part
    plain, none = loads_space(dumps_space(uniform_space(2)))
    assert none is None and plain.size == 2
