"""Tests for knob spaces, grid rounding and switch-distance ordering"""

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tuning.knobspace import (
    MAX_SPACE_SIZE,
    KnobDimension,
    KnobSpace,
    cartesian_product,
    nearest_setting,
    normalize,
    order_min_switch_distance,
    switch_distance,
)
from utils.errors import ConfigurationError


def path_length(order):
    return sum(switch_distance(a, b) for a, b in zip(order, order[1:]))


class TestKnobSpace:
    """Construction, validation and indexing"""

    def test_size_is_product_of_counts(self, small_space):
        assert small_space.size == 3 * 4 * 5
        assert small_space.counts == (3, 4, 5)
        assert small_space.ndim == 3

    def test_duplicate_dimension_names_rejected(self):
        with pytest.raises(ValueError):
            KnobSpace(
                dimensions=[KnobDimension(name="a", values=[1, 2]), KnobDimension(name="a", values=[3])],
                default=(0, 0),
            )

    def test_values_must_increase(self):
        with pytest.raises(ValueError):
            KnobDimension(name="a", values=[1, 1, 2])

    def test_default_must_be_valid(self):
        with pytest.raises(ValueError):
            KnobSpace(dimensions=[KnobDimension(name="a", values=[1, 2])], default=(2,))

    def test_grid_is_lexicographic(self, small_space):
        settings_ = list(small_space.settings())
        assert settings_ == sorted(settings_)
        assert settings_[0] == (0, 0, 0)
        assert settings_[-1] == (2, 3, 4)

    def test_flat_index_round_trip(self, small_space):
        for flat, k in enumerate(small_space.settings()):
            assert small_space.flat_index(k) == flat
            assert small_space.setting_at(flat) == k

    def test_check_rejects_out_of_range(self, small_space):
        with pytest.raises(ValueError):
            small_space.check((3, 0, 0))
        with pytest.raises(ValueError):
            small_space.check((0, 0))

    def test_values_of_maps_indices_to_levels(self, small_space):
        assert small_space.values_of((2, 3, 0)) == (4, 1800, 1)

    def test_unknown_dimension_name(self, small_space):
        with pytest.raises(ConfigurationError):
            small_space.dimension("voltage")

    def test_size_is_exact_for_wide_spaces(self):
        space = KnobSpace(
            dimensions=[KnobDimension(name=f"k{i}", values=[0, 1]) for i in range(19)], default=(0,) * 19,
        )
        assert space.size == 2 ** 19

    def test_oversized_space_rejected(self):
        """16 knobs of 16 levels is 2**64 settings, far beyond any grid we can scan"""
        with pytest.raises(ValueError, match="settings"):
            KnobSpace(
                dimensions=[KnobDimension(name=f"k{i}", values=list(range(16))) for i in range(16)],
                default=(0,) * 16,
            )

    def test_size_limit_is_inclusive(self):
        at_limit = KnobSpace(
            dimensions=[KnobDimension(name=n, values=list(range(100))) for n in "abc"], default=(0, 0, 0),
        )
        assert at_limit.size == MAX_SPACE_SIZE
        with pytest.raises(ValueError):
            KnobSpace(
                dimensions=list(at_limit.dimensions) + [KnobDimension(name="d", values=[0, 1])],
                default=(0, 0, 0, 0),
            )

    def test_hello_style_json_round_trip(self, small_space):
        """4-d space survives a JSON round trip with names, values and default"""
        space = KnobSpace(
            dimensions=list(small_space.dimensions) + [KnobDimension(name="threads", values=[1, 2])],
            default=(1, 2, 3, 1),
        )
        assert KnobSpace.model_validate_json(space.model_dump_json()) == space


class TestCartesianProduct:
    """Joint application x device spaces"""

    def test_app_dims_first_and_defaults_concatenated(self):
        app = KnobSpace(dimensions=[KnobDimension(name="batch", values=[1, 2, 4])], default=(1,))
        dev = KnobSpace(
            dimensions=[KnobDimension(name="cores", values=[1, 2]), KnobDimension(name="freq", values=[1, 2, 3])],
            default=(1, 2),
        )
        joint = cartesian_product(app, dev)
        assert joint.names == ["batch", "cores", "freq"]
        assert joint.default_setting == (1, 1, 2)
        assert joint.size == app.size * dev.size

    @given(
        st.lists(st.integers(1, 6), min_size=1, max_size=3),
        st.lists(st.integers(1, 6), min_size=1, max_size=3),
    )
    def test_size_multiplies_over_random_shapes(self, app_counts, dev_counts):
        app = KnobSpace(
            dimensions=[KnobDimension(name=f"app{i}", values=list(range(c))) for i, c in enumerate(app_counts)],
            default=tuple(c - 1 for c in app_counts),
        )
        dev = KnobSpace(
            dimensions=[KnobDimension(name=f"dev{i}", values=list(range(c))) for i, c in enumerate(dev_counts)],
            default=(0,) * len(dev_counts),
        )
        joint = cartesian_product(app, dev)
        assert joint.counts == tuple(app_counts) + tuple(dev_counts)
        assert joint.size == app.size * dev.size == int(np.prod(app_counts + dev_counts))
        assert joint.ndim == len(app_counts) + len(dev_counts)
        assert joint.default_setting == app.default_setting + dev.default_setting

    def test_name_clash_rejected(self):
        a = KnobSpace(dimensions=[KnobDimension(name="x", values=[1])], default=(0,))
        with pytest.raises(ConfigurationError):
            cartesian_product(a, a)


class TestNormalization:
    """Unit-cube mapping and grid rounding"""

    def test_corners(self, small_space):
        assert np.allclose(normalize(small_space, (0, 0, 0)), [0, 0, 0])
        assert np.allclose(normalize(small_space, (2, 3, 4)), [1, 1, 1])

    def test_single_value_dimension_maps_to_zero(self):
        space = KnobSpace(dimensions=[KnobDimension(name="a", values=[5])], default=(0,))
        assert normalize(space, (0,))[0] == 0.0
        assert nearest_setting(space, [0.9]) == (0,)

    def test_nearest_of_normalized_is_identity(self, small_space):
        for k in small_space.settings():
            assert nearest_setting(small_space, normalize(small_space, k)) == k

    def test_round_trip_over_ten_thousand_settings(self):
        space = KnobSpace(
            dimensions=[KnobDimension(name=n, values=list(range(10))) for n in "abcd"], default=(0, 0, 0, 0),
        )
        assert space.size == 10_000
        for k in space.settings():
            assert nearest_setting(space, normalize(space, k)) == k

    def test_round_trip_matches_unit_grid(self):
        space = KnobSpace(
            dimensions=[KnobDimension(name=n, values=list(range(c))) for n, c in zip("abc", (7, 1, 13))],
            default=(0, 0, 0),
        )
        unit = space.unit_grid()
        for flat, k in enumerate(space.settings()):
            assert np.allclose(normalize(space, k), unit[flat])
            assert nearest_setting(space, unit[flat]) == k

    def test_clamps_outside_unit_cube(self, small_space):
        assert nearest_setting(small_space, [-0.5, 1.7, 0.5]) == (0, 3, 2)

    def test_rounds_half_up(self):
        space = KnobSpace(dimensions=[KnobDimension(name="a", values=[1, 2, 3])], default=(0,))
        assert nearest_setting(space, [0.25]) == (1,)
        assert nearest_setting(space, [0.2499]) == (0,)

    @given(st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3))
    def test_rounded_setting_is_nearest_grid_point(self, point):
        space = KnobSpace(
            dimensions=[KnobDimension(name=n, values=list(range(c))) for n, c in zip("abc", (3, 4, 5))],
            default=(0, 0, 0),
        )
        k = nearest_setting(space, point)
        assert space.contains(k)
        dist = np.abs(space.unit_grid() - np.asarray(point)).max(axis=1)
        # per-dimension rounding is optimal in every coordinate separately
        assert np.abs(normalize(space, k) - np.asarray(point)).max() <= dist.min() + 1e-12


class TestSwitchOrdering:
    """Greedy minimal-switch ordering of initialization samples"""

    def test_distance_is_manhattan(self):
        assert switch_distance((0, 3, 1), (2, 1, 1)) == 4

    def test_starts_at_start(self):
        settings_ = [(3, 3), (0, 0), (1, 0)]
        assert order_min_switch_distance(settings_, (0, 0))[0] == (0, 0)

    @given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 5)), min_size=1, max_size=12, unique=True))
    def test_output_is_permutation(self, settings_):
        order = order_min_switch_distance(settings_, settings_[0])
        assert sorted(order) == sorted(settings_)

    def test_ties_break_lexicographically(self):
        order = order_min_switch_distance([(1, 1), (2, 1), (1, 2), (0, 1)], (1, 1))
        assert order[1] == (0, 1)

    def test_start_must_be_present(self):
        with pytest.raises(ValueError):
            order_min_switch_distance([(0, 0)], (1, 1))

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            order_min_switch_distance([], (0, 0))

    def test_collinear_settings_visited_in_order(self):
        order = order_min_switch_distance([(0, 0), (2, 0), (1, 0)], (0, 0))
        assert order == [(0, 0), (1, 0), (2, 0)]
        assert path_length(order) == 2

    def test_single_setting(self):
        assert order_min_switch_distance([(4, 2)], (4, 2)) == [(4, 2)]

    def test_within_one_and_a_half_of_optimal_on_small_sets(self):
        """greedy path length vs brute-force optimum with the same start, 100 instances of <= 7 settings"""
        for seed in range(100):
            rng = np.random.default_rng(seed)
            n = int(rng.integers(2, 8))
            points = sorted({tuple(int(v) for v in rng.integers(0, 10, size=4)) for _ in range(n)})
            start = points[0]
            greedy = path_length(order_min_switch_distance(points, start))
            best = min(path_length([start, *perm]) for perm in itertools.permutations(points[1:]))
            assert greedy <= 1.5 * best, f"seed {seed}: greedy {greedy} vs optimal {best}"
