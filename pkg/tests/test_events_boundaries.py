"""Boundary detection, segmentation, continuity validation, and re-inference."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cce.backends.mock import MockReasoner
from cce.dimension import DIMENSIONLESS, Quantity, quantity
from cce.errors import (
    DegenerateTrajectoryError,
    DimensionError,
    ReInferenceExhaustedError,
)
from cce.events import (
    DeltaNormalizer,
    PhysicalCondition,
    boundary_scores,
    detect_boundaries,
    reinfer_on_violation,
    segment,
    validate_continuity,
)

import oracles
from conftest import make_traj, random_series_map


def chain_of(values, symbol="T", object_id="cube", unit=None):
    """Single-series event chain with t_index 1..len(values)."""
    conditions = []
    for i, v in enumerate(values):
        q = quantity(float(v), unit) if unit else Quantity(float(v), DIMENSIONLESS)
        conditions.append(
            PhysicalCondition(
                params={object_id: {symbol: q}},
                derived={},
                t_index=i + 1,
                time_span=(float(i), float(i + 1)),
            )
        )
    return conditions


class TestNormalizer:
    def test_constant_series_normalizes_to_zero(self):
        traj = make_traj({("a", "x"): [3.0, 3.0, 3.0]})
        norm = DeltaNormalizer(traj)
        assert norm.span(("a", "x")) == 0.0
        assert norm.normalize(("a", "x"), 3.0) == 0.0

    def test_normalize_maps_range_to_unit_interval(self):
        traj = make_traj({("a", "x"): [2.0, 4.0, 6.0]})
        norm = DeltaNormalizer(traj)
        assert norm.normalize(("a", "x"), 2.0) == 0.0
        assert norm.normalize(("a", "x"), 6.0) == 1.0
        assert norm.normalize(("a", "x"), 4.0) == 0.5

    def test_step_score_is_l2_over_all_series(self):
        traj = make_traj({
            ("a", "x"): [0.0, 1.0],
            ("a", "y"): [0.0, 2.0],
            ("", "d"): [1.0, 0.0],
        })
        scores = boundary_scores(traj)
        # each series spans its own range, so each normalized delta is +/-1
        assert scores == pytest.approx([3.0 ** 0.5])

    def test_scores_match_reference(self):
        rng = random.Random(7)
        series = random_series_map(rng, max_samples=16)
        traj = make_traj(series)
        got = boundary_scores(traj)
        expected = oracles.brute_force_scores(series)
        assert got == pytest.approx(expected, abs=1e-12)

    def test_single_sample_rejected(self):
        traj = make_traj({("a", "x"): [1.0]})
        with pytest.raises(DegenerateTrajectoryError):
            boundary_scores(traj)


class TestDetectBoundaries:
    def test_single_spike_hand_case(self):
        traj = make_traj({("a", "x"): [0.0, 0.1, 0.2, 1.5, 1.6]})
        assert detect_boundaries(traj, tau_p=0.5, min_gap=1) == [3]

    def test_constant_trajectory_has_no_boundaries(self):
        traj = make_traj({("a", "x"): [5.0, 5.0, 5.0, 5.0]})
        assert detect_boundaries(traj, tau_p=0.0, min_gap=1) == []

    def test_zero_threshold_keeps_every_moving_step(self):
        traj = make_traj({("a", "x"): [0.0, 1.0, 2.0, 3.0]})
        assert detect_boundaries(traj, tau_p=0.0, min_gap=1) == [1, 2, 3]

    def test_score_equal_to_threshold_is_not_a_boundary(self):
        traj = make_traj({("a", "x"): [0.0, 0.5, 1.0]})
        scores = boundary_scores(traj)
        assert detect_boundaries(traj, tau_p=scores[0], min_gap=1) == []

    def test_min_gap_enforces_spacing(self):
        traj = make_traj({("a", "x"): [0.0, 3.0, 0.0, 3.0, 0.0, 3.0]})
        assert detect_boundaries(traj, tau_p=0.1, min_gap=1) == [1, 2, 3, 4, 5]
        assert detect_boundaries(traj, tau_p=0.1, min_gap=3) == [1, 4]

    def test_matches_brute_force_oracle(self):
        rng = random.Random(123)
        for _ in range(40):
            series = random_series_map(rng, max_samples=32)
            traj = make_traj(series)
            tau_p = rng.uniform(0.0, 1.5)
            min_gap = rng.randint(1, 4)
            got = detect_boundaries(traj, tau_p=tau_p, min_gap=min_gap)
            expected = oracles.brute_force_boundaries(series, tau_p, min_gap)
            assert got == expected

    def test_scale_invariance(self):
        rng = random.Random(321)
        for _ in range(25):
            series = random_series_map(rng, max_samples=32)
            traj = make_traj(series)
            factors = {key: rng.uniform(0.01, 100.0) for key in series}
            scaled = {
                key: [v * factors[key] for v in vals]
                for key, vals in series.items()
            }
            traj_scaled = make_traj(scaled)
            tau_p = rng.uniform(0.0, 1.2)
            assert detect_boundaries(traj, tau_p=tau_p, min_gap=1) == \
                detect_boundaries(traj_scaled, tau_p=tau_p, min_gap=1)

    @given(st.integers(min_value=0, max_value=10 ** 6), st.floats(0.0, 2.0),
           st.floats(0.0, 2.0))
    @settings(max_examples=60, deadline=None)
    def test_threshold_monotonicity(self, seed, tau_a, tau_b):
        """Raising tau_p with the gap rule off never adds boundaries."""
        rng = random.Random(seed)
        traj = make_traj(random_series_map(rng, max_samples=24))
        lo, hi = sorted((tau_a, tau_b))
        assert set(detect_boundaries(traj, tau_p=hi, min_gap=1)) <= \
            set(detect_boundaries(traj, tau_p=lo, min_gap=1))


class TestSegment:
    def test_boundary_list_to_spans(self):
        traj = make_traj({("a", "x"): [0.0, 0.1, 0.2, 1.5, 1.6]})
        conditions = segment(traj, [3])
        assert len(conditions) == 2
        assert [c.t_index for c in conditions] == [1, 2]
        # each event reaches its segment-final sample
        assert conditions[0].value_of("a", "x") == 0.2
        assert conditions[1].value_of("a", "x") == 1.6
        assert conditions[0].time_span == (0.0, 3.0)
        assert conditions[1].time_span == (3.0, 4.0)

    def test_no_boundaries_single_event(self):
        traj = make_traj({("a", "x"): [1.0, 2.0]})
        conditions = segment(traj, [])
        assert len(conditions) == 1
        assert conditions[0].value_of("a", "x") == 2.0
        assert conditions[0].time_span == (0.0, 1.0)

    def test_tiling_invariant(self):
        rng = random.Random(99)
        for _ in range(30):
            series = random_series_map(rng, max_samples=24)
            traj = make_traj(series)
            boundaries = detect_boundaries(
                traj, tau_p=rng.uniform(0, 1), min_gap=rng.randint(1, 3)
            )
            conditions = segment(traj, boundaries)
            assert len(conditions) == len(boundaries) + 1 or len(conditions) <= 6
            assert conditions[0].time_span[0] == traj.times[0]
            assert conditions[-1].time_span[1] == traj.times[-1]
            for prev, curr in zip(conditions, conditions[1:]):
                assert prev.time_span[1] == curr.time_span[0]
            assert [c.t_index for c in conditions] == list(
                range(1, len(conditions) + 1)
            )

    def test_max_events_keeps_largest_scores(self):
        traj = make_traj({("a", "x"): [0.0, 0.1, 0.2, 1.5, 1.6]})
        scores = boundary_scores(traj)
        conditions = segment(traj, [1, 2, 3, 4], max_events=2)
        # only the largest-score boundary survives; index 3 scores highest
        assert len(conditions) == 2
        assert conditions[0].time_span == (0.0, traj.times[3])
        kept = sorted(
            sorted([1, 2, 3, 4], key=lambda b: (-scores[b - 1], b))[:1]
        )
        assert kept == [3]

    def test_max_events_tie_prefers_earlier_boundary(self):
        traj = make_traj({("a", "x"): [0.0, 1.0, 0.0, 1.0, 0.0]})
        conditions = segment(traj, [1, 2, 3, 4], max_events=3)
        assert [c.time_span for c in conditions] == [
            (0.0, 1.0), (1.0, 2.0), (2.0, 4.0)
        ]

    def test_out_of_range_boundary_rejected(self):
        traj = make_traj({("a", "x"): [0.0, 1.0, 2.0]})
        with pytest.raises(ValueError):
            segment(traj, [3])
        with pytest.raises(ValueError):
            segment(traj, [0])

    def test_non_ascending_boundaries_rejected(self):
        traj = make_traj({("a", "x"): [0.0, 1.0, 2.0, 3.0]})
        with pytest.raises(ValueError):
            segment(traj, [2, 2])


class TestValidateContinuity:
    def test_increasing_series_accepted(self):
        report = validate_continuity(chain_of([-5, 0, 4]), {"T": "increasing"})
        assert report.accepted
        assert report.violations == []

    def test_monotone_reversal_flagged(self):
        report = validate_continuity(chain_of([-5, 0, -3]), {"T": "increasing"})
        assert not report.accepted
        assert len(report.violations) == 1
        v = report.violations[0]
        assert (v.t_index, v.symbol, v.object_id) == (3, "T", "cube")
        assert v.observed_jump == -3.0

    def test_decreasing_direction(self):
        report = validate_continuity(chain_of([4, 0, 2]), {"T": "decreasing"})
        assert [v.t_index for v in report.violations] == [3]

    def test_free_direction_allows_reversals(self):
        report = validate_continuity(chain_of([4, 0, 2]), {"T": "free"})
        assert report.accepted

    def test_jump_beyond_kappa_median_flagged(self):
        report = validate_continuity(chain_of([0, 1, 2, 30]), {}, kappa=5.0)
        assert len(report.violations) == 1
        v = report.violations[0]
        assert v.t_index == 4
        assert v.observed_jump == 28.0
        assert v.allowed_bound == 5.0  # kappa * median([1, 1, 28])

    def test_jump_rule_needs_three_events(self):
        report = validate_continuity(chain_of([0, 100]), {})
        assert report.accepted

    def test_validation_is_idempotent(self):
        chain = chain_of([-5, 0, -3, 40])
        first = validate_continuity(chain, {"T": "increasing"}, kappa=5.0)
        second = validate_continuity(chain, {"T": "increasing"}, kappa=5.0)
        assert [v.to_json() for v in first.violations] == [
            v.to_json() for v in second.violations
        ]

    def test_empty_chain_rejected(self):
        with pytest.raises(ValueError):
            validate_continuity([], {})

    def test_unknown_direction_rejected(self):
        with pytest.raises(ValueError):
            validate_continuity(chain_of([1, 2]), {"T": "sideways"})


class TestReinference:
    def test_midpoint_repair(self):
        """Default mock answer replaces the dip with the neighbor midpoint."""
        chain = chain_of([-5, 0, -3, 4])
        report = validate_continuity(chain, {"T": "increasing"})
        repaired = reinfer_on_violation(
            report, chain, MockReasoner(), {"T": "increasing"}
        )
        assert [c.value_of("cube", "T") for c in repaired] == [-5, 0, 2, 4]

    def test_terminal_violation_extrapolates(self):
        chain = chain_of([-5, 0, -3])
        report = validate_continuity(chain, {"T": "increasing"})
        repaired = reinfer_on_violation(
            report, chain, MockReasoner(), {"T": "increasing"}
        )
        # no next event: prev + 0.5 * (prev - prev_prev)
        assert repaired[-1].value_of("cube", "T") == pytest.approx(2.5)

    def test_accepted_report_rejected(self):
        chain = chain_of([1, 2, 3])
        report = validate_continuity(chain, {"T": "increasing"})
        with pytest.raises(ValueError):
            reinfer_on_violation(report, chain, MockReasoner(), {})

    def test_retries_exhaust_with_stubborn_backend(self):
        chain = chain_of([-5, 0, -3, 4])
        report = validate_continuity(chain, {"T": "increasing"})
        stubborn = MockReasoner(fixtures=[{
            "kind": "reinfer_values",
            "response": {"values": [
                {"object_id": "cube", "symbol": "T", "t_index": 3, "value": -3.0}
            ]},
        }])
        with pytest.raises(ReInferenceExhaustedError) as err:
            reinfer_on_violation(
                report, chain, stubborn, {"T": "increasing"}, max_retries=3
            )
        assert err.value.report.retry_count == 3
        assert not err.value.report.accepted

    def test_wrong_dimension_answer_rejected(self):
        chain = chain_of([-5, 0, -3, 4], unit="K")
        report = validate_continuity(chain, {"T": "increasing"})
        bad_unit = MockReasoner(fixtures=[{
            "kind": "reinfer_values",
            "response": {"values": [
                {"object_id": "cube", "symbol": "T", "t_index": 3,
                 "value": 2.0, "unit": "kg"}
            ]},
        }])
        with pytest.raises(DimensionError) as err:
            reinfer_on_violation(report, chain, bad_unit, {"T": "increasing"})
        assert "retry 1 consumed" in str(err.value)

    def test_unknown_t_index_in_answer_ignored(self):
        chain = chain_of([-5, 0, -3, 4])
        report = validate_continuity(chain, {"T": "increasing"})
        mixed = MockReasoner(fixtures=[{
            "kind": "reinfer_values",
            "response": {"values": [
                {"object_id": "cube", "symbol": "T", "t_index": 99, "value": 0.0},
                {"object_id": "cube", "symbol": "T", "t_index": 3, "value": 2.0},
            ]},
        }])
        repaired = reinfer_on_violation(report, chain, mixed, {"T": "increasing"})
        assert [c.value_of("cube", "T") for c in repaired] == [-5, 0, 2, 4]
