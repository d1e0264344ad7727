import numpy as np
import pytest

from msjoint import Cohort, IndividualRecord, Trajectory, build_graph, validate_cohort


def make_record(pairs=((0.0, 0),), censoring=5.0, times=(), values=None, k=1, d=1):
    times = np.asarray(times, dtype=float)
    if values is None:
        values = np.zeros((times.size, d))
    return IndividualRecord(
        covariates=np.zeros(k),
        measurement_times=times,
        measurements=np.asarray(values, dtype=float),
        trajectory=Trajectory(pairs),
        censoring_time=censoring,
    )


def test_trajectory_requires_increasing_times():
    with pytest.raises(ValueError, match="strictly increasing"):
        Trajectory(((0.0, 0), (0.0, 1)))
    with pytest.raises(ValueError, match="at least the initial"):
        Trajectory(())


def test_trajectory_times_may_be_negative():
    tr = Trajectory(((-3.0, 0), (-1.0, 1)))
    assert tr.last_time == -1.0
    assert tr.state_at(-2.0) == 0


def test_trajectory_state_at_and_truncation():
    tr = Trajectory(((0.0, 0), (2.0, 1), (5.0, 2)))
    assert tr.state_at(-1.0) == 0
    assert tr.state_at(2.0) == 1
    assert tr.state_at(10.0) == 2
    assert tr.truncated(3.0).pairs == ((0.0, 0), (2.0, 1))
    with pytest.raises(ValueError, match="precedes"):
        tr.truncated(-0.5)


def test_validate_cohort_accepts_simulated_data(study_cohort, study_graph):
    cohort, _ = study_cohort
    assert validate_cohort(cohort, study_graph) == []


def test_validate_cohort_state_out_of_range():
    g = build_graph(3, [(0, 1)])
    cohort = Cohort((make_record(pairs=((0.0, 0), (2.0, 5))),))
    violations = validate_cohort(cohort, g)
    assert any("state out of range" in v for v in violations)


def test_validate_cohort_transition_after_censoring():
    g = build_graph(3, [(0, 1)])
    cohort = Cohort((make_record(pairs=((0.0, 0), (2.0, 1)), censoring=1.0),))
    violations = validate_cohort(cohort, g)
    assert any("transition after censoring" in v for v in violations)


def test_validate_cohort_non_edge_transition():
    g = build_graph(3, [(0, 1)])
    cohort = Cohort((make_record(pairs=((0.0, 1), (2.0, 0)), censoring=3.0),))
    violations = validate_cohort(cohort, g)
    assert any("not a graph edge" in v for v in violations)


def test_validate_cohort_partially_missing_row():
    g = build_graph(2, [(0, 1)])
    values = np.array([[1.0, np.nan]])
    cohort = Cohort((make_record(times=[1.0], values=values, d=2),))
    violations = validate_cohort(cohort, g)
    assert any("partially missing" in v for v in violations)


def test_validate_cohort_unmasked_row_beyond_censoring():
    g = build_graph(2, [(0, 1)])
    cohort = Cohort((make_record(times=[6.0], values=[[1.0]], censoring=5.0),))
    violations = validate_cohort(cohort, g)
    assert any("beyond censoring" in v for v in violations)
    # properly masked row passes
    cohort_ok = Cohort((make_record(times=[6.0], values=[[np.nan]], censoring=5.0),))
    assert validate_cohort(cohort_ok, g) == []


def test_validate_cohort_is_idempotent(study_cohort, study_graph):
    cohort, _ = study_cohort
    assert validate_cohort(cohort, study_graph) == validate_cohort(cohort, study_graph)


def test_individuals_without_measurements_are_admitted():
    g = build_graph(2, [(0, 1)])
    cohort = Cohort((make_record(times=[]),))
    assert validate_cohort(cohort, g) == []
    assert cohort[0].n_measurements == 0


def test_infinite_censoring_is_representable():
    rec = make_record(censoring=np.inf)
    assert np.isinf(rec.censoring_time)


def test_cohort_rejects_mixed_covariate_dimensions():
    a = make_record(k=1)
    b = make_record(k=2)
    with pytest.raises(ValueError, match="covariate dimension"):
        Cohort((a, b))


def test_record_truncation_censors_at_t():
    rec = make_record(
        pairs=((0.0, 0), (2.0, 1)), censoring=8.0, times=[1.0, 3.0, 6.0],
        values=[[1.0], [2.0], [3.0]],
    )
    cut = rec.truncated(3.5)
    assert cut.censoring_time == 3.5
    assert cut.n_measurements == 2
    assert cut.trajectory.pairs == ((0.0, 0), (2.0, 1))
