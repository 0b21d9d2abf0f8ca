import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _reference import pairwise_violations
from monodecomp.monotonicity import (
    Direction,
    Dominance,
    Label,
    LabeledSample,
    MonotonicityProfile,
    MonotonicityViolation,
    Provenance,
    WitnessSet,
    critical_corner,
    dominates_general,
    enforce_monotonicity,
    infer_label,
    violating_pairs,
)

INC, DEC, NONE = Direction.INCREASING, Direction.DECREASING, Direction.NONE
PROF2 = MonotonicityProfile((INC, DEC))

coords = st.integers(0, 6).map(float)
points2 = st.tuples(coords, coords)


def truth(p):
    # monotone: MINUS when velocity beats a threshold rising with the second coordinate
    return Label.MINUS if p[0] >= 1.0 + 0.5 * p[1] else Label.PLUS


def test_label_basics():
    assert Label.MINUS.rank > Label.PLUS.rank
    assert Label.parse("-1") is Label.MINUS and Label.parse(1) is Label.PLUS
    assert Label.PLUS.flipped is Label.MINUS
    with pytest.raises(ValueError):
        Label.parse("0")


def test_dominance_cases():
    assert dominates_general((2, 1), (1, 2), PROF2) is Dominance.FORCES_GEQ
    assert dominates_general((1, 2), (2, 1), PROF2) is Dominance.FORCES_LEQ
    assert dominates_general((2, 2), (1, 1), PROF2) is Dominance.INCOMPARABLE
    # differing in one monotone coordinate is enough
    assert dominates_general((2, 1), (1, 1), PROF2) is Dominance.FORCES_GEQ
    prof = MonotonicityProfile((INC, NONE))
    assert dominates_general((2, 1), (1, 1), prof) is Dominance.FORCES_GEQ
    assert dominates_general((2, 1), (1, 0), prof) is Dominance.INCOMPARABLE
    with pytest.raises(ValueError):
        dominates_general((1, 1), (1, 1), PROF2)


@given(points2, points2)
def test_dominance_antisymmetric(a, b):
    if a == b:
        return
    ab, ba = dominates_general(a, b, PROF2), dominates_general(b, a, PROF2)
    flip = {Dominance.FORCES_GEQ: Dominance.FORCES_LEQ, Dominance.FORCES_LEQ: Dominance.FORCES_GEQ}
    assert ba is flip.get(ab, Dominance.INCOMPARABLE)


@given(st.lists(points2, min_size=1, max_size=25, unique=True), points2)
def test_inference_is_sound_for_monotone_labels(witness_pts, query):
    witnesses = [LabeledSample(i, p, truth(p)) for i, p in enumerate(witness_pts)]
    label = infer_label(query, witnesses, PROF2)
    if label is not None:
        assert label is truth(query)


def test_inference_conflict_raises():
    witnesses = [LabeledSample(0, (1.0, 1.0), Label.MINUS), LabeledSample(1, (3.0, 0.0), Label.PLUS)]
    with pytest.raises(MonotonicityViolation) as exc:
        infer_label((2.0, 0.5), witnesses, PROF2)
    assert exc.value.minus_witness.id == 0 and exc.value.plus_witness.id == 1


def test_witness_set_grows():
    ws = WitnessSet(PROF2)
    assert ws.infer((1.0, 1.0)) is None
    ws.add(LabeledSample(0, (1.0, 1.0), Label.MINUS))
    assert ws.infer((2.0, 0.0)) is Label.MINUS
    assert ws.infer((1.0, 1.0)) is None
    assert ws.infer((0.0, 0.0)) is None


def test_critical_corner():
    lo, hi = (0.0, 10.0), (1.0, 20.0)
    assert critical_corner(lo, hi, Label.MINUS, PROF2) == (0.0, 20.0)
    assert critical_corner(lo, hi, Label.PLUS, PROF2) == (1.0, 10.0)
    assert critical_corner(lo, hi, Label.MINUS, MonotonicityProfile((INC, NONE))) is None


noisy_sets = st.lists(st.tuples(points2, st.booleans()), min_size=2, max_size=40, unique_by=lambda t: t[0])


@settings(max_examples=60, deadline=None)
@given(noisy_sets)
def test_enforcement_repairs_noisy_labels(rows):
    samples = []
    for i, (p, flip) in enumerate(rows):
        lab = truth(p)
        samples.append(LabeledSample(i, p, lab.flipped if flip else lab))
    result = enforce_monotonicity(samples, PROF2, max_passes=50)
    ranks = [s.label.rank for s in result.samples]
    assert result.converged
    assert pairwise_violations([s.point for s in samples], ranks, PROF2.signs) == 0
    assert violating_pairs(result.samples, PROF2) == []


def test_enforcement_flips_lone_outlier():
    pts = [(float(v), 0.0) for v in range(6)]
    labels = [Label.PLUS, Label.PLUS, Label.MINUS, Label.PLUS, Label.MINUS, Label.MINUS]
    samples = [LabeledSample(i, p, l) for i, (p, l) in enumerate(zip(pts, labels))]
    result = enforce_monotonicity(samples, PROF2)
    assert result.converged and result.flips == 1
    assert [s.label for s in result.samples][2:4] in ([Label.PLUS, Label.PLUS], [Label.MINUS, Label.MINUS])


def test_inferred_samples_are_rederived_not_flipped():
    samples = [
        LabeledSample(0, (1.0, 0.0), Label.MINUS),
        LabeledSample(1, (2.0, 0.0), Label.PLUS),
        LabeledSample(2, (3.0, 0.0), Label.PLUS),
        LabeledSample(3, (4.0, 0.0), Label.MINUS, Provenance.INFERRED),
    ]
    result = enforce_monotonicity(samples, PROF2)
    assert result.converged
    assert violating_pairs(result.samples, PROF2) == []
    assert result.samples[3].provenance is Provenance.INFERRED


def test_enforcement_validates_passes():
    with pytest.raises(ValueError):
        enforce_monotonicity([], PROF2, max_passes=0)
