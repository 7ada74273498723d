import itertools

import pytest
from hypothesis import given, strategies as st

from oracles import pspi_direct
from painpair.pain_scales import (AUVector, AnnotationRecord, ConsistencyError, ValidationError,
                                  build_head_table, compute_pspi, load_annotations, parse_row,
                                  record_to_row, write_annotations)

intensity = st.integers(0, 5).map(float)


def uofr(pspi_aus=None, **kw):
    aus = pspi_aus or AUVector(au4=1, au6=2, au7=None, au9=3, au10=None, au43=1)
    fields = dict(dataset_id="Dementia", subject_id="s1", frame_index=0, fps=15, aus=aus,
                  pspi=compute_pspi(aus), pacslac=(0,) * 11)
    fields.update(kw)
    return AnnotationRecord(**fields)


def test_pspi_worked_example():
    assert compute_pspi(AUVector(au4=2, au6=1, au7=3, au9=0, au10=2, au43=1)) == 8.0


def test_pspi_extremes():
    assert compute_pspi(AUVector()) == 0.0
    top = AUVector(au4=5, au6=5, au7=5, au9=5, au10=5, au43=1)
    assert compute_pspi(top) == 16.0


def test_pspi_exhaustive_grid():
    n = 0
    for a4, a6, a7, a9, a10, a43 in itertools.product(range(6), range(6), range(6), range(6),
                                                      range(6), range(2)):
        aus = AUVector(au4=a4, au6=a6, au7=a7, au9=a9, au10=a10, au43=a43)
        assert compute_pspi(aus) == pspi_direct(a4, a6, a7, a9, a10, a43)
        n += 1
    assert n == 15552


@given(intensity, intensity, intensity, intensity, intensity, st.sampled_from([0.0, 1.0]),
       st.sampled_from(["au4", "au6", "au7", "au9", "au10"]))
def test_pspi_monotone_in_each_au(a4, a6, a7, a9, a10, a43, name):
    base = dict(au4=a4, au6=a6, au7=a7, au9=a9, au10=a10, au43=a43)
    if base[name] == 5.0:
        return
    bumped = dict(base, **{name: base[name] + 1})
    assert compute_pspi(AUVector(**bumped)) >= compute_pspi(AUVector(**base))


@pytest.mark.parametrize("bad", [dict(au4=6), dict(au6=-1), dict(au43=0.5)])
def test_auvector_rejects_out_of_range(bad):
    with pytest.raises(ValidationError):
        AUVector(**bad)


def test_max_only_pair():
    aus = AUVector(au6=None, au7=4, au9=2, au10=None)
    assert aus.max_au6_au7 == 4
    assert aus.max_au9_au10 == 2


def test_record_pspi_must_agree():
    aus = AUVector(au4=1)
    with pytest.raises(ConsistencyError):
        uofr(aus, pspi=2.0)


def test_unbc_constraints():
    aus = AUVector(au4=1, au6=1, au7=0, au9=0, au10=0)
    AnnotationRecord("UNBC", "u", 0, 30, aus, 2.0)
    with pytest.raises(ValidationError):
        AnnotationRecord("UNBC", "u", 0, 30, aus, 2.0, pacslac=(0,) * 11)
    with pytest.raises(ValidationError):
        AnnotationRecord("UNBC", "u", 0, 30, AUVector(au6=None, au7=1), 1.0)


def test_head_table_layout():
    heads = build_head_table()
    assert len(heads) == 39
    assert [len(heads.for_dataset(d)) for d in ("Dementia", "Control", "UNBC")] == [16, 16, 7]
    assert [h.index for h in heads] == list(range(39))
    assert heads.pspi_head("Dementia") == 0
    assert heads.pspi_head("Control") == 16
    assert heads.pspi_head("UNBC") == 32
    assert [h.target_name for h in heads.for_dataset("Dementia")[:5]] == [
        "pspi", "au43", "au4", "max_au9_au10", "max_au6_au7"]
    assert [h.target_name for h in heads.for_dataset("UNBC")] == [
        "pspi", "au43", "au4", "au9", "au10", "au6", "au7"]
    assert sum(heads.membership_mask("UNBC")) == 7


def test_target_values():
    rec = uofr(pacslac=(1,) + (0,) * 10)
    assert rec.target_value("p1") == 1.0
    assert rec.target_value("max_au6_au7") == 2.0
    assert rec.target_value("au7") is None


def test_csv_round_trip(tmp_path):
    recs = [uofr(frame_index=i, frontal_score=0.75, image_path=f"s1/{i}.pgm") for i in range(3)]
    recs.append(AnnotationRecord("UNBC", "u", 4, 30, AUVector(au4=2.5, au6=1, au7=0, au9=0,
                                                               au10=1), 4.5))
    path = tmp_path / "a.csv"
    write_annotations(path, recs)
    assert load_annotations(path) == recs


def test_csv_error_names_row(tmp_path):
    row = {k: str(v) for k, v in record_to_row(uofr()).items()}
    row["pspi"] = "3"
    with pytest.raises(ConsistencyError, match="row 7"):
        parse_row(row, 7)
    row = {k: str(v) for k, v in record_to_row(uofr()).items()}
    row["au4"] = ""
    with pytest.raises(ValidationError, match="au4 is required"):
        parse_row(row, 2)
