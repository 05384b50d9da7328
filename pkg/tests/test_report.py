"""Reporting layer: CSV round trips, certified-accuracy curves, envelopes,
and the cross-run comparison table."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smoothcert.certifier import CertificationResult, SmoothingParams
from smoothcert.report import (
    CERT_CSV_COLUMNS,
    EPS_GRID,
    TABLE_EPSILONS,
    CurveTable,
    cert_rows,
    cert_rows_from_csv,
    cert_rows_to_csv,
    certified_accuracy,
    clean_accuracy,
    clean_rows,
    clean_rows_from_csv,
    clean_rows_to_csv,
    comparison_csv,
    comparison_table,
)


def row(id=0, label=0, c_A=0, radius=0.5, abstain=False, k=900, n=1000,
        p_lower=0.88, sigma=0.25, seed=0):
    return {"id": id, "label": label, "c_A": c_A, "k": k, "n": n,
            "p_lower": p_lower, "radius": radius, "abstain": int(abstain),
            "sigma": sigma, "seed": seed}


# ------------------------------------------------------------------ CSV I/O


def test_cert_rows_from_results():
    params = SmoothingParams(sigma=0.5, n0=10, n=100, alpha=0.01, seed=3)
    results = [
        CertificationResult(input_id=4, predicted=1, counts=np.array([5, 95]),
                            k=95, n=100, p_lower=0.9, radius=0.64,
                            abstain=False, params=params),
        CertificationResult(input_id=7, predicted=0, counts=np.array([55, 45]),
                            k=55, n=100, p_lower=0.44, radius=0.0,
                            abstain=True, params=params),
    ]
    rows = cert_rows(results, labels=[1, 1])
    assert rows[0] == {"id": 4, "label": 1, "c_A": 1, "k": 95, "n": 100,
                       "p_lower": 0.9, "radius": 0.64, "abstain": 0,
                       "sigma": 0.5, "seed": 3}
    assert rows[1]["abstain"] == 1 and rows[1]["c_A"] == 0


def test_cert_csv_round_trip_is_exact():
    rows = [row(id=0, p_lower=0.123456789012345, radius=1 / 3),
            row(id=1, abstain=True, radius=0.0, sigma=1.0)]
    text = cert_rows_to_csv(rows)
    assert text.splitlines()[0] == ",".join(CERT_CSV_COLUMNS)
    back = cert_rows_from_csv(text)
    assert back == rows
    # repr round trip: floats survive to the bit
    assert back[0]["radius"] == 1 / 3


def test_cert_csv_rejects_wrong_columns():
    with pytest.raises(ValueError, match="columns"):
        cert_rows_from_csv("id,label\n1,2\n")


def test_clean_csv_round_trip():
    rows = clean_rows(ids=[3, 8], labels=[0, 1], preds=[0, 2])
    assert rows == [{"id": 3, "label": 0, "pred": 0, "correct": 1},
                    {"id": 8, "label": 1, "pred": 2, "correct": 0}]
    assert clean_rows_from_csv(clean_rows_to_csv(rows)) == rows
    with pytest.raises(ValueError, match="columns"):
        clean_rows_from_csv("id,label,pred\n1,2,3\n")


# ------------------------------------------------------ accuracy definitions


def test_certified_accuracy_counts_only_correct_certified():
    rows = [
        row(id=0, label=1, c_A=1, radius=0.7),              # counts up to 0.7
        row(id=1, label=1, c_A=0, radius=0.9),              # wrong class: never
        row(id=2, label=1, c_A=1, radius=0.0, abstain=True),  # abstain: never
    ]
    assert certified_accuracy(rows, 0.0) == pytest.approx(1 / 3)
    assert certified_accuracy(rows, 0.7) == pytest.approx(1 / 3)  # boundary hits
    assert certified_accuracy(rows, 0.71) == 0.0


def test_certified_accuracy_empty_raises():
    with pytest.raises(ValueError, match="no certification rows"):
        certified_accuracy([], 0.0)


def test_clean_accuracy():
    rows = clean_rows(ids=[0, 1, 2, 3], labels=[0, 1, 0, 1], preds=[0, 1, 1, 1])
    assert clean_accuracy(rows) == 0.75
    with pytest.raises(ValueError):
        clean_accuracy([])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.booleans(),
                          st.floats(min_value=0.0, max_value=2.0)),
                min_size=1, max_size=30))
def test_certified_accuracy_non_increasing_in_epsilon(spec):
    rows = [row(id=i, label=0, c_A=0 if correct else 1,
                radius=0.0 if abstain else radius, abstain=abstain)
            for i, (correct, abstain, radius) in enumerate(spec)]
    accs = [certified_accuracy(rows, e) for e in (0.0, 0.5, 1.0, 1.5, 2.0)]
    assert all(a >= b for a, b in zip(accs, accs[1:]))


# ------------------------------------------------------------------- curves


def two_sigma_rows():
    # sigma 0.25 certifies one of two inputs out to 0.5; sigma 0.5 out to 1.0
    return {
        0.25: [row(id=0, radius=0.5, sigma=0.25),
               row(id=1, radius=0.0, abstain=True, sigma=0.25)],
        0.5: [row(id=0, radius=1.0, sigma=0.5),
              row(id=1, radius=0.0, abstain=True, sigma=0.5)],
    }


def test_curve_table_from_rows():
    table = CurveTable.from_rows(two_sigma_rows(), clean_acc=0.9)
    assert table.epsilons == EPS_GRID
    assert table.sigmas == (0.25, 0.5)
    for sigma in table.sigmas:
        curve = table.curves[sigma]
        assert len(curve) == len(EPS_GRID)
        assert all(a >= b for a, b in zip(curve, curve[1:]))
    assert table.acc_at_zero(0.25) == 0.5
    assert table.curves[0.25][EPS_GRID.index(0.51)] == 0.0
    assert table.curves[0.5][EPS_GRID.index(1.0)] == 0.5


def test_envelope_tie_prefers_lowest_sigma():
    table = CurveTable.from_rows(two_sigma_rows(), clean_acc=0.9)
    acc, arg = table.envelope_at(0.25)   # both curves at 0.5: tie
    assert (acc, arg) == (0.5, 0.25)
    acc, arg = table.envelope_at(0.75)   # only sigma=0.5 still certifies
    assert (acc, arg) == (0.5, 0.5)
    acc, arg = table.envelope_at(1.5)
    assert acc == 0.0


def test_curve_csv_round_trip():
    table = CurveTable.from_rows(two_sigma_rows(), clean_acc=0.875)
    back = CurveTable.from_csvs(table.to_curves_csv(), table.to_envelope_csv(),
                                clean_acc=0.875)
    assert back.epsilons == table.epsilons
    assert back.curves == table.curves
    assert back.envelope == table.envelope
    assert back.clean_acc == table.clean_acc


def test_from_csvs_rejects_inconsistent_grids():
    curves_csv = ("sigma,epsilon,acc\n"
                  "0.25,0.0,1.0\n0.25,0.5,0.5\n"
                  "0.5,0.0,1.0\n0.5,0.25,0.5\n")
    with pytest.raises(ValueError, match="inconsistent epsilon grids"):
        CurveTable.from_csvs(curves_csv, "epsilon,acc,arg_sigma\n", clean_acc=1.0)


def test_curve_table_validation():
    eps = (0.0, 0.5)
    good = dict(epsilons=eps, sigmas=(0.25,), curves={0.25: (1.0, 0.5)},
                clean_acc=0.9, envelope=((1.0, 0.25), (0.5, 0.25)))
    CurveTable(**good)
    with pytest.raises(ValueError, match="not non-increasing"):
        CurveTable(**{**good, "curves": {0.25: (0.5, 1.0)},
                      "envelope": ((0.5, 0.25), (1.0, 0.25))})
    with pytest.raises(ValueError, match="envelope wrong"):
        CurveTable(**{**good, "envelope": ((1.0, 0.25), (0.4, 0.25))})
    with pytest.raises(ValueError, match="grid has"):
        CurveTable(**{**good, "curves": {0.25: (1.0,)}})
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        CurveTable(**{**good, "curves": {0.25: (1.2, 0.5)},
                      "envelope": ((1.2, 0.25), (0.5, 0.25))})
    with pytest.raises(ValueError, match="clean accuracy"):
        CurveTable(**{**good, "clean_acc": 1.5})


# ------------------------------------------------------------------ reports


def test_comparison_table_text():
    table = CurveTable.from_rows(two_sigma_rows(), clean_acc=0.9)
    text = comparison_table({"mixed": table, "clean": table})
    lines = text.splitlines()
    assert lines[0].startswith("run")
    assert "clean" in lines[0] and "eps=0.25" in lines[0]
    assert set(lines[1]) == {"-", " "}
    mixed = next(l for l in lines if l.startswith("mixed"))
    assert "0.900" in mixed                 # clean accuracy column
    assert "0.500 (s=0.25)" in mixed        # envelope cell with arg sigma
    assert "s=0.5:(0.500)" in mixed         # bracketed eps=0 per-sigma value


def test_comparison_table_rejects_mixed_grids():
    a = CurveTable.from_rows(two_sigma_rows(), clean_acc=0.9)
    b = CurveTable.from_rows(two_sigma_rows(), clean_acc=0.9,
                             epsilons=(0.0, 0.25, 0.5, 0.75, 1.0))
    with pytest.raises(ValueError, match="inconsistent epsilon grids across runs"):
        comparison_table({"a": a, "b": b})


def test_comparison_csv():
    table = CurveTable.from_rows(two_sigma_rows(), clean_acc=0.9)
    text = comparison_csv({"base": table})
    lines = text.splitlines()
    assert lines[0] == "run,epsilon,acc,arg_sigma,clean_acc"
    assert len(lines) == 1 + len(TABLE_EPSILONS)
    assert lines[1] == "base,0.25,0.5,0.25,0.9"


def test_table_epsilons_lie_on_grid():
    assert len(EPS_GRID) == 201
    assert EPS_GRID[0] == 0.0 and EPS_GRID[-1] == 2.0
    for eps in TABLE_EPSILONS:
        assert eps in EPS_GRID
