import io
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cfpanel.exceptions import PanelError
from cfpanel.panel import (
    EXCLUSION_REASONS,
    Exclusion,
    TreatmentSpec,
    describe,
    filter_donors,
    load_exclusions,
    load_panel,
    panel_from_arrays,
    split_pre_post,
    write_panel,
)

from conftest import load_rows


def full_panel(n_units=37, n_years=33, first=1990, seed=0, outcomes=("y",)):
    r = np.random.default_rng(seed)
    units = [f"c{i:02d}" for i in range(n_units)]
    years = list(range(first, first + n_years))
    return panel_from_arrays(units, years, outcomes, r.normal(size=(n_units, n_years, len(outcomes))))


class TestLoad:
    def test_complete_tiny_input_is_balanced(self, tiny_rows):
        p = load_rows(tiny_rows)
        assert p.units == ("A", "B")
        assert p.years == (2000, 2001, 2002)
        assert p.balanced
        assert int(p.mask.sum()) == 6
        assert p.balance_status() == {"y": True}

    def test_one_missing_row_is_flagged(self, tiny_rows):
        p = load_rows(tiny_rows[:-1])
        assert not p.balanced
        assert p.missing_cells("y") == [("B", 2002)]
        assert int((~p.mask).sum()) == 1

    def test_empty_value_is_missing(self, tiny_rows):
        rows = list(tiny_rows)
        rows[1] = ("A", 2001, "y", "")
        p = load_rows(rows)
        assert p.missing_cells("y") == [("A", 2001)]
        assert math.isnan(p.outcome_matrix("y")[0, 1])

    def test_full_fixture_cell_count(self):
        p = full_panel()
        assert p.n_cells == 1221
        assert len(p.units) == 37 and len(p.years) == 33

    def test_duplicate_row_reports_row_numbers(self, tiny_rows):
        rows = tiny_rows + [("A", 2001, "y", 9.0)]
        with pytest.raises(PanelError, match=r"row 8: duplicate cell \(A, 2001, y\), first seen at row 3"):
            load_rows(rows)

    def test_non_contiguous_years_rejected(self):
        rows = [("A", 2000, "y", 1), ("A", 2002, "y", 2)]
        with pytest.raises(PanelError, match=r"missing years \[2001\]"):
            load_rows(rows)

    def test_non_numeric_value_has_location(self, tiny_rows):
        rows = list(tiny_rows)
        rows[3] = ("B", 2000, "y", "abc")
        with pytest.raises(PanelError, match=r"row 5: non-numeric value 'abc' for \(B, 2000, y\)"):
            load_rows(rows)

    def test_bad_year(self, tiny_rows):
        rows = list(tiny_rows)
        rows[0] = ("A", "20x0", "y", 1)
        with pytest.raises(PanelError, match="row 2: year"):
            load_rows(rows)

    def test_bad_header(self):
        with pytest.raises(PanelError, match="header"):
            load_panel(io.StringIO("country,year,var,value\n"))

    def test_empty_input(self):
        with pytest.raises(PanelError):
            load_panel(io.StringIO(""))

    def test_panel_is_read_only(self, tiny_rows):
        p = load_rows(tiny_rows)
        with pytest.raises(ValueError):
            p.values[0, 0, 0] = 7.0


class TestRoundTrip:
    def test_write_then_load_is_identity(self, tmp_path):
        p = full_panel(5, 7, outcomes=("a", "b"))
        vals = np.array(p.values)
        vals[1, 2, 0] = np.nan
        p = panel_from_arrays(p.units, p.years, p.outcomes, vals)
        path = tmp_path / "p.csv"
        write_panel(p, path)
        q = load_panel(path)
        assert p.equals(q)

    @given(
        st.lists(
            st.floats(min_value=-1e6, max_value=1e6, allow_nan=False, allow_infinity=False),
            min_size=12,
            max_size=12,
        ),
        st.randoms(use_true_random=False),
    )
    def test_round_trip_and_row_order_invariance(self, values, rnd):
        units, years = ["x", "y", "z"], [2001, 2002, 2003, 2004]
        rows = [(u, t, "v", repr(values[i * 4 + j])) for i, u in enumerate(units) for j, t in enumerate(years)]
        p = load_rows(rows)
        buf = io.StringIO()
        write_panel(p, buf)
        assert load_panel(io.StringIO(buf.getvalue())).equals(p)

        shuffled = list(rows)
        rnd.shuffle(shuffled)
        q = load_rows(shuffled)
        assert q.equals(p)
        spec = TreatmentSpec("x", 2003)
        assert describe(p, spec) == describe(q, spec)


class TestExclusions:
    def test_exclude_three_of_forty(self):
        p = full_panel(40)
        ex = [Exclusion("c01", "neighbor"), Exclusion("c02", "conflict-peer"), Exclusion("c03", "micro-state")]
        q = filter_donors(p, ex, treated_unit="c00")
        assert len(q.units) == 37
        assert len(q.exclusion_log) == 3
        assert "c02" not in q.units

    def test_empty_list_is_identity(self):
        p = full_panel(4, 6)
        assert filter_donors(p, [], "c00").equals(p)

    def test_unknown_unit_named(self):
        p = full_panel(4, 6)
        with pytest.raises(PanelError, match="'ZZZ'"):
            filter_donors(p, [("ZZZ", "neighbor")], "c00")

    def test_treated_unit_not_excludable(self):
        p = full_panel(4, 6)
        with pytest.raises(PanelError, match="treated unit"):
            filter_donors(p, [("c00", "neighbor")], "c00")

    def test_excluding_all_donors_rejected(self):
        p = full_panel(3, 6)
        with pytest.raises(PanelError, match="every donor"):
            filter_donors(p, [("c01", "neighbor"), ("c02", "new-state")], "c00")

    def test_unknown_reason_rejected(self):
        p = full_panel(4, 6)
        with pytest.raises(PanelError, match="reason"):
            filter_donors(p, [("c01", "unfriendly")], "c00")

    def test_load_exclusion_file(self):
        text = "unit,reason\n" + "\n".join(f"c{i:02d},{r}" for i, r in enumerate(EXCLUSION_REASONS, 1))
        ex = load_exclusions(io.StringIO(text))
        assert [e.reason for e in ex] == list(EXCLUSION_REASONS)


class TestSplit:
    def test_37_by_33_windows(self):
        p = full_panel()
        s = split_pre_post(p, TreatmentSpec("c05", 2011), "y")
        assert s.X_pre.shape == (21, 36) and s.X_post.shape == (12, 36)
        assert len(s.y_pre) == 21 and len(s.y_post) == 12
        assert s.pre_years[-1] == 2010 and s.post_years[0] == 2011
        assert "c05" not in s.donors and list(s.donors) == sorted(s.donors)

    def test_concatenation_reconstructs_donor_series(self):
        p = full_panel(6, 10)
        s = split_pre_post(p, TreatmentSpec("c03", 1995), "y")
        Y = p.outcome_matrix("y")
        for j, d in enumerate(s.donors):
            assert np.array_equal(s.X_full[:, j], Y[p.unit_index(d)])
        assert np.array_equal(s.y_full, Y[3])

    def test_single_pre_period_warns(self):
        p = full_panel(4, 10)
        with pytest.warns(UserWarning, match="only 1 pre-treatment period"):
            s = split_pre_post(p, TreatmentSpec("c00", 1991), "y")
        assert len(s.y_pre) == 1

    def test_missing_cells_listed(self, tiny_rows):
        p = load_rows(tiny_rows[:-1])
        with pytest.raises(PanelError, match=r"\(B, 2002\)"):
            split_pre_post(p, TreatmentSpec("A", 2001), "y")

    def test_treatment_year_must_be_inside(self):
        p = full_panel(4, 10)
        with pytest.raises(PanelError):
            TreatmentSpec("c00", 1990).validate(p)
        with pytest.raises(PanelError):
            TreatmentSpec("zz", 1995).validate(p)


class TestDescribe:
    def test_constant_series(self):
        p = panel_from_arrays(["a", "b", "c"], range(2000, 2006), ["y"], np.full((3, 6), 4.5))
        r = describe(p, TreatmentSpec("a", 2003)).rows[0]
        assert (r.treated_pre_mean, r.treated_post_mean, r.donor_mean) == (4.5, 4.5, 4.5)
        assert (r.treated_pre_std, r.treated_post_std, r.donor_std) == (0.0, 0.0, 0.0)

    def test_two_point_series_uses_sample_std(self):
        Y = np.array([[1.0, 3.0, 0.0, 0.0], [1.0, 1.0, 1.0, 1.0]])
        p = panel_from_arrays(["t", "d"], range(2000, 2004), ["y"], Y)
        r = describe(p, TreatmentSpec("t", 2002)).rows[0]
        assert r.treated_pre_mean == 2.0
        assert r.treated_pre_std == pytest.approx(math.sqrt(2.0), abs=1e-15)

    def test_missing_cells_counted_not_fatal(self, tiny_rows):
        p = load_rows(tiny_rows[:-1])
        r = describe(p, TreatmentSpec("A", 2001)).rows[0]
        assert r.donor_n == 2 and r.donor_mean == 4.5

    def test_counts_and_cell_total(self):
        p = full_panel()
        d = describe(p, TreatmentSpec("c00", 2011))
        assert d.n_cells == 1221
        r = d.rows[0]
        assert (r.treated_pre_n, r.treated_post_n, r.donor_n) == (21, 12, 36 * 33)
        assert d.as_dict()["n_country_years"] == 1221

    def test_std_nonnegative(self):
        d = describe(full_panel(seed=3, outcomes=("a", "b")), TreatmentSpec("c01", 2000))
        for r in d.rows:
            assert min(r.treated_pre_std, r.treated_post_std, r.donor_std) >= 0

    def test_outcome_selection(self):
        p = full_panel(4, 8, outcomes=("a", "b", "c"))
        assert [r.outcome for r in describe(p, TreatmentSpec("c00", 1994), ["c", "a"]).rows] == ["c", "a"]
        assert [r.outcome for r in describe(p, TreatmentSpec("c00", 1994)).rows] == ["a", "b", "c"]
