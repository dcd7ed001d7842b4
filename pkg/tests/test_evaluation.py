import csv
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgnniv import evaluation as ev
from pgnniv.constitutive import DiagonalK, ScalarK, build_model
from pgnniv.datagen import ProblemSpec, analytic_solution, generate
from pgnniv.network import RomNetwork
from pgnniv.operators import Grid1D


def sorted_quantile(values, p):
    """Order-statistic interpolation written out by hand."""
    s = sorted(values)
    pos = p * (len(s) - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


class TestE2r:
    def test_exact_prediction(self):
        f = np.array([1.0, 2.0, 3.0])
        assert ev.e2r(f, f, Grid1D(3)) == 0.0

    def test_double_prediction(self):
        f = np.array([1.0, 2.0, 3.0, 2.0])
        assert ev.e2r(2 * f, f, Grid1D(4)) == pytest.approx(1.0, rel=1e-14)

    def test_zero_truth_is_flagged(self):
        assert ev.e2r(np.ones(4), np.zeros(4), Grid1D(4)) == np.inf

    def test_element_fields_use_midpoints(self):
        g = Grid1D(5)
        assert ev.e2r(np.ones(4), np.ones(4), g) == 0.0
        with pytest.raises(ev.EvaluationError):
            ev.e2r(np.ones(3), np.ones(3), g)

    def test_matches_dense_quadrature_of_interpolants(self, rng):
        g = Grid1D(10)
        p, t = rng.normal(size=10), rng.normal(size=10) + 2.0
        # the integrands (p-t)^2 and t^2 are interpolated linearly between nodes and
        # integrated on a 10^4-point grid with a midpoint rule
        xf = np.linspace(0, 1, 10_001)
        xm = 0.5 * (xf[1:] + xf[:-1])
        oracle = np.sum(np.interp(xm, g.nodes, (p - t) ** 2)) / np.sum(np.interp(xm, g.nodes, t**2))
        assert ev.e2r(p, t, g) == pytest.approx(oracle, rel=1e-3)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 8, elements=st.floats(0.1, 5)), arrays(np.float64, 8, elements=st.floats(0.1, 5)),
           st.floats(0.01, 100))
    def test_scale_invariance(self, p, t, a):
        g = Grid1D(8)
        assert ev.e2r(a * p, a * t, g) == pytest.approx(ev.e2r(p, t, g), rel=1e-10)
        assert ev.e2r(-a * p, -a * t, g) == pytest.approx(ev.e2r(p, t, g), rel=1e-10)

    def test_batch_matches_single(self, rng):
        x = Grid1D(6).nodes
        p, t = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
        batch = ev.e2r_batch(p, t, x)
        for i in range(4):
            assert batch[i] == ev.e2r(p[i], t[i], x)


class TestStats:
    def test_five_values(self):
        s = ev.stats([1, 2, 3, 4, 5])
        assert (s.min, s.Q2, s.max) == (1, 3, 5)

    def test_single_value(self):
        s = ev.stats([0.7])
        assert s.as_row() == [0.7] * 5

    def test_flagged_are_counted_not_used(self):
        s = ev.stats([1.0, np.inf, 3.0, np.nan])
        assert (s.n_finite, s.n_flagged, s.max) == (2, 2, 3.0)

    def test_all_flagged(self):
        with pytest.raises(ev.EvaluationError):
            ev.stats([np.inf, np.inf])

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(0, 1e3), min_size=1, max_size=40))
    def test_matches_sort_oracle(self, values):
        s = ev.stats(values)
        want = [sorted_quantile(values, p) for p in (0, 0.25, 0.5, 0.75, 1.0)]
        np.testing.assert_allclose(s.as_row(), want, rtol=1e-12, atol=1e-12)
        assert s.min <= s.Q1 <= s.Q2 <= s.Q3 <= s.max


class TestSpatialError:
    def test_exact_profile_is_zero(self):
        np.testing.assert_array_equal(ev.spatial_error([1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])

    def test_uniform_overestimate(self):
        t = np.array([0.5, -2.0, 3.0])
        np.testing.assert_allclose(ev.spatial_error(1.01 * t, t), 0.01, rtol=1e-12)

    def test_zero_truth_flagged(self):
        assert ev.spatial_error([1.0], [0.0])[0] == np.inf

    def test_band_ordering(self, rng):
        errs = np.abs(rng.normal(size=(200, 7)))
        errs[3, 2] = np.inf
        prof = ev.spatial_profile(errs, np.arange(7))
        assert np.all(prof.lower <= prof.median) and np.all(prof.median <= prof.upper)
        assert prof.n_flagged[2] == 1


def _fixed_rom_eval(variant="homogeneous"):
    grid = Grid1D(10)
    ds = generate(ProblemSpec(variant, N=200, seed=5))
    return ev.evaluate_split(RomNetwork(10, seed=1), build_model("diagonal-k", grid), variant, ds.test, grid), ds


class TestEvaluate:
    def test_truth_fields(self):
        grid = Grid1D(5)
        t = ev.truth_fields("linear", [0.2, 0.5], [0.9, 0.3], grid)
        u_mid, q, k = analytic_solution("linear", 0.2, 0.9, grid.midpoints)
        np.testing.assert_allclose(t["k"][0], u_mid)
        np.testing.assert_allclose(t["q"][0], q)
        assert t["u"].shape == (2, 5) and t["k"].shape == (2, 4)

    def test_exclusion_accounting(self):
        res, ds = _fixed_rom_eval()
        n = len(ds.test)
        for name, fe in res.errors.items():
            s = res.summary[name]
            assert s.n_finite + s.n_flagged + s.n_excluded == n
        near = np.abs(ds.test.g1 - ds.test.g2) < ev.DIAGONAL_BAND
        assert res.summary["q"].n_excluded == int(near.sum())
        assert res.summary["u"].n_excluded == 0

    def test_position_k_error_is_bc_independent(self):
        res, _ = _fixed_rom_eval("heterogeneous")
        s = res.summary["k"]
        assert s.max - s.min < 1e-12

    def test_perfect_predictions_score_zero(self):
        grid = Grid1D(10)
        g1, g2 = np.array([0.1, 0.6]), np.array([0.8, 0.2])
        res = ev.evaluate_predictions("exponential", g1, g2, ev.truth_fields("exponential", g1, g2, grid), grid)
        for name in ev.FIELDS:
            assert res.summary[name].max == 0.0


class TestBcMap:
    def test_two_by_two_equals_single_evaluations(self):
        grid = Grid1D(10)
        rom, model = RomNetwork(10, seed=2), build_model("cnn3l", grid, seed=2)
        m = ev.bc_error_map(rom, model, "exponential", grid, 2)
        for i, a in enumerate(m.g1):
            for j, b in enumerate(m.g2):
                single = ev.evaluate(rom, model, "exponential", [a], [b], grid, band=0.0)
                for name in ev.FIELDS:
                    got, want = m.e2r[name][i, j], single.errors[name].e2r[0]
                    # batched BLAS may round differently from a single row
                    assert got == pytest.approx(want, rel=1e-12) or (np.isinf(got) and np.isinf(want))

    def test_diagonal_q_is_flagged(self):
        grid = Grid1D(10)
        for variant in ("homogeneous", "heterogeneous", "linear", "exponential"):
            m = ev.bc_error_map(RomNetwork(10), ScalarK(), variant, grid, 5)
            assert np.all(np.isinf(np.diag(m.e2r["q"])))
            off = ~np.eye(5, dtype=bool)
            assert np.all(np.isfinite(m.e2r["q"][off]))

    def test_resolution_check(self):
        with pytest.raises(ev.EvaluationError):
            ev.bc_error_map(RomNetwork(10), ScalarK(), "p1", Grid1D(10), 1)

    def test_hundred_square_is_fast(self):
        grid = Grid1D(10)
        rom, model = RomNetwork(10), build_model("cnn3l", grid)
        t0 = time.perf_counter()
        ev.bc_error_map(rom, model, "exponential", grid, 100)
        assert time.perf_counter() - t0 < 10.0


def test_csv_writers(tmp_path):
    res, _ = _fixed_rom_eval()
    ev.write_stats_table(res.summary, tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["field", "min", "Q1", "Q2", "Q3", "max", "n_finite", "n_flagged", "n_excluded"]
    assert [r[0] for r in rows[1:]] == ["u", "q", "k"]
    ev.write_per_sample(res, tmp_path / "p.csv")
    assert len(open(tmp_path / "p.csv").read().splitlines()) == len(res.g1) + 1
    ev.write_profile(res.profile("u"), tmp_path / "prof.csv")
    m = ev.bc_error_map(RomNetwork(10), DiagonalK(9), "p2", Grid1D(10), 3)
    ev.write_bc_map(m, "u", tmp_path / "map.csv")
    grid_rows = list(csv.reader(open(tmp_path / "map.csv")))
    assert len(grid_rows) == 4 and len(grid_rows[0]) == 4
