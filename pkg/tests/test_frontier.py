import json

import numpy as np
import pytest

from fcrl.frontier import (
    FrontierError,
    FrontierSpec,
    TradeoffPoint,
    aopac,
    lp_frontier,
    lp_normalizer,
    pareto_front,
    read_points,
    step_area,
    write_points,
)

import oracles

TABLE = (np.array([0.3, 0.1]), np.array([0.5, 0.5]))  # rates 0.6 and 0.2


def pt(parity, accuracy, beta=0.0, tag=""):
    return TradeoffPoint(beta, accuracy, parity, tag)


class TestPareto:
    def test_dominated_dropped(self):
        assert pareto_front([pt(0.1, 0.8), pt(0.2, 0.7)]) == [pt(0.1, 0.8)]

    def test_incomparable_kept(self):
        assert pareto_front([pt(0.2, 0.8), pt(0.1, 0.7)]) == [pt(0.1, 0.7), pt(0.2, 0.8)]

    def test_duplicates_keep_first(self):
        front = pareto_front([pt(0.1, 0.8, tag="first"), pt(0.1, 0.8, tag="second")])
        assert [p.tag for p in front] == ["first"]

    def test_parity_cap(self):
        assert pareto_front([pt(0.1, 0.7), pt(0.3, 0.9)], max_parity=0.2) == [pt(0.1, 0.7)]


class TestLp:
    def test_worked_example(self):
        assert lp_frontier(*TABLE, 0.0) == pytest.approx(0.2, abs=1e-15)
        assert lp_frontier(*TABLE, 0.2) == pytest.approx(0.1, abs=1e-15)

    def test_no_flips_needed(self):
        assert lp_frontier(*TABLE, 0.4) == 0.0
        assert lp_frontier(*TABLE, 0.7) == 0.0

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for k in range(40):
            K = (2, 3, 5, 9)[k % 4]
            table = oracles.lattice_table(rng, K)
            delta = rng.integers(0, 10_001) / 10_000
            assert lp_frontier(*table, delta) == pytest.approx(oracles.lp_brute_force(*table, delta), abs=1e-6)

    def test_group_order_invariant(self):
        a, b = np.array([0.05, 0.2, 0.1]), np.array([0.2, 0.5, 0.3])
        perm = [2, 0, 1]
        assert lp_frontier(a, b, 0.1) == pytest.approx(lp_frontier(a[perm], b[perm], 0.1), abs=1e-15)

    def test_monotone_in_delta(self):
        spec = FrontierSpec(0.4, 0.6, *TABLE)
        acc = spec.optimal_accuracy(np.linspace(0, 0.4, 50))
        assert np.all(np.diff(acc) >= -1e-15)

    def test_bad_tables(self):
        with pytest.raises(FrontierError):
            lp_frontier([0.6, 0.1], [0.5, 0.5], 0.1)
        with pytest.raises(FrontierError):
            lp_frontier([0.1, 0.1], [0.6, 0.6], 0.1)
        with pytest.raises(FrontierError):
            lp_frontier(*TABLE, 1.5)


class TestAopac:
    def test_hand_integration(self):
        b = 0.6
        raw = step_area([0.05, 0.15], [b + 0.1, b + 0.2], 0.2, b)
        assert raw == pytest.approx(0.02, abs=1e-15)

    def test_perfect_method(self):
        spec = FrontierSpec(0.2, 0.0, *TABLE)
        normalizer = step_area(np.linspace(0, 0.2, 200), np.ones(200), 0.2, 0.0)
        res = aopac([pt(0.0, 1.0)], spec, normalizer=normalizer)
        assert res.normalized_area == pytest.approx(1.0, abs=1e-12)

    def test_empty(self):
        res = aopac([], FrontierSpec.from_labels([0, 1, 1, 0], [0, 0, 1, 1]))
        assert res.raw_area == 0.0 and res.normalized_area == 0.0

    def test_normalizer_grid_convergence(self):
        spec = FrontierSpec(0.4, 0.6, *TABLE)
        # fine trapezoid integral of the piecewise-linear optimum as reference
        fine = np.linspace(0, 0.4, 40_001)
        exact = np.trapezoid(spec.optimal_accuracy(fine) - 0.6, fine)
        errs = []
        for grid in (100, 200, 400, 800):
            spec.grid = grid
            errs.append(abs(lp_normalizer(spec) - exact))
        assert all(b < a for a, b in zip(errs, errs[1:]))
        assert errs[1] < 1e-3

    def test_from_labels(self):
        y = np.array([1, 1, 1, 0, 0, 1, 0, 0, 0, 0])
        c = np.array([0, 0, 0, 0, 0, 1, 1, 1, 1, 1])
        spec = FrontierSpec.from_labels(y, c)
        assert spec.delta_data == pytest.approx(0.4)
        assert spec.baseline == pytest.approx(0.6)
        np.testing.assert_allclose(spec.p_y1_c, [0.3, 0.1])

    def test_json(self):
        res = aopac([pt(0.05, 0.7), pt(0.15, 0.8)], FrontierSpec(0.2, 0.6, *TABLE))
        doc = json.loads(res.to_json())
        assert doc["raw_area"] == pytest.approx(0.02)
        assert len(doc["pareto_points"]) == 2


class TestPointsFile:
    def test_round_trip(self, tmp_path):
        pts = [pt(0.1, 0.8, beta=0.5, tag="a"), pt(0.05, 0.75, beta=1.0)]
        write_points(pts, tmp_path / "p.csv")
        assert read_points(tmp_path / "p.csv") == pts

    def test_bad_line_reports_number(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("beta,accuracy,parity\n0.1,0.8,0.1\n0.2,oops,0.1\n")
        with pytest.raises(FrontierError, match=":3:"):
            read_points(path)

    def test_missing_column(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("beta,accuracy\n0.1,0.8\n")
        with pytest.raises(FrontierError, match="header"):
            read_points(path)
