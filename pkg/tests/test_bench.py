import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from unlearn import bench
from unlearn.bench import (
    Stopwatch,
    TrialConfig,
    agreement,
    consistency,
    default_grid,
    parse_log,
    percent_change,
    run_grid,
    run_naive_trial,
    run_sisa_trial,
    tidy,
)
from unlearn.dare import ForestParams
from unlearn.dataset import generate_synthetic, train_test_split
from unlearn.errors import ArgumentError

FAST = ForestParams(n_trees=3, max_depth=5)


@pytest.fixture(scope="module")
def split():
    return train_test_split(generate_synthetic(300, 8, 3.0, seed=0), 0.3, seed=0)


class TestMetrics:
    def test_consistency(self):
        assert consistency([1, 0, 1, 1], [1, 0, 0, 1]) == 0.75
        assert consistency([1, 0], [1, 0]) == 1.0
        assert consistency([1, 0], [0, 1]) == 0.0

    def test_agreement(self):
        assert agreement([1, 1], [1, 1]) == 1.0
        assert agreement([0] * 10, [0] * 9 + [1]) == 0.9
        assert agreement([1], [0]) == 0.0

    @pytest.mark.parametrize("a,b", [([], []), ([1], [1, 0])])
    def test_bad_lengths(self, a, b):
        with pytest.raises(ArgumentError):
            consistency(a, b)
        with pytest.raises(ArgumentError):
            agreement(a, b)

    def test_percent_change(self):
        assert percent_change(0.80, 0.84) == 5.0
        assert percent_change(0.84, 0.70) == pytest.approx(-16.666666666666668)
        assert math.isnan(percent_change(0.0, 0.3))

    @given(st.floats(min_value=1e-9, max_value=1.0), st.floats(min_value=0.0, max_value=1.0))
    def test_percent_change_formula(self, before, after):
        assert percent_change(before, before) == 0.0
        assert percent_change(before, after) == pytest.approx((after - before) / before * 100, rel=1e-12, abs=1e-9)

    def test_stopwatch(self):
        w = Stopwatch()
        assert w.measure(lambda: sum(range(1000))) == 499500
        assert w.elapsed >= 0
        with pytest.raises(RuntimeError):
            Stopwatch().stop()


class TestConfig:
    def test_deletion_count(self):
        assert TrialConfig("naive", 10, 0.25).n_to_delete == 2
        assert TrialConfig("sisa_dare", 100, 0.5).n_to_delete == 50

    def test_degenerate(self):
        assert TrialConfig("naive", 3, 0.25).degenerate
        assert not TrialConfig("naive", 4, 0.25).degenerate

    @pytest.mark.parametrize("kw", [dict(strategy="x"), dict(target_size=0), dict(delete_percentage=1.0)])
    def test_invalid(self, kw):
        args = dict(strategy="naive", target_size=10, delete_percentage=0.5) | kw
        with pytest.raises(ArgumentError):
            TrialConfig(**args)

    def test_default_grid(self):
        grid = default_grid()
        assert len(grid) == 18
        assert {(c.strategy, c.target_size, c.delete_percentage) for c in grid} == {
            (s, n, p) for s in ("naive", "sisa_dare") for n in (10, 100, 1000) for p in (0.25, 0.5, 0.75)
        }
        assert len(default_grid(repeats=3)) == 54
        assert {c.repeat for c in default_grid(repeats=3)} == {0, 1, 2}
        assert len(default_grid(strategies=("sisa_dare",))) == 9


class TestTrials:
    def test_naive(self, split):
        r = run_naive_trial(TrialConfig("naive", 40, 0.25, forest_params=FAST), *split)
        assert r.n_deleted == 10 and r.computational_cost_seconds >= 0
        assert r.percent_change == percent_change(r.consistency_before, r.consistency_after)
        assert bench.check_result(r) == []

    def test_sisa_exactly_n_deletions(self, split, monkeypatch):
        calls = []
        real = bench.sisa_fit

        def spy(train, cfg):
            ens = real(train, cfg)
            orig = ens.delete
            ens.delete = lambda rid: calls.append(rid) or orig(rid)
            return ens

        monkeypatch.setattr(bench, "sisa_fit", spy)
        r = run_sisa_trial(TrialConfig("sisa_dare", 100, 0.5, forest_params=FAST), *split)
        assert len(calls) == 50 == r.n_deleted

    def test_sisa_matches_scratch(self, split):
        r = run_sisa_trial(TrialConfig("sisa_dare", 60, 0.5, seed=3, forest_params=FAST), *split)
        assert r.consistency_after == bench.scratch_consistency(r, *split)
        assert bench.check_result(r, *split) == []

    def test_arms_delete_same_rows(self, split):
        a = run_naive_trial(TrialConfig("naive", 50, 0.5, seed=1, forest_params=FAST), *split)
        b = run_sisa_trial(TrialConfig("sisa_dare", 50, 0.5, seed=1, forest_params=FAST), *split)
        assert a.deleted_ids == b.deleted_ids
        assert a.test_set_hash == b.test_set_hash == split[1].digest()

    @pytest.mark.parametrize("strategy", ["naive", "sisa_dare"])
    def test_degenerate(self, split, strategy):
        r = bench.run_trial(TrialConfig(strategy, 3, 0.25, forest_params=FAST), *split)
        assert r.degenerate and r.n_deleted == 0
        assert r.consistency_before == r.consistency_after and r.agreement_after == 1.0


class TestGrid:
    def _grid(self, **kw):
        return default_grid(sizes=(10, 40), forest_params=FAST, **kw)

    def test_log_and_csv(self, split, tmp_path):
        log = tmp_path / "r.log"
        run = run_grid(self._grid(), *split, log_path=log, verify=True)
        assert run.ok and len(run.results) == 12
        text = log.read_text()
        assert len(parse_log(text)) == 12
        assert tidy(text) == bench.results_csv(run.results)
        assert all(r.n_deleted == int(r.config.target_size * r.config.delete_percentage) for r in run.results)

    def test_deterministic_consistency(self, split):
        fields = lambda run: [(r.consistency_before, r.consistency_after, r.agreement_after) for r in run.results]
        assert fields(run_grid(self._grid(seed=5), *split)) == fields(run_grid(self._grid(seed=5), *split))

    def test_failure_recorded(self, split, tmp_path, monkeypatch):
        def boom(cfg, train, test):
            if cfg.target_size == 40:
                raise RuntimeError("synthetic failure")
            return real(cfg, train, test)

        real = bench.run_trial
        monkeypatch.setattr(bench, "run_trial", boom)
        log = tmp_path / "r.log"
        run = run_grid(self._grid(), *split, log_path=log)
        assert len(run.results) == 6 and len(run.failures) == 6 and not run.ok
        assert "failed trial" in log.read_text()
        assert len(parse_log(log.read_text())) == 6

    def test_parallel(self, split):
        grid = self._grid(strategies=("sisa_dare",))
        seq = run_grid(grid, *split)
        par = run_grid(grid, *split, workers=2)
        assert [r.consistency_after for r in seq.results] == [r.consistency_after for r in par.results]


class TestLogParsing:
    def test_empty(self):
        assert tidy("") == ",".join(bench.CSV_COLUMNS) + "\n"

    def test_truncated(self):
        with pytest.raises(ValueError, match="line 1"):
            parse_log("=== trial 1 ===\nstrategy: naive\n")

    def test_missing_field(self):
        with pytest.raises(ValueError, match="line 3"):
            parse_log("=== trial 1 ===\nstrategy: naive\n=== end ===\n")

    def test_garbage(self):
        with pytest.raises(ValueError, match="line 2"):
            parse_log("\nhello\n")


class TestTrends:
    def test_monotone_within(self):
        assert bench.monotone_within([1, 2, 3])
        assert bench.monotone_within([1, 2, 1.9, 3])
        assert not bench.monotone_within([1, 2, 1.5])
        assert not bench.monotone_within([3, 2.9, 2.8])

    def test_undefined_percent_change_logged(self):
        r = bench.TrialResult(TrialConfig("naive", 10, 0.5), 0.0, 0.5, math.nan, 0.1, 5, 1.0, "h")
        assert r.row()["percent_change"] == "undefined"
        assert parse_log(bench._format_block(1, r))[0]["percent_change"] == "undefined"
        assert bench.check_result(r) == []
