# tests/test_bench.py
"""Tests for the throughput measurement."""

import pytest

from ppisp.bench import CONTROLLER_BUDGET_MS, PIPELINE_BUDGET_MS, BenchResult, run_bench


class TestRunBench:
    """Test run_bench on small images."""

    def test_small_image(self):
        result = run_bench(width=32, height=24, repeat=2)
        assert (result.width, result.height, result.repeat) == (32, 24, 2)
        assert result.pipeline_ms > 0.0
        assert result.controller_ms > 0.0
        assert result.pipeline_within_budget

    def test_budget_flags(self):
        result = BenchResult(width=1920, height=1080, repeat=1,
                             pipeline_ms=PIPELINE_BUDGET_MS + 1.0,
                             controller_ms=CONTROLLER_BUDGET_MS)
        assert not result.pipeline_within_budget
        assert result.controller_within_budget

    @pytest.mark.parametrize('kwargs', [{'width': 0}, {'height': 0}, {'repeat': 0}])
    def test_rejects_non_positive(self, kwargs):
        with pytest.raises(ValueError):
            run_bench(**kwargs)
