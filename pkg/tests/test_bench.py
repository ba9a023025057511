import math
import subprocess
import sys
import warnings
from pathlib import Path

import pytest

from mdbert import bench
from mdbert.bench import ComplexityParams as P


class TestFlopModel:
    def test_n512_s16(self):
        assert bench.flop_model(P(512, 128, 16)).ratio == 1 / 16 + 1 / 1024

    def test_n2048_s64(self):
        assert abs(bench.flop_model(P(2048, 64, 64)).ratio - 0.01660) < 1e-5

    def test_one_sentence_costs_more_than_flat(self):
        r = bench.flop_model(P(64, 32, 1))
        assert r.ratio == 1 + 1 / 64**2

    def test_independent_of_width_and_depth(self):
        ratios = {bench.flop_model(P(256, d, 8, depth)).ratio for d in (16, 64, 256) for depth in (1, 3)}
        assert len(ratios) == 1

    def test_ragged_split_counts_padding(self):
        r = bench.flop_model(P(10, 4, 3))
        assert r.hier_flops == 2 * 3 * 4**2 * 4 + 2 * 3**2 * 4

    def test_projections_raise_the_ratio(self):
        assert bench.flop_model(P(512, 128, 16, include_projections=True)).ratio > 1 / 16 + 1 / 1024

    def test_grid_minimum_near_closed_form(self):
        """Without padding, n^2/s + s^2 is smallest at s = (n^2 / 2)^(1/3)."""
        n = 720
        star = (n**2 / 2) ** (1 / 3)
        divisors = [s for s in range(1, n + 1) if n % s == 0]
        best = min(divisors, key=lambda s: bench.flop_model(P(n, 64, s)).ratio)
        assert best in (max(s for s in divisors if s <= star), min(s for s in divisors if s >= star))
        # n = 512: closed form 50.8; the power-of-two grid lands on a neighbour
        assert abs((512**2 / 2) ** (1 / 3) - 50.8) < 0.01
        grid = bench.grid_values(512)
        assert min(grid, key=lambda s: bench.flop_model(P(512, 64, s)).ratio) in (32, 64)

    def test_decreasing_until_sentence_term_dominates(self):
        ratios = [bench.flop_model(P(512, 64, s)).ratio for s in (1, 2, 4, 8, 16, 32)]
        assert all(a > b for a, b in zip(ratios, ratios[1:]))
        assert bench.flop_model(P(512, 64, 512)).ratio > bench.flop_model(P(512, 64, 64)).ratio

    def test_one_sentence_decomposition(self):
        """With s=1 the token term is the flat stack; the extra is the one-sentence stack."""
        r = bench.flop_model(P(128, 16, 1, depth=2))
        assert r.hier_flops - r.flat_flops == 2 * bench.C_ATTN * 1 * 16

    def test_invalid(self):
        for args in [(0, 1, 1), (4, 1, 5), (4, -1, 1)]:
            with pytest.raises(ValueError):
                P(*args)

    def test_grid_values(self):
        assert bench.grid_values(10) == [1, 2, 4, 8]


class TestMeasure:
    def test_hierarchy_is_faster(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = bench.measure(P(256, 32, 16), trials=3, heads=2)
        assert r.measured_ratio < 1.0

    def test_one_sentence_is_about_flat(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            r = bench.measure(P(256, 32, 1), trials=5, heads=2)
        assert 0.5 < r.measured_ratio < 2.0

    def test_median_is_stable_across_trial_counts(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            one = bench.measure(P(512, 32, 16), trials=1, heads=2).measured_ratio
            nine = bench.measure(P(512, 32, 16), trials=9, heads=2).measured_ratio
        assert one < 1.0 and nine < 1.0 and 0.33 < one / nine < 3.0

    def test_arguments(self):
        with pytest.raises(ValueError):
            bench.measure(P(8, 6, 2), heads=4)
        with pytest.raises(ValueError):
            bench.measure(P(8, 8, 2), trials=0)


class TestCsv:
    def test_columns_and_blank_timings(self):
        text = bench.report_csv([bench.flop_model(P(512, 128, 16))])
        header, row = text.splitlines()
        assert header.split(",") == bench.CSV_COLUMNS
        cells = row.split(",")
        assert cells[:3] == ["512", "128", "16"] and math.isclose(float(cells[5]), 0.063477, abs_tol=1e-6)
        assert cells[6:] == ["", "", ""]


class TestKernelBenchmark:
    def test_script_runs_and_backends_agree(self):
        script = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"
        out = subprocess.run([sys.executable, str(script), "--repeat", "2", "--skip-model"], capture_output=True,
                             text=True, check=True).stdout
        rows = [line.split() for line in out.splitlines()[1:] if line.strip()]
        assert len(rows) == 11
        assert all(float(r[-1]) < 1e-12 for r in rows)
