from types import SimpleNamespace

import pytest

from factoredot.core.backend import cell_label
from factoredot.core.backend.async_backend import AsyncBackend
from factoredot.core.backend.sync_backend import SyncBackend
from factoredot.core.sweep import cell_settings, plan_cells, run_cell, run_sweep
from factoredot.logging.dash_logger import CellStatus, DashboardLogger
from factoredot.types import (
    ExperimentSpec,
    FotConfig,
    GenSpec,
    RunTweaks,
    SinkhornConfig,
)

NO_CLOCK = RunTweaks(record_runtime=False)


def small_spec(**kw) -> ExperimentSpec:
    defaults = dict(
        generator=GenSpec(kind="hypercube", d=2, n=12, seed=100),
        sweep="n",
        values=(10, 16),
        methods=("fot", "ot"),
        replicates=2,
        base=FotConfig(k=2, sinkhorn=SinkhornConfig(epsilon=0.5)),
    )
    defaults.update(kw)
    return ExperimentSpec(**defaults)


class TestPlan:
    def test_full_factorial(self):
        cells = plan_cells(small_spec(replicates=3))
        assert len(cells) == 2 * 2 * 3
        assert {c["seed"] for c in cells} == {100, 101, 102}
        assert all(c["seed"] == 100 + c["replicate"] for c in cells)

    def test_replicate_shares_data_across_methods(self):
        spec = small_spec()
        cells = [c for c in plan_cells(spec) if c["value"] == 10 and c["replicate"] == 1]
        gens = {cell_settings(spec, c)[0] for c in cells}
        assert len(cells) == 2 and len(gens) == 1

    def test_n_sweep(self):
        gen, cfg = cell_settings(small_spec(), {"value": 16, "method": "fot", "replicate": 0, "seed": 100})
        assert (gen.n, gen.d, gen.seed, cfg.seed, cfg.k) == (16, 2, 100, 100, 2)

    def test_d_sweep(self):
        spec = small_spec(sweep="d", values=(2, 3), n_per_d=10)
        gen, _ = cell_settings(spec, {"value": 3, "method": "fot", "replicate": 0, "seed": 100})
        assert (gen.d, gen.n) == (3, 30)

    def test_k_sweep(self):
        spec = small_spec(sweep="k", values=(1, 5))
        gen, cfg = cell_settings(spec, {"value": 5, "method": "fot", "replicate": 0, "seed": 101})
        assert cfg.k == 5 and gen.n == 12 and gen.seed == 101

    def test_label(self):
        assert cell_label({"value": 8, "method": "kot", "replicate": 3, "seed": 0}) == "8/kot#3"


class TestRunCell:
    def test_ok_row(self):
        spec = small_spec()
        row = run_cell(spec, plan_cells(spec)[0], NO_CLOCK)
        assert row["status"] == "ok"
        assert row["ground_truth"] == 8.0
        assert row["abs_error"] == pytest.approx(abs(row["estimate"] - 8.0))
        assert row["runtime_ms"] is None
        assert not row["approx"]

    def test_runtime_recorded_by_default(self):
        spec = small_spec()
        assert run_cell(spec, plan_cells(spec)[0])["runtime_ms"] >= 0

    def test_failure_becomes_row(self):
        spec = small_spec(methods=("sinkhorn",), base=FotConfig(sinkhorn=SinkhornConfig(max_iter=1)))
        row = run_cell(spec, plan_cells(spec)[0], NO_CLOCK)
        assert row["status"] == "error:ConvergenceError"
        assert row["estimate"] is None and row["abs_error"] is None

    def test_mixture_has_no_ground_truth(self):
        spec = small_spec(generator=GenSpec(kind="gaussian_mixture", d=2, n=12), methods=("kot",))
        row = run_cell(spec, plan_cells(spec)[0], NO_CLOCK)
        assert row["status"] == "ok" and row["ground_truth"] is None and row["abs_error"] is None

    def test_k_above_sample_size(self):
        spec = small_spec(sweep="k", values=(30,), methods=("fot",))
        row = run_cell(spec, plan_cells(spec)[0], NO_CLOCK)
        assert row["status"] == "ok"
        assert row["estimate"] >= 0


class TestRunSweep:
    def test_rows_sorted_and_repeatable(self):
        spec = small_spec()
        with SyncBackend() as backend:
            first = run_sweep(spec, backend, NO_CLOCK)
            second = run_sweep(spec, backend, NO_CLOCK)
        assert len(first) == 8
        keys = [(r["value"], r["method"], r["replicate"]) for r in first]
        assert keys == sorted(keys)
        assert first == second

    def test_async_matches_sync(self):
        spec = small_spec()
        with SyncBackend() as backend:
            expected = run_sweep(spec, backend, NO_CLOCK)
        with AsyncBackend(max_concurrent=3) as backend:
            got = run_sweep(spec, backend, NO_CLOCK)
        assert got == expected

    def test_dashboard_counts(self):
        dash = DashboardLogger(display=False)
        spec = small_spec(methods=("ot",))
        with SyncBackend(dash) as backend:
            rows = run_sweep(spec, backend, RunTweaks(exact_cap=1, plugin_fallback_epsilon=0.1, record_runtime=False))
        assert all(r["approx"] for r in rows)
        assert dash.counts() == {CellStatus.APPROXIMATE: 4}

    def test_failures_counted(self):
        dash = DashboardLogger(display=False)
        spec = small_spec(methods=("sinkhorn",), base=FotConfig(sinkhorn=SinkhornConfig(max_iter=1)))
        with SyncBackend(dash) as backend:
            rows = run_sweep(spec, backend, NO_CLOCK)
        assert all(r["status"] != "ok" for r in rows)
        assert dash.counts() == {CellStatus.FAILED: 4}


class TestAsyncBackendLifecycle:
    def test_shutdown_drops_exit_hook(self, monkeypatch):
        hooks = []

        def unregister(fn):
            hooks[:] = [h for h in hooks if h != fn]

        monkeypatch.setattr(
            "factoredot.core.backend.async_backend.atexit",
            SimpleNamespace(register=hooks.append, unregister=unregister),
        )
        with AsyncBackend(max_concurrent=2) as backend:
            assert len(hooks) == 1
        assert hooks == []
        backend.shutdown()
