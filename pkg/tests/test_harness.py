import csv
import io
import json

import numpy as np
import pytest

from constants import TOY_EVSI_N20
from voi.bayes import FlatGenerator
from voi.evppi import fit_conditional_inb
from voi.harness import (
    SUMMARY_COLUMNS,
    OracleSpec,
    SweepCell,
    SweepConfig,
    SweepResult,
    model_hash,
    q_variance_trend,
    resolve_oracle,
    run_sweep,
    small_q_bias_test,
    summarize_sweep,
)
from voi.models import ChemoModel, chemo_generator, toy_generator
from voi.psa import simulate_psa


@pytest.fixture(scope="module")
def setup():
    from voi.core import FocalSubset
    from voi.models import ToyModel

    model = ToyModel()
    focal = FocalSubset.from_names(["pi1"], model.parameter_names)
    psa = simulate_psa(model, 10_000, seed=0)
    return model, toy_generator(20, model), focal, psa, fit_conditional_inb(psa, focal)


def fake_result(variances, biases, Qs=(20, 30, 40), budget=1000, reps=50):
    cells = tuple(SweepCell(Q=q, budget=budget, R=budget // q, estimates=(1.0,) * reps,
                            variance=v, bias=b, mean_runtime_s=0.0)
                  for q, v, b in zip(Qs, variances, biases))
    return SweepResult(cells, oracle=1.0)


class TestConfig:
    def test_sorted_and_budget_major(self):
        cfg = SweepConfig((50, 20), (5000, 500), 3)
        assert cfg.cells() == [(20, 500), (50, 500), (20, 5000), (50, 5000)]

    def test_r_at_least_two(self):
        with pytest.raises(ValueError, match="R=1"):
            SweepConfig((20, 300), (500,), 2)

    def test_repetitions(self):
        with pytest.raises(ValueError):
            SweepConfig((20,), (500,), 1)

    def test_oracle_spec(self):
        with pytest.raises(ValueError):
            OracleSpec(kind="fixed")
        with pytest.raises(ValueError):
            OracleSpec(kind="nested_mc", S=100)
        with pytest.raises(ValueError):
            OracleSpec(kind="bootstrap")


class TestRun:
    def test_fixed_oracle_zero_bias_is_mean(self, setup):
        model, gen, focal, psa, cinb = setup
        cfg = SweepConfig((30,), (3000,), 2, oracle=OracleSpec(kind="fixed", value=0.0))
        cell = run_sweep(model, gen, focal, psa, cinb, cfg).cells[0]
        assert cell.bias == np.mean(cell.estimates)
        assert cell.R == 100 and cell.Q * cell.R <= cell.budget

    def test_remainder_is_discarded(self, setup):
        model, gen, focal, psa, cinb = setup
        cfg = SweepConfig((30,), (1000,), 2, oracle=OracleSpec(kind="fixed", value=0.0))
        cell = run_sweep(model, gen, focal, psa, cinb, cfg).cells[0]
        assert cell.R == 33 and cell.Q * cell.R == 990

    def test_deterministic(self, setup):
        model, gen, focal, psa, cinb = setup
        cfg = SweepConfig((20, 40), (2000,), 3, base_seed=5)
        a = run_sweep(model, gen, focal, psa, cinb, cfg, threads=1)
        b = run_sweep(model, gen, focal, psa, cinb, cfg, threads=4)
        assert [c.estimates for c in a.cells] == [c.estimates for c in b.cells]
        assert a.oracle == pytest.approx(TOY_EVSI_N20, rel=1e-10)

    def test_larger_q_is_less_variable(self, setup):
        model, gen, focal, psa, cinb = setup
        cfg = SweepConfig((20, 50, 100), (50_000,), 50, base_seed=1)
        res = run_sweep(model, gen, focal, psa, cinb, cfg)
        assert all(e >= 0 for c in res.cells for e in c.estimates)
        assert all(c.repetitions == 50 for c in res.cells)
        assert res.cell(100, 50_000).variance <= res.cell(20, 50_000).variance

    def test_larger_q_is_less_variable_at_paper_repetitions(self, setup):
        # with 50 repetitions a cell variance carries ~20% sampling error, about
        # the size of the Q effect on this model; 200 repetitions halve it
        model, gen, focal, psa, cinb = setup
        cfg = SweepConfig((20, 100), (50_000,), 200, base_seed=1)
        res = run_sweep(model, gen, focal, psa, cinb, cfg)
        assert res.cell(100, 50_000).variance <= res.cell(20, 50_000).variance

    def test_failure_names_the_cell(self, setup):
        model, _, focal, psa, cinb = setup

        class Impossible(FlatGenerator):
            def log_likelihood(self, phi, dataset):
                return np.full(np.atleast_2d(phi).shape[0], -np.inf)

        cfg = SweepConfig((20,), (200,), 2, oracle=OracleSpec(kind="fixed", value=0.0))
        with pytest.raises(RuntimeError, match="Q=20, budget=200"):
            run_sweep(model, Impossible(["pi1"]), focal, psa, cinb, cfg)

    def test_analytic_oracle_is_toy_only(self):
        model = ChemoModel()
        with pytest.raises(ValueError):
            resolve_oracle(OracleSpec(), model, chemo_generator(150, model), None)

    def test_nested_oracle_cache(self, setup, tmp_path):
        model, gen, focal, *_ = setup
        path = tmp_path / "oracle.json"
        spec = OracleSpec(kind="nested_mc", S=100, R=50, seed=2, cache=str(path))
        first = resolve_oracle(spec, model, gen, focal)
        doc = json.loads(path.read_text())
        assert doc == {"value": first, "S": 100, "R": 50, "seed": 2,
                       "model_hash": model_hash(model, gen)}
        doc["value"] = 123.0
        path.write_text(json.dumps(doc))
        assert resolve_oracle(spec, model, gen, focal) == 123.0
        other = OracleSpec(kind="nested_mc", S=100, R=50, seed=3, cache=str(path))
        assert resolve_oracle(other, model, gen, focal) != 123.0

    def test_model_hash_tracks_design(self, setup):
        model, gen, *_ = setup
        assert model_hash(model, gen) != model_hash(model, toy_generator(21, model))


class TestSummary:
    def test_single_cell(self):
        text = summarize_sweep(fake_result([0.1], [0.01], Qs=(20,)))
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(SUMMARY_COLUMNS) and len(lines) == 2

    def test_sixteen_rows_ordered(self):
        cells = [SweepCell(q, b, b // q, (0.0, 0.0), 0.0, 0.0, 0.0)
                 for q in range(100, 19, -10) if q != 90 for b in (500_000, 5000)]
        assert len(cells) == 16
        rows = list(csv.DictReader(io.StringIO(summarize_sweep(SweepResult(tuple(cells), 0.0)))))
        assert len(rows) == 16
        keys = [(int(r["budget"]), int(r["Q"])) for r in rows]
        assert keys == sorted(keys)

    def test_round_trip_numbers(self):
        v, b = 1 / 3, -np.pi * 1e-5
        rows = list(csv.DictReader(io.StringIO(summarize_sweep(fake_result([v], [b], Qs=(20,))))))
        assert float(rows[0]["variance"]) == v and float(rows[0]["bias"]) == b


class TestDirectionalTests:
    def test_trend(self):
        assert q_variance_trend(fake_result([3.0, 2.0, 1.0], [0, 0, 0]), 1000) == -1.0

    def test_small_q_bias_significant(self):
        res = fake_result([0.01, 0.01, 0.01], [0.5, 0.01, -0.01])
        out = small_q_bias_test(res, 1000)
        assert out["significant"] and out["difference"] == pytest.approx(0.49)

    def test_small_q_bias_not_significant(self):
        res = fake_result([1.0, 1.0, 1.0], [0.01, 0.02, -0.02])
        assert not small_q_bias_test(res, 1000)["significant"]

    def test_needs_cells(self):
        with pytest.raises(ValueError):
            small_q_bias_test(fake_result([1.0], [0.0], Qs=(30,)), 1000)
