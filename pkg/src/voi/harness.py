"""Repeated moment-matching runs over a grid of Q at fixed simulation budgets.

Each cell of the grid is a pair (Q, budget) with ``R = budget // Q``
posterior draws per nested sample.  Every cell is repeated with independent
seeds, and the spread and bias of the estimates are reported against an
oracle value.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from dataclasses import dataclass, field
from math import sqrt

import numpy as np
from scipy import stats

from .bayes import DataGenerator
from .core import STREAM_REPETITION, FocalSubset, PsaResult, derive_seed
from .evppi import ConditionalInb
from .mm import MmConfig, evsi_moment_matching
from .psa import EconomicModel

__all__ = [
    "OracleSpec",
    "SweepConfig",
    "SweepCell",
    "SweepResult",
    "SUMMARY_COLUMNS",
    "model_hash",
    "resolve_oracle",
    "run_sweep",
    "summarize_sweep",
    "q_variance_trend",
    "small_q_bias_test",
]

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("Q", "budget", "R", "variance", "bias", "mean_runtime_s", "repetitions")


@dataclass(frozen=True)
class OracleSpec:
    """Where the reference EVSI comes from.

    ``kind`` is ``"analytic"`` (toy model only), ``"nested_mc"`` (a long
    nested run, optionally cached as JSON at ``cache``) or ``"fixed"``.
    """

    kind: str = "analytic"
    value: float | None = None
    S: int | None = None
    R: int | None = None
    seed: int = 0
    cache: str | None = None

    def __post_init__(self):
        if self.kind not in ("analytic", "nested_mc", "fixed"):
            raise ValueError(f"unknown oracle kind {self.kind!r}")
        if self.kind == "fixed" and self.value is None:
            raise ValueError("a fixed oracle needs a value")
        if self.kind == "nested_mc" and (self.S is None or self.R is None):
            raise ValueError("a nested_mc oracle needs S and R")


@dataclass(frozen=True)
class SweepConfig:
    Q_values: tuple[int, ...]
    budgets: tuple[int, ...]
    repetitions: int
    oracle: OracleSpec = field(default_factory=OracleSpec)
    base_seed: int = 0
    clamp_variance: bool = True

    def __post_init__(self):
        object.__setattr__(self, "Q_values", tuple(sorted(int(q) for q in self.Q_values)))
        object.__setattr__(self, "budgets", tuple(sorted(int(b) for b in self.budgets)))
        if not self.Q_values or not self.budgets:
            raise ValueError("need at least one Q value and one budget")
        if int(self.repetitions) < 2:
            raise ValueError("need at least two repetitions per cell")
        for b in self.budgets:
            for q in self.Q_values:
                if q < 2 or b // q < 2:
                    raise ValueError(f"budget {b} with Q={q} leaves R={b // q} < 2")

    def cells(self) -> list[tuple[int, int]]:
        """(Q, budget) pairs, budget-major, both ascending."""
        return [(q, b) for b in self.budgets for q in self.Q_values]


@dataclass(frozen=True)
class SweepCell:
    Q: int
    budget: int
    R: int
    estimates: tuple[float, ...]
    variance: float
    bias: float
    mean_runtime_s: float

    @property
    def repetitions(self) -> int:
        return len(self.estimates)


@dataclass(frozen=True)
class SweepResult:
    cells: tuple[SweepCell, ...]
    oracle: float

    def cell(self, Q: int, budget: int) -> SweepCell:
        for c in self.cells:
            if c.Q == Q and c.budget == budget:
                return c
        raise KeyError((Q, budget))

    def by_budget(self, budget: int) -> list[SweepCell]:
        return [c for c in self.cells if c.budget == budget]


def model_hash(model: EconomicModel, gen: DataGenerator) -> str:
    state = getattr(model, "config", None)
    if state is None:
        state = {k: v for k, v in vars(model).items() if not k.startswith("_")}
    blob = json.dumps({"model": type(model).__name__, "state": state,
                       "generator": type(gen).__name__, "design": dict(gen.design)},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_oracle(spec: OracleSpec, model: EconomicModel, gen: DataGenerator,
                   focal: FocalSubset, threads: int | None = None) -> float:
    if spec.kind == "fixed":
        return float(spec.value)
    if spec.kind == "analytic":
        from .models.toy import ToyGenerator, ToyModel
        from .oracle import toy_evsi_analytic

        if not (isinstance(model, ToyModel) and isinstance(gen, ToyGenerator)):
            raise ValueError("the analytic oracle exists only for the toy model and trial")
        return toy_evsi_analytic(gen.n, model)

    from .oracle import evsi_nested_mc

    key = {"S": int(spec.S), "R": int(spec.R), "seed": int(spec.seed),
           "model_hash": model_hash(model, gen)}
    if spec.cache and os.path.exists(spec.cache):
        with open(spec.cache, encoding="utf-8") as fh:
            cached = json.load(fh)
        if all(cached.get(k) == v for k, v in key.items()):
            return float(cached["value"])
        logger.info("oracle cache %s does not match this run; recomputing", spec.cache)
    est = evsi_nested_mc(model, gen, focal, spec.S, spec.R, seed=spec.seed, threads=threads)
    if spec.cache:
        with open(spec.cache, "w", encoding="utf-8") as fh:
            json.dump({"value": est.value, **key}, fh, indent=2, sort_keys=True)
    return est.value


def run_sweep(model: EconomicModel, gen: DataGenerator, focal: FocalSubset, psa: PsaResult,
              cinb: ConditionalInb, config: SweepConfig, threads: int | None = None,
              oracle_value: float | None = None) -> SweepResult:
    """Run every (Q, budget) cell ``config.repetitions`` times on a fixed PSA.

    Repetition ``r`` of cell ``c`` is seeded with
    ``derive_seed(base_seed, (STREAM_REPETITION, c * repetitions + r))``.
    """
    if cinb.focal != focal:
        raise ValueError("conditional INB was fitted on a different focal subset")
    oracle = (float(oracle_value) if oracle_value is not None
              else resolve_oracle(config.oracle, model, gen, focal, threads))
    reps = int(config.repetitions)
    cells = []
    for c, (Q, budget) in enumerate(config.cells()):
        R, rem = divmod(budget, Q)
        if rem:
            logger.info("budget %d with Q=%d: %d posterior draws unused", budget, Q, rem)
        estimates, runtimes = [], []
        for r in range(reps):
            seed = derive_seed(config.base_seed, (STREAM_REPETITION, c * reps + r))
            mm = MmConfig(Q=Q, R=R, clamp_variance=config.clamp_variance, seed=seed)
            t0 = time.perf_counter()
            try:
                est = evsi_moment_matching(model, psa, cinb, gen, mm, threads=threads)
            except Exception as exc:
                raise RuntimeError(f"sweep cell Q={Q}, budget={budget}, repetition {r} failed") from exc
            runtimes.append(time.perf_counter() - t0)
            estimates.append(est.value)
        arr = np.array(estimates)
        cells.append(SweepCell(Q=Q, budget=budget, R=R, estimates=tuple(estimates),
                               variance=float(np.var(arr, ddof=1)),
                               bias=float(np.mean(arr) - oracle),
                               mean_runtime_s=float(np.mean(runtimes))))
    return SweepResult(tuple(cells), oracle)


def summarize_sweep(result: SweepResult) -> str:
    """CSV text, one row per cell, ordered by budget then Q."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SUMMARY_COLUMNS)
    for c in sorted(result.cells, key=lambda c: (c.budget, c.Q)):
        writer.writerow([c.Q, c.budget, c.R, f"{c.variance:.17g}", f"{c.bias:.17g}",
                         f"{c.mean_runtime_s:.17g}", c.repetitions])
    return buf.getvalue()


def q_variance_trend(result: SweepResult, budget: int) -> float:
    """Spearman correlation between Q and estimate variance at one budget."""
    cells = result.by_budget(budget)
    rho = stats.spearmanr([c.Q for c in cells], [c.variance for c in cells])[0]
    return float(rho)


def small_q_bias_test(result: SweepResult, budget: int, small_q: int = 20,
                      alpha: float = 0.05) -> dict:
    """One-sided z-test that |bias| at ``small_q`` exceeds the mean |bias| of larger Q.

    The statistic is ``|b_small| - mean(|b_Q|)``; its standard error treats
    the signs of the biases as fixed and the cells as independent.
    """
    cells = result.by_budget(budget)
    small = [c for c in cells if c.Q == small_q]
    large = [c for c in cells if c.Q > small_q]
    if not small or not large:
        raise ValueError("need the small Q cell and at least one larger Q")
    s = small[0]
    diff = abs(s.bias) - float(np.mean([abs(c.bias) for c in large]))
    var = s.variance / s.repetitions + sum(c.variance / c.repetitions for c in large) / len(large) ** 2
    z = diff / sqrt(var) if var > 0 else float("inf") * np.sign(diff)
    p = float(stats.norm.sf(z))
    return {"difference": diff, "z": float(z), "p_value": p, "significant": p < alpha}
