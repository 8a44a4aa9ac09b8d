"""Probabilistic sensitivity analysis: prior draws pushed through a model."""

from __future__ import annotations

import abc
import csv
import os

import numpy as np

from .core import STREAM_PSA, ParameterVector, PsaResult, derive_stream, parallel_map
from .exceptions import ModelEvaluation, ParseError

__all__ = [
    "EconomicModel",
    "evaluate_inb",
    "PSA_BLOCK",
    "simulate_psa",
    "inb_moments",
    "load_psa_csv",
    "save_psa_csv",
]

# Rows drawn per random stream; row s always comes from block s // PSA_BLOCK.
PSA_BLOCK = 1024


class EconomicModel(abc.ABC):
    """Prior over the model inputs plus the deterministic INB function.

    Subclasses implement the vectorised :meth:`sample_prior` and
    :meth:`inb_array`; the single-vector methods are derived from them.
    """

    parameter_names: tuple[str, ...] = ()
    #: Whether p(theta) factorises so focal and non-focal inputs are independent.
    independent_priors: bool = True

    @abc.abstractmethod
    def sample_prior(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Return a ``(size, P)`` array of prior draws using only ``rng``."""

    @abc.abstractmethod
    def inb_array(self, params: np.ndarray) -> np.ndarray:
        """INB for each row of a ``(n, P)`` parameter array."""

    def draw_prior(self, rng: np.random.Generator) -> ParameterVector:
        return ParameterVector(self.sample_prior(rng, 1)[0], self.parameter_names)

    def inb(self, pv: ParameterVector) -> float:
        if tuple(pv.names) != tuple(self.parameter_names):
            raise ValueError(f"expected parameters {self.parameter_names}, got {pv.names}")
        return float(self.inb_array(pv.values[None, :])[0])


def evaluate_inb(model: EconomicModel, params: np.ndarray) -> np.ndarray:
    inb = np.asarray(model.inb_array(params), dtype=float)
    bad = np.flatnonzero(~np.isfinite(inb))
    if bad.size:
        raise ModelEvaluation("model returned a non-finite INB", row=int(bad[0]))
    return inb


def simulate_psa(model: EconomicModel, S: int, seed: int = 0, threads: int | None = 1) -> PsaResult:
    """Draw ``S`` parameter vectors from the prior and evaluate the INB of each.

    Rows are generated in blocks of :data:`PSA_BLOCK`, each block on its own
    stream ``(seed, (STREAM_PSA, block))``.  Consequently a run with ``S`` rows
    is a prefix of any run with more rows, and blocks may be drawn in parallel.
    """
    S = int(S)
    if S < 2:
        raise ValueError("S must be >= 2")
    n_blocks = -(-S // PSA_BLOCK)

    def block(b):
        return model.sample_prior(derive_stream(seed, (STREAM_PSA, b)), PSA_BLOCK)

    params = np.concatenate(parallel_map(block, range(n_blocks), threads))[:S]
    inb = evaluate_inb(model, params)
    return PsaResult(params, inb, model.parameter_names)


def inb_moments(psa: PsaResult) -> tuple[float, float]:
    """Sample mean and unbiased sample variance of the PSA INB values."""
    inb = psa.inb
    if inb.size < 2:
        raise ValueError("need at least two simulations")
    return float(np.mean(inb)), float(np.var(inb, ddof=1))


def save_psa_csv(psa: PsaResult, path: str | os.PathLike) -> None:
    """Write ``psa`` as CSV: one column per parameter then ``inb``.

    Floats are written with :func:`repr`, which round-trips exactly.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow([*psa.names, "inb"])
        for row, y in zip(psa.params, psa.inb):
            writer.writerow([repr(float(v)) for v in row] + [repr(float(y))])


def load_psa_csv(path: str | os.PathLike) -> PsaResult:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", line=1) from None
        header = [h.strip() for h in header]
        if len(header) < 2 or header[-1] != "inb":
            raise ParseError("header must list parameter names followed by 'inb'", line=1)
        names = header[:-1]
        rows = []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=line)
            try:
                rows.append([float(c) for c in row])
            except ValueError:
                raise ParseError("non-numeric cell", line=line) from None
    if len(rows) < 2:
        raise ParseError("a PSA file needs at least two data rows")
    data = np.array(rows, dtype=float)
    try:
        return PsaResult(data[:, :-1], data[:, -1], tuple(names))
    except ValueError as exc:
        raise ParseError(str(exc)) from None
