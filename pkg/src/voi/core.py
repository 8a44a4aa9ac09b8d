"""Domain types, random-stream derivation and deterministic reductions.

Every stochastic routine in the package receives its randomness through
:func:`derive_stream`.  A stream is identified by a root seed plus a key
whose first element names the purpose of the draws (see the ``STREAM_*``
constants), so that unrelated consumers never share a stream and results do
not depend on execution order.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .exceptions import NonFiniteReduction

__all__ = [
    "STREAM_PSA",
    "STREAM_NESTED",
    "STREAM_OUTER",
    "STREAM_REPETITION",
    "STREAM_AUX",
    "ParameterVector",
    "FocalSubset",
    "PsaResult",
    "FutureDataset",
    "VarianceBundle",
    "EvsiEstimate",
    "derive_stream",
    "derive_seed",
    "ordered_sum",
    "ordered_mean",
    "resolve_threads",
    "parallel_map",
]

# Purpose tags for the first element of a stream key.
STREAM_PSA = 0
STREAM_NESTED = 1
STREAM_OUTER = 2
STREAM_REPETITION = 3
STREAM_AUX = 4

_SEED_LIMIT = 2**64


def _as_key(stream_id) -> tuple[int, ...]:
    key = (stream_id,) if np.isscalar(stream_id) else tuple(stream_id)
    out = []
    for k in key:
        k = int(k)
        if k < 0:
            raise ValueError(f"stream ids must be non-negative, got {k}")
        out.append(k)
    return tuple(out)


def _check_seed(seed) -> int:
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def derive_stream(seed: int, stream_id=0) -> np.random.Generator:
    """Return the generator for ``(seed, stream_id)``.

    ``stream_id`` is a non-negative integer or a tuple of them.  Streams are
    built from :class:`numpy.random.SeedSequence` spawn keys, which gives
    statistically independent, non-overlapping PCG64 streams.

    >>> a = derive_stream(42, 0).random(3)
    >>> b = derive_stream(42, 0).random(3)
    >>> bool((a == b).all())
    True
    """
    ss = np.random.SeedSequence(entropy=_check_seed(seed), spawn_key=_as_key(stream_id))
    return np.random.Generator(np.random.PCG64(ss))


def derive_seed(seed: int, stream_id=0) -> int:
    """Derive a child 64-bit seed, for handing a whole sub-computation its own root."""
    ss = np.random.SeedSequence(entropy=_check_seed(seed), spawn_key=_as_key(stream_id))
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def ordered_sum(values: Iterable[float]) -> float:
    """Sum ``values`` with a result that does not depend on term order.

    Uses :func:`math.fsum`, which returns the correctly rounded sum, so a
    parallel gather followed by this reduction always matches the serial run.
    """
    vals = np.asarray(list(values) if not isinstance(values, np.ndarray) else values,
                      dtype=float).ravel()
    if vals.size == 0:
        return 0.0
    if not np.all(np.isfinite(vals)):
        raise NonFiniteReduction("non-finite term in reduction")
    try:
        total = math.fsum(vals)
    except OverflowError as exc:
        raise NonFiniteReduction("reduction overflowed") from exc
    if not math.isfinite(total):
        raise NonFiniteReduction("reduction overflowed")
    return total


def ordered_mean(values) -> float:
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size == 0:
        raise ValueError("mean of an empty sequence")
    return ordered_sum(vals) / vals.size


def resolve_threads(threads: int | None = None) -> int:
    """Number of worker threads: explicit value, else ``VOI_THREADS``, else CPU count.

    Zero (or ``None``) means automatic.
    """
    if threads is None or int(threads) == 0:
        env = os.environ.get("VOI_THREADS", "").strip()
        threads = int(env) if env else 0
    threads = int(threads)
    if threads < 0:
        raise ValueError("threads must be >= 0")
    return threads if threads > 0 else (os.cpu_count() or 1)


def parallel_map(func: Callable, items: Sequence, threads: int | None = None) -> list:
    """Apply ``func`` to ``items`` and return results in input order."""
    items = list(items)
    n = min(resolve_threads(threads), len(items))
    if n <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(func, items))


def _frozen(a, ndim=None) -> np.ndarray:
    arr = np.array(a, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class ParameterVector:
    """One draw of the model inputs."""

    values: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        values = _frozen(self.values, ndim=1)
        names = tuple(str(n) for n in self.names)
        if values.size < 1:
            raise ValueError("a parameter vector needs at least one value")
        if len(names) != values.size:
            raise ValueError("names and values differ in length")
        if any(not n for n in names) or len(set(names)) != len(names):
            raise ValueError("parameter names must be unique and non-empty")
        if not np.all(np.isfinite(values)):
            raise ValueError("parameter values must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "names", names)

    def __getitem__(self, name: str) -> float:
        return float(self.values[self.names.index(name)])

    def __len__(self):
        return self.values.size

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.names, map(float, self.values)))


@dataclass(frozen=True)
class FocalSubset:
    """Positions of the parameters that the future study informs.

    The complement holds the parameters the data do not touch.
    """

    indices: tuple[int, ...]
    n_params: int

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if not idx:
            raise ValueError("focal subset must be non-empty")
        if any(b <= a for a, b in zip(idx, idx[1:])):
            raise ValueError("focal indices must be strictly increasing")
        if idx[0] < 0 or idx[-1] >= self.n_params:
            raise ValueError("focal index out of bounds")
        object.__setattr__(self, "indices", idx)

    @classmethod
    def from_names(cls, focal: Sequence[str], names: Sequence[str]) -> "FocalSubset":
        names = list(names)
        unknown = [f for f in focal if f not in names]
        if unknown:
            raise ValueError(f"unknown focal parameter(s) {unknown}; valid choices: {names}")
        return cls(tuple(sorted(names.index(f) for f in focal)), len(names))

    @property
    def complement(self) -> tuple[int, ...]:
        return tuple(i for i in range(self.n_params) if i not in self.indices)

    def names(self, all_names: Sequence[str]) -> tuple[str, ...]:
        return tuple(all_names[i] for i in self.indices)

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class PsaResult:
    """S parameter draws (rows) and the INB each one implies."""

    params: np.ndarray
    inb: np.ndarray
    names: tuple[str, ...]

    def __post_init__(self):
        params = _frozen(self.params, ndim=2)
        inb = _frozen(self.inb, ndim=1)
        names = tuple(str(n) for n in self.names)
        if params.shape[0] != inb.size:
            raise ValueError("params rows and inb length differ")
        if params.shape[1] != len(names):
            raise ValueError("params columns and names differ")
        if len(set(names)) != len(names) or "inb" in names:
            raise ValueError("parameter names must be unique and must not be 'inb'")
        if inb.size < 2:
            raise ValueError("a PSA needs at least two simulations")
        if not (np.all(np.isfinite(params)) and np.all(np.isfinite(inb))):
            raise ValueError("PSA entries must be finite")
        object.__setattr__(self, "params", params)
        object.__setattr__(self, "inb", inb)
        object.__setattr__(self, "names", names)

    @property
    def S(self) -> int:
        return self.inb.size

    def focal_columns(self, focal: FocalSubset) -> np.ndarray:
        return self.params[:, list(focal.indices)]


@dataclass(frozen=True)
class FutureDataset:
    """One simulated study outcome, with the design that generated it."""

    outcomes: Mapping[str, Any]
    design: Mapping[str, Any] = field(default_factory=dict)


@dataclass(frozen=True)
class VarianceBundle:
    """Every moment the moment-matching estimator consumes."""

    mu_theta: float
    sigma2_theta: float
    sigma2_phi: float
    sigma2_q: tuple[float, ...]
    sigma2_X: float

    def __post_init__(self):
        sq = tuple(float(v) for v in self.sigma2_q)
        object.__setattr__(self, "sigma2_q", sq)
        for name in ("sigma2_theta", "sigma2_phi", "sigma2_X"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be >= 0")
        if any(not v >= 0 for v in sq):
            raise ValueError("sigma2_q entries must be >= 0")
        if sq and self.sigma2_X != ordered_mean(sq):
            raise ValueError("sigma2_X must equal the mean of sigma2_q")

    @property
    def Q(self) -> int:
        return len(self.sigma2_q)

    def to_dict(self) -> dict:
        return {
            "mu_theta": self.mu_theta,
            "sigma2_theta": self.sigma2_theta,
            "sigma2_phi": self.sigma2_phi,
            "sigma2_q": list(self.sigma2_q),
            "sigma2_X": self.sigma2_X,
        }


METHODS = ("moment_matching", "nested_mc", "analytic")


@dataclass(frozen=True)
class EvsiEstimate:
    value: float
    method: str
    S: int | None = None
    Q: int | None = None
    R: int | None = None
    seed: int | None = None
    bundle: VarianceBundle | None = None
    warnings: tuple[str, ...] = ()
    standard_error: float | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if not self.value >= 0:
            raise ValueError("EVSI estimate must be >= 0")
        object.__setattr__(self, "warnings", tuple(self.warnings))

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "value": self.value,
            "S": self.S,
            "Q": self.Q,
            "R": self.R,
            "seed": self.seed,
            "standard_error": self.standard_error,
            "variance_bundle": None if self.bundle is None else self.bundle.to_dict(),
            "warnings": list(self.warnings),
        }
