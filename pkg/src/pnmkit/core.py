"""Shared numeric types: parameter vectors, gradient oracles, seeded RNG
streams, and trajectory recording.

All floating-point state is float64; the algebraic-identity tests in the
suite rely on ~1e-10 agreement, which float32 cannot deliver.
"""

from __future__ import annotations

import hashlib
import json
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

#: Identifier of the single PRNG used everywhere in this package. It is
#: written into every output file so results can be tied to the generator.
RNG_ALGORITHM = "pcg64"


class DimensionMismatchError(ValueError):
    """Raised when two vectors (or a vector and a matrix) disagree in size."""


class NonFiniteError(FloatingPointError):
    """Raised when a NaN/Inf shows up where finite values are required."""


class DivergenceError(RuntimeError):
    """Raised when an iterate escapes its stability region; carries the
    offending step index in the message."""


def as_param_vector(values, *, name: str = "vector") -> np.ndarray:
    """Coerce ``values`` to a finite, 1-D float64 array.

    Raises ``ValueError`` for empty input and ``NonFiniteError`` for
    NaN/Inf entries.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError(f"{name} must have dimension >= 1")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return arr


def dot(a, b) -> float:
    """Inner product of two equally sized parameter vectors."""
    a = as_param_vector(a, name="a")
    b = as_param_vector(b, name="b")
    if a.shape != b.shape:
        raise DimensionMismatchError(
            f"dot: dimensions differ ({a.shape[0]} vs {b.shape[0]})"
        )
    return float(np.dot(a, b))


class RngStream:
    """A seeded, single-owner random stream.

    Wraps ``numpy.random.Generator`` with the PCG64 bit generator. The same
    seed plus the same call sequence reproduces the same samples bit for
    bit. Streams must not be shared across concurrent tasks; derive
    independent children with :meth:`spawn` instead.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.algorithm = RNG_ALGORITHM
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, algorithm={self.algorithm!r})"

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def standard_normal(self, size=None) -> np.ndarray:
        return self._gen.standard_normal(size)

    def standard_gaussian_vector(self, dim: int) -> np.ndarray:
        """I.i.d. standard-normal vector of the given dimension."""
        if dim < 1:
            raise ValueError("dim must be >= 1")
        return self._gen.standard_normal(int(dim))

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self._gen.choice(n, size=k, replace=False)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def spawn(self, key: int) -> "RngStream":
        """Derive an independent child stream.

        The child seed is produced deterministically from ``(seed, key)``
        via ``numpy.random.SeedSequence``, so spawning is reproducible and
        children with distinct keys are statistically independent.
        """
        child = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        return RngStream(int(child.generate_state(1, dtype=np.uint64)[0]))


def sample_standard_gaussian(rng: RngStream, dim: int) -> np.ndarray:
    """Draw a vector of i.i.d. standard normals from ``rng``."""
    return rng.standard_gaussian_vector(dim)


@dataclass
class GradientSample:
    """One (possibly stochastic) gradient observation.

    ``loss`` may be None for oracles that expose no objective value, e.g.
    the pure-noise oracle.
    """

    gradient: np.ndarray
    loss: Optional[float] = None


class GradientOracle(ABC):
    """Source of gradients for a fixed problem.

    Subclasses set the capability flags below. ``stochastic_gradient``
    must be unbiased for ``full_gradient`` whenever the latter exists; the
    test suite checks this statistically for every dataset-backed oracle.
    """

    dim: int
    has_full_gradient: bool = False
    has_hessian: bool = False
    dataset_size: Optional[int] = None
    batch_size: Optional[int] = None

    @abstractmethod
    def stochastic_gradient(self, theta: np.ndarray, rng: RngStream) -> GradientSample:
        """Return an unbiased gradient sample at ``theta``."""

    def full_gradient(self, theta: np.ndarray) -> tuple[float, np.ndarray]:
        raise NotImplementedError(f"{type(self).__name__} has no full gradient")

    def hessian(self, theta: np.ndarray) -> np.ndarray:
        raise NotImplementedError(f"{type(self).__name__} has no Hessian")

    def _check_dim(self, theta: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.dim,):
            raise DimensionMismatchError(
                f"theta has shape {theta.shape}, oracle dimension is {self.dim}"
            )
        return theta


@dataclass
class TrajectoryRecord:
    step: int
    loss: float
    grad_norm_sq: float
    snapshot: Optional[np.ndarray] = None
    test_error: Optional[float] = None


@dataclass
class Trajectory:
    """Ordered per-step records of one optimization run.

    Parameter snapshots are opt-in (``keep_snapshots``) so long runs do
    not hold every iterate in memory.
    """

    seed: int
    config_digest: str = ""
    keep_snapshots: bool = False
    records: list[TrajectoryRecord] = field(default_factory=list)

    def append(
        self,
        step: int,
        loss: float,
        grad_norm_sq: float,
        snapshot: Optional[np.ndarray] = None,
        test_error: Optional[float] = None,
    ) -> None:
        if self.records and step <= self.records[-1].step:
            raise ValueError(
                f"step indices must strictly increase: got {step} after "
                f"{self.records[-1].step}"
            )
        if not self.keep_snapshots:
            snapshot = None
        elif snapshot is not None:
            snapshot = np.array(snapshot, dtype=np.float64, copy=True)
        self.records.append(
            TrajectoryRecord(step, float(loss), float(grad_norm_sq), snapshot, test_error)
        )

    @property
    def steps(self) -> np.ndarray:
        return np.array([r.step for r in self.records], dtype=np.int64)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    @property
    def grad_norms_sq(self) -> np.ndarray:
        return np.array([r.grad_norm_sq for r in self.records])


def config_digest(config: dict) -> str:
    """Stable hex digest of a JSON-serializable config dict."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]
