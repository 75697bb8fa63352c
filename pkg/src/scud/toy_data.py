"""Synthetic token distributions with exactly computable likelihoods.

These stand in for real datasets: every shipped variant can be enumerated
(subject to a support cap), so brute-force expectations over the data law are
available as test oracles.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence, Union

import numpy as np

from .config import TOLERANCES


class ToyDistribution:
    """Base class: a distribution over length-D sequences of B tokens."""

    B: int
    D: int

    def log_prob(self, x0: np.ndarray) -> float:
        raise NotImplementedError

    def sample(self, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
        raise NotImplementedError

    def enumerate(self) -> Iterator[tuple[np.ndarray, float]]:
        """Yield (sequence, probability) for every positive-probability point."""
        if self.B**self.D > TOLERANCES.enumeration_cap:
            raise ValueError(
                f"enumeration of {self.B}^{self.D} sequences exceeds the cap "
                f"{TOLERANCES.enumeration_cap}"
            )
        for combo in itertools.product(range(self.B), repeat=self.D):
            x = np.array(combo, dtype=np.int64)
            p = float(np.exp(self.log_prob(x)))
            if p > 0.0:
                yield x, p

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """All positive-probability sequences (M, D) and their probabilities."""
        pts, probs = [], []
        for x, p in self.enumerate():
            pts.append(x)
            probs.append(p)
        return np.array(pts, dtype=np.int64), np.array(probs)

    def entropy(self) -> float:
        _, probs = self.support()
        return float(-(probs * np.log(probs)).sum())

    def marginal_token_frequencies(self) -> np.ndarray:
        """Token frequencies pooled across dimensions (schedule-fitting input)."""
        pts, probs = self.support()
        freq = np.zeros(self.B)
        for d in range(self.D):
            np.add.at(freq, pts[:, d], probs)
        return freq / self.D


@dataclass
class Factorized(ToyDistribution):
    """Independent per-dimension categorical tokens."""

    probs: np.ndarray  # (D, B)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.probs, dtype=np.float64))
        if np.abs(p.sum(axis=1) - 1.0).max() > 1e-9 or p.min() < 0:
            raise ValueError("each dimension needs a probability vector")
        self.probs = p
        self.D, self.B = p.shape

    def log_prob(self, x0) -> float:
        x0 = np.asarray(x0, dtype=np.int64)
        with np.errstate(divide="ignore"):
            return float(np.log(self.probs[np.arange(self.D), x0]).sum())

    def sample(self, rng, n=None):
        size = 1 if n is None else n
        out = np.empty((size, self.D), dtype=np.int64)
        for d in range(self.D):
            out[:, d] = rng.choice(self.B, size=size, p=self.probs[d])
        return out[0] if n is None else out


@dataclass
class MarkovChain(ToyDistribution):
    """First-order chain along the dimension axis."""

    initial: np.ndarray
    transition: np.ndarray
    D: int

    def __post_init__(self):
        self.initial = np.asarray(self.initial, dtype=np.float64)
        self.transition = np.asarray(self.transition, dtype=np.float64)
        self.B = self.initial.shape[0]
        if self.D < 1:
            raise ValueError("need at least one dimension")
        if abs(self.initial.sum() - 1.0) > 1e-9 or self.initial.min() < 0:
            raise ValueError("initial law must be a probability vector")
        if np.abs(self.transition.sum(axis=1) - 1.0).max() > 1e-9 or self.transition.min() < 0:
            raise ValueError("transition rows must be probability vectors")

    def log_prob(self, x0) -> float:
        x0 = np.asarray(x0, dtype=np.int64)
        with np.errstate(divide="ignore"):
            lp = np.log(self.initial[x0[0]])
            for i in range(1, self.D):
                lp += np.log(self.transition[x0[i - 1], x0[i]])
        return float(lp)

    def sample(self, rng, n=None):
        size = 1 if n is None else n
        out = np.empty((size, self.D), dtype=np.int64)
        for j in range(size):
            state = rng.choice(self.B, p=self.initial)
            out[j, 0] = state
            for i in range(1, self.D):
                state = rng.choice(self.B, p=self.transition[state])
                out[j, i] = state
        return out[0] if n is None else out


@dataclass
class CorrelatedPair(ToyDistribution):
    """Two tokens that agree with probability ``weight`` (else independent)."""

    B: int
    weight: float

    def __post_init__(self):
        if not (0.0 <= self.weight <= 1.0):
            raise ValueError("agreement weight must lie in [0, 1]")
        self.D = 2

    def log_prob(self, x0) -> float:
        x0 = np.asarray(x0, dtype=np.int64)
        p = self.weight * (x0[0] == x0[1]) / self.B + (1.0 - self.weight) / self.B**2
        with np.errstate(divide="ignore"):
            return float(np.log(p))

    def sample(self, rng, n=None):
        size = 1 if n is None else n
        out = np.empty((size, 2), dtype=np.int64)
        agree = rng.random(size) < self.weight
        out[:, 0] = rng.integers(0, self.B, size=size)
        out[:, 1] = np.where(agree, out[:, 0], rng.integers(0, self.B, size=size))
        return out[0] if n is None else out


def save_dataset(path: Union[str, Path], samples: np.ndarray, B: int) -> None:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.int64))
    lines = [f"B {B} D {samples.shape[1]}"]
    for row in samples:
        lines.append(" ".join(str(int(v)) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dataset(path: Union[str, Path]) -> tuple[int, np.ndarray]:
    """Returns (B, samples) from the whitespace token-id format."""
    lines = Path(path).read_text().strip().splitlines()
    header = lines[0].split()
    if len(header) != 4 or header[0] != "B" or header[2] != "D":
        raise ValueError(f"{path}: header must be 'B <size> D <dims>'")
    B, D = int(header[1]), int(header[3])
    rows = []
    for i, line in enumerate(lines[1:], start=2):
        vals = [int(v) for v in line.split()]
        if len(vals) != D:
            raise ValueError(f"{path}:{i}: expected {D} tokens, found {len(vals)}")
        if any(v < 0 or v >= B for v in vals):
            raise ValueError(f"{path}:{i}: token id out of range [0, {B})")
        rows.append(vals)
    return B, np.array(rows, dtype=np.int64)
