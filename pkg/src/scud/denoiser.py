"""Denoisers: exact oracles for enumerable toys and a small trainable predictor.

A denoiser maps a corrupted sequence and its per-dimension event counts to one
probability vector per dimension, predicting (a quantity proportional to) the
clean token given the *other* dimensions and their counts.  The trainable
variant is a per-position MLP over token embeddings plus a pooled context of
the other positions, with every layer modulated by a scale-and-shift of a
count feature; gradients are hand-written and finite-difference checked.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .config import TOLERANCES
from .ctmc_core import EventProcess
from .loss import (
    NonFiniteLossError,
    UnreachableStateError,
    forward_noise,
    kl_divergence,
    posterior_prev,
)
from .rand import spawn_streams
from .schedule import RateSchedule
from .toy_data import Factorized, ToyDistribution

CHECKPOINT_MAGIC = "SCUD-CKPT v1"


def validate_denoiser_output(out: np.ndarray) -> None:
    out = np.asarray(out)
    if out.min() < 0:
        raise ValueError(f"denoiser output has negative entry {out.min():.3e}")
    worst = np.abs(out.sum(axis=-1) - 1.0).max()
    if worst > 1e-9:
        raise ValueError(f"denoiser rows must sum to 1, worst residual {worst:.3e}")


def _as_batch(x, s):
    x = np.asarray(x, dtype=np.int64)
    s = np.asarray(s, dtype=np.int64)
    squeeze = x.ndim == 1
    if squeeze:
        x, s = x[None, :], s[None, :]
    if x.shape != s.shape:
        raise ValueError(f"token and count shapes disagree: {x.shape} vs {s.shape}")
    return x, s, squeeze


class UniformDenoiser:
    """Predicts the uniform law everywhere (the zero-information baseline)."""

    def __init__(self, n_states: int):
        self.n_states = n_states

    def forward(self, x, s):
        x, _, squeeze = _as_batch(x, s)
        out = np.full(x.shape + (self.n_states,), 1.0 / self.n_states)
        return out[0] if squeeze else out


class LookupDenoiser:
    """Fixed prediction table indexed by the current token (for verification)."""

    def __init__(self, table: np.ndarray):
        t = np.asarray(table, dtype=np.float64)
        if t.ndim != 2 or t.shape[0] != t.shape[1]:
            raise ValueError("lookup table must be square (current token -> prediction)")
        if t.min() <= 0:
            raise ValueError("lookup table must be strictly positive")
        self.table = t / t.sum(axis=1, keepdims=True)
        self.n_states = t.shape[0]

    def forward(self, x, s):
        x, _, squeeze = _as_batch(x, s)
        out = self.table[x]
        return out[0] if squeeze else out


class MixedDenoiser:
    """Base prediction mixed with the uniform law (perturbation for tests)."""

    def __init__(self, base, mix: float):
        if not (0.0 <= mix <= 1.0):
            raise ValueError("mix must lie in [0, 1]")
        self.base = base
        self.mix = mix

    def forward(self, x, s):
        out = np.asarray(self.base.forward(x, s), dtype=np.float64)
        return (1.0 - self.mix) * out + self.mix / out.shape[-1]


class OracleDenoiser:
    """Exact posterior-proportional prediction for an enumerable toy.

    For each dimension it computes p(clean token | other dimensions, other
    counts) by summing the toy law against leave-one-out corruption
    likelihoods.  Factorized toys short-circuit to their marginals.
    """

    def __init__(self, toy: ToyDistribution, process: EventProcess,
                 structured_shortcuts: bool = True, chunk: int = 4096):
        if toy.B != process.size:
            raise ValueError("toy vocabulary and process size disagree")
        self.toy = toy
        self.process = process
        self.chunk = chunk
        self._factorized = structured_shortcuts and isinstance(toy, Factorized)
        if not self._factorized:
            if toy.B**toy.D > TOLERANCES.enumeration_cap:
                raise ValueError(
                    f"oracle enumeration of {toy.B}^{toy.D} sequences exceeds the cap"
                )
            self._pts, self._probs = toy.support()
            eye = np.eye(toy.B)
            self._pts_one_hot = eye[self._pts]  # (M, D, B)

    def forward(self, x, s):
        x, s, squeeze = _as_batch(x, s)
        n, D = x.shape
        B = self.process.size
        if D != self.toy.D:
            raise ValueError(f"expected {self.toy.D} dimensions, got {D}")
        if self._factorized:
            out = np.broadcast_to(self.toy.probs[None, :, :], (n, D, B)).copy()
            return out[0] if squeeze else out
        eye = np.eye(B)
        lik = np.maximum(
            self.process.kernel.power_apply_batch(
                s.ravel(), eye[x.ravel()], transpose=False
            ),
            0.0,
        ).reshape(n, D, B)
        # lik[n, d, b] = P(observe x[n, d] | clean token b, s[n, d] events)
        out = np.empty((n, D, B))
        dgrid = np.arange(D)
        for lo in range(0, n, self.chunk):
            hi = min(n, lo + self.chunk)
            block = lik[lo:hi]                        # (C, D, B)
            site = block[:, dgrid[None, :], self._pts]  # (C, M, D)
            # leave-one-out products along D without dividing (zeros are legal)
            C, M, _ = site.shape
            pre = np.ones((C, M, D))
            suf = np.ones((C, M, D))
            for d in range(1, D):
                pre[:, :, d] = pre[:, :, d - 1] * site[:, :, d - 1]
                suf[:, :, D - 1 - d] = suf[:, :, D - d] * site[:, :, D - d]
            weighted = self._probs[None, :, None] * pre * suf  # (C, M, D)
            out[lo:hi] = np.einsum("cmd,mdb->cdb", weighted, self._pts_one_hot)
        z = out.sum(axis=-1, keepdims=True)
        if np.any(z <= 0):
            raise UnreachableStateError(
                "oracle conditioning state has zero probability under the toy"
            )
        out /= z
        return out[0] if squeeze else out


@dataclass(frozen=True)
class Architecture:
    """Descriptor of the trainable denoiser (also the checkpoint header)."""

    n_states: int
    embed: int = 8
    hidden: int = 32
    positional: bool = False
    seq_len: Optional[int] = None
    count_feature: str = "log1p"  # or "raw"
    init_seed: int = 1234

    def __post_init__(self):
        if self.positional and self.seq_len is None:
            raise ValueError("positional architecture needs seq_len")
        if self.count_feature not in ("log1p", "raw"):
            raise ValueError(f"unknown count feature {self.count_feature!r}")

    def header_line(self) -> str:
        return (
            f"B={self.n_states} embed={self.embed} hidden={self.hidden} "
            f"positional={int(self.positional)} seq_len={self.seq_len or 0} "
            f"count_feature={self.count_feature} init_seed={self.init_seed}"
        )

    @classmethod
    def from_header_line(cls, line: str) -> "Architecture":
        kv = dict(part.split("=", 1) for part in line.split())
        seq_len = int(kv["seq_len"])
        return cls(
            n_states=int(kv["B"]),
            embed=int(kv["embed"]),
            hidden=int(kv["hidden"]),
            positional=bool(int(kv["positional"])),
            seq_len=seq_len if seq_len else None,
            count_feature=kv["count_feature"],
            init_seed=int(kv["init_seed"]),
        )


class TrainableDenoiser:
    """Per-position MLP with pooled cross-position context and count FiLM.

    The final layer starts at zero so a fresh model predicts the uniform law.
    Without positional embeddings the network is permutation-equivariant.
    """

    def __init__(self, arch: Architecture):
        self.arch = arch
        B, E, H = arch.n_states, arch.embed, arch.hidden
        self.in_dim = 2 * E + (E if arch.positional else 0)
        shapes = [
            ("emb", (B, E)), ("gE", (E,)), ("hE", (E,)),
        ]
        if arch.positional:
            shapes.append(("pos", (arch.seq_len, E)))
        shapes += [
            ("W1", (self.in_dim, H)), ("b1", (H,)), ("g1", (H,)), ("h1", (H,)),
            ("W2", (H, H)), ("b2", (H,)), ("g2", (H,)), ("h2", (H,)),
            ("W3", (H, B)), ("b3", (B,)),
        ]
        self._shapes = shapes
        total = sum(int(np.prod(shape)) for _, shape in shapes)
        self.params = np.zeros(total)
        self._views = {}
        offset = 0
        for name, shape in shapes:
            size = int(np.prod(shape))
            self._views[name] = self.params[offset : offset + size].reshape(shape)
            offset += size
        rng = np.random.default_rng(arch.init_seed)
        self._views["emb"][:] = rng.normal(0.0, 0.5, size=(B, E))
        if arch.positional:
            self._views["pos"][:] = rng.normal(0.0, 0.5, size=(arch.seq_len, E))
        self._views["W1"][:] = rng.normal(0.0, 1.0 / np.sqrt(self.in_dim), size=(self.in_dim, H))
        self._views["W2"][:] = rng.normal(0.0, 1.0 / np.sqrt(H), size=(H, H))
        # W3, b3, all FiLM scales/shifts stay zero: uniform initial output.

    @property
    def n_states(self) -> int:
        return self.arch.n_states

    def _feature(self, s: np.ndarray) -> np.ndarray:
        s = s.astype(np.float64)
        return np.log1p(s) if self.arch.count_feature == "log1p" else s

    def _forward_cache(self, x, s):
        x, s, squeeze = _as_batch(x, s)
        if self.arch.positional and x.shape[1] != self.arch.seq_len:
            raise ValueError(
                f"positional model expects {self.arch.seq_len} dimensions, got {x.shape[1]}"
            )
        v = self._views
        N, D = x.shape
        f = self._feature(s)[..., None]  # (N, D, 1)
        e = v["emb"][x]                  # (N, D, E)
        ef = e * (1.0 + f * v["gE"]) + f * v["hE"]
        denom = max(D - 1, 1)
        ctx = (ef.sum(axis=1, keepdims=True) - ef) / denom
        parts = [e, ctx]
        if self.arch.positional:
            parts.append(np.broadcast_to(v["pos"][None, :D, :], e.shape))
        z = np.concatenate(parts, axis=2)
        u1 = z @ v["W1"] + v["b1"]
        u1f = u1 * (1.0 + f * v["g1"]) + f * v["h1"]
        a1 = np.tanh(u1f)
        u2 = a1 @ v["W2"] + v["b2"]
        u2f = u2 * (1.0 + f * v["g2"]) + f * v["h2"]
        a2 = np.tanh(u2f)
        logits = a2 @ v["W3"] + v["b3"]
        m = logits.max(axis=-1, keepdims=True)
        exps = np.exp(logits - m)
        probs = exps / exps.sum(axis=-1, keepdims=True)
        cache = dict(x=x, f=f, e=e, z=z, u1=u1, a1=a1, u2=u2, a2=a2, probs=probs,
                     squeeze=squeeze, denom=denom)
        return probs, cache

    def forward(self, x, s):
        probs, cache = self._forward_cache(x, s)
        return probs[0] if cache["squeeze"] else probs

    def _backward(self, cache, dlogits: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss wrt params, given d loss / d logits."""
        v = self._views
        x, f, e, z = cache["x"], cache["f"], cache["e"], cache["z"]
        u1, a1, u2, a2 = cache["u1"], cache["a1"], cache["u2"], cache["a2"]
        E = self.arch.embed
        grad = np.zeros_like(self.params)
        gviews = {}
        offset = 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            gviews[name] = grad[offset : offset + size].reshape(shape)
            offset += size

        gviews["W3"][:] = np.einsum("ndh,ndb->hb", a2, dlogits)
        gviews["b3"][:] = dlogits.sum(axis=(0, 1))
        da2 = dlogits @ v["W3"].T
        du2f = da2 * (1.0 - a2**2)
        gviews["g2"][:] = (du2f * u2 * f).sum(axis=(0, 1))
        gviews["h2"][:] = (du2f * f).sum(axis=(0, 1))
        du2 = du2f * (1.0 + f * v["g2"])
        gviews["W2"][:] = np.einsum("ndh,ndk->hk", a1, du2)
        gviews["b2"][:] = du2.sum(axis=(0, 1))
        da1 = du2 @ v["W2"].T
        du1f = da1 * (1.0 - a1**2)
        gviews["g1"][:] = (du1f * u1 * f).sum(axis=(0, 1))
        gviews["h1"][:] = (du1f * f).sum(axis=(0, 1))
        du1 = du1f * (1.0 + f * v["g1"])
        gviews["W1"][:] = np.einsum("ndi,ndh->ih", z, du1)
        gviews["b1"][:] = du1.sum(axis=(0, 1))
        dz = du1 @ v["W1"].T
        de_direct = dz[..., :E]
        dctx = dz[..., E : 2 * E]
        if self.arch.positional:
            gviews["pos"][: x.shape[1]] += dz[..., 2 * E :].sum(axis=0)
        def_ = (dctx.sum(axis=1, keepdims=True) - dctx) / cache["denom"]
        de = de_direct + def_ * (1.0 + f * v["gE"])
        gviews["gE"][:] = (def_ * e * f).sum(axis=(0, 1))
        gviews["hE"][:] = (def_ * f).sum(axis=(0, 1))
        np.add.at(gviews["emb"], x, de)
        return grad

    # -- persistence ---------------------------------------------------------
    def save(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            fh.write((CHECKPOINT_MAGIC + "\n").encode("ascii"))
            fh.write((self.arch.header_line() + "\n").encode("ascii"))
            fh.write(self.params.astype("<f8").tobytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "TrainableDenoiser":
        raw = Path(path).read_bytes()
        first = raw.index(b"\n")
        second = raw.index(b"\n", first + 1)
        magic = raw[:first].decode("ascii")
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint header {magic!r}")
        arch = Architecture.from_header_line(raw[first + 1 : second].decode("ascii"))
        model = cls(arch)
        payload = np.frombuffer(raw[second + 1 :], dtype="<f8")
        if payload.shape[0] != model.params.shape[0]:
            raise ValueError(
                f"checkpoint holds {payload.shape[0]} parameters, "
                f"model needs {model.params.shape[0]}"
            )
        model.params[:] = payload
        return model


def denoiser_loss_and_grad(
    denoiser: TrainableDenoiser,
    process: EventProcess,
    x0: np.ndarray,
    x_t: np.ndarray,
    counts: np.ndarray,
    weights: np.ndarray,
):
    """Weighted event-KL objective and its parameter gradient.

    Deterministic given its inputs, so finite differences apply directly.
    Loss is in nats per dimension (mean over the batch).
    """
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.int64))
    x_t = np.atleast_2d(np.asarray(x_t, dtype=np.int64))
    counts = np.atleast_2d(np.asarray(counts, dtype=np.int64))
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    probs, cache = denoiser._forward_cache(x_t, counts)
    N, D, B = probs.shape
    loss = 0.0
    dprobs = np.zeros_like(probs)
    for n in range(N):
        for d in range(D):
            s = int(counts[n, d])
            w = float(weights[n, d])
            if s < 1 or w == 0.0:
                continue
            p = posterior_prev(process, int(x_t[n, d]), int(x0[n, d]), s)
            col = process.kernel.apply(_one_hot_vec(int(x_t[n, d]), B))
            u = process.kernel.power_apply(s - 1, probs[n, d], transpose=True)
            wvec = col * u
            z = wvec.sum()
            if z <= 0.0:
                raise UnreachableStateError(
                    f"prediction incompatible with observed state in batch row {n}"
                )
            q = wvec / z
            kl = kl_divergence(p, q)
            if not np.isfinite(kl):
                raise NonFiniteLossError(
                    f"non-finite training KL in batch row {n}, dimension {d}",
                    sample=n, dim=d,
                )
            loss += w * kl
            dw = np.where(p > 0, -p / np.where(wvec > 0, wvec, 1.0), 0.0) + 1.0 / z
            du = col * dw
            dprobs[n, d] += w * process.kernel.power_apply(s - 1, du, transpose=False)
    scale = 1.0 / (N * D)
    loss *= scale
    dprobs *= scale
    dot = (dprobs * probs).sum(axis=-1, keepdims=True)
    dlogits = probs * (dprobs - dot)
    return loss, denoiser._backward(cache, dlogits)


def _one_hot_vec(i: int, size: int) -> np.ndarray:
    v = np.zeros(size)
    v[i] = 1.0
    return v


class SGD:
    def __init__(self, lr: float = 0.1):
        self.lr = lr

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        params -= self.lr * grad


class Adam:
    def __init__(self, lr: float = 0.01, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self._m = self._v = None
        self._t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if self._m is None:
            self._m = np.zeros_like(params)
            self._v = np.zeros_like(params)
        self._t += 1
        self._m = self.beta1 * self._m + (1 - self.beta1) * grad
        self._v = self.beta2 * self._v + (1 - self.beta2) * grad**2
        mhat = self._m / (1 - self.beta1**self._t)
        vhat = self._v / (1 - self.beta2**self._t)
        params -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def make_optimizer(name: str, lr: float):
    if name == "sgd":
        return SGD(lr)
    if name in ("adam", "adaptive-moment"):
        return Adam(lr)
    raise ValueError(f"unknown optimizer {name!r} (use 'sgd' or 'adam')")


@dataclass
class TrainingReport:
    losses: np.ndarray
    steps: int

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1]) if self.steps else float("nan")


def train(
    denoiser: TrainableDenoiser,
    dataset,
    process: EventProcess,
    schedule: RateSchedule,
    steps: int,
    rng: np.random.Generator,
    optimizer: str = "adam",
    lr: float = 0.01,
    batch_size: int = 32,
) -> TrainingReport:
    """Minibatch descent on the weighted event-KL objective.

    ``dataset`` is a toy distribution or an (N, D) array of token sequences.
    Zero steps leave the parameters untouched.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    opt = make_optimizer(optimizer, lr)
    losses = np.empty(steps)
    r = process.rate
    for step in range(steps):
        if isinstance(dataset, ToyDistribution):
            x0 = dataset.sample(rng, batch_size)
        else:
            data = np.atleast_2d(np.asarray(dataset, dtype=np.int64))
            x0 = data[rng.integers(0, len(data), size=batch_size)]
        N, D = x0.shape
        counts = np.zeros((N, D), dtype=np.int64)
        weights = np.zeros((N, D))
        x_t = np.empty((N, D), dtype=np.int64)
        for n in range(N):
            t = rng.random()
            tau, beta = schedule.cumulative_and_rate(t)
            if tau > 0:
                counts[n] = rng.poisson(r * tau, size=D)
                weights[n] = beta * counts[n] / tau
            x_t[n] = forward_noise(process, x0[n], counts[n], rng)
        loss, grad = denoiser_loss_and_grad(denoiser, process, x0, x_t, counts, weights)
        if not np.isfinite(loss):
            raise NonFiniteLossError(f"training loss became non-finite at step {step}")
        opt.step(denoiser.params, grad)
        losses[step] = loss
    return TrainingReport(losses=losses, steps=steps)
