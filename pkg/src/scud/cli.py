"""Experiment driver: reproducible runs of the library from flat config files.

Configs are ``key = value`` lines with ``#`` comments and dotted keys for
nesting.  Every run snapshots its config into the output directory and writes
outputs atomically (temp file + rename); identical config and seed give
byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Optional

import numpy as np

from . import matrix_io
from .ctmc_core import EventProcess, build_event_process, event_process_from_kernel
from .denoiser import (
    Architecture,
    OracleDenoiser,
    TrainableDenoiser,
    UniformDenoiser,
    train,
)
from .loss import scud_elbo_estimate
from .processes import (
    build_blosum,
    build_gaussian_band,
    build_masking,
    build_sparse_graph,
    build_uniform,
    ring_similarity,
    synthetic_pair_probs,
)
from .sampler import SamplerConfig, rate_diagnostic, scud_sample_batch
from .schedule import fit_schedule
from .toy_data import (
    CorrelatedPair,
    Factorized,
    MarkovChain,
    ToyDistribution,
    load_dataset,
    save_dataset,
)
from .verification import run_verification


class ConfigError(ValueError):
    pass


def parse_config(path: Path) -> dict[str, str]:
    values: dict[str, str] = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key, value = key.strip(), value.strip()
        if not key or not value:
            raise ConfigError(f"{path}:{lineno}: empty key or value")
        if key in values:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
        values[key] = value
    return values


class Config:
    """Typed accessors over the flat key/value map."""

    def __init__(self, values: dict[str, str], source: Path):
        self.values = values
        self.source = source

    def get(self, key: str, default=None) -> Optional[str]:
        return self.values.get(key, default)

    def _typed(self, key, default, cast, what):
        raw = self.values.get(key)
        if raw is None:
            if default is None:
                raise ConfigError(f"{self.source}: missing required key {key!r}")
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ConfigError(f"{self.source}: key {key!r} is not a valid {what}: {raw!r}") from exc

    def get_int(self, key: str, default: Optional[int] = None) -> int:
        return self._typed(key, default, int, "integer")

    def get_float(self, key: str, default: Optional[float] = None) -> float:
        return self._typed(key, default, float, "number")

    def get_bool(self, key: str, default: Optional[bool] = None) -> bool:
        def cast(raw: str) -> bool:
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(raw)

        return self._typed(key, default, cast, "boolean")


def build_process(cfg: Config) -> EventProcess:
    kind = cfg.get("process.kind", "uniform")
    B = cfg.get_int("process.states", 8)
    gamma = cfg.get_float("process.gamma", 1.0)
    if kind == "uniform":
        return build_event_process(build_uniform(B), gamma)
    if kind == "masking":
        return build_event_process(build_masking(B), gamma)
    if kind == "gaussian":
        L = build_gaussian_band(
            B,
            bandwidth=cfg.get_float("process.bandwidth", 200.0),
            relative_distance=cfg.get_bool("process.relative_distance", True),
        )
        return build_event_process(L, gamma)
    if kind == "blosum":
        path = cfg.get("process.pair_table")
        if path is not None:
            table = matrix_io.load_matrix(Path(path))
        else:
            table = synthetic_pair_probs(cfg.get_int("process.canonical_states", 8))
        return build_blosum(table)
    if kind == "sparse_graph":
        path = cfg.get("process.similarity")
        if path is not None:
            sims = matrix_io.load_matrix(Path(path))
        else:
            sims = ring_similarity(cfg.get_int("process.frequent_states", 64))
        kernel = build_sparse_graph(
            sims,
            k=cfg.get_int("process.neighbors", 10),
            temperature=cfg.get_float("process.temperature", 0.3),
            mix_weight=cfg.get_float("process.mix_weight", 0.4),
            n_states=cfg.get_int("process.states", len(sims)),
        )
        return event_process_from_kernel(kernel, gamma)
    raise ConfigError(f"unknown process.kind {kind!r}")


def build_toy(cfg: Config, B: int) -> ToyDistribution:
    kind = cfg.get("data.kind", "correlated")
    if kind == "factorized":
        dims = cfg.get_int("data.dims", 2)
        tilt = cfg.get_float("data.tilt", 1.0)
        weights = tilt ** np.arange(B, dtype=np.float64)
        probs = np.tile(weights / weights.sum(), (dims, 1))
        return Factorized(probs)
    if kind == "correlated":
        return CorrelatedPair(B=B, weight=cfg.get_float("data.weight", 0.8))
    if kind == "markov":
        dims = cfg.get_int("data.dims", 3)
        stay = cfg.get_float("data.stickiness", 0.8)
        T = np.full((B, B), (1.0 - stay) / (B - 1))
        np.fill_diagonal(T, stay)
        return MarkovChain(initial=np.full(B, 1.0 / B), transition=T, D=dims)
    raise ConfigError(f"unknown data.kind {kind!r}")


def load_data(cfg: Config, B: int):
    """Returns (toy or None, samples or None, D)."""
    if cfg.get("data.kind", "correlated") == "file":
        path = cfg.get("data.path")
        if path is None:
            raise ConfigError("data.kind = file needs data.path")
        file_b, samples = load_dataset(Path(path))
        if file_b != B:
            raise ConfigError(f"dataset vocabulary {file_b} does not match process {B}")
        return None, samples, samples.shape[1]
    toy = build_toy(cfg, B)
    return toy, None, toy.D


def build_denoiser(cfg: Config, process: EventProcess, toy, D: int):
    kind = cfg.get("denoiser.kind", "oracle")
    if kind == "oracle":
        if toy is None:
            raise ConfigError("oracle denoiser needs a toy data distribution")
        return OracleDenoiser(toy, process)
    if kind == "uniform":
        return UniformDenoiser(process.size)
    if kind == "trainable":
        positional = cfg.get_bool("denoiser.positional", False)
        arch = Architecture(
            n_states=process.size,
            embed=cfg.get_int("denoiser.embed", 8),
            hidden=cfg.get_int("denoiser.hidden", 32),
            positional=positional,
            seq_len=D if positional else None,
            count_feature=cfg.get("denoiser.count_feature", "log1p"),
            init_seed=cfg.get_int("denoiser.init_seed", 1234),
        )
        return TrainableDenoiser(arch)
    raise ConfigError(f"unknown denoiser.kind {kind!r}")


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def snapshot_config(cfg: Config, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    shutil.copyfile(cfg.source, out_dir / "config.snapshot")


def _fmt(x: float) -> str:
    return repr(float(x))


def _prepare(args):
    cfg = Config(parse_config(Path(args.config)), Path(args.config))
    seed = args.seed if args.seed is not None else cfg.get_int("seed", 0)
    out = Path(args.out) if args.out else Path(cfg.get("out", "runs/out"))
    process = build_process(cfg)
    toy, samples, D = load_data(cfg, process.size)
    if toy is not None:
        p0 = toy.marginal_token_frequencies()
    else:
        p0 = np.bincount(samples.ravel(), minlength=process.size).astype(np.float64)
        p0 /= p0.sum()
    schedule = fit_schedule(
        process,
        p0,
        cfg.get_float("schedule.epsilon", 0.01),
        force_tabulated=cfg.get_bool("schedule.force_tabulated", False),
    )
    return cfg, seed, out, process, toy, samples, D, schedule


def cmd_verify(args) -> int:
    results = run_verification(seed=args.seed if args.seed is not None else 0)
    width = max(len(r.name) for r in results)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.detail}")
        failures += 0 if r.passed else 1
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 1 if failures else 0


def cmd_train(args) -> int:
    cfg, seed, out, process, toy, samples, D, schedule = _prepare(args)
    denoiser = build_denoiser(cfg, process, toy, D)
    if not isinstance(denoiser, TrainableDenoiser):
        raise ConfigError("train needs denoiser.kind = trainable")
    rng = np.random.default_rng(seed)
    report = train(
        denoiser,
        toy if toy is not None else samples,
        process,
        schedule,
        steps=cfg.get_int("train.steps", 200),
        rng=rng,
        optimizer=cfg.get("train.optimizer", "adam"),
        lr=cfg.get_float("train.lr", 0.01),
        batch_size=cfg.get_int("train.batch", 32),
    )
    snapshot_config(cfg, out)
    denoiser.save(out / "checkpoint.ckpt")
    lines = ["step,loss"]
    lines += [f"{i},{_fmt(v)}" for i, v in enumerate(report.losses)]
    atomic_write_text(out / "train_loss.csv", "\n".join(lines) + "\n")
    print(f"trained {report.steps} steps, final loss {report.final_loss:.6f} nats/dim")
    print(f"wrote {out / 'checkpoint.ckpt'} and {out / 'train_loss.csv'}")
    return 0


def _resolve_denoiser(cfg, args, process, toy, D):
    if args.checkpoint:
        return TrainableDenoiser.load(Path(args.checkpoint))
    return build_denoiser(cfg, process, toy, D)


def cmd_elbo(args) -> int:
    cfg, seed, out, process, toy, samples, D, schedule = _prepare(args)
    denoiser = _resolve_denoiser(cfg, args, process, toy, D)
    rng = np.random.default_rng(seed)
    if toy is not None:
        x0 = toy.sample(rng)
    else:
        x0 = samples[int(rng.integers(0, len(samples)))]
    est = scud_elbo_estimate(
        process,
        schedule,
        denoiser,
        x0,
        rng,
        n_samples=cfg.get_int("elbo.samples", 1000),
        threads=cfg.get_int("threads", 1),
    )
    snapshot_config(cfg, out)
    lines = ["sample_index,t,denoising_term,convergence_term,total"]
    for i in range(est.n_samples):
        lines.append(
            f"{i},{_fmt(est.sample_t[i])},{_fmt(est.sample_denoising[i])},"
            f"{_fmt(est.sample_convergence[i])},{_fmt(est.sample_total[i])}"
        )
    atomic_write_text(out / "elbo.csv", "\n".join(lines) + "\n")
    bits = est.total / np.log(2.0)
    print(
        f"loss {est.total:.6f} nats/dim ({bits:.6f} bits/dim): "
        f"denoising {est.denoising:.6f} + convergence {est.convergence:.6f}, "
        f"std error {est.total_std_error:.2e}"
    )
    print(f"wrote {out / 'elbo.csv'}")
    return 0


def cmd_sample(args) -> int:
    cfg, seed, out, process, toy, samples, D, schedule = _prepare(args)
    denoiser = _resolve_denoiser(cfg, args, process, toy, D)
    rng = np.random.default_rng(seed)
    n = args.count if args.count is not None else cfg.get_int("sample.count", 100)
    budget = args.budget if args.budget is not None else cfg.get_int("sample.budget", 64)
    sampler = SamplerConfig(process=process, schedule=schedule, denoiser=denoiser, budget=budget)
    ids, _ = scud_sample_batch(sampler, D, n, rng)
    snapshot_config(cfg, out)
    text = "\n".join(" ".join(str(int(v)) for v in row) for row in ids) + "\n"
    atomic_write_text(out / "samples.txt", text)
    print(f"wrote {n} samples to {out / 'samples.txt'}")
    return 0


def cmd_schedule(args) -> int:
    cfg, seed, out, process, toy, samples, D, schedule = _prepare(args)
    points = cfg.get_int("schedule.grid", 512)
    snapshot_config(cfg, out)
    lines = ["t,cumulative,rate,expected_mi"]
    for t in np.linspace(0.0, 1.0, points):
        tau, beta = schedule.cumulative_and_rate(float(t))
        lines.append(f"{_fmt(t)},{_fmt(tau)},{_fmt(beta)},{_fmt(schedule.schedule_mi(tau))}")
    atomic_write_text(out / "schedule.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'schedule.csv'} ({points} grid points)")
    return 0


def cmd_diagnose(args) -> int:
    cfg, seed, out, process, toy, samples, D, schedule = _prepare(args)
    if toy is None:
        raise ConfigError("diagnose needs a toy data distribution")
    denoiser = _resolve_denoiser(cfg, args, process, toy, D)
    rng = np.random.default_rng(seed)
    diag = rate_diagnostic(
        process,
        schedule,
        denoiser,
        toy,
        n_paths=cfg.get_int("diagnose.paths", 200),
        time_bins=cfg.get_int("diagnose.bins", 64),
        rng=rng,
        mode=cfg.get("diagnose.mode", "scud"),
    )
    snapshot_config(cfg, out)
    lines = ["bin_t,forward_rate,backward_rate,diff"]
    for bin_t, fwd, bwd, diff in diag.rows():
        lines.append(f"{_fmt(bin_t)},{_fmt(fwd)},{_fmt(bwd)},{_fmt(diff)}")
    atomic_write_text(out / "rates.csv", "\n".join(lines) + "\n")
    print(f"wrote {out / 'rates.csv'}")
    return 0


def cmd_gen_data(args) -> int:
    cfg, seed, out, process, toy, samples, D, schedule = _prepare(args)
    if toy is None:
        raise ConfigError("gen-data needs a toy data distribution")
    rng = np.random.default_rng(seed)
    n = args.count if args.count is not None else cfg.get_int("data.count", 1000)
    draws = toy.sample(rng, n)
    snapshot_config(cfg, out)
    tmp = out / "data.txt"
    save_dataset(tmp, draws, toy.B)
    print(f"wrote {n} sequences to {tmp}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="scud",
        description="Schedule-conditioned discrete diffusion experiment driver",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_config=True):
        if needs_config:
            p.add_argument("--config", required=True, help="flat key=value config file")
            p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("verify", help="run the numerical verification suite")
    add_common(p, needs_config=False)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("train", help="train a denoiser")
    add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("elbo", help="estimate the loss for one data point")
    add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_elbo)

    p = sub.add_parser("sample", help="draw sequences from the reverse sampler")
    add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("schedule", help="export the fitted rate schedule as CSV")
    add_common(p)
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("diagnose", help="forward vs backward rate diagnostic")
    add_common(p)
    p.add_argument("--checkpoint", default=None)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("gen-data", help="write toy samples to a dataset file")
    add_common(p)
    p.add_argument("--count", type=int, default=None)
    p.set_defaults(func=cmd_gen_data)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
