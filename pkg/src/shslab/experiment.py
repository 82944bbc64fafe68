"""Switched-system experiment: random scenario sequence, probed windows,
detection, scoring, and file artifacts.

Each interval [k tau, (k+1) tau) runs one scenario. The probe occupies
[k tau, k tau + tau0) and is recorded together with the outputs; the state
then relaxes unforced to the next boundary (propagated in one exact step).
The state vector carries over interval boundaries unchanged.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .detection import DetectionReport, MeasurementWindow, detect_sequence
from .errors import ConfigError, NumericalError
from .linsys import discretize_zoh, eig_sorted, simulate
from .probing import ProbingDesign
from .ssbuild import ScenarioFamily
from .util import dump_json


@dataclass(frozen=True)
class SwitchingSequence:
    alphas: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    family: ScenarioFamily
    probe: ProbingDesign
    tau: float
    tau0: float
    ts: float
    K: int
    seed: int
    noise_sigma: float = 0.0
    subsample: int = 10
    x0_mode: str = "zero"          # 'zero' | 'random' (max-norm scaled to mu0)
    threads: int = 1
    probe_override_R: float | None = None   # e.g. 0.0 for the passive ablation

    def __post_init__(self):
        if self.K < 1:
            raise ConfigError(f"K must be >= 1, got {self.K}")
        if not (self.tau > 0 and self.tau0 > 0 and self.ts > 0):
            raise ConfigError("tau, tau0 and ts must all be > 0")
        if self.tau0 > self.tau / 10.0 + 1e-15:
            raise ConfigError(
                f"detection window tau0={self.tau0} must be <= tau/10={self.tau / 10}")
        for name, span in (("tau", self.tau), ("tau0", self.tau0)):
            ratio = span / self.ts
            if abs(ratio - round(ratio)) > 1e-6:
                raise ConfigError(
                    f"{name}={span} is not a whole number of samples at ts={self.ts}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.x0_mode not in ("zero", "random"):
            raise ConfigError(f"x0_mode must be 'zero' or 'random', got '{self.x0_mode}'")
        if self.subsample < 1:
            raise ConfigError(f"subsample must be >= 1, got {self.subsample}")

    @property
    def window_steps(self) -> int:
        return int(round(self.tau0 / self.ts))

    @property
    def applied_R(self) -> float:
        return self.probe.R if self.probe_override_R is None else self.probe_override_R


@dataclass(frozen=True, eq=False)
class ExperimentResult:
    config: ExperimentConfig
    sequence: SwitchingSequence
    report: DetectionReport
    windows: tuple[MeasurementWindow, ...]
    boundary_states: np.ndarray    # (K+1, n), state at each interval boundary

    @property
    def accuracy(self) -> float:
        return self.report.accuracy


def _rngs(seed: int):
    children = np.random.SeedSequence(seed).spawn(3)
    return tuple(np.random.default_rng(c) for c in children)


def generate_sequence(config: ExperimentConfig) -> SwitchingSequence:
    """K i.i.d. uniform draws over the scenario set, deterministic per seed."""
    rng_seq, _, _ = _rngs(config.seed)
    draws = rng_seq.integers(0, len(config.family), size=config.K)
    return SwitchingSequence(alphas=tuple(int(a) for a in draws))


def run_experiment(config: ExperimentConfig,
                   sequence: SwitchingSequence | None = None) -> ExperimentResult:
    """Simulate the switched truth with probing, detect per window, score."""
    if sequence is None:
        sequence = generate_sequence(config)
    family = config.family
    m = len(family)
    for k, a in enumerate(sequence.alphas):
        if not 0 <= a < m:
            raise ConfigError(f"sequence entry {k} = {a} outside scenario set 0..{m - 1}")
    if len(sequence) != config.K:
        raise ConfigError(
            f"sequence length {len(sequence)} differs from K={config.K}")

    dmodels = [discretize_zoh(sc, config.ts) for sc in family]
    # exact unforced propagation across the probe-off remainder of an interval
    hold = [scipy.linalg.expm(sc.A * (config.tau - config.tau0)) for sc in family]

    _, rng_noise, rng_x0 = _rngs(config.seed)
    n = family[0].n
    q = dmodels[0].Bd2.shape[1]
    steps = config.window_steps

    if config.x0_mode == "zero":
        x = np.zeros(n)
    else:
        x = rng_x0.standard_normal(n)
        scale = config.probe.mu0 if config.probe.mu0 > 0 else 1.0
        x *= scale / np.max(np.abs(x))

    u1_win = np.zeros((steps + 1, 3))
    u1_win[:steps, config.probe.channel] = config.applied_R
    u2_win = np.zeros((steps + 1, q))

    windows: list[MeasurementWindow] = []
    boundaries = np.empty((config.K + 1, n))
    for k, a in enumerate(sequence.alphas):
        boundaries[k] = x
        trace = simulate(dmodels[a], x, u1_win, u2_win, steps,
                         t0=k * config.tau, record_states=True)
        y = trace.outputs
        if config.noise_sigma > 0:
            y = y + config.noise_sigma * rng_noise.standard_normal(y.shape)
        windows.append(MeasurementWindow(
            t_start=k * config.tau, ts=config.ts, samples=y,
            u1=u1_win, u2=u2_win, probe=config.probe))
        x = hold[a] @ trace.final_state
        if not np.all(np.isfinite(x)):
            raise NumericalError(
                f"simulation diverged in interval {k} (scenario {a}); "
                f"the scenario model is unstable")
    boundaries[config.K] = x

    report = detect_sequence(dmodels, windows, truth=list(sequence.alphas),
                             subsample=config.subsample, threads=config.threads)
    return ExperimentResult(config=config, sequence=sequence, report=report,
                            windows=tuple(windows), boundary_states=boundaries)


# ---------------------------------------------------------------------------
# eigenvalue reporting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class EigenReport:
    alphas: tuple[int, ...]
    names: tuple[str, ...]
    eigenvalues: tuple[np.ndarray, ...]
    max_real: tuple[float, ...]

    @property
    def all_hurwitz(self) -> bool:
        return all(mx < 0.0 for mx in self.max_real)

    @property
    def most_damped(self) -> int:
        """Scenario whose dominant (largest-real-part) mode is most negative."""
        return int(np.argmin(self.max_real))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["alpha", "re", "im"])
            for a, eig in zip(self.alphas, self.eigenvalues):
                for lam in eig:
                    writer.writerow([a, repr(float(lam.real)), repr(float(lam.imag))])


def eigen_report(family: ScenarioFamily) -> EigenReport:
    eigs = tuple(eig_sorted(sc.A) for sc in family)
    return EigenReport(
        alphas=tuple(sc.alpha for sc in family),
        names=tuple(sc.name for sc in family),
        eigenvalues=eigs,
        max_real=tuple(float(e.real.max()) for e in eigs))


# ---------------------------------------------------------------------------
# file artifacts
# ---------------------------------------------------------------------------


def _write_sequence_csv(path, rows, header):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_outputs(result: ExperimentResult, out_dir, windows_mode: str = "strided") -> None:
    """Emit truth.csv, detected.csv, sequence.csv, report.json and windows/.

    windows_mode: 'strided' records every subsample-th sample (the estimator
    grid), 'full' records every sample, 'none' skips window files. The stride
    and periods land in windows/meta.json so a replay can rebuild the exact
    estimation problem.
    """
    if windows_mode not in ("strided", "full", "none"):
        raise ConfigError(f"unknown windows mode '{windows_mode}'")
    os.makedirs(out_dir, exist_ok=True)
    cfg = result.config
    truth = list(result.sequence.alphas)
    detected = result.report.detected

    _write_sequence_csv(os.path.join(out_dir, "truth.csv"),
                        list(enumerate(truth, start=1)), ["k", "alpha"])
    _write_sequence_csv(os.path.join(out_dir, "detected.csv"),
                        list(enumerate(detected, start=1)), ["k", "alpha"])
    _write_sequence_csv(os.path.join(out_dir, "sequence.csv"),
                        [(k + 1, t, d) for k, (t, d) in enumerate(zip(truth, detected))],
                        ["k", "true", "detected"])
    dump_json(result.report.to_json(), os.path.join(out_dir, "report.json"))

    if windows_mode == "none":
        return
    stride = 1 if windows_mode == "full" else cfg.subsample
    win_dir = os.path.join(out_dir, "windows")
    os.makedirs(win_dir, exist_ok=True)
    p = result.windows[0].samples.shape[1] if result.windows else 0
    q = result.windows[0].u2.shape[1] if result.windows else 0
    dump_json({
        "ts": cfg.ts * stride,
        "ts_simulated": cfg.ts,
        "stride_applied": stride,
        "tau0": cfg.tau0,
        "n_outputs": p,
        "n_u2": q,
        "window_starts": [w.t_start for w in result.windows],
    }, os.path.join(win_dir, "meta.json"))
    header = (["t"] + [f"y{i}" for i in range(p)]
              + [f"u1_{i}" for i in range(3)] + [f"u2_{i}" for i in range(q)])
    for k, w in enumerate(result.windows):
        idx = np.arange(0, w.steps + 1, stride)
        times = w.t_start + w.ts * idx
        with open(os.path.join(win_dir, f"window_{k:04d}.csv"), "w",
                  newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for row, i in enumerate(idx):
                writer.writerow([repr(float(times[row]))]
                                + [repr(float(v)) for v in w.samples[i]]
                                + [repr(float(v)) for v in w.u1[i]]
                                + [repr(float(v)) for v in w.u2[i]])


def read_windows(win_dir, probe: ProbingDesign | None = None) -> list[MeasurementWindow]:
    """Rebuild MeasurementWindows from a windows/ directory written above.

    The returned windows live on the recorded grid; detect them with
    subsample=1 against a family discretized at the recorded ts.
    """
    meta = os.path.join(win_dir, "meta.json")
    if not os.path.exists(meta):
        raise ConfigError(f"missing {meta}")
    with open(meta, "r", encoding="utf-8") as fh:
        info = json.load(fh)
    ts = float(info["ts"])
    files = sorted(f for f in os.listdir(win_dir)
                   if f.startswith("window_") and f.endswith(".csv"))
    windows = []
    for fname in files:
        with open(os.path.join(win_dir, fname), "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader]
        arr = np.array(rows)
        p = int(info["n_outputs"])
        q = int(info["n_u2"])
        if arr.shape[1] != 1 + p + 3 + q:
            raise ConfigError(f"{fname}: column count does not match meta.json")
        windows.append(MeasurementWindow(
            t_start=arr[0, 0], ts=ts,
            samples=arr[:, 1:1 + p],
            u1=arr[:, 1 + p:4 + p],
            u2=arr[:, 4 + p:],
            probe=probe))
    return windows
