"""Scenario identification from one measurement window.

For each candidate scenario the unknown window-start state is estimated by
stacked least squares against the recorded outputs (with the recorded probe
and aux-voltage feedthrough removed), and the scenario with the smallest
fit residual wins. Ties break toward the lowest scenario index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EstimationError
from .linsys import DiscreteStateSpace, simulate
from .probing import ProbingDesign
from .util import parallel_map


@dataclass(frozen=True, eq=False)
class MeasurementWindow:
    """Uniformly sampled output record over one detection window, together
    with the input records the estimator must discount."""

    t_start: float
    ts: float
    samples: np.ndarray       # (N+1, p)
    u1: np.ndarray            # (N+1, 3); row N only pads the record
    u2: np.ndarray            # (N+1, q)
    probe: ProbingDesign | None = None

    def __post_init__(self):
        for fname in ("samples", "u1", "u2"):
            arr = np.array(getattr(self, fname), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, fname, arr)
        if not self.ts > 0:
            raise EstimationError(f"sample period must be > 0, got {self.ts}")
        rows = self.samples.shape[0]
        if rows < 2:
            raise EstimationError("window needs at least two samples")
        if self.u1.shape != (rows, 3):
            raise EstimationError(
                f"u1 record must be ({rows}, 3), got {self.u1.shape}")
        if self.u2.ndim != 2 or self.u2.shape[0] != rows:
            raise EstimationError(
                f"u2 record must have {rows} rows, got {self.u2.shape}")
        if self.probe is not None:
            expected = int(round(self.probe.tau0 / self.ts)) + 1
            if rows != expected:
                raise EstimationError(
                    f"window has {rows} samples, probe design implies {expected}")

    @property
    def steps(self) -> int:
        return self.samples.shape[0] - 1


@dataclass(frozen=True, eq=False)
class ScenarioVerdict:
    detected: int
    residuals: np.ndarray     # (m,)
    x0_hat: np.ndarray        # (m, n)

    def __post_init__(self):
        res = np.asarray(self.residuals, dtype=float)
        if not np.all(np.isfinite(res)):
            raise EstimationError("verdict residuals must be finite")
        if self.detected != int(np.argmin(res)):
            raise EstimationError("detected scenario must be the residual argmin")


@dataclass(frozen=True, eq=False)
class DetectionReport:
    """Per-window verdicts, optionally scored against a truth sequence."""

    verdicts: tuple[ScenarioVerdict, ...]
    truth: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "verdicts", tuple(self.verdicts))
        if self.truth is not None:
            truth = tuple(int(a) for a in self.truth)
            if len(truth) != len(self.verdicts):
                raise EstimationError("truth length differs from verdict count")
            object.__setattr__(self, "truth", truth)

    @property
    def detected(self) -> list[int]:
        return [v.detected for v in self.verdicts]

    @property
    def matches(self) -> int | None:
        if self.truth is None:
            return None
        return sum(1 for v, t in zip(self.verdicts, self.truth) if v.detected == t)

    @property
    def accuracy(self) -> float | None:
        if self.truth is None or not self.verdicts:
            return None
        return self.matches / len(self.verdicts)

    def to_json(self) -> dict:
        out: dict = {
            "windows": [
                {
                    "k": k,
                    "detected": v.detected,
                    "residuals": [float(r) for r in v.residuals],
                }
                for k, v in enumerate(self.verdicts)
            ],
        }
        if self.truth is not None:
            for k, entry in enumerate(out["windows"]):
                entry["true"] = self.truth[k]
            out["matches"] = self.matches
            out["accuracy"] = self.accuracy
        return out


def sample_indices(steps: int, subsample: int) -> np.ndarray:
    """Estimator grid: every subsample-th sample index, always including 0."""
    if subsample < 1:
        raise EstimationError(f"subsample must be >= 1, got {subsample}")
    return np.arange(0, steps + 1, subsample)


def observability_stack(dmodel: DiscreteStateSpace, steps: int,
                        subsample: int = 1) -> np.ndarray:
    """Stacked map x0 -> [y_k]_{k in grid} for the free response."""
    idx = sample_indices(steps, subsample)
    P = np.linalg.matrix_power(dmodel.Ad, subsample)
    blocks = np.empty((idx.size, dmodel.p, dmodel.n))
    Phi = np.eye(dmodel.n)
    for row in range(idx.size):
        blocks[row] = dmodel.C @ Phi
        if row + 1 < idx.size:
            Phi = P @ Phi
    return blocks.reshape(idx.size * dmodel.p, dmodel.n)


def forced_outputs(dmodel: DiscreteStateSpace, window: MeasurementWindow) -> np.ndarray:
    """Outputs the scenario would produce from zero initial state under the
    window's recorded inputs (includes the D2 u2 feedthrough)."""
    return simulate(dmodel, None, window.u1, window.u2, window.steps).outputs


def estimate_initial_state(dmodel: DiscreteStateSpace, window: MeasurementWindow,
                           subsample: int = 10,
                           stack: np.ndarray | None = None,
                           forced: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Least-squares window-start state and the attained fit residual.

    Rank-deficient observability gives the minimum-norm estimate; an all-zero
    observability map is reported as an error.
    """
    if window.samples.shape[1] != dmodel.p:
        raise EstimationError(
            f"window has {window.samples.shape[1]} outputs, model has {dmodel.p}")
    if abs(window.ts - dmodel.ts) > 1e-12 * max(window.ts, dmodel.ts):
        raise EstimationError(
            f"window sampled at {window.ts}, model discretized at {dmodel.ts}")
    steps = window.steps
    if stack is None:
        stack = observability_stack(dmodel, steps, subsample)
    if not np.any(stack):
        raise EstimationError("all-zero observability map; model is unobservable")
    if forced is None:
        forced = forced_outputs(dmodel, window)
    idx = sample_indices(steps, subsample)
    y_free = (window.samples - forced)[idx].reshape(-1)
    x0_hat, _, _, _ = np.linalg.lstsq(stack, y_free, rcond=None)
    residual = float(np.linalg.norm(stack @ x0_hat - y_free))
    return x0_hat, residual


class _ForcedCache:
    """Reuse forced responses across windows that share input records, which
    is the common case for a fixed probe."""

    def __init__(self, models):
        self.models = models
        self.u1 = None
        self.u2 = None
        self.forced = None

    def get(self, window: MeasurementWindow) -> list[np.ndarray]:
        if (self.forced is None
                or self.u1.shape != window.u1.shape
                or self.u2.shape != window.u2.shape
                or not np.array_equal(self.u1, window.u1)
                or not np.array_equal(self.u2, window.u2)):
            self.u1 = window.u1
            self.u2 = window.u2
            self.forced = [forced_outputs(m, window) for m in self.models]
        return self.forced


def detect(models: list[DiscreteStateSpace], window: MeasurementWindow,
           subsample: int = 10, threads: int = 1,
           stacks: list[np.ndarray] | None = None,
           forced: list[np.ndarray] | None = None) -> ScenarioVerdict:
    """Fit every scenario to the window and pick the minimum-residual one."""
    if not models:
        raise EstimationError("scenario list is empty")

    def fit(i):
        try:
            return estimate_initial_state(
                models[i], window, subsample=subsample,
                stack=None if stacks is None else stacks[i],
                forced=None if forced is None else forced[i])
        except EstimationError as exc:
            raise EstimationError(f"scenario {i}: {exc}") from exc

    fits = parallel_map(fit, list(range(len(models))), threads=threads)
    residuals = np.array([r for _, r in fits])
    x0_hat = np.vstack([x for x, _ in fits])
    return ScenarioVerdict(detected=int(np.argmin(residuals)),
                           residuals=residuals, x0_hat=x0_hat)


def detect_sequence(models: list[DiscreteStateSpace],
                    windows: list[MeasurementWindow],
                    truth: list[int] | None = None,
                    subsample: int = 10, threads: int = 1) -> DetectionReport:
    """Run detect over an ordered window list, reusing per-scenario
    observability stacks when windows share a length."""
    if truth is not None and len(truth) != len(windows):
        raise EstimationError("truth sequence length differs from window count")
    if not windows:
        return DetectionReport(verdicts=(), truth=tuple(truth or ()) if truth is not None else None)

    stacks_by_steps: dict[int, list[np.ndarray]] = {}
    cache = _ForcedCache(models)
    verdicts = []
    for window in windows:
        steps = window.steps
        if steps not in stacks_by_steps:
            stacks_by_steps[steps] = [
                observability_stack(m, steps, subsample) for m in models]
        verdicts.append(detect(models, window, subsample=subsample, threads=threads,
                               stacks=stacks_by_steps[steps],
                               forced=cache.get(window)))
    return DetectionReport(verdicts=tuple(verdicts),
                           truth=tuple(truth) if truth is not None else None)
