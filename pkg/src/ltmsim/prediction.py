"""RSRP filtering (L1 / L3) and LMMSE prediction of future L3 values.

Every class here is batched: state arrays carry an arbitrary leading shape
(e.g. ``(n_ues, n_sectors)``) so one call updates every stream at once. A
leading shape of ``()`` gives a single stream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import PredictionConfig


def l1_filter(raw_dbm) -> float:
    """Linear-domain mean of a window of RSRP samples, in dBm."""
    raw = np.asarray(raw_dbm, dtype=float)
    if raw.size == 0:
        raise ValueError("empty L1 window")
    return float(10 * np.log10(np.mean(10 ** (raw / 10))))


@dataclass
class FilterState:
    """Single-stream L1/L3 filter state."""

    l1_window: list
    l3_value: float | None
    a: float = 0.5
    window: int = 5


def l3_filter(state: FilterState, m: float) -> float:
    """``F_n = (1 - a) F_{n-1} + a M_n``; the first sample initialises F."""
    if not 0 < state.a <= 1:
        raise ValueError("L3 coefficient must be in (0, 1]")
    state.l3_value = m if state.l3_value is None else (1 - state.a) * state.l3_value + state.a * m
    return state.l3_value


class L1L3Filter:
    """Batched L1 sliding-window mean followed by L3 exponential smoothing."""

    def __init__(self, shape: tuple[int, ...], window: int = 5, a: float = 0.5):
        if not 0 < a <= 1:
            raise ValueError("L3 coefficient must be in (0, 1]")
        self.window = window
        self.a = a
        self.buf = np.zeros(tuple(shape) + (window,))
        self.count = 0
        self.l1 = np.full(shape, np.nan)
        self.l3 = np.full(shape, np.nan)

    def update(self, raw_dbm: np.ndarray) -> np.ndarray:
        self.buf[..., self.count % self.window] = 10 ** (np.asarray(raw_dbm) / 10)
        self.count += 1
        n = min(self.count, self.window)
        self.l1 = 10 * np.log10(self.buf[..., :n].mean(axis=-1))
        if self.count == 1:
            self.l3 = self.l1.copy()
        else:
            self.l3 = (1 - self.a) * self.l3 + self.a * self.l1
        return self.l3


class LmmsePredictor:
    """Predicts ``s[t + k]`` from ``s[t], ..., s[t - p + 1]`` as ``w0 + w . s_t``.

    The input mean, covariance of the regressor vector and its cross-covariance
    with the value ``k`` samples later are tracked with exponential forgetting;
    the weights are the ridge-regularised normal-equation solution. While
    fewer than ``p + k + warmup - 1`` samples have arrived (that is, fewer
    than ``warmup`` regressor/target pairs), :meth:`predict` passes the
    latest value through and reports ``cold``.
    """

    def __init__(
        self,
        shape: tuple[int, ...] = (),
        order: int = 8,
        horizon: int = 1,
        forgetting: float = 0.99,
        ridge: float = 1e-6,
        warmup: int | None = None,
    ):
        if horizon < 1:
            raise ValueError("horizon must be at least one sample")
        self.shape = tuple(shape)
        self.p = order
        self.k = horizon
        self.lam = forgetting
        self.ridge = ridge
        self.warmup = order if warmup is None else warmup
        self.L = order + horizon
        self.hist = np.zeros(self.shape + (self.L,))
        self.pos = -1  # slot of the newest sample
        self.n_seen = 0
        self.n_pairs = 0
        self.mu_x = np.zeros(self.shape + (order,))
        self.mu_y = np.zeros(self.shape)
        self.C = np.zeros(self.shape + (order, order))
        self.c = np.zeros(self.shape + (order,))
        self.w = np.zeros(self.shape + (order,))
        self.w0 = np.zeros(self.shape)
        self.singular = False
        self._eye = np.eye(order)
        self._lags = np.arange(order)

    @classmethod
    def from_config(cls, shape, cfg: PredictionConfig, sample_period_s: float) -> "LmmsePredictor":
        k = max(1, int(round(cfg.horizon_s / sample_period_s)))
        return cls(shape, cfg.order, k, cfg.forgetting, cfg.ridge)

    def _window(self, newest_offset: int) -> np.ndarray:
        idx = (self.pos - newest_offset - self._lags) % self.L
        return self.hist[..., idx]

    @property
    def cold(self) -> bool:
        return self.n_pairs < max(1, self.warmup)

    def update(self, value) -> tuple[np.ndarray, np.ndarray]:
        """Ingest the newest L3 value(s) and re-solve; returns (w0, w)."""
        self.pos = (self.pos + 1) % self.L
        self.hist[..., self.pos] = value
        self.n_seen += 1
        if self.n_seen < self.L:
            return self.w0, self.w
        x = self._window(self.k)
        y = self.hist[..., self.pos]
        if self.n_pairs == 0:
            self.mu_x = x.copy()
            self.mu_y = np.array(y, dtype=float)
        else:
            g = 1.0 - self.lam
            dx = x - self.mu_x
            dy = y - self.mu_y
            self.mu_x = self.mu_x + g * dx
            self.mu_y = self.mu_y + g * dy
            self.C = self.lam * (self.C + g * dx[..., :, None] * dx[..., None, :])
            self.c = self.lam * (self.c + g * dx * dy[..., None])
        self.n_pairs += 1
        self._solve()
        return self.w0, self.w

    def _solve(self) -> None:
        A = self.C + self.ridge * self._eye
        try:
            w = np.linalg.solve(A, self.c[..., None])[..., 0]
            self.singular = False
        except np.linalg.LinAlgError:
            self.singular = True
            if self.shape == ():
                return
            w = self.w.copy()
            flat_A = A.reshape(-1, self.p, self.p)
            flat_c = self.c.reshape(-1, self.p)
            flat_w = w.reshape(-1, self.p)
            for i in range(flat_A.shape[0]):
                try:
                    flat_w[i] = np.linalg.solve(flat_A[i], flat_c[i])
                except np.linalg.LinAlgError:
                    pass
        self.w = w
        self.w0 = self.mu_y - np.sum(self.w * self.mu_x, axis=-1)

    def predict(self) -> tuple[np.ndarray, bool]:
        """(prediction of the value ``k`` samples ahead, cold flag)."""
        if self.n_seen == 0:
            raise RuntimeError("no samples observed")
        latest = self.hist[..., self.pos]
        if self.cold:
            return np.array(latest, dtype=float), True
        s = self._window(0)
        return self.w0 + np.sum(self.w * s, axis=-1), False


def update_and_solve(state: LmmsePredictor, new_l3) -> tuple[np.ndarray, np.ndarray]:
    return state.update(new_l3)


def predict(state: LmmsePredictor) -> tuple[np.ndarray, bool]:
    return state.predict()


def prediction_mse(history, horizon: int, order: int = 8, forgetting: float = 0.99,
                   ridge: float = 1e-6, validation: float = 0.3) -> float:
    """Empirical MSE of ``horizon``-step predictions over the tail of ``history``."""
    s = np.asarray(history, dtype=float)
    n = len(s)
    start = int(n * (1 - validation))
    pred = LmmsePredictor((), order, horizon, forgetting, ridge)
    errs = []
    for t in range(n - horizon):
        pred.update(s[t])
        if t >= start:
            val, cold = pred.predict()
            if not cold:
                errs.append(float(val) - s[t + horizon])
    return float(np.mean(np.square(errs))) if errs else float("inf")


def select_horizon(candidate_deltas, history, sample_period_s: float,
                   cfg: PredictionConfig | None = None) -> float:
    """Candidate horizon (seconds) with the smallest validation MSE.

    Falls back to the configured horizon when the history cannot support
    any candidate.
    """
    cfg = cfg or PredictionConfig()
    candidates = list(candidate_deltas)
    if len(candidates) == 1:
        return candidates[0]
    hist = np.asarray(history, dtype=float) if history is not None else np.zeros(0)
    best, best_mse = cfg.horizon_s, float("inf")
    for delta in candidates:
        k = max(1, int(round(delta / sample_period_s)))
        if len(hist) < 3 * (cfg.order + k):
            continue
        mse = prediction_mse(hist, k, cfg.order, cfg.forgetting, cfg.ridge)
        if mse < best_mse:
            best, best_mse = delta, mse
    return best
