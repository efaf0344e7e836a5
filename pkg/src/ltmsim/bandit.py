"""KernelUCB target selection with an order-1 arc-cosine kernel, plus the HO reward."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import blas

from .config import BanditConfig


def arccos_kernel(x, y) -> float:
    """Order-1 arc-cosine kernel; zero vectors give 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch {x.shape} vs {y.shape}")
    return float(arccos_gram(x[None, :], y[None, :])[0, 0])


def arccos_gram(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Kernel matrix ``K[i, j] = k(X[i], Y[j])``."""
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    dot = X @ Y.T
    denom = nx[:, None] * ny[None, :]
    safe = np.where(denom > 0, denom, 1.0)
    cos = np.clip(dot / safe, -1.0, 1.0)
    theta = np.arccos(cos)
    # sin(theta) via sqrt(1 - cos^2) loses accuracy near theta = 0; use arccos output.
    J = np.sin(theta) + (np.pi - theta) * cos
    K = denom * J / np.pi
    return np.where(denom > 0, K, 0.0)


def _diag_arccos(X: np.ndarray) -> np.ndarray:
    # k(x, x) = |x|^2 exactly for order 1.
    return np.einsum("ij,ij->i", X, X)


class KernelUCB:
    """Shared kernel ridge regressor over arm contexts with a UCB bonus.

    The support holds at most ``window`` (context, reward) pairs in fixed
    slots; once full, the oldest slot is overwritten. ``(K + ridge I)^-1`` is
    kept over the occupied slots (zero rows and columns elsewhere) with
    in-place rank-one updates, and rebuilt from scratch every ``refresh``
    changes to bound round-off drift. Rewards are stored raw and divided by
    the running maximum magnitude when scoring, so a positive rescaling of
    every reward leaves the decisions unchanged.
    """

    def __init__(self, dim: int, window: int = 500, ridge: float = 1.0,
                 exploration: float = 0.5, refresh: int = 1000):
        if window < 1 or ridge <= 0:
            raise ValueError("window must be >= 1 and ridge > 0")
        self.dim = dim
        self.window = window
        self.ridge = ridge
        self.eta = exploration
        self.refresh = refresh
        self._X = np.zeros((window, dim))
        self._r = np.zeros(window)
        self._Kinv = np.zeros((window, window))
        self.n_seen = 0
        self.r_max = 0.0
        self._changes = 0

    @classmethod
    def from_config(cls, dim: int, cfg: BanditConfig) -> "KernelUCB":
        return cls(dim, cfg.window, cfg.ridge, cfg.exploration)

    @property
    def size(self) -> int:
        return min(self.n_seen, self.window)

    def _slots(self) -> np.ndarray:
        """Occupied slots, oldest first."""
        if self.n_seen <= self.window:
            return np.arange(self.n_seen)
        return (self.n_seen + np.arange(self.window)) % self.window

    @property
    def X(self) -> np.ndarray:
        return self._X[self._slots()]

    @property
    def r(self) -> np.ndarray:
        return self._r[self._slots()]

    @property
    def Kinv(self) -> np.ndarray:
        idx = self._slots()
        return self._Kinv[np.ix_(idx, idx)]

    def _norm_rewards(self) -> np.ndarray:
        n = self.size
        return self._r[:n] / self.r_max if self.r_max > 0 else self._r[:n]

    def posterior(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Mean and standard deviation of the regressor at each row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        kxx = _diag_arccos(X)
        n = self.size
        if n == 0:
            return np.zeros(len(X)), np.sqrt(kxx)
        Kx = arccos_gram(X, self._X[:n])
        A = Kx @ self._Kinv[:n, :n]
        mu = A @ self._norm_rewards()
        var = kxx - np.einsum("ij,ij->i", A, Kx)
        return mu, np.sqrt(np.maximum(var, 0.0))

    def scores(self, X: np.ndarray) -> np.ndarray:
        mu, sd = self.posterior(X)
        return mu + self.eta * sd

    def select_arm(self, contexts: np.ndarray, rsrp_dbm=None, arm_ids=None) -> int:
        """Index of the arm maximizing the UCB score.

        Ties go to the highest ``rsrp_dbm``, then the lowest ``arm_ids``.
        """
        s = self.scores(contexts)
        m = len(s)
        rsrp = np.zeros(m) if rsrp_dbm is None else np.asarray(rsrp_dbm, dtype=float)
        ids = np.arange(m) if arm_ids is None else np.asarray(arm_ids)
        tol = 1e-12 * max(1.0, float(np.max(np.abs(s))))
        tied = np.flatnonzero(s >= s.max() - tol)
        if len(tied) == 1:
            return int(tied[0])
        order = sorted(tied, key=lambda i: (-rsrp[i], ids[i]))
        return int(order[0])

    def update(self, x, reward: float) -> None:
        if not np.isfinite(reward):
            raise ValueError("reward must be finite")
        x = np.asarray(x, dtype=float).reshape(self.dim)
        self.r_max = max(self.r_max, abs(float(reward)))
        n = self.size
        j = self.n_seen % self.window
        K = self._Kinv  # contiguous, so the BLAS rank-one updates run in place
        if n == self.window:
            # Remove slot j: Schur downdate, then clear its row and column.
            f = K[:, j].copy()
            blas.dger(-1.0 / f[j], f, f, a=K.T, overwrite_a=1)
            K[j, :] = 0.0
            K[:, j] = 0.0
        self._X[j] = x
        self._r[j] = reward
        self.n_seen += 1
        m = self.size
        # while the window is filling, slots 0..m-1 are occupied and j == m - 1,
        # so only the leading m x m block is touched
        w = m if self.n_seen <= self.window else self.window
        b = arccos_gram(self._X[:w], x[None, :])[:, 0]
        b[j] = 0.0
        Ab = K[:w, :w] @ b
        s = float(x @ x) + self.ridge - float(b @ Ab)
        self._changes += 1
        if s <= 1e-12 or self._changes >= self.refresh:
            self._recompute()
            return
        if w == self.window:
            blas.dger(1.0 / s, Ab, Ab, a=K.T, overwrite_a=1)
        else:
            K[:w, :w] += np.multiply.outer(Ab / s, Ab)
        K[:w, j] = -Ab / s
        K[j, :w] = -Ab / s
        K[j, j] = 1.0 / s

    def _recompute(self) -> None:
        n = self.size
        X = self._X[:n]
        G = arccos_gram(X, X) + self.ridge * np.eye(n)
        inv = np.linalg.inv(G)
        self._Kinv[:n, :n] = 0.5 * (inv + inv.T)
        self._changes = 0


class RunningStats:
    """Welford mean/variance per feature, used for z-scoring."""

    def __init__(self, dim: int):
        self.n = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def push(self, rows: np.ndarray) -> None:
        for row in np.atleast_2d(rows):
            self.n += 1
            delta = row - self.mean
            self.mean += delta / self.n
            self.m2 += delta * (row - self.mean)

    def zscore(self, rows: np.ndarray) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(rows, dtype=float)
        sd = np.sqrt(self.m2 / (self.n - 1))
        return (rows - self.mean) / np.where(sd > 1e-9, sd, 1.0)


CONTINUOUS_FEATURES = ("rsrp_dbm", "sinr_avg_db", "mcs_avg", "ue_speed_mps", "time_since_ho_s")


class ContextBuilder:
    """Assembles per-arm context vectors.

    Layout: z-scored continuous features, then an ``is_serving`` flag, a
    constant 1, and a one-hot block over the gNB hosting the arm.
    """

    def __init__(self, n_sites: int):
        self.n_sites = n_sites
        self.stats = RunningStats(len(CONTINUOUS_FEATURES))

    @property
    def dim(self) -> int:
        return len(CONTINUOUS_FEATURES) + 2 + self.n_sites

    def build(self, continuous: np.ndarray, is_serving: np.ndarray, site: np.ndarray) -> np.ndarray:
        continuous = np.atleast_2d(np.asarray(continuous, dtype=float))
        if not np.all(np.isfinite(continuous)):
            raise ValueError("non-finite context feature")
        self.stats.push(continuous)
        m = len(continuous)
        onehot = np.zeros((m, self.n_sites))
        onehot[np.arange(m), np.asarray(site, dtype=int)] = 1.0
        return np.hstack([
            self.stats.zscore(continuous),
            np.asarray(is_serving, dtype=float).reshape(m, 1),
            np.ones((m, 1)),
            onehot,
        ])


@dataclass(frozen=True)
class RewardInputs:
    r_thr: float
    ho: bool = False
    hof: bool = False
    rlf: bool = False
    pp: bool = False
    alpha_hof: float = 0.1
    alpha_ho: float = 0.8
    alpha_pp: float = 0.9

    def __post_init__(self):
        if self.r_thr < 0:
            raise ValueError("r_thr must be non-negative")
        for a in (self.alpha_hof, self.alpha_ho, self.alpha_pp):
            if not 0 < a <= 1:
                raise ValueError("alphas must lie in (0, 1]")


def reward(inputs: RewardInputs) -> float:
    r = inputs.r_thr * (1 - int(inputs.rlf))
    r *= inputs.alpha_hof ** int(inputs.hof)
    r *= inputs.alpha_ho ** int(inputs.ho)
    r *= inputs.alpha_pp ** int(inputs.pp)
    return r
