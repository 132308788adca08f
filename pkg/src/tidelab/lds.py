"""Linear dynamical systems, their one-step predictor and its autoregressive truncation.

Time is 0-based throughout: ``x[t]``, ``y[t]`` for ``t = 0 .. T-1`` and

    h[t+1] = A h[t] + B x[t] + eta[t]
    y[t]   = C h[t] + D x[t] + xi[t],     h[0] = 0.

The predictor of ``y[t]`` from ``y[t-1]`` and inputs up to ``x[t]`` is

    y[t-1] + (CB + D) x[t] - D x[t-1] + sum_{i=1..t} C (A^i - A^(i-1)) B x[t-i]

and the autoregressive matrix ``M`` acts on the window
``[x[t-k], ..., x[t-1], x[t], y[t-1]]`` (inputs before ``t = 0`` are zero).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .data import SplitSpec, TimeSeriesDataset, Frequency, build_batch, enumerate_windows
from .tensor import ContractError

SEASONAL_PERIODS = (10, 20, 40, 80, 160, 320)


@dataclass
class LDSParams:
    A: np.ndarray  # (d, d)
    B: np.ndarray  # (d, n)
    C: np.ndarray  # (m, d)
    D: np.ndarray  # (m, n)
    h0: np.ndarray  # (d,)
    gamma: float
    eta_std: float = 0.1
    xi_std: float = 0.0
    # input columns driven by the hidden seasonal cosines
    B_season: np.ndarray | None = None  # (d, q)
    D_season: np.ndarray | None = None  # (m, q)
    periods: tuple[int, ...] = SEASONAL_PERIODS

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.A.shape[0], self.B.shape[1], self.C.shape[0]


@dataclass
class Rollout:
    x: np.ndarray  # (T, n) observable inputs
    y: np.ndarray  # (T, m)
    h: np.ndarray  # (T, d) states h[0..T-1]
    h_next: np.ndarray  # (d,) state after the last input
    eta: np.ndarray  # (T, d)
    xi: np.ndarray  # (T, m)
    season: np.ndarray  # (T, q) hidden cosine inputs (zeros when seasonality is off)
    season_drive: np.ndarray  # (T, d) B_season @ season[t]
    season_feed: np.ndarray  # (T, m) D_season @ season[t]


def _clip_frobenius(M: np.ndarray, c: float = 1.0) -> np.ndarray:
    f = np.linalg.norm(M)
    return M * (c / f) if f > c else M


def spectral_norm(A: np.ndarray, tol: float = 1e-13, max_iter: int = 1_000_000) -> float:
    """Largest singular value by power iteration on A^T A."""
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    sigma = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            return 0.0
        v = w / nrm
        new = np.sqrt(nrm)
        if abs(new - sigma) <= tol * new:
            return new
        sigma = new
    return sigma


def sample_lds(seed: int, d: int = 30, n: int = 5, m: int = 1, gamma: float = 0.95,
               eta_std: float = 0.1, xi_std: float = 0.0, seasons: int = len(SEASONAL_PERIODS)) -> LDSParams:
    """Wishart transition rescaled to operator norm ``gamma``; Gaussian B, C, D clipped to unit norm.

    The seasonal cosines are extra input columns: B and D are drawn with
    ``n + seasons`` columns, clipped jointly, and the last ``seasons`` columns
    are kept aside as the hidden part of the input.
    """
    if min(d, n, m) < 1:
        raise ValueError("dimensions must be positive")
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    rng = np.random.default_rng(seed)
    G = rng.standard_normal((d, d))
    A = G @ G.T
    A = 0.5 * (A + A.T)
    A *= gamma / spectral_norm(A)
    B_all = _clip_frobenius(rng.standard_normal((d, n + seasons)))
    C = _clip_frobenius(rng.standard_normal((m, d)))
    D_all = _clip_frobenius(rng.standard_normal((m, n + seasons)))
    return LDSParams(
        A=A, B=B_all[:, :n].copy(), C=C, D=D_all[:, :n].copy(), h0=np.zeros(d), gamma=gamma,
        eta_std=eta_std, xi_std=xi_std,
        B_season=B_all[:, n:].copy(), D_season=D_all[:, n:].copy(),
        periods=SEASONAL_PERIODS[:seasons],
    )


def seasonal_inputs(T: int, periods=SEASONAL_PERIODS) -> np.ndarray:
    t = np.arange(T)[:, None]
    return np.cos(2.0 * np.pi * t / np.asarray(periods, dtype=np.float64)[None, :])


def rollout(params: LDSParams, T: int, seed: int | np.random.Generator = 0, seasonality: bool = True,
            x: np.ndarray | None = None) -> Rollout:
    """Simulate the system for ``T`` steps.

    ``x`` defaults to i.i.d. standard normal inputs.  Noise comes from ``seed``;
    passing an explicit ``x`` lets several roll-outs share inputs.
    """
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    d, n, m = params.dims
    if x is None:
        x = rng.standard_normal((T, n))
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape != (T, n):
        raise ValueError(f"inputs have shape {x.shape}, expected {(T, n)}")
    eta = params.eta_std * rng.standard_normal((T, d)) if params.eta_std else np.zeros((T, d))
    xi = params.xi_std * rng.standard_normal((T, m)) if params.xi_std else np.zeros((T, m))
    q = 0 if params.B_season is None else params.B_season.shape[1]
    if seasonality and q:
        season = seasonal_inputs(T, params.periods)
        s_drive = season @ params.B_season.T
        s_feed = season @ params.D_season.T
    else:
        season = np.zeros((T, q))
        s_drive = np.zeros((T, d))
        s_feed = np.zeros((T, m))
    drive = np.ascontiguousarray(x @ params.B.T + s_drive + eta)
    feed = np.ascontiguousarray(x @ params.D.T + s_feed + xi)
    hs, y = _kernels.lds_rollout(np.ascontiguousarray(params.A), np.ascontiguousarray(params.C), drive, feed)
    return Rollout(x=x, y=y, h=hs[:T].copy(), h_next=hs[T].copy(), eta=eta, xi=xi, season=season,
                   season_drive=s_drive, season_feed=s_feed)


def markov_kernels(params: LDSParams, k: int) -> np.ndarray:
    """``K[i-1] = C (A^i - A^(i-1)) B`` for lags i = 1..k, shape (k, m, n)."""
    d, n, m = params.dims
    K = np.empty((k, m, n))
    P = params.B.copy()  # A^(i-1) B
    for i in range(k):
        AP = params.A @ P
        K[i] = params.C @ (AP - P)
        P = AP
    return K


def lds_predictor(params: LDSParams, x: np.ndarray, y: np.ndarray, t: int) -> np.ndarray:
    """One-step prediction of ``y[t]`` by direct evaluation of the predictor formula."""
    if t < 1:
        raise ContractError(f"the predictor needs t >= 1 (0-based), got {t}")
    A, B, C, D = params.A, params.B, params.C, params.D
    out = y[t - 1] + (C @ B + D) @ x[t] - D @ x[t - 1]
    Ai = np.eye(A.shape[0])
    for i in range(1, t + 1):
        Ai_next = A @ Ai
        out = out + C @ (Ai_next - Ai) @ B @ x[t - i]
        Ai = Ai_next
    return out


def lds_predict_all(params: LDSParams, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Predictor for every ``t = 1..T-1`` at once; row 0 is NaN."""
    T = x.shape[0]
    K = markov_kernels(params, max(T - 1, 1))
    pred = np.full(y.shape, np.nan)
    lag = _kernels.lagged_sum(K, np.ascontiguousarray(x))
    C, B, D = params.C, params.B, params.D
    pred[1:] = y[:-1] + x[1:] @ (C @ B + D).T - x[:-1] @ D.T + lag[1:]
    return pred


@dataclass
class ARCoeffs:
    M: np.ndarray  # (m, (k+1) n + m)
    k: int
    n: int
    m: int

    def __post_init__(self):
        if self.M.shape != (self.m, (self.k + 1) * self.n + self.m):
            raise ValueError(f"M has shape {self.M.shape}, expected {(self.m, (self.k + 1) * self.n + self.m)}")

    def block(self, lag: int) -> np.ndarray:
        """Coefficient on ``x[t - lag]`` (lag 0..k)."""
        j = self.k - lag
        return self.M[:, j * self.n : (j + 1) * self.n]

    @property
    def y_block(self) -> np.ndarray:
        return self.M[:, (self.k + 1) * self.n :]


def build_m_theta(params: LDSParams, k: int) -> ARCoeffs:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    d, n, m = params.dims
    A, B, C, D = params.A, params.B, params.C, params.D
    M = np.zeros((m, (k + 1) * n + m))
    K = markov_kernels(params, k)
    # lag 1 carries the -D x[t-1] term; lags >= 2 are the pure Markov differences
    blocks = {0: C @ B + D, 1: C @ (A - np.eye(d)) @ B - D}
    for lag in range(2, k + 1):
        blocks[lag] = K[lag - 1]
    for lag, blk in blocks.items():
        j = k - lag
        M[:, j * n : (j + 1) * n] = blk
    M[:, (k + 1) * n :] = np.eye(m)
    return ARCoeffs(M, k, n, m)


def ar_window(x: np.ndarray, y: np.ndarray, t: int, k: int) -> np.ndarray:
    """``[x[t-k], ..., x[t], y[t-1]]`` with zeros before the start of the series."""
    n = x.shape[1]
    xs = np.zeros((k + 1, n))
    lo = t - k
    src = x[max(lo, 0) : t + 1]
    xs[k + 1 - src.shape[0] :] = src
    prev = y[t - 1] if t >= 1 else np.zeros(y.shape[1])
    return np.concatenate([xs.reshape(-1), prev])


def ar_predict(coeffs: ARCoeffs, window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (coeffs.M.shape[1],):
        raise ContractError(f"window has length {window.shape}, M expects {coeffs.M.shape[1]}")
    return coeffs.M @ window


def ar_predict_all(coeffs: ARCoeffs, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """``M X~_t`` for every ``t = 1..T-1``; row 0 is NaN."""
    k = coeffs.k
    K = np.stack([coeffs.block(lag) for lag in range(1, k + 1)])
    lag = _kernels.lagged_sum(K, np.ascontiguousarray(x))
    pred = np.full(y.shape, np.nan)
    pred[1:] = y[:-1] @ coeffs.y_block.T + x[1:] @ coeffs.block(0).T + lag[1:]
    return pred


@dataclass
class DecayCurve:
    ks: np.ndarray
    deviation: np.ndarray
    bound: np.ndarray
    gamma: float
    slope: float
    const: float

    @property
    def bound_ok(self) -> bool:
        return bool(np.all(self.deviation <= self.bound))


def decay_envelope(params: LDSParams, x: np.ndarray, ks) -> tuple[np.ndarray, float]:
    """``c gamma^(k+2) / (1-gamma)`` with ``c = |C| |B| max|x_t| / gamma^2``.

    The truncated tail is ``sum_{i>k} C A^(i-1) (A - I) B x[t-i]`` and for
    0 <= A <= gamma I each term is at most ``|C| |B| gamma^(i-1) |x|``.
    """
    g = params.gamma
    c = np.linalg.norm(params.C, 2) * np.linalg.norm(params.B, 2) * np.linalg.norm(x, axis=1).max() / g**2
    ks = np.asarray(ks, dtype=np.float64)
    return c * g ** (ks + 2) / (1.0 - g), float(c)


def decay_curve(params: LDSParams, roll: Rollout, ks, fit_from: int | None = None) -> DecayCurve:
    """Max over t of |M_theta X~_t - yhat_t| for each truncation length k.

    ``slope`` is the least-squares slope of log deviation against k over
    ``k >= fit_from`` (default: the upper half of ``ks``) with nonzero deviation.
    """
    ks = np.asarray(sorted(ks), dtype=np.int64)
    T = roll.x.shape[0]
    if ks.size == 0 or ks[0] < 1 or ks[-1] > T - 1:
        raise ValueError(f"ks must lie in [1, {T - 1}]")
    exact = lds_predict_all(params, roll.x, roll.y)
    dev = np.empty(ks.size)
    for j, k in enumerate(ks):
        approx = ar_predict_all(build_m_theta(params, int(k)), roll.x, roll.y)
        dev[j] = np.linalg.norm(approx[1:] - exact[1:], axis=1).max()
    bound, c = decay_envelope(params, roll.x, ks)
    if fit_from is None:
        fit_from = int(ks[ks.size // 2]) if ks.size > 2 else int(ks[0])
    sel = (ks >= fit_from) & (dev > 0)
    slope = float(np.polyfit(ks[sel], np.log(dev[sel]), 1)[0]) if sel.sum() >= 2 else float("nan")
    return DecayCurve(ks, dev, bound, params.gamma, slope, c)


def m_theta_norm_bound(params: LDSParams, k: int) -> float:
    """``c sqrt(sum_{i=0..k} gamma^i)`` with c covering the fixed blocks.

    Each Markov block has Frobenius norm at most ``|C|_F |B|_F gamma^(i-1)``,
    the two leading x blocks at most ``|C|_F |B|_F + |D|_F`` and the y block
    contributes ``sqrt(m)``.
    """
    g = params.gamma
    cb = np.linalg.norm(params.C) * np.linalg.norm(params.B)
    dn = np.linalg.norm(params.D)
    m = params.C.shape[0]
    c = np.sqrt(2.0 * (cb + dn) ** 2 + cb**2 + m)
    return float(c * np.sqrt(sum(g**i for i in range(k + 1))))


# --------------------------------------------------------------------------
# the synthetic benchmark: 4 series sharing parameters and inputs


@dataclass
class LDSDataset:
    dataset: TimeSeriesDataset
    split: SplitSpec
    params: LDSParams
    rollouts: list[Rollout] = field(repr=False)
    lookback: int = 320
    horizon: int = 320

    def example_counts(self) -> dict[str, int]:
        from .data import window_count

        N = self.dataset.num_series
        return {s: window_count(self.split, s, self.lookback, self.horizon, N) for s in ("train", "val", "test")}


def make_lds_dataset(seed: int = 0, num_series: int = 4, segments=(1640, 740, 740),
                     lookback: int = 320, horizon: int = 320, **lds_kwargs) -> LDSDataset:
    """Four roll-outs that share parameters, inputs and seasonal drive.

    Only the transition noise differs between series.  The observable inputs
    become the dataset covariates; the seasonal cosines are not exported.
    Windows stay inside their segment and, matching the reported example
    counts, the final anchor of each segment is not used.
    """
    params = sample_lds(seed, **lds_kwargs)
    T = sum(segments)
    rng = np.random.default_rng([seed, 1])
    x = rng.standard_normal((T, params.dims[1]))
    rolls = [rollout(params, T, np.random.default_rng([seed, 2, i]), seasonality=True, x=x)
             for i in range(num_series)]
    values = np.stack([r.y[:, 0] for r in rolls])
    ts = np.datetime64("2020-01-01T00:00:00", "s") + np.arange(T) * np.timedelta64(3600, "s")
    ds = TimeSeriesDataset(values, ts, Frequency.HOURLY, covariates=x,
                           names=[f"lds{i}" for i in range(num_series)],
                           covariate_names=[f"x{j}" for j in range(x.shape[1])])
    spec = SplitSpec(segments[0], segments[0] + segments[1], T, eval_lookback_crosses=False, drop_last=True)
    return LDSDataset(ds, spec, params, rolls, lookback, horizon)


# --------------------------------------------------------------------------
# the window-to-horizon linear model

DEFAULT_PENALTIES = tuple(10.0 ** (k / 2) for k in range(-4, 17))


@dataclass
class LinearFit:
    W: np.ndarray  # (L, H)
    b: np.ndarray  # (H,)
    penalty: float
    val_mse: float
    path: list[tuple[float, float]]  # (penalty, validation MSE) for every candidate

    def model(self, lookback: int, horizon: int):
        from .model import ModelConfig, TiDEModel, init_params
        from .tensor import Tensor

        cfg = ModelConfig(lookback=lookback, horizon=horizon, linear_only=True)
        params = init_params(cfg, 0)
        params.global_residual = (Tensor(self.W.copy(), requires_grad=True),
                                  Tensor(self.b.copy(), requires_grad=True))
        return TiDEModel(cfg, params)


def _design(dataset, spec, segment, L, H):
    s, a = enumerate_windows(dataset, spec, segment, L, H)
    batch = build_batch(dataset, s, a, L, H)
    return np.c_[batch.lookback, np.ones(len(s))], batch.target


def fit_linear(dataset: TimeSeriesDataset, spec: SplitSpec, lookback: int, horizon: int,
               penalties=DEFAULT_PENALTIES) -> LinearFit:
    """Ridge fit of the affine look-back -> horizon map on the training windows.

    The bias is not penalised.  The penalty is the candidate with the lowest
    validation MSE over every admissible validation window.
    """
    X, Z = _design(dataset, spec, "train", lookback, horizon)
    Xv, Zv = _design(dataset, spec, "val", lookback, horizon)
    G, R = X.T @ X, X.T @ Z
    P = np.eye(G.shape[0])
    P[-1, -1] = 0.0
    best, path = None, []
    for lam in penalties:
        coef = np.linalg.solve(G + lam * P, R)
        v = float(np.mean((Xv @ coef - Zv) ** 2))
        path.append((float(lam), v))
        if best is None or v < best[1]:
            best = (coef, v, float(lam))
    coef, v, lam = best
    return LinearFit(coef[:-1].copy(), coef[-1].copy(), lam, v, path)
