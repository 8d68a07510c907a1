"""Autoregressive model fitted by least squares, recursive multi-step forecasts."""
from __future__ import annotations

import logging

import numpy as np

from ..errors import ValidationError
from ..roadnet import SeriesSet
from .base import Predictor

log = logging.getLogger(__name__)

RIDGE = 1e-6


def fit_ar_coefficients(x: np.ndarray, p: int) -> tuple[np.ndarray, float, bool]:
    """OLS for ``x_t = c + sum_j phi_j x_{t-j}``; returns (phi, c, used_ridge).

    phi[0] multiplies lag 1. The intercept is handled by centring, so a
    ridge fallback never shrinks it.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size <= p + 1:
        raise ValidationError(f"AR({p}) needs more than {p + 1} observations, got {x.size}")
    lags = np.lib.stride_tricks.sliding_window_view(x[:-1], p)[:, ::-1]  # row t: x_{t-1}..x_{t-p}
    y = x[p:]
    xm, ym = lags.mean(axis=0), y.mean()
    Xc, yc = lags - xm, y - ym
    gram = Xc.T @ Xc
    ridge = np.linalg.matrix_rank(Xc) < p or np.linalg.cond(gram) > 1e12
    if ridge:
        log.info("AR(%d) design is singular or ill-conditioned; ridge fallback (lambda=%g)", p, RIDGE)
        phi = np.linalg.solve(gram + RIDGE * np.eye(p), Xc.T @ yc)
    else:
        phi = np.linalg.lstsq(Xc, yc, rcond=None)[0]
    return phi, float(ym - xm @ phi), bool(ridge)


def ar_forecast(phi: np.ndarray, c: float, history: np.ndarray, h: int) -> np.ndarray:
    """Recursive forecasts for each row of ``history`` (n, p) ordered oldest to newest."""
    p = phi.size
    buf = np.concatenate([history, np.zeros((history.shape[0], h))], axis=1)
    for k in range(h):
        window = buf[:, k:k + p][:, ::-1]  # newest first, matches phi[0] = lag 1
        buf[:, p + k] = c + window @ phi
    return buf[:, p:]


class ARModel(Predictor):
    kind = "ar"

    def __init__(self, link: int, phi: np.ndarray, intercept: float, h: int = 12):
        self.links = [link]
        self.phi = np.asarray(phi, dtype=np.float64)
        self.intercept = float(intercept)
        self.h = h

    @property
    def p(self) -> int:
        return self.phi.size

    @classmethod
    def fit(cls, train: SeriesSet, link: int, p: int = 28, h: int = 12,
            time_range: tuple[int, int] | None = None) -> "ARModel":
        lo, hi = time_range or (0, train.axis.count)
        phi, c, _ = fit_ar_coefficients(train.series[link].values[lo:hi], p)
        return cls(link, phi, c, h)

    def input_offsets(self) -> np.ndarray:
        return np.arange(-self.p + 1, 1)

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        origins = self._check_origins(sset, origins)
        idx = origins[:, None] + self.input_offsets()[None, :]
        history = sset.series[self.links[0]].values[idx]
        return ar_forecast(self.phi, self.intercept, history, self.h)[None]

    def hyper(self) -> dict:
        return {"link": self.links[0], "h": self.h, "p": self.p}

    def arrays(self) -> dict[str, np.ndarray]:
        return {"phi": self.phi, "intercept": np.array([self.intercept])}

    @classmethod
    def restore(cls, hyper, arrays):
        return cls(hyper["link"], arrays["phi"], float(arrays["intercept"][0]), hyper["h"])


def fit_ar(train: SeriesSet, link: int, p: int = 28, h: int = 12) -> ARModel:
    return ARModel.fit(train, link, p, h)


def predict_ar(model: ARModel, recent: np.ndarray, h: int | None = None) -> np.ndarray:
    """Forecast from the last ``p`` values (oldest first)."""
    recent = np.asarray(recent, dtype=np.float64)
    if recent.size != model.p:
        raise ValidationError(f"need exactly {model.p} recent values")
    return ar_forecast(model.phi, model.intercept, recent[None], h or model.h)[0]
