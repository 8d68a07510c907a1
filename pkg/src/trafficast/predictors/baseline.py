"""Contextual average: mean of past weeks at the same weekday and slot."""
from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from ..roadnet import STEPS_PER_DAY, STEPS_PER_WEEK, SeriesSet, weekday_slots
from .base import Predictor


def week_position(sset: SeriesSet, t: np.ndarray) -> np.ndarray:
    day, slot = weekday_slots(sset.axis, t)
    return day * STEPS_PER_DAY + slot


class ContextualAverage(Predictor):
    kind = "baseline"

    def __init__(self, link: int, profile: np.ndarray, n_weeks: int, h: int = 12):
        self.links = [link]
        self.profile = np.asarray(profile, dtype=np.float64)
        self.n_weeks = n_weeks
        self.h = h

    @classmethod
    def fit(cls, train: SeriesSet, link: int, h: int = 12,
            time_range: tuple[int, int] | None = None) -> "ContextualAverage":
        lo, hi = time_range or (0, train.axis.count)
        if hi - lo < STEPS_PER_WEEK:
            raise ValidationError("contextual average needs at least one full training week")
        t = np.arange(lo, hi)
        pos = week_position(train, t)
        values = train.series[link].values[lo:hi]
        sums = np.bincount(pos, weights=values, minlength=STEPS_PER_WEEK)
        counts = np.bincount(pos, minlength=STEPS_PER_WEEK)
        return cls(link, sums / counts, (hi - lo) // STEPS_PER_WEEK, h)

    def input_offsets(self) -> np.ndarray:
        return np.zeros(0, dtype=np.int64)

    def predict(self, sset: SeriesSet, origins: np.ndarray) -> np.ndarray:
        origins = self._check_origins(sset, origins)
        # positions of t+1..t+h, computed from the origin's position so targets past the axis end work
        base = week_position(sset, origins)
        pos = (base[:, None] + np.arange(1, self.h + 1)[None, :]) % STEPS_PER_WEEK
        return self.profile[pos][None]

    def hyper(self) -> dict:
        return {"link": self.links[0], "h": self.h, "n_weeks": self.n_weeks}

    def arrays(self) -> dict[str, np.ndarray]:
        return {"profile": self.profile}

    @classmethod
    def restore(cls, hyper, arrays):
        return cls(hyper["link"], arrays["profile"], hyper["n_weeks"], hyper["h"])


def fit_baseline(train: SeriesSet, link: int, h: int = 12) -> ContextualAverage:
    return ContextualAverage.fit(train, link, h)


def predict_baseline(model: ContextualAverage, sset: SeriesSet, t: int) -> np.ndarray:
    return model.predict(sset, np.array([t]))[0, 0]
