"""Distribution summaries in the boxplot style used by the reports:
median, quartiles by linear interpolation, IQR, and Tukey whiskers clipped
to observed data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass
class DistributionStats:
    median: float
    q1: float
    q3: float
    iqr: float
    whisker_low: float
    whisker_high: float

    def format_iqr(self, digits: int = 2) -> str:
        return f"{self.iqr:.{digits}f} ({self.q1:.{digits}f} to {self.q3:.{digits}f})"

    def format_whisker(self, digits: int = 2) -> str:
        return (f"{self.whisker_high - self.whisker_low:.{digits}f} "
                f"({self.whisker_low:.{digits}f} to {self.whisker_high:.{digits}f})")

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def stats(values) -> DistributionStats:
    """Summary of a nonempty sample.

    Whiskers are the most extreme observations within 1.5*IQR of the nearest
    quartile, clamped so they never retreat past the quartiles themselves.
    """
    arr = np.asarray(list(values), dtype=np.float64)
    if arr.size == 0:
        raise DataError("stats of an empty sample")
    q1, median, q3 = np.percentile(arr, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    low_fence, high_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside_low = arr[arr >= low_fence]
    inside_high = arr[arr <= high_fence]
    whisker_low = min(float(inside_low.min()) if inside_low.size else q1, q1)
    whisker_high = max(float(inside_high.max()) if inside_high.size else q3, q3)
    return DistributionStats(float(median), float(q1), float(q3), float(iqr),
                             whisker_low, whisker_high)
