"""Preprocessing: scaling, chronological splitting, windowing, batching.

The leakage rule lives here: splits are chronological, scalers fit on
training cells only, and sliding windows are built inside each split segment
so no sample straddles a boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .exceptions import (
    DegenerateScale,
    EmptySegment,
    NegativeInputForLog,
    WindowTooLong,
)
from .tensorize import TimeAxis, Trajectory

__all__ = [
    "Scaler",
    "fit_scaler",
    "SplitSpec",
    "split_chronological",
    "WindowSpec",
    "Sample",
    "make_windows",
    "split_windows",
    "make_batches",
    "filter_trajectories",
    "TrajWindowSpec",
    "cut_trajectory",
    "split_per_user",
]

SCALER_KINDS = ("none", "zscore", "minmax", "log1p")


@dataclass
class Scaler:
    """Invertible elementwise transform with parameters frozen at fit time."""

    kind: str
    mean: float = 0.0
    std: float = 1.0
    min: float = 0.0
    max: float = 1.0

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "none":
            return x.copy()
        if self.kind == "zscore":
            return (x - self.mean) / self.std
        if self.kind == "minmax":
            return (x - self.min) / (self.max - self.min)
        if self.kind == "log1p":
            if np.any(x < 0):
                raise NegativeInputForLog("log1p scaling needs x >= 0")
            return np.log1p(x)
        raise ValueError(f"unknown scaler kind {self.kind!r}")

    def inverse(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.kind == "none":
            return x.copy()
        if self.kind == "zscore":
            return x * self.std + self.mean
        if self.kind == "minmax":
            return x * (self.max - self.min) + self.min
        if self.kind == "log1p":
            return np.expm1(x)
        raise ValueError(f"unknown scaler kind {self.kind!r}")


def fit_scaler(kind: str, values: np.ndarray, mask: np.ndarray | None = None) -> Scaler:
    """Fit scaler parameters on observed cells only.

    ``mask`` selects the training cells; None means all cells count. Zero
    spread (constant training data) raises DegenerateScale for zscore and
    minmax.
    """
    if kind not in SCALER_KINDS:
        raise ValueError(f"unknown scaler kind {kind!r}; pick from {SCALER_KINDS}")
    values = np.asarray(values, dtype=np.float64)
    cells = values[np.asarray(mask, dtype=bool)] if mask is not None else values.ravel()
    if kind == "none":
        return Scaler("none")
    if cells.size == 0:
        raise DegenerateScale("no observed cells to fit on")
    if kind == "zscore":
        mean = float(cells.mean())
        std = float(cells.std())
        if std == 0.0:
            raise DegenerateScale("zero standard deviation in training cells")
        return Scaler("zscore", mean=mean, std=std)
    if kind == "minmax":
        lo, hi = float(cells.min()), float(cells.max())
        if hi == lo:
            raise DegenerateScale("zero range in training cells")
        return Scaler("minmax", min=lo, max=hi)
    # log1p has no fitted parameters, but reject negative training data early.
    if np.any(cells < 0):
        raise NegativeInputForLog("log1p scaling needs x >= 0")
    return Scaler("log1p")


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train/val/test ratios; must be positive and sum to 1."""

    train: float = 0.7
    val: float = 0.1
    test: float = 0.2

    def __post_init__(self):
        total = self.train + self.val + self.test
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"ratios must sum to 1, got {total}")
        if min(self.train, self.val, self.test) <= 0:
            raise ValueError("all three ratios must be positive")


def split_chronological(n: int, spec: SplitSpec) -> tuple[range, range, range]:
    """Allocate ``n`` ordered items to train/val/test index ranges.

    Validation and test sizes are floored; the remainder goes to train, so
    100 items at 0.7/0.1/0.2 give 70/10/20 and 10 items give 7/1/2. Any
    empty segment raises EmptySegment.
    """
    n_val = int(n * spec.val)
    n_test = int(n * spec.test)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) <= 0:
        raise EmptySegment(
            f"{n} items at {spec.train}/{spec.val}/{spec.test} leave an empty segment"
        )
    return (
        range(0, n_train),
        range(n_train, n_train + n_val),
        range(n_train + n_val, n),
    )


@dataclass(frozen=True)
class WindowSpec:
    """Sliding-window lengths: t_in observed slots, t_out predicted slots."""

    t_in: int = 12
    t_out: int = 12

    def __post_init__(self):
        if self.t_in <= 0 or self.t_out <= 0:
            raise ValueError("window lengths must be positive")


@dataclass
class Sample:
    """One (input window, target window) pair with its absolute slot ids.

    ``x_time``/``y_time`` carry the time-of-day fraction in [0, 1) per slot;
    ``x_slots``/``y_slots`` the absolute slot indices on the source axis, so
    downstream code can audit leakage and do periodic lookups.
    """

    x: np.ndarray
    y: np.ndarray
    x_mask: np.ndarray
    y_mask: np.ndarray
    x_time: np.ndarray
    y_time: np.ndarray
    x_slots: np.ndarray
    y_slots: np.ndarray


def _time_fractions(slots: np.ndarray, axis: TimeAxis | None) -> np.ndarray:
    if axis is None:
        return np.zeros(len(slots), dtype=np.float64)
    return np.array([axis.fraction_of_day(int(s)) for s in slots], dtype=np.float64)


def make_windows(
    values: np.ndarray,
    mask: np.ndarray,
    spec: WindowSpec,
    axis: TimeAxis | None = None,
    start_slot: int = 0,
) -> list[Sample]:
    """Slide (t_in, t_out) windows over axis 0 of a [T, ...] tensor.

    Yields exactly ``T - t_in - t_out + 1`` samples. ``start_slot`` is the
    absolute slot of values[0] on the source axis, used for slot bookkeeping
    when windowing a segment of a larger tensor.
    """
    values = np.asarray(values)
    mask = np.asarray(mask, dtype=bool)
    T = values.shape[0]
    width = spec.t_in + spec.t_out
    if width > T:
        raise WindowTooLong(f"window needs {width} slots, segment has {T}")
    samples = []
    for k in range(T - width + 1):
        x_slots = np.arange(start_slot + k, start_slot + k + spec.t_in)
        y_slots = np.arange(
            start_slot + k + spec.t_in, start_slot + k + width
        )
        samples.append(
            Sample(
                x=values[k : k + spec.t_in],
                y=values[k + spec.t_in : k + width],
                x_mask=mask[k : k + spec.t_in],
                y_mask=mask[k + spec.t_in : k + width],
                x_time=_time_fractions(x_slots, axis),
                y_time=_time_fractions(y_slots, axis),
                x_slots=x_slots,
                y_slots=y_slots,
            )
        )
    return samples


def split_windows(
    values: np.ndarray,
    mask: np.ndarray,
    wspec: WindowSpec,
    sspec: SplitSpec,
    axis: TimeAxis | None = None,
) -> dict[str, list[Sample]]:
    """Split slots chronologically, then window inside each segment.

    Windowing after splitting guarantees that no sample sees slots from two
    segments, which is the leakage property tests audit via x_slots/y_slots.
    """
    T = np.asarray(values).shape[0]
    train, val, test = split_chronological(T, sspec)
    out = {}
    for name, seg in (("train", train), ("val", val), ("test", test)):
        out[name] = make_windows(
            values[seg.start : seg.stop],
            mask[seg.start : seg.stop],
            wspec,
            axis=axis,
            start_slot=seg.start,
        )
    return out


def make_batches(
    samples: Sequence[Sample],
    batch_size: int,
    shuffle_seed: int | None = None,
) -> list[dict[str, np.ndarray]]:
    """Stack samples into dict batches; the last batch may be short.

    With ``shuffle_seed`` set, sample order is permuted reproducibly first.
    Batch keys: x, y, x_mask, y_mask, x_time, y_time, x_slots, y_slots.
    """
    if batch_size <= 0:
        raise ValueError("batch_size must be positive")
    order = np.arange(len(samples))
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(len(samples))
    fields = ("x", "y", "x_mask", "y_mask", "x_time", "y_time", "x_slots", "y_slots")
    batches = []
    for lo in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[lo : lo + batch_size]]
        batches.append(
            {f: np.stack([getattr(s, f) for s in chunk]) for f in fields}
        )
    return batches


def filter_trajectories(
    trajectories: Sequence[Trajectory],
    min_points: int = 0,
    min_trajs_per_user: int = 0,
    min_visits_per_location: int = 0,
) -> list[Trajectory]:
    """Jointly filter sparse trajectories, users, and locations to a fixed point.

    Dropping a location can sink a trajectory below min_points, which can
    sink a user below min_trajs_per_user, which can sink another location, so
    the three filters iterate until nothing changes. The result is idempotent:
    filtering it again with the same thresholds returns it unchanged.
    Location counting ignores points whose location is None.
    """
    trajs = list(trajectories)
    while True:
        kept = [t for t in trajs if len(t.points) >= min_points]
        if min_trajs_per_user > 0:
            per_user: dict[str, int] = {}
            for t in kept:
                per_user[t.user_id] = per_user.get(t.user_id, 0) + 1
            kept = [t for t in kept if per_user[t.user_id] >= min_trajs_per_user]
        if min_visits_per_location > 0:
            visits: dict[str, int] = {}
            for t in kept:
                for p in t.points:
                    if p.location is not None:
                        visits[p.location] = visits.get(p.location, 0) + 1
            trimmed = []
            for t in kept:
                points = [
                    p
                    for p in t.points
                    if p.location is None
                    or visits[p.location] >= min_visits_per_location
                ]
                trimmed.append(
                    t if len(points) == len(t.points) else Trajectory(t.user_id, points)
                )
            kept = trimmed
        if len(kept) == len(trajs) and all(
            a is b or a.points == b.points for a, b in zip(kept, trajs)
        ):
            return kept
        trajs = kept


@dataclass(frozen=True)
class TrajWindowSpec:
    """How to cut long trajectories: by time gap from window start or by length.

    ``mode="time"``: a new sub-trajectory starts whenever a point is more
    than ``size`` seconds after the current window's first point.
    ``mode="length"``: consecutive chunks of at most ``size`` points.
    """

    mode: str = "time"
    size: int = 259200  # 72 hours

    def __post_init__(self):
        if self.mode not in ("time", "length"):
            raise ValueError(f"unknown cut mode {self.mode!r}")
        if self.size <= 0:
            raise ValueError("cut size must be positive")


def cut_trajectory(traj: Trajectory, spec: TrajWindowSpec) -> list[Trajectory]:
    """Cut one trajectory into sub-trajectories; concatenation reproduces it."""
    if not traj.points:
        return []
    pieces: list[list] = [[traj.points[0]]]
    for p in traj.points[1:]:
        if spec.mode == "time":
            window_start = pieces[-1][0].time
            if (p.time - window_start).total_seconds() > spec.size:
                pieces.append([p])
                continue
        else:
            if len(pieces[-1]) >= spec.size:
                pieces.append([p])
                continue
        pieces[-1].append(p)
    return [Trajectory(traj.user_id, piece) for piece in pieces]


def split_per_user(
    trajectories: Sequence[Trajectory], spec: SplitSpec
) -> dict[str, list[Trajectory]]:
    """Split each user's trajectories chronologically by the given ratios.

    Trajectories are ordered by first-point time per user; validation and
    test counts are floored, the remainder stays in train. Users with too few
    trajectories to fill a segment simply leave it empty instead of erroring,
    since sparse users are routine after filtering.
    """
    by_user: dict[str, list[Trajectory]] = {}
    for t in trajectories:
        by_user.setdefault(t.user_id, []).append(t)
    out: dict[str, list[Trajectory]] = {"train": [], "val": [], "test": []}
    for user, trajs in by_user.items():
        trajs = sorted(trajs, key=lambda t: (len(t.points) == 0, t.points[0].time if t.points else 0))
        n = len(trajs)
        n_val = int(n * spec.val)
        n_test = int(n * spec.test)
        n_train = n - n_val - n_test
        out["train"].extend(trajs[:n_train])
        out["val"].extend(trajs[n_train : n_train + n_val])
        out["test"].extend(trajs[n_train + n_val :])
    return out
