"""Discrete-event Monte Carlo simulation of one charging station.

Two service disciplines:

* preemptive mode: every arrival starts charging immediately; when all
  spots are busy the vehicle that has charged longest is unplugged and
  leaves unserved.  A vehicle counts as served when it keeps its spot for
  its full charge duration.
* queue mode: arrivals wait in FIFO order for a free spot and always
  charge to completion; the statistics of interest are the probability of
  starting instantly and the mean waiting time.

Statistics exclude an initial warm-up and a tail of the horizon so every
measured vehicle's outcome is fully determined by simulated events.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class ClassSpec:
    charge_hours: float
    rate_per_hour: float

    def __post_init__(self):
        if self.charge_hours <= 0 or self.rate_per_hour < 0:
            raise ValidationError("charge time must be positive, rate non-negative")


@dataclass
class StationConfig:
    spots: int
    classes: list[ClassSpec]
    horizon_hours: float = 1000.0
    seed: int = 0
    replications: int = 1
    warmup_hours: float | None = None    # default: 10 × longest charge time

    def __post_init__(self):
        if self.spots < 0:
            raise ValidationError("spot count must be non-negative")
        if self.horizon_hours <= 0:
            raise ValidationError("horizon must be positive")
        if self.replications < 1:
            raise ValidationError("need at least one replication")
        if not self.classes:
            raise ValidationError("at least one vehicle class is required")

    @property
    def max_charge_hours(self) -> float:
        return max(c.charge_hours for c in self.classes)

    def window(self) -> tuple[float, float]:
        warm = (10.0 * self.max_charge_hours if self.warmup_hours is None
                else self.warmup_hours)
        end = self.horizon_hours - self.max_charge_hours
        if warm >= end:
            raise ValidationError(
                "horizon too short: warm-up leaves no measurement window")
        return warm, end


@dataclass
class SimReport:
    mode: str
    arrivals: int                        # measured arrivals
    service_level: float
    half_width: float                    # 3-sigma over replications
    per_class: dict[int, tuple[int, float]]
    instant_service_prob: float
    mean_wait_hours: float
    total_arrivals: int = 0              # whole horizon, all replications
    total_completed: int = 0
    in_system_at_end: int = 0


def sample_arrivals(classes: list[ClassSpec], horizon: float,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Merged, time-sorted Poisson arrival streams (times, class index)."""
    times, labels = [], []
    for k, spec in enumerate(classes):
        if spec.rate_per_hour <= 0:
            continue
        # slight over-draw, then extend until the horizon is crossed
        t, buf = 0.0, []
        expected = spec.rate_per_hour * horizon
        while True:
            gaps = rng.exponential(1.0 / spec.rate_per_hour,
                                   size=max(64, int(expected * 0.25) + 1))
            for g in gaps:
                t += g
                if t > horizon:
                    break
                buf.append(t)
            if t > horizon:
                break
        times.append(np.array(buf))
        labels.append(np.full(len(buf), k, dtype=np.int64))
    if not times:
        return np.zeros(0), np.zeros(0, dtype=np.int64)
    at = np.concatenate(times)
    lb = np.concatenate(labels)
    order = np.argsort(at, kind="stable")
    return at[order], lb[order]


def _fifo_rep(cfg: StationConfig, rng: np.random.Generator):
    at, cls = sample_arrivals(cfg.classes, cfg.horizon_hours, rng)
    n = len(at)
    T = np.array([c.charge_hours for c in cfg.classes])
    evicted = np.zeros(n, dtype=bool)
    if cfg.spots == 0:
        evicted[:] = True
    else:
        alive = np.zeros(n, dtype=bool)
        count = 0
        oldest = 0
        busy: list[tuple[float, int]] = []   # (completion time, id)
        for i in range(n):
            t = at[i]
            while busy and busy[0][0] <= t:
                _, j = heapq.heappop(busy)
                if alive[j]:
                    alive[j] = False
                    count -= 1
            if count == cfg.spots:
                while not alive[oldest]:
                    oldest += 1
                alive[oldest] = False
                evicted[oldest] = True
                count -= 1
            alive[i] = True
            count += 1
            heapq.heappush(busy, (t + T[cls[i]], i))
    lo, hi = cfg.window()
    meas = (at >= lo) & (at <= hi)
    served = ~evicted
    per_class = {}
    for k in range(len(cfg.classes)):
        sel = meas & (cls == k)
        per_class[k] = (int(sel.sum()),
                        float(served[sel].mean()) if sel.any() else 1.0)
    level = float(served[meas].mean()) if meas.any() else 1.0
    completed = int((served & (at + T[cls] <= cfg.horizon_hours)).sum()) if n else 0
    return int(meas.sum()), level, per_class, n, completed, 0, 1.0, 0.0


def _queue_rep(cfg: StationConfig, rng: np.random.Generator):
    if cfg.spots == 0:
        raise ValidationError("queue mode needs at least one spot")
    at, cls = sample_arrivals(cfg.classes, cfg.horizon_hours, rng)
    n = len(at)
    T = np.array([c.charge_hours for c in cfg.classes])
    free = [0.0] * cfg.spots
    heapq.heapify(free)
    waits = np.zeros(n)
    completions = np.zeros(n)
    for i in range(n):
        avail = heapq.heappop(free)
        start = max(at[i], avail)
        waits[i] = start - at[i]
        completions[i] = start + T[cls[i]]
        heapq.heappush(free, completions[i])
    lo, hi = cfg.window()
    meas = (at >= lo) & (at <= hi)
    instant = waits <= 1e-12
    per_class = {}
    for k in range(len(cfg.classes)):
        sel = meas & (cls == k)
        per_class[k] = (int(sel.sum()),
                        float(instant[sel].mean()) if sel.any() else 1.0)
    level = float(instant[meas].mean()) if meas.any() else 1.0
    mean_wait = float(waits[meas].mean()) if meas.any() else 0.0
    completed = int((completions <= cfg.horizon_hours).sum())
    return (int(meas.sum()), level, per_class, n, completed,
            n - completed, level, mean_wait)


def _run(cfg: StationConfig, rep_fn) -> SimReport:
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.replications)
    levels, waits, instants = [], [], []
    arrivals = total = completed = in_system = 0
    per_class_acc: dict[int, list[float]] = {}
    per_class_n: dict[int, int] = {}
    for ss in seeds:
        rng = np.random.default_rng(ss)
        m, level, per_class, n, comp, insys, inst, wait = rep_fn(cfg, rng)
        levels.append(level)
        instants.append(inst)
        waits.append(wait)
        arrivals += m
        total += n
        completed += comp
        in_system += insys
        for k, (cnt, lv) in per_class.items():
            per_class_acc.setdefault(k, []).append(lv)
            per_class_n[k] = per_class_n.get(k, 0) + cnt
    levels = np.array(levels)
    hw = (3.0 * levels.std(ddof=1) / np.sqrt(len(levels))
          if len(levels) > 1 else 0.0)
    per_class = {k: (per_class_n[k], float(np.mean(v)))
                 for k, v in per_class_acc.items()}
    mode = "fifo" if rep_fn is _fifo_rep else "queue"
    return SimReport(mode, arrivals, float(levels.mean()), float(hw),
                     per_class, float(np.mean(instants)), float(np.mean(waits)),
                     total, completed, in_system)


def simulate_fifo(cfg: StationConfig) -> SimReport:
    """Preemptive discipline: the longest-charging vehicle yields its spot."""
    return _run(cfg, _fifo_rep)


def simulate_queue(cfg: StationConfig) -> SimReport:
    """FIFO waiting line: every vehicle eventually charges fully."""
    return _run(cfg, _queue_rep)
