"""Step records, snapshots and the run container shared by both drivers.

Snapshots are taken at actual step times, never interpolated. When a step
crosses a requested time the nearer of the two bracketing step times is
kept, together with the requested time so runs can be paired later.
"""

from dataclasses import dataclass, field

import numpy as np

__all__ = ["StepRecord", "Snapshot", "SnapshotTracker", "RunResult"]

_TIME_EPS = 1e-12


@dataclass(frozen=True)
class StepRecord:
    step: int
    t: float
    dt: float
    split_iters: int
    newton_max: int
    worst_subdomain: int


@dataclass(frozen=True)
class Snapshot:
    requested_t: float
    state: object

    @property
    def t(self):
        return self.state.t


@dataclass(frozen=True)
class RunResult:
    """One finished transient solve: what was asked for and what happened.

    kind is "vme" or "dns". The two-scale runs carry their mesh, the
    reference runs their problem description, so results stay samplable
    at arbitrary points without the caller re-plumbing geometry.
    """

    kind: str
    snapshots: list = field(default_factory=list)
    records: list = field(default_factory=list)
    wall_seconds: float = 0.0
    mesh: object = None
    problem: object = None

    @property
    def max_dt(self):
        return max((r.dt for r in self.records), default=0.0)


class SnapshotTracker:
    def __init__(self, times):
        ts = np.unique(np.asarray(list(times), dtype=float))
        if ts.size and ts[0] < 0.0:
            raise ValueError("snapshot times must be non-negative")
        self.times = [float(T) for T in ts]
        self.i = 0
        self.snapshots = []

    def pending(self):
        return self.i < len(self.times)

    def absorb_current(self, t, state):
        """Capture every requested time the run has already reached.

        Called once before stepping starts so a request at t = 0 (or a
        zero end time) records the initial state instead of forcing a step.
        """
        while self.pending() and self.times[self.i] <= t + _TIME_EPS:
            self.snapshots.append(Snapshot(self.times[self.i], state))
            self.i += 1

    def after_step(self, t_old, t_new, state_old, state_new):
        while self.pending() and t_new >= self.times[self.i] - _TIME_EPS:
            T = self.times[self.i]
            if abs(t_old - T) <= abs(t_new - T):
                self.snapshots.append(Snapshot(T, state_old))
            else:
                self.snapshots.append(Snapshot(T, state_new))
            self.i += 1
