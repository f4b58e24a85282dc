"""Evaluation: manipulability index error, trajectory RMSE, trial summaries."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .chains import SerialChain
from .constraints import TRUNCATE_PINV, ConstraintModel, PinvPolicy, manipulability
from .errors import SimulationDiverged, ZeroVariance
from .policies import MANIP_GRADIENT, NullPolicy, TaskPolicy
from .simulator import DIVERGED, simulate


def manipulability_values(model: ConstraintModel, chain: SerialChain, Q) -> np.ndarray:
    return np.array([manipulability(model, chain, q) for q in np.atleast_2d(Q)])


def nmie_values(v, v_hat) -> float:
    """Mean squared error of ``v_hat`` normalised by the population variance of ``v``."""
    v = np.asarray(v, dtype=float)
    v_hat = np.asarray(v_hat, dtype=float)
    if v.shape != v_hat.shape or v.ndim != 1:
        raise ValueError("v and v_hat must be 1-D arrays of equal length")
    if len(v) < 2:
        raise ValueError("need at least two test states")
    var = float(np.var(v))
    if not var > 0:
        raise ZeroVariance("manipulability is constant over the test states")
    return float(np.mean((v - v_hat) ** 2) / var)


def nmie(true_model: ConstraintModel, learned: ConstraintModel, chain: SerialChain, test_states) -> float:
    return nmie_values(manipulability_values(true_model, chain, test_states),
                       manipulability_values(learned, chain, test_states))


@dataclass
class RmseResult:
    rmse: float
    status_true: str
    status_learned: str
    states_true: np.ndarray
    states_learned: np.ndarray

    @property
    def ok(self) -> bool:
        return DIVERGED not in (self.status_true, self.status_learned)


def trajectory_rmse(chain: SerialChain, true_model: ConstraintModel, learned: ConstraintModel, start,
                    target, steps: int = 100, dt: float = 0.02, alpha: float = 1.0, h: float = 1e-6,
                    pinv_policy: PinvPolicy = TRUNCATE_PINV, strict: bool = True) -> RmseResult:
    """Joint-space RMSE between gradient ascent on the true and on the learnt index.

    Both runs execute the true constraint for the task term; only the
    manipulability being ascended differs. With ``strict`` a diverged run
    raises :class:`SimulationDiverged`, otherwise it is flagged in the result
    with an infinite RMSE.
    """
    b = TaskPolicy(target)
    runs = []
    for model in (true_model, learned):
        p = NullPolicy(MANIP_GRADIENT, h=h, alpha=alpha, model=model)
        runs.append(simulate(chain, true_model, b, p, pinv_policy, start, steps, dt, true_model=true_model))
    a, c = runs
    if DIVERGED in (a.status, c.status):
        if strict:
            raise SimulationDiverged("a manipulability-gradient run diverged")
        return RmseResult(float("inf"), a.status, c.status, a.trajectory.states, c.trajectory.states)
    d = a.trajectory.states - c.trajectory.states
    return RmseResult(float(np.sqrt(np.mean(d**2))), a.status, c.status, a.trajectory.states, c.trajectory.states)


@dataclass
class Summary:
    mean: float
    sd: float
    n: int
    single: bool = False


def summarize(values: Sequence[float]) -> Summary:
    """Mean and sample (n - 1) standard deviation; one value gives sd 0, flagged."""
    x = np.asarray(list(values), dtype=float)
    if x.size == 0:
        raise ValueError("cannot summarize an empty list")
    if x.size == 1:
        return Summary(float(x[0]), 0.0, 1, True)
    return Summary(float(x.mean()), float(x.std(ddof=1)), int(x.size))


@dataclass
class EvalReport:
    """Per-trial metrics with their summary."""

    label: str
    nmie: list = field(default_factory=list)
    rmse: list = field(default_factory=list)
    v_variance: list = field(default_factory=list)
    n_points: list = field(default_factory=list)
    k: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    def add(self, nmie: Optional[float] = None, rmse: Optional[float] = None, v_variance: float = float("nan"),
            n_points: int = 0, k: Optional[int] = None, flag: str = ""):
        if nmie is not None and nmie < 0:
            raise ValueError("nmie must be nonnegative")
        self.nmie.append(nmie)
        self.rmse.append(rmse)
        self.v_variance.append(v_variance)
        self.n_points.append(n_points)
        self.k.append(k)
        self.flags.append(flag)

    def _summary(self, values) -> Optional[Summary]:
        vals = [v for v, f in zip(values, self.flags) if v is not None and not f]
        return summarize(vals) if vals else None

    @property
    def nmie_summary(self) -> Optional[Summary]:
        return self._summary(self.nmie)

    @property
    def rmse_summary(self) -> Optional[Summary]:
        return self._summary(self.rmse)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "nmie", "rmse", "v_variance", "n_points", "k", "flag"])
        for i, row in enumerate(zip(self.nmie, self.rmse, self.v_variance, self.n_points, self.k, self.flags)):
            w.writerow([i] + ["" if x is None else (f"{x:.17g}" if isinstance(x, float) else x) for x in row])
        return buf.getvalue()

    def summary_block(self) -> str:
        lines = [f"[{self.label}] trials={len(self.flags)} flagged={sum(bool(f) for f in self.flags)}"]
        for name, s in (("nmie", self.nmie_summary), ("rmse", self.rmse_summary)):
            if s is not None:
                note = " (single trial)" if s.single else ""
                lines.append(f"  {name}: mean={s.mean:.6g} sd={s.sd:.6g} n={s.n}{note}")
        ks = [k for k in self.k if k is not None]
        if ks:
            lines.append(f"  k: {sorted(set(ks))}")
        return "\n".join(lines)

