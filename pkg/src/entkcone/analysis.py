"""Distance curves, phase-transition detection, plateau statistics and MDS embedding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .ntk import kernel_distance

DEFAULT_RHO = 0.2
DEFAULT_WINDOW = 3


@dataclass(frozen=True)
class DistanceCurve:
    """``(t, S)`` points; ``kind`` is ``ref`` (param = tau) or ``adj`` (param = dt)."""

    kind: str
    param: int
    points: tuple

    @property
    def ts(self):
        return [t for t, _ in self.points]

    @property
    def values(self):
        return [s for _, s in self.points]


@dataclass
class ConeReport:
    transition: int | None
    plateau: dict = field(default_factory=dict)      # tau -> (level, variation)
    adjacent_ceiling: dict = field(default_factory=dict)  # dt -> max S over final third
    velocity: dict = field(default_factory=dict)     # dt -> [(t, v)]

    def to_text(self):
        lines = ["transition_iteration = " + ("absent" if self.transition is None
                                              else str(self.transition))]
        for tau, (level, var) in sorted(self.plateau.items()):
            lines.append(f"plateau tau={tau} level={level:.17g} variation={var:.17g}")
        for dt, ceil in sorted(self.adjacent_ceiling.items()):
            lines.append(f"adjacent_ceiling dt={dt} max_final_third={ceil:.17g}")
        for dt, series in sorted(self.velocity.items()):
            vals = [v for _, v in series]
            mean = float(np.mean(vals)) if vals else 0.0
            lines.append(f"velocity dt={dt} points={len(vals)} mean={mean:.17g}")
        return "\n".join(lines) + "\n"


def final_third(seq):
    """The last ceil(m/3) entries of a sequence."""
    if not seq:
        return seq
    return seq[len(seq) - max(1, math.ceil(len(seq) / 3)):]


def checkpoint_spacing(iterations):
    diffs = np.diff(iterations)
    return int(np.gcd.reduce(diffs)) if len(diffs) else 0


def distance_to_references(traj, taus, key=None):
    key = traj.gram_key(key)
    its = traj.iterations
    curves = []
    for tau in taus:
        ref = traj.gram(tau, key)
        pts = tuple((t, kernel_distance(traj.gram(t, key), ref)) for t in its)
        curves.append(DistanceCurve("ref", int(tau), pts))
    return curves


def adjacent_distances(traj, dts, key=None):
    its = traj.iterations
    spacing = checkpoint_spacing(its)
    present = set(its)
    curves = []
    for dt in dts:
        if dt <= 0 or (spacing and dt % spacing):
            raise UsageError(f"dt={dt} is not a positive multiple of the checkpoint spacing {spacing}")
        pts = []
        if len(its) > 1:
            key = traj.gram_key(key)
            pts = [(t, kernel_distance(traj.gram(t, key), traj.gram(t + dt, key)))
                   for t in its if t + dt in present]
        curves.append(DistanceCurve("adj", int(dt), tuple(pts)))
    return curves


def velocity_series(curve):
    """Kernel velocity ``S / dt`` from an adjacent-distance curve."""
    if curve.kind != "adj":
        raise UsageError("velocity needs an adjacent-distance curve")
    return [(t, s / curve.param) for t, s in curve.points]


def detect_phase_transition(series, rho=DEFAULT_RHO, window=DEFAULT_WINDOW):
    """First ``t`` opening ``window`` consecutive points with ``v <= rho * running max``.

    ``series`` holds ``(t, v)`` pairs or bare values (then ``t`` is the
    position). Returns ``None`` when no such run exists.
    """
    if not 0 < rho < 1 or window < 1:
        raise UsageError("need 0 < rho < 1 and window >= 1")
    pts = [p if isinstance(p, (tuple, list)) else (i, p) for i, p in enumerate(series)]
    run_max = -np.inf
    streak = 0
    for i, (_, v) in enumerate(pts):
        run_max = max(run_max, v)
        streak = streak + 1 if v <= rho * run_max else 0
        if streak == window:
            return pts[i - window + 1][0]
    return None


def pairwise_distances(traj, key=None):
    """Symmetric matrix of kernel distances between every pair of checkpoints."""
    key = traj.gram_key(key) if len(traj) else key
    grams = [traj.gram(t, key) for t in traj.iterations]
    m = len(grams)
    S = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            S[i, j] = S[j, i] = kernel_distance(grams[i], grams[j])
    return S


@dataclass
class Embedding2D:
    points: list           # (t, x, y)
    stress: float
    method: str = "classical-mds"

    @property
    def coords(self):
        return np.array([[x, y] for _, x, y in self.points]).reshape(-1, 2)


def cone_embedding(S, iterations=None, tol=1e-12):
    """Classical (Torgerson) MDS of kernel distances, treating S as squared distance.

    Coordinates come from the top two eigenpairs of ``-J S J / 2`` with
    negative eigenvalues clamped to zero, translated so the first checkpoint
    sits at the origin. ``stress = ||D - Dhat||_F / ||D||_F`` with
    ``D = sqrt(S)``.
    """
    S = np.asarray(S, dtype=np.float64)
    m = S.shape[0]
    if S.ndim != 2 or S.shape != (m, m):
        raise UsageError("distance matrix must be square")
    if m == 0:
        raise UsageError("distance matrix is empty")
    scale = max(1.0, float(np.abs(S).max()))
    if not np.allclose(S, S.T, rtol=0, atol=tol * scale):
        raise UsageError("distance matrix is not symmetric")
    if np.any(np.abs(np.diag(S)) > tol * scale):
        raise UsageError("distance matrix has a nonzero diagonal")
    its = list(range(m)) if iterations is None else list(iterations)
    if len(its) != m:
        raise UsageError("one iteration label per checkpoint is required")

    J = np.eye(m) - np.full((m, m), 1.0 / m)
    B = -0.5 * J @ S @ J
    B = 0.5 * (B + B.T)
    evals, evecs = np.linalg.eigh(B)
    order = np.argsort(evals)[::-1][:2]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # fix eigenvector signs so output is reproducible
    for k in range(evecs.shape[1]):
        if evecs[np.argmax(np.abs(evecs[:, k])), k] < 0:
            evecs[:, k] = -evecs[:, k]
    X = evecs * np.sqrt(evals)
    if X.shape[1] < 2:
        X = np.hstack([X, np.zeros((m, 2 - X.shape[1]))])
    X = X - X[0]

    D = np.sqrt(np.clip(S, 0.0, None))
    diff = X[:, None, :] - X[None, :, :]
    Dhat = np.sqrt(np.sum(diff * diff, axis=-1))
    dnorm = np.linalg.norm(D)
    stress = float(np.linalg.norm(D - Dhat) / dnorm) if dnorm > 0 else 0.0
    pts = [(int(t), float(x), float(y)) for t, (x, y) in zip(its, X)]
    return Embedding2D(pts, stress)


def cone_report(traj, taus, dts, rho=DEFAULT_RHO, window=DEFAULT_WINDOW, key=None):
    """Transition point, per-tau plateau statistics and velocity series of one run.

    The transition is detected on the velocity series of the smallest dt.
    Plateau level and variation are the mean and max-min of each reference
    curve over the final third of checkpoints.
    """
    ref_curves = distance_to_references(traj, taus, key) if taus else []
    adj_curves = adjacent_distances(traj, sorted(dts), key) if dts else []
    report = ConeReport(None)
    for curve in ref_curves:
        tail = final_third(curve.values)
        level = float(np.mean(tail)) if tail else 0.0
        var = float(max(tail) - min(tail)) if tail else 0.0
        report.plateau[curve.param] = (level, var)
    for curve in adj_curves:
        report.velocity[curve.param] = velocity_series(curve)
        tail = final_third(curve.values)
        report.adjacent_ceiling[curve.param] = float(max(tail)) if tail else 0.0
    if adj_curves and adj_curves[0].points:
        report.transition = detect_phase_transition(report.velocity[adj_curves[0].param],
                                                    rho, window)
    return report
