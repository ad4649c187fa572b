"""Random instances and the Monte Carlo harness for error-rate sweeps.

Seeding contract: every random quantity is drawn from a
``numpy.random.Generator`` (PCG64) built from an integer seed tuple.
Replicate ``r`` of grid point ``p`` under master seed ``s`` uses the tuple
``(s, p, r)`` for the instance and ``(s, p, r, 1)`` for the estimator, so
results do not depend on execution order or on the number of workers.
"""

from __future__ import annotations

import csv
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import (
    Instance,
    SeparationParams,
    as_alphabet,
    asb_batch,
    build_design_matrix,
    mixture,
    required_unit_count,
    unit_labels,
    wsb_batch,
)
from .estimation import (
    METHODS,
    classification_flag,
    estimate,
    estimation_error,
    prediction_error,
)
from .exceptions import (
    DeltaTooLargeError,
    DimensionError,
    InfeasibleConfigError,
    MabsError,
    SamplingError,
    ValidationError,
)

MAX_TIE_REDRAWS = 100
MAX_REJECTIONS = 10**4
PILOT_DRAWS = 200
PILOT_QUANTILE = 0.10
CSV_COLUMNS = (
    "n", "M", "sigma", "delta", "lambda", "estimator", "replicate",
    "pred_err", "class_err", "est_err", "feasible", "seed",
)

__all__ = [
    "GridPoint",
    "SweepConfig",
    "SweepRecord",
    "CSV_COLUMNS",
    "sample_weights_uniform",
    "sample_weights_separable",
    "sample_assignment",
    "simulate_instance",
    "pilot_delta",
    "run_sweep",
    "write_sweep_csv",
    "fit_decay",
]


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _uniform_batch(rng, size, m, M):
    """Columns uniform on the simplex, rows sorted by norm; ties flagged."""
    E = rng.standard_exponential((size, m, M))
    W = E / E.sum(axis=1, keepdims=True)
    norms = np.linalg.norm(W, axis=-1)
    order = np.argsort(norms, axis=-1, kind="stable")
    W = np.take_along_axis(W, order[..., None], axis=1)
    strict = np.all(np.diff(np.take_along_axis(norms, order, axis=-1), axis=-1) > 0, axis=-1)
    return W, strict


def sample_weights_uniform(m, M, seed=None):
    """Uniform draw from the norm-ordered product of simplices.

    Each column is uniform on the simplex (normalized exponential
    spacings); the rows are then permuted jointly into increasing norm.

    Parameters
    ----------
    m, M : int
        Sources and mixtures, ``m >= 2``.
    seed : int, sequence of int or Generator, optional
    """
    if m < 2 or M < 1:
        raise DimensionError(f"need m >= 2 and M >= 1, got m={m}, M={M}")
    rng = _rng(seed)
    for _ in range(MAX_TIE_REDRAWS):
        W, strict = _uniform_batch(rng, 1, m, M)
        if strict[0]:
            return W[0]
    raise SamplingError(f"row norms tied in {MAX_TIE_REDRAWS} consecutive draws")


def sample_assignment(n, m, M, lam, alphabet, seed=None):
    """Random assignment with ``ceil(M lam)`` planted copies of every unit row.

    The remaining rows are uniform over the whole design matrix.
    """
    alphabet = as_alphabet(alphabet)
    need = required_unit_count(M, lam)
    if need * m > n:
        raise InfeasibleConfigError(
            f"cannot plant {need} copies of {m} unit rows in n={n} observations"
        )
    rng = _rng(seed)
    K = alphabet.k**m
    labels = rng.integers(0, K, size=n)
    pos = rng.permutation(n)[: need * m]
    labels[pos] = np.repeat(unit_labels(alphabet, m), need)
    return labels.astype(np.int64)


def sample_weights_separable(m, M, delta, alphabet, seed=None, max_draws=MAX_REJECTIONS,
                             batch=100, strict=True):
    """Rejection-sample uniform weights until ``min(asb, wsb) >= delta``.

    Returns
    -------
    W : ndarray of shape (m, M)
    drawn : int
        Number of draws consumed, including the accepted one.

    Raises
    ------
    DeltaTooLargeError
        When no draw qualifies within `max_draws` and `strict` is set.
        Otherwise the draw with the largest separation is returned.
    """
    alphabet = as_alphabet(alphabet)
    rng = _rng(seed)
    max_draws = int(max_draws)
    drawn = 0
    best, best_score = None, -np.inf
    while drawn < max_draws:
        size = min(batch, max_draws - drawn)
        cand, ordered = _uniform_batch(rng, size, m, M)
        score = np.where(ordered, np.minimum(asb_batch(cand, alphabet), wsb_batch(cand, alphabet)),
                         -np.inf)
        ok = np.flatnonzero(score >= delta)
        if ok.size:
            return cand[ok[0]], drawn + int(ok[0]) + 1
        i = int(np.argmax(score))
        if score[i] > best_score:
            best, best_score = cand[i], score[i]
        drawn += size
    if strict or best is None:
        raise DeltaTooLargeError(
            f"no weights with min(asb, wsb) >= {delta} in {drawn} draws "
            f"(acceptance rate 0/{drawn})",
            acceptance_rate=0.0,
        )
    return best, drawn


@dataclass(frozen=True)
class GridPoint:
    alphabet: tuple
    m: int
    n: int
    M: int
    sigma: float
    delta: float
    lam: float

    @property
    def params(self):
        return SeparationParams(self.delta, self.lam)


def simulate_instance(point, seed=None, batch=100):
    """Draw ``(omega, z)`` in the regularized space and add Gaussian noise.

    Weights are redrawn until ``min(asb, wsb) >= delta``; draws are made in
    batches of `batch` and the first acceptable one is kept, for at most
    :data:`MAX_REJECTIONS` draws.

    Raises
    ------
    DeltaTooLargeError
        With the observed acceptance rate (zero) when no draw qualifies.
    """
    alphabet = as_alphabet(point.alphabet)
    m, M = point.m, point.M
    rng = _rng(seed)
    W, drawn = sample_weights_separable(m, M, point.delta, alphabet, rng, batch=batch)
    labels = sample_assignment(point.n, m, M, point.lam, alphabet, rng)
    design = build_design_matrix(alphabet, m)
    G = mixture(labels, W, design)
    Y = G + point.sigma * rng.standard_normal(G.shape) if point.sigma > 0 else G.copy()
    inst = Instance.from_truth(alphabet, W, labels, point.params, point.sigma, Y)
    inst.meta["weight_draws"] = drawn
    return inst


def pilot_delta(alphabet, m, M, master_seed=0, draws=PILOT_DRAWS, quantile=PILOT_QUANTILE):
    """Low quantile of ``min(asb, wsb)`` over uniform weight draws."""
    alphabet = as_alphabet(alphabet)
    rng = np.random.default_rng([int(master_seed), m, M])
    W, _ = _uniform_batch(rng, draws, m, M)
    score = np.minimum(asb_batch(W, alphabet), wsb_batch(W, alphabet))
    return float(np.quantile(score, quantile))


def _as_list(x):
    return list(x) if isinstance(x, (list, tuple, np.ndarray)) else [x]


@dataclass
class SweepConfig:
    """Grid and settings of a Monte Carlo sweep.

    ``delta=None`` selects the pilot quantile per ``(m, M)``; ``lam=None``
    selects ``1 / M``.
    """

    alphabet: list = field(default_factory=lambda: [0.0, 1.0])
    m: int = 2
    n: list = field(default_factory=lambda: [60])
    M: list = field(default_factory=lambda: [8])
    sigma: list = field(default_factory=lambda: [0.5])
    delta: float | None = None
    lam: float | None = None
    replicates: int = 10
    estimator: str = "lloyd"
    restarts: int = 10
    resolution: float = 1e-3
    master_seed: int = 0
    out: str | None = None

    def __post_init__(self):
        self.n = [int(v) for v in _as_list(self.n)]
        self.M = [int(v) for v in _as_list(self.M)]
        self.sigma = [float(v) for v in _as_list(self.sigma)]
        self.validate()

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        if "seed" in d:
            d["master_seed"] = d.pop("seed")
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise InfeasibleConfigError(f"unknown sweep config keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)

    def validate(self):
        as_alphabet(self.alphabet)
        if self.replicates < 1:
            raise InfeasibleConfigError("replicates must be at least 1")
        if self.m < 2:
            raise InfeasibleConfigError("m must be at least 2")
        if self.estimator not in METHODS:
            raise InfeasibleConfigError(f"estimator must be one of {METHODS}")
        if any(s < 0 for s in self.sigma):
            raise InfeasibleConfigError("sigma must be nonnegative")
        if self.delta is not None and not self.delta > 0:
            raise InfeasibleConfigError("delta must be positive")
        if self.lam is not None and not self.lam > 0:
            raise InfeasibleConfigError("lambda must be positive")
        for n, M in itertools.product(self.n, self.M):
            if n < self.m:
                raise InfeasibleConfigError(f"n={n} smaller than m={self.m}")
            if M < 1:
                raise InfeasibleConfigError(f"M must be positive, got {M}")
            lam = self.lam_for(M)
            if required_unit_count(M, lam) * self.m > n:
                raise InfeasibleConfigError(
                    f"M*lambda={M * lam:g} unit rows per source do not fit in n={n}"
                )

    def lam_for(self, M):
        return 1.0 / M if self.lam is None else float(self.lam)

    def points(self):
        """Grid points in ``(n, M, sigma)`` product order."""
        deltas = {}
        out = []
        for n, M, sigma in itertools.product(self.n, self.M, self.sigma):
            if self.delta is None:
                if M not in deltas:
                    deltas[M] = pilot_delta(self.alphabet, self.m, M, self.master_seed)
                delta = deltas[M]
            else:
                delta = float(self.delta)
            out.append(GridPoint(tuple(self.alphabet), self.m, n, M, sigma, delta,
                                 self.lam_for(M)))
        return out


@dataclass
class SweepRecord:
    """Per-replicate errors at one grid point; aggregates are recomputed on access."""

    point: GridPoint
    estimator: str
    pred_err: np.ndarray
    class_err: np.ndarray
    est_err: np.ndarray
    feasible: np.ndarray
    seeds: list

    @staticmethod
    def _agg(x):
        x = np.asarray(x, dtype=np.float64)
        x = x[np.isfinite(x)]
        if x.size == 0:
            return math.nan, math.nan
        se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else math.nan
        return float(np.mean(x)), se

    @property
    def aggregates(self):
        return {
            name: dict(zip(("mean", "se"), self._agg(getattr(self, name))))
            for name in ("pred_err", "class_err", "est_err")
        }

    def rows(self):
        p = self.point
        for r in range(len(self.pred_err)):
            yield {
                "n": p.n,
                "M": p.M,
                "sigma": p.sigma,
                "delta": p.delta,
                "lambda": p.lam,
                "estimator": self.estimator,
                "replicate": r,
                "pred_err": float(self.pred_err[r]),
                "class_err": float(self.class_err[r]),
                "est_err": float(self.est_err[r]),
                "feasible": int(self.feasible[r]),
                "seed": self.seeds[r],
            }


def _run_replicate(task):
    point, idx, rep, master, method, restarts, resolution = task
    seed = (master, idx, rep)
    tag = "-".join(str(s) for s in seed)
    inst = simulate_instance(point, seed)
    est_seed = int(np.random.SeedSequence([master, idx, rep, 1]).generate_state(1)[0])
    try:
        res = estimate(inst.Y, inst.alphabet, point.m, point.params, method=method,
                       restarts=restarts, seed=est_seed, resolution=resolution)
    except MabsError:
        return math.nan, math.nan, math.nan, False, tag
    return (
        prediction_error(res, inst),
        float(classification_flag(res, inst)),
        estimation_error(res, inst),
        bool(res.feasible),
        tag,
    )


def run_sweep(config, workers=1):
    """Run every replicate of every grid point.

    Replicates are independent; with ``workers > 1`` they run in a process
    pool and are merged back in ``(point, replicate)`` order. Estimator
    failures are recorded as NaN errors with ``feasible = 0``. If
    ``config.out`` is set the per-replicate CSV is written there.
    """
    if not isinstance(config, SweepConfig):
        raise ValidationError("config must be a SweepConfig")
    points = config.points()
    tasks = [
        (p, i, r, int(config.master_seed), config.estimator, config.restarts,
         config.resolution)
        for i, p in enumerate(points)
        for r in range(config.replicates)
    ]
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_replicate, tasks, chunksize=4))
    else:
        results = [_run_replicate(t) for t in tasks]

    records = []
    R = config.replicates
    for i, p in enumerate(points):
        chunk = results[i * R : (i + 1) * R]
        cols = list(zip(*chunk))
        records.append(SweepRecord(
            point=p,
            estimator=config.estimator,
            pred_err=np.array(cols[0], dtype=np.float64),
            class_err=np.array(cols[1], dtype=np.float64),
            est_err=np.array(cols[2], dtype=np.float64),
            feasible=np.array(cols[3], dtype=bool),
            seeds=list(cols[4]),
        ))
    if config.out:
        write_sweep_csv(records, config.out)
    return records


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def write_sweep_csv(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for rec in records:
            for row in rec.rows():
                w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])


def fit_decay(points, model="exponential"):
    """Least squares line through log-transformed points.

    ``model="exponential"`` fits ``log y`` against ``x``; ``model="power"``
    fits ``log y`` against ``log x``.

    Returns
    -------
    slope, intercept, r2 : float
        ``r2`` is 1 when ``log y`` is constant.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise ValidationError("need at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if np.any(y <= 0):
        raise ValidationError("y values must be positive")
    if model == "power":
        if np.any(x <= 0):
            raise ValidationError("x values must be positive for a power law")
        x = np.log(x)
    elif model != "exponential":
        raise ValidationError(f"unknown model {model!r}")
    ly = np.log(y)
    slope, intercept = np.polyfit(x, ly, 1)
    resid = ly - (slope * x + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - float(np.sum(resid**2)) / ss_tot
    return float(slope), float(intercept), r2
