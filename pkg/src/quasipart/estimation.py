"""Maximum-likelihood fitting of quasi-Gaussian mixtures.

:func:`fit` runs EM for every candidate cluster count and picks one by BIC.
Initialization uses marginal quantiles only (no distance-based clustering).
:func:`recovery_experiment` measures how often the true count is recovered,
and :func:`polar_independence_test` checks radius/angle independence of a
centered 2-D sample.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.stats import chi2_contingency

from . import kernels
from .density import MixtureModel, ProductDensity, QuasiGaussian1D

ALPHA_BOUNDS = (-0.9 + 1e-9, 10.0)
WEIGHT_FLOOR = 1e-10
MONOTONE_TOL = 1e-9
_SWEEPS = 2
_RESP_CUTOFF = 1e-12
_FOLD_FLOOR = 1e-9  # relative to the data scale, for tied observations


class FitError(RuntimeError):
    """No candidate produced a usable model."""


@dataclass(frozen=True)
class FitConfig:
    n_range: tuple[int, int] = (1, 4)
    max_iterations: int = 300
    log_lik_tolerance: float = 1e-5  # on the mean log-likelihood per observation
    restarts: int = 8
    seed: int = 0
    atom_detection: bool = False
    workers: int = 1
    screening_iterations: int = 30

    def __post_init__(self):
        lo, hi = (int(v) for v in self.n_range)
        object.__setattr__(self, "n_range", (lo, hi))
        if lo < 1 or hi < lo:
            raise ValueError(f"n_range must satisfy 1 <= N_min <= N_max, got {self.n_range}")
        if not self.log_lik_tolerance > 0.0:
            raise ValueError("log_lik_tolerance must be > 0")
        if self.restarts < 1 or self.max_iterations < 1 or self.workers < 1 or self.screening_iterations < 1:
            raise ValueError("restarts, max_iterations, workers and screening_iterations must be >= 1")


@dataclass(frozen=True)
class CandidateScore:
    n_components: int
    log_likelihood: float
    penalty: float
    score: float
    converged: bool
    iterations: int


@dataclass(frozen=True)
class FitResult:
    model: MixtureModel
    log_likelihood: float
    n_selected: int
    per_candidate_scores: tuple[CandidateScore, ...]
    converged: bool
    iterations_used: int
    trace: tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> dict:
        return {
            "n_selected": self.n_selected,
            "log_likelihood": self.log_likelihood,
            "converged": self.converged,
            "iterations_used": self.iterations_used,
            "scores": [
                {"n_components": c.n_components, "log_likelihood": c.log_likelihood,
                 "penalty": c.penalty, "score": c.score, "converged": c.converged,
                 "iterations": c.iterations}
                for c in self.per_candidate_scores
            ],
        }


def free_parameters(n_components: int, dim: int, atom: bool = False) -> int:
    """Per marginal: center, two exponents, sigma, mass split; plus N-1 weights and W_0."""
    return 5 * dim * n_components + (n_components - 1) + (1 if atom else 0)


# ---------------------------------------------------------------------------
# likelihood
# ---------------------------------------------------------------------------


def _as_data(data) -> np.ndarray:
    X = np.asarray(data, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"data must be a non-empty (n, d) array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("data contains non-finite values")
    return X


def _atom_mask(model: MixtureModel, X: np.ndarray) -> np.ndarray:
    if model.atom_weight <= 0.0:
        return np.zeros(X.shape[0], dtype=bool)
    return np.all(X == np.asarray(model.atom_location), axis=1)


def log_likelihood(model: MixtureModel, data) -> float:
    """Sum of log-likelihoods under the mixed measure.

    A point equal to the atom location contributes ``log W_0``; every other
    point contributes the log of the continuous density.
    """
    X = _as_data(data)
    if X.shape[1] != model.dim:
        raise ValueError(f"data has dimension {X.shape[1]}, model has {model.dim}")
    mask = _atom_mask(model, X)
    terms = []
    n_atom = int(mask.sum())
    if n_atom:
        terms.append(n_atom * math.log(model.atom_weight))
    rest = X[~mask]
    if rest.shape[0]:
        terms.extend(model.logpdf(rest).tolist())
    # exact summation keeps the value independent of the data order
    return math.fsum(terms)


# ---------------------------------------------------------------------------
# EM on the continuous part
# ---------------------------------------------------------------------------


@dataclass
class _Params:
    weights: np.ndarray  # (K,)
    a: np.ndarray  # (K, d)
    alpha_neg: np.ndarray
    alpha_pos: np.ndarray
    sigma: np.ndarray
    neg_mass: np.ndarray

    def copy(self) -> _Params:
        return _Params(*(np.array(v, copy=True) for v in (self.weights, self.a, self.alpha_neg,
                                                         self.alpha_pos, self.sigma, self.neg_mass)))

    def log_coefficients(self):
        lcn = np.empty_like(self.a)
        lcp = np.empty_like(self.a)
        for idx in np.ndindex(self.a.shape):
            s = self.sigma[idx]
            p = self.neg_mass[idx]
            base = math.log(s) + kernels.LOG_SQRT_2PI
            lcn[idx] = (math.log(p) + base - kernels._log_half_moment(self.alpha_neg[idx], s)) if p > 0.0 else -np.inf
            lcp[idx] = (math.log1p(-p) + base - kernels._log_half_moment(self.alpha_pos[idx], s)) if p < 1.0 else -np.inf
        return lcn, lcp

    def component_logpdf(self, X):
        lcn, lcp = self.log_coefficients()
        return kernels.component_logpdf(X, self.a, self.alpha_neg, self.alpha_pos, self.sigma, lcn, lcp)

    def to_components(self) -> tuple[ProductDensity, ...]:
        K, d = self.a.shape
        return tuple(
            ProductDensity(tuple(
                QuasiGaussian1D.from_mass_split(float(self.a[k, j]), float(self.alpha_neg[k, j]),
                                                float(self.alpha_pos[k, j]), float(self.sigma[k, j]),
                                                float(self.neg_mass[k, j]))
                for j in range(d)))
            for k in range(K))


def _floor_weights(w: np.ndarray) -> np.ndarray:
    w = np.maximum(w, WEIGHT_FLOOR)
    return w / w.sum()


def _quantile_init(X, K, levels_per_axis, scale) -> _Params:
    d = X.shape[1]
    a = np.empty((K, d))
    for j in range(d):
        a[:, j] = np.quantile(X[:, j], levels_per_axis[j])
    # keep initial centers off the data so a negative exponent cannot start at a pole
    a += 1e-7 * scale
    sigma = np.maximum(X.std(axis=0) / K, 1e-3 * scale)
    sigma = np.tile(sigma, (K, 1))
    zeros = np.zeros((K, d))
    return _Params(np.full(K, 1.0 / K), a, zeros.copy(), zeros.copy(), sigma, np.full((K, d), 0.5))


def _initializations(X, K, restarts, rng, scale):
    """Quantile-spread centers, pairing the levels of axis 1 with permuted levels on the others.

    All pairings are tried when there are at most ``restarts`` of them;
    otherwise the identity pairing plus distinct random ones.  Leftover
    restarts start from the marginal ranks of random data points.
    """
    d = X.shape[1]
    levels = (np.arange(K) + 0.5) / K
    perms = list(itertools.permutations(range(K)))
    total = len(perms) ** (d - 1)
    if total <= restarts:
        order = list(itertools.product(perms, repeat=d - 1))
    else:
        order = [tuple(tuple(range(K)) for _ in range(d - 1))]
        tries = 0
        while len(order) < restarts and tries < 50 * restarts:
            tries += 1
            cand = tuple(perms[int(rng.integers(len(perms)))] for _ in range(d - 1))
            if cand not in order:
                order.append(cand)
    inits = [_quantile_init(X, K, [levels] + [levels[list(p)] for p in key], scale) for key in order]
    sorted_cols = [np.sort(X[:, j]) for j in range(d)]
    while len(inits) < restarts:
        idx = rng.choice(X.shape[0], size=K, replace=False)
        lv = [np.searchsorted(sorted_cols[j], X[idx, j]) / X.shape[0] for j in range(d)]
        inits.append(_quantile_init(X, K, lv, scale))
    return inits


@dataclass
class _EMRun:
    params: _Params
    log_likelihood: float
    iterations: int
    converged: bool
    trace: list[float]


def _e_step(X, params: _Params):
    row, R = _normalize_rows(params.component_logpdf(X) + np.log(params.weights))
    return R, float(np.sum(row))


def _normalize_rows(L):
    # row-wise log-sum-exp and the normalized weights; scipy's version carries
    # enough per-call overhead to dominate the EM loops
    m = L.max(axis=1)
    m[~np.isfinite(m)] = 0.0
    E = np.exp(L - m[:, None])
    tot = E.sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        return m + np.log(tot), E / tot[:, None]


def _weighted_loglik(x, r, a, alpha_neg, alpha_pos, sigma, neg_mass):
    law = QuasiGaussian1D.from_mass_split(float(a), float(alpha_neg), float(alpha_pos), float(sigma),
                                          float(neg_mass))
    m = r > 0.0
    return float(np.dot(r[m], law.logpdf(x[m])))


def _snap_to_gap(sorted_x: np.ndarray, a: float) -> float:
    """Move ``a`` to the midpoint of the gap between the observations around it.

    There the floored M-step objective equals the exact likelihood, and no
    observation is closer to the center than half its gap.
    """
    i = int(np.searchsorted(sorted_x, a))
    if i == 0 or i == sorted_x.size:
        return float(a)
    return float(0.5 * (sorted_x[i - 1] + sorted_x[i]))


def _log_fold_floor(x: np.ndarray, tiny: float) -> np.ndarray:
    """Log of half the gap from each value to its nearest neighbour.

    With a negative exponent the likelihood is unbounded as a quasi-center
    approaches an observation.  In the M-step each observation's distance to
    the center is floored at this value, so a center cannot be resolved more
    finely than the data around it.
    """
    order = np.argsort(x, kind="stable")
    gaps = np.diff(x[order])
    near = np.full(x.size, np.inf)
    near[:-1] = gaps
    near[1:] = np.minimum(near[1:], gaps)
    out = np.empty(x.size)
    out[order] = np.log(np.maximum(0.5 * near, tiny))
    return out


def _em(X, init: _Params, config: FitConfig, scale: np.ndarray, max_iterations: int) -> _EMRun:
    """At most ``max_iterations`` EM steps; a step that lowers the likelihood is rejected."""
    n, d = X.shape
    K = init.a.shape[0]
    sigma_lo = 1e-3 * scale
    sigma_hi = 10.0 * scale
    x_lo = X.min(axis=0)
    x_hi = X.max(axis=0)
    cols = [np.ascontiguousarray(X[:, j]) for j in range(d)]
    floors = [_log_fold_floor(c, _FOLD_FLOOR * scale[j]) for j, c in enumerate(cols)]
    sorted_cols = [np.unique(c) for c in cols]
    params = init
    resp, ll = _e_step(X, params)
    trace = [ll]
    if not np.isfinite(ll):
        return _EMRun(params, ll, 0, False, trace)
    converged = False
    clamped = False
    used = 0
    for it in range(1, max_iterations + 1):
        new = params.copy()
        new.weights = _floor_weights(resp.sum(axis=0) / n)
        for k in range(K):
            full = resp[:, k]
            if full.sum() <= 1e-12 * n:
                continue
            # points this component does not explain are dropped from its M-step
            keep = full > _RESP_CUTOFF * full.max()
            r = np.ascontiguousarray(full[keep])
            for j in range(d):
                old = (params.a[k, j], params.alpha_neg[k, j], params.alpha_pos[k, j],
                       params.sigma[k, j], params.neg_mass[k, j])
                a, an, ap, s, p = kernels.marginal_update(
                    np.ascontiguousarray(cols[j][keep]), r, *old[:4], sigma_lo[j], sigma_hi[j],
                    ALPHA_BOUNDS[0], ALPHA_BOUNDS[1], x_lo[j], x_hi[j],
                    np.ascontiguousarray(floors[j][keep]), _SWEEPS)
                a = _snap_to_gap(sorted_cols[j], a)
                # the search maximizes the floored objective; keep the step only if
                # the exact one does not drop, so the likelihood stays monotone
                if _weighted_loglik(cols[j], full, a, an, ap, s, p) < _weighted_loglik(cols[j], full, *old):
                    continue
                new.a[k, j], new.alpha_neg[k, j], new.alpha_pos[k, j] = a, an, ap
                new.sigma[k, j], new.neg_mass[k, j] = s, p
                if s <= sigma_lo[j] or s >= sigma_hi[j] or max(an, ap) >= ALPHA_BOUNDS[1] \
                        or min(an, ap) <= ALPHA_BOUNDS[0] + 1e-6:
                    clamped = True
        new_resp, new_ll = _e_step(X, new)
        if not np.isfinite(new_ll) or new_ll < ll - MONOTONE_TOL * max(1.0, abs(ll)):
            # a drop below the tolerance only reflects search precision
            converged = bool(np.isfinite(new_ll) and ll - new_ll < config.log_lik_tolerance * n)
            break
        gain = new_ll - ll
        params, resp, ll = new, new_resp, new_ll
        trace.append(ll)
        used = it
        if gain < config.log_lik_tolerance * n:
            converged = True
            break
    if clamped:
        warnings.warn("EM parameters reached a stability bound and were clamped", RuntimeWarning, stacklevel=3)
    return _EMRun(params, ll, used, converged, trace)


def _gaussian_screen(X, init: _Params, iterations: int, var_floor: np.ndarray):
    """Closed-form diagonal-Gaussian EM used only to rank initializations."""
    n = X.shape[0]
    w, mu, var = init.weights.copy(), init.a.copy(), init.sigma ** 2
    ll = -np.inf
    for _ in range(iterations):
        L = (-0.5 * ((X[:, None, :] - mu) ** 2 / var + np.log(var)).sum(axis=2)
             - X.shape[1] * kernels.LOG_SQRT_2PI + np.log(w))
        row, R = _normalize_rows(L)
        ll = float(row.sum())
        Nk = R.sum(axis=0) + 1e-300
        w = _floor_weights(Nk / n)
        mu = (R.T @ X) / Nk[:, None]
        var = np.maximum((R.T @ X ** 2) / Nk[:, None] - mu ** 2, var_floor)
    K, d = mu.shape
    out = _Params(w, mu, np.zeros((K, d)), np.zeros((K, d)), np.sqrt(var), np.full((K, d), 0.5))
    return out, ll


def _fit_candidate(X, K, config: FitConfig, scale, seed_seq) -> _EMRun:
    """Rank all initializations by a short Gaussian EM, then run the full EM from the best."""
    rng = np.random.default_rng(seed_seq)
    inits = _initializations(X, K, config.restarts, rng, scale)
    floor = (1e-3 * scale) ** 2
    screened = [_gaussian_screen(X, p, config.screening_iterations, floor) for p in inits]
    # ties go to the earliest restart
    best = max(range(len(screened)), key=lambda i: (screened[i][1], -i))
    start = screened[best][0]
    # keep the start off the data so a negative exponent cannot begin at a pole
    start.a += 1e-7 * scale
    return _em(X, start, config, scale, config.max_iterations)


def _detect_atom(X):
    rows, counts = np.unique(X, axis=0, return_counts=True)
    top = int(np.argmax(counts))
    if counts[top] < 2:
        return None, 0
    return rows[top], int(counts[top])


def fit(data, config: FitConfig | None = None) -> FitResult:
    """Fit mixtures with ``N`` in ``config.n_range`` and keep the best BIC score."""
    config = config or FitConfig()
    X = _as_data(data)
    n, d = X.shape

    atom_loc, n_atom = (None, 0)
    if config.atom_detection:
        atom_loc, n_atom = _detect_atom(X)
    if n_atom == n:
        model = MixtureModel.atom_only(tuple(float(v) for v in atom_loc))
        return FitResult(model, 0.0, 0, (), True, 0)
    if np.all(X == X[0]):
        raise ValueError("all data points are identical; enable atom_detection to fit an atom")
    if n_atom:
        mask = np.all(X == atom_loc, axis=1)
        Xc = np.ascontiguousarray(X[~mask])
    else:
        Xc = np.ascontiguousarray(X)
    w0 = n_atom / n
    m = Xc.shape[0]

    scale = Xc.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    lo, hi = config.n_range
    candidates = [K for K in range(lo, hi + 1) if n >= 10 * free_parameters(K, d, n_atom > 0)]
    dropped = [K for K in range(lo, hi + 1) if K not in candidates]
    if dropped:
        warnings.warn(f"skipping N={dropped}: fewer than 10 observations per free parameter",
                      RuntimeWarning, stacklevel=2)
    if not candidates:
        raise ValueError(f"n={n} is too small for any candidate in {config.n_range}")
    if m < max(candidates):
        raise ValueError("fewer continuous observations than components")

    atom_ll = n_atom * math.log(w0) if n_atom else 0.0
    cont_scale = m * math.log1p(-w0) if n_atom else 0.0
    root = np.random.SeedSequence(config.seed)
    seeds = root.spawn(hi + 1)

    scores = []
    runs = {}
    for K in candidates:
        run = _fit_candidate(Xc, K, config, scale, seeds[K])
        ll = run.log_likelihood + cont_scale + atom_ll
        pen = 0.5 * free_parameters(K, d, n_atom > 0) * math.log(n)
        scores.append(CandidateScore(K, ll, pen, ll - pen, run.converged, run.iterations))
        runs[K] = run
    usable = [c for c in scores if np.isfinite(c.score)]
    if not usable:
        raise FitError("no candidate produced a finite likelihood")
    best = max(usable, key=lambda c: (c.score, -c.n_components))
    run = runs[best.n_components]
    weights = run.params.weights * (1.0 - w0)
    weights[-1] = (1.0 - w0) - math.fsum(weights[:-1])
    model = MixtureModel(tuple(float(w) for w in weights), run.params.to_components(),
                         w0, tuple(float(v) for v in atom_loc) if n_atom else None)
    trace = tuple(t + cont_scale + atom_ll for t in run.trace)
    return FitResult(model, log_likelihood(model, X), best.n_components, tuple(scores),
                     run.converged, run.iterations, trace)


# ---------------------------------------------------------------------------
# recovery experiment
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecoveryRow:
    n: int
    trial: int
    n_hat: int
    sqrt_n_dev: float
    center_error: float = float("nan")  # largest matched center distance


@dataclass(frozen=True)
class RecoveryTable:
    true_components: int
    rows: tuple[RecoveryRow, ...]

    def accuracy(self) -> dict[int, float]:
        out: dict[int, list[bool]] = {}
        for r in self.rows:
            out.setdefault(r.n, []).append(r.n_hat == self.true_components)
        return {n: float(np.mean(v)) for n, v in out.items()}

    def hits(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for r in self.rows:
            out[r.n] = out.get(r.n, 0) + int(r.n_hat == self.true_components)
        return out


def _centers(model: MixtureModel) -> np.ndarray:
    return np.array([[m.a for m in c.components] for c in model.components])


def match_components(truth: MixtureModel, fitted: MixtureModel) -> np.ndarray:
    """Index into ``fitted`` for every true component, minimizing total center distance."""
    A, B = _centers(truth), _centers(fitted)
    cost = np.linalg.norm(A[:, None, :] - B[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    out = np.empty(len(A), dtype=int)
    out[rows] = cols
    return out


def parameter_vector(model: MixtureModel, order=None) -> np.ndarray:
    """Weights, then per component: centers, exponents, sigmas, negative-mass fractions."""
    idx = range(model.n_components) if order is None else order
    parts = []
    if model.atom_weight > 0.0:
        parts.append([model.atom_weight])
    parts.append([model.weights[k] for k in idx])
    for k in idx:
        ms = model.components[k].components
        parts.append([m.a for m in ms])
        parts.append([m.alpha_neg for m in ms])
        parts.append([m.alpha_pos for m in ms])
        parts.append([m.sigma for m in ms])
        parts.append([m.negative_mass for m in ms])
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def recovery_experiment(true_model: MixtureModel, n_grid, trials: int, seed: int = 0,
                        config: FitConfig | None = None) -> RecoveryTable:
    """Repeated sample-and-fit at every ``n``.

    ``sqrt_n_dev`` is ``sqrt(n) * ||theta_hat - theta_0||`` after label matching,
    or NaN when the selected count is wrong.  Trials run on ``config.workers``
    threads; each trial owns a child seed, so results do not depend on it.
    """
    config = config or FitConfig()
    N = true_model.n_components
    theta0 = parameter_vector(true_model)
    streams = np.random.SeedSequence(seed).spawn(len(n_grid))
    tasks = [(int(n), t, child) for n, stream in zip(n_grid, streams)
             for t, child in enumerate(stream.spawn(trials))]

    def run(task):
        n, t, child = task
        sample_seed, fit_seed = child.generate_state(2)
        X = true_model.sample(n, np.random.default_rng(int(sample_seed)))
        res = fit(X, dataclasses.replace(config, seed=int(fit_seed), workers=1))
        if res.n_selected == N and N > 0:
            order = match_components(true_model, res.model)
            dev = math.sqrt(n) * float(np.linalg.norm(parameter_vector(res.model, order) - theta0))
            err = float(np.linalg.norm(_centers(res.model)[order] - _centers(true_model), axis=1).max())
        else:
            dev = err = float("nan")
        return RecoveryRow(n, t, res.n_selected, dev, err)

    # warning filters are process-wide, so they are set here rather than per thread
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        if config.workers > 1:
            with ThreadPoolExecutor(config.workers) as pool:
                rows = list(pool.map(run, tasks))
        else:
            rows = [run(task) for task in tasks]
    return RecoveryTable(N, tuple(rows))


# ---------------------------------------------------------------------------
# polar independence
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PolarTestResult:
    statistic: float
    p_value: float
    dof: int
    reject: bool
    significance: float
    table: np.ndarray = field(repr=False)


def _equal_count_bins(v: np.ndarray, bins: int) -> np.ndarray:
    ranks = np.argsort(np.argsort(v, kind="stable"), kind="stable")
    return (ranks * bins) // v.size


def polar_independence_test(sample_2d, bins: int = 8, significance: float = 0.01,
                            center=(0.0, 0.0)) -> PolarTestResult:
    """Chi-square test of independence between radius and angle about ``center``.

    Both coordinates are cut into ``bins`` equal-count classes by rank.
    """
    X = _as_data(sample_2d)
    if X.shape[1] != 2:
        raise ValueError(f"polar test needs 2-D data, got d={X.shape[1]}")
    if X.shape[0] < 1000:
        raise ValueError(f"polar test needs n >= 1000, got {X.shape[0]}")
    if bins < 2 or not 0.0 < significance < 1.0:
        raise ValueError("bins must be >= 2 and significance in (0, 1)")
    Y = X - np.asarray(center, dtype=float)
    rho = np.hypot(Y[:, 0], Y[:, 1])
    zeta = np.arctan2(Y[:, 1], Y[:, 0])
    table = np.zeros((bins, bins), dtype=np.int64)
    np.add.at(table, (_equal_count_bins(rho, bins), _equal_count_bins(zeta, bins)), 1)
    stat, p, dof, _ = chi2_contingency(table, correction=False)
    return PolarTestResult(float(stat), float(p), int(dof), bool(p < significance), significance, table)
