"""Decision rules over a family of hypothesis densities and their risk.

Hypothesis ``H_k`` says the observation has density ``f_k``.  A rule assigns
every point a probability vector ``phi(x)`` over labels; a deterministic rule
puts all mass on one label.  With misclassification weights ``v[k, i]`` (cost
of deciding ``i`` when ``k`` holds) the cost densities and risk are

    g_i = sum_k v[k, i] f_k,    Z = sum_{i,k} v[k, i] * alpha[i, k],
    alpha[i, k] = int phi_i f_k dx,

so ``Z = sum_i int phi_i g_i dx`` and the rule deciding ``argmin_j g_j(x)``
minimizes it.  Label 0 is the normal state for false-alarm and non-detection
probabilities.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .density import MixtureModel, ProductDensity, QuasiGaussian1D


class RuleValidationError(ValueError):
    """A decision rule is incomplete or ambiguous at some point."""


@dataclass(frozen=True)
class WeightMatrix:
    """Non-negative misclassification weights with a zero diagonal.

    ``v[k, i]`` is the cost of deciding ``i`` when ``k`` holds.
    """

    v: np.ndarray

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] < 2:
            raise ValueError(f"v: expected a square matrix of size >= 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("v: entries must be finite")
        if np.any(v < 0.0):
            i, k = np.argwhere(v < 0.0)[0]
            raise ValueError(f"v[{i}][{k}]: must be >= 0, got {v[i, k]}")
        diag = np.flatnonzero(np.diag(v))
        if diag.size:
            raise ValueError(f"v[{diag[0]}][{diag[0]}]: diagonal must be zero")
        if not np.any(v > 0.0):
            raise ValueError("v: at least one off-diagonal weight must be positive")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)

    @property
    def n_hypotheses(self) -> int:
        return self.v.shape[0]

    @classmethod
    def unit(cls, n_hypotheses: int) -> WeightMatrix:
        return cls(1.0 - np.eye(n_hypotheses))

    def scaled(self, c: float) -> WeightMatrix:
        return WeightMatrix(self.v * c)

    def to_dict(self) -> dict:
        return {"v": self.v.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> WeightMatrix:
        if not isinstance(doc, dict) or "v" not in doc:
            raise ValueError("v: missing field")
        return cls(doc["v"])

    @classmethod
    def load(cls, path) -> WeightMatrix:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _as_mixture(density):
    if isinstance(density, MixtureModel):
        return density
    if isinstance(density, ProductDensity):
        return density.as_mixture()
    if isinstance(density, QuasiGaussian1D):
        return MixtureModel.single(density)
    raise TypeError(f"unsupported density type {type(density).__name__}")


class HypothesisFamily:
    """Densities ``f_0 .. f_N`` of common dimension, indexed by hypothesis label."""

    def __init__(self, densities: Sequence):
        models = tuple(_as_mixture(d) for d in densities)
        if len(models) < 2:
            raise ValueError("a hypothesis family needs at least two densities")
        dims = {m.dim for m in models}
        if len(dims) != 1:
            raise ValueError(f"densities differ in dimension: {sorted(dims)}")
        self.densities = models
        self.dim = dims.pop()

    def __len__(self):
        return len(self.densities)

    def pdf_matrix(self, X: np.ndarray) -> np.ndarray:
        """(n, N+1) matrix of continuous densities ``f_k`` at the rows of ``X``."""
        X = np.ascontiguousarray(X, dtype=float).reshape(-1, self.dim)
        return np.column_stack([m.pdf(X) if m.components else np.zeros(len(X))
                                for m in self.densities])

    def box_masses(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """(m, N+1) continuous probabilities of the boxes ``[lo[m], hi[m]]``."""
        return np.column_stack([m.box_mass(lo, hi) for m in self.densities])

    def atoms(self) -> list[tuple[int, float, np.ndarray]]:
        return [(k, m.atom_weight, np.asarray(m.atom_location)) for k, m in enumerate(self.densities)
                if m.atom_weight > 0.0]

    def bounds(self, pad_sigmas: float) -> list[tuple[float, float]]:
        """Per-axis box reaching ``pad_sigmas`` quasi-standards beyond every quasi-center."""
        out = []
        for j in range(self.dim):
            lo, hi = math.inf, -math.inf
            for m in self.densities:
                for comp in m.components:
                    law = comp.components[j]
                    lo = min(lo, law.a - pad_sigmas * law.sigma)
                    hi = max(hi, law.a + pad_sigmas * law.sigma)
                if m.atom_weight > 0.0:
                    lo = min(lo, m.atom_location[j])
                    hi = max(hi, m.atom_location[j])
            if lo == hi:
                lo, hi = lo - 1.0, hi + 1.0
            out.append((lo, hi))
        return out

    def fold_points(self) -> list[np.ndarray]:
        """Per-axis sorted quasi-centers, where densities may be singular or kinked."""
        return [np.unique([comp.components[j].a for m in self.densities for comp in m.components])
                for j in range(self.dim)]


def _weighted_sum(F, v):
    # F @ v with 0 * inf taken as 0: a pole of f_k adds nothing to labels with v[k, i] = 0
    with np.errstate(invalid="ignore"):
        G = F @ v
    bad = np.isnan(G).any(axis=1)
    if bad.any():
        Fb = F[bad][:, :, None]
        with np.errstate(invalid="ignore"):
            G[bad] = np.where(v > 0.0, Fb * v, 0.0).sum(axis=1)
    return G


def cost_table(weights: WeightMatrix, family: HypothesisFamily, X) -> np.ndarray:
    """(n, N+1) table of ``g_i(x) = sum_k v[k, i] f_k(x)``."""
    _check_sizes(weights, family)
    return _weighted_sum(family.pdf_matrix(X), weights.v)


def cost_density(weights: WeightMatrix, family: HypothesisFamily, i: int, x):
    if not 0 <= i < weights.n_hypotheses:
        raise IndexError(f"label {i} out of range 0..{weights.n_hypotheses - 1}")
    X = np.asarray(x, dtype=float)
    g = cost_table(weights, family, X.reshape(-1, family.dim))[:, i]
    return float(g[0]) if X.ndim <= 1 and g.size == 1 else g


def _check_sizes(weights, family):
    if weights.n_hypotheses != len(family):
        raise ValueError(f"weight matrix has {weights.n_hypotheses} hypotheses, family has {len(family)}")


@dataclass(frozen=True)
class DecisionRule:
    """A map from points to labels (deterministic) or to label probabilities.

    ``func`` is vectorized: it receives an (n, d) array and returns an (n,)
    integer array for deterministic rules or an (n, n_labels) array otherwise.
    """

    n_labels: int
    kind: str
    func: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    dim: int = 1
    # set by optimal_rule: (family, v) such that labels = argmin(f(x) @ v)
    argmin_of: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("deterministic", "randomized"):
            raise ValueError(f"kind must be 'deterministic' or 'randomized', got {self.kind!r}")

    @classmethod
    def constant(cls, label: int, n_labels: int, dim: int = 1) -> DecisionRule:
        return cls(n_labels, "deterministic", lambda X: np.full(len(X), label, dtype=np.int64), dim)

    def _points(self, x):
        return np.ascontiguousarray(x, dtype=float).reshape(-1, self.dim)

    def probabilities(self, x) -> np.ndarray:
        X = self._points(x)
        if self.kind == "deterministic":
            labels = np.asarray(self.func(X))
            P = np.zeros((len(X), self.n_labels))
            ok = (labels >= 0) & (labels < self.n_labels)
            P[np.flatnonzero(ok), labels[ok]] = 1.0
            return P
        return np.asarray(self.func(X), dtype=float).reshape(len(X), self.n_labels)

    def labels(self, x) -> np.ndarray:
        X = self._points(x)
        if self.kind == "deterministic":
            return np.asarray(self.func(X), dtype=np.int64)
        return np.argmax(self.probabilities(X), axis=1)

    def classify(self, x):
        """Label (deterministic) or probability vector (randomized) for one point."""
        if self.kind == "deterministic":
            return int(self.labels(x)[0])
        return self.probabilities(x)[0]


def optimal_rule(weights: WeightMatrix, family: HypothesisFamily) -> DecisionRule:
    """Deterministic rule choosing the label of smallest cost density; ties go to the lowest label.

    Points sitting exactly on a hypothesis atom are decided by the atom masses,
    which dominate any density there.
    """
    _check_sizes(weights, family)
    v = weights.v
    atoms = family.atoms()

    def labels(X):
        out = np.argmin(cost_table(weights, family, X), axis=1)
        if atoms:
            atom_cost = np.zeros((len(X), v.shape[0]))
            hit = np.zeros(len(X), dtype=bool)
            for k, w0, loc in atoms:
                at = np.all(X == loc, axis=1)
                atom_cost[at] += w0 * v[k]
                hit |= at
            out[hit] = np.argmin(atom_cost[hit], axis=1)
        return out

    return DecisionRule(weights.n_hypotheses, "deterministic", labels, family.dim,
                        argmin_of=(family, v))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str  # "completeness" | "unambiguity" | "range"
    index: int
    phi: tuple[float, ...]


@dataclass(frozen=True)
class RuleVerdict:
    ok: bool
    violations: tuple[Violation, ...]
    n_probes: int

    @property
    def first_violation(self) -> Violation | None:
        return self.violations[0] if self.violations else None


COMPLETENESS_TOL = 1e-12


def _violations(P, limit=None):
    found = []
    sums = P.sum(axis=1)
    bad_range = np.any((P < 0.0) | (P > 1.0), axis=1)
    bad_complete = np.abs(sums - 1.0) > COMPLETENESS_TOL
    # phi_i * phi_k == 0 for all i != k  <=>  at most one nonzero entry
    bad_unamb = np.count_nonzero(P, axis=1) > 1
    for idx in np.flatnonzero(bad_range | bad_complete | bad_unamb):
        kind = "range" if bad_range[idx] else "completeness" if bad_complete[idx] else "unambiguity"
        found.append(Violation(kind, int(idx), tuple(float(p) for p in P[idx])))
        if limit is not None and len(found) >= limit:
            break
    return found


def validate_rule(rule: DecisionRule, probe_points) -> RuleVerdict:
    """Check completeness and unambiguity of ``rule`` at every probe point."""
    X = rule._points(probe_points)
    P = rule.probabilities(X)
    found = _violations(P)
    return RuleVerdict(not found, tuple(found), len(X))


def _require_valid(P, X):
    found = _violations(P, limit=1)
    if found:
        v = found[0]
        raise RuleValidationError(
            f"rule violates {v.kind} at x={X[v.index].tolist()}: phi={list(v.phi)}")


# ---------------------------------------------------------------------------
# risk reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ErrorMatrix:
    """``alpha[i, k]``: probability of deciding ``i`` when ``k`` holds."""

    alpha: np.ndarray
    standard_errors: np.ndarray

    def column_sums(self) -> np.ndarray:
        return self.alpha.sum(axis=0)


@dataclass(frozen=True)
class RiskReport:
    z: float
    q_fa: float
    q_nd: float
    error_matrix: ErrorMatrix
    method: str
    z_stderr: float = 0.0
    q_fa_stderr: float = 0.0
    q_nd_stderr: float = 0.0
    error_estimate: float = 0.0
    truncated_mass: float = 0.0

    @classmethod
    def from_alpha(cls, weights: WeightMatrix, alpha, standard_errors, method, **extra) -> RiskReport:
        alpha = np.asarray(alpha, dtype=float)
        z = float(np.sum(weights.v.T * alpha))
        return cls(z, float(alpha[1:, 0].sum()), float(alpha[0, 1:].sum()),
                   ErrorMatrix(alpha, np.asarray(standard_errors, dtype=float)), method, **extra)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "z": self.z,
            "z_stderr": self.z_stderr,
            "q_fa": self.q_fa,
            "q_fa_stderr": self.q_fa_stderr,
            "q_nd": self.q_nd,
            "q_nd_stderr": self.q_nd_stderr,
            "error_estimate": self.error_estimate,
            "truncated_mass": self.truncated_mass,
            "alpha": self.error_matrix.alpha.tolist(),
            "standard_errors": self.error_matrix.standard_errors.tolist(),
        }

    def csv_rows(self) -> list[tuple[int, int, float, float]]:
        """Flat ``(i, k, alpha, stderr)`` rows."""
        A = self.error_matrix.alpha
        S = self.error_matrix.standard_errors
        return [(i, k, float(A[i, k]), float(S[i, k])) for i in range(A.shape[0]) for k in range(A.shape[1])]


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------

_DEFAULT_MAX_DEPTH = {1: 48, 2: 8, 3: 3}
_DEFAULT_MIN_DEPTH = {1: 6, 2: 3, 3: 1}


@dataclass(frozen=True)
class GridSpec:
    """Settings for the adaptive tensor-cell quadrature.

    The box defaults to ``pad_sigmas`` quasi-standards beyond every
    quasi-center; quasi-centers are cell edges so fold singularities never
    fall on a node.  A cell is refined while halving it changes its
    contribution by more than ``max(rtol * mass, atol * volume share)`` or
    while the rule is not constant over its nodes.  A rule given only as a
    function is seen only at the nodes, so for such rules every cell is
    refined at least ``min_depth`` times first; features narrower than the
    resulting node spacing can still be missed.
    """

    bounds: Sequence[tuple[float, float]] | None = None
    pad_sigmas: float = 10.0
    order: int = 6
    initial_cells: int = 8
    rtol: float = 1e-11
    atol: float = 1e-13
    max_depth: int | None = None
    min_depth: int | None = None


def _tensor_rule(order, d):
    x, w = np.polynomial.legendre.leggauss(order)
    x = 0.5 * (x + 1.0)
    w = 0.5 * w
    grids = np.meshgrid(*([x] * d), indexing="ij")
    wg = np.meshgrid(*([w] * d), indexing="ij")
    nodes = np.column_stack([g.ravel() for g in grids])
    weights = np.prod(np.column_stack([g.ravel() for g in wg]), axis=1)
    return nodes, weights


def _initial_cells(bounds, folds, n_init):
    axes = []
    for (lo, hi), f in zip(bounds, folds):
        e = np.union1d(np.linspace(lo, hi, n_init + 1), f[(f > lo) & (f < hi)])
        axes.append((e[:-1], e[1:]))
    lo_grid = np.meshgrid(*[a[0] for a in axes], indexing="ij")
    hi_grid = np.meshgrid(*[a[1] for a in axes], indexing="ij")
    lo = np.column_stack([g.ravel() for g in lo_grid])
    hi = np.column_stack([g.ravel() for g in hi_grid])
    return lo, hi


def _split(lo, hi):
    d = lo.shape[1]
    mid = 0.5 * (lo + hi)
    corners = np.array(np.meshgrid(*([[0, 1]] * d), indexing="ij")).reshape(d, -1).T
    clo = np.where(corners[None, :, :] == 0, lo[:, None, :], mid[:, None, :])
    chi = np.where(corners[None, :, :] == 0, mid[:, None, :], hi[:, None, :])
    return clo.reshape(-1, d), chi.reshape(-1, d)


def integrate_rule(family: HypothesisFamily, rule: DecisionRule, spec: GridSpec | None = None):
    """Adaptive quadrature of ``int phi_i f_k dx`` over the box.

    Returns ``(alpha, error_estimate, bounds)``; atoms are not included.
    """
    spec = spec or GridSpec()
    d = family.dim
    if d > 3:
        raise ValueError(f"quadrature supports d <= 3, got d={d}; use risk_monte_carlo")
    bounds = list(spec.bounds) if spec.bounds is not None else family.bounds(spec.pad_sigmas)
    if len(bounds) != d or any(not hi > lo for lo, hi in bounds):
        raise ValueError(f"bounds must give lo < hi for each of {d} axes, got {bounds}")
    max_depth = spec.max_depth if spec.max_depth is not None else _DEFAULT_MAX_DEPTH[d]
    nodes, nw = _tensor_rule(spec.order, d)
    q = len(nw)
    L = rule.n_labels
    K = len(family)
    box_vol = float(np.prod([hi - lo for lo, hi in bounds]))
    fast_argmin = rule.argmin_of is not None and rule.argmin_of[0] is family
    if spec.min_depth is not None:
        min_depth = spec.min_depth
    else:
        min_depth = 0 if fast_argmin else _DEFAULT_MIN_DEPTH[d]
    min_depth = min(min_depth, max_depth)

    # a jump between the outermost node and the cell edge is invisible to the
    # nodes at every depth, so the corners (nudged inside, off the folds) are
    # probed as well
    corners = np.array(np.meshgrid(*([[1e-9, 1.0 - 1e-9]] * d), indexing="ij")).reshape(d, -1).T
    probes = np.vstack([nodes, corners])
    nprobe = len(probes)

    def estimate(lo, hi):
        width = hi - lo
        pts = (lo[:, None, :] + width[:, None, :] * probes[None, :, :]).reshape(-1, d)
        F = family.pdf_matrix(pts)
        if fast_argmin:
            # probes are interior points, never exactly on an atom
            P = np.zeros((len(pts), L))
            P[np.arange(len(pts)), np.argmin(_weighted_sum(F, rule.argmin_of[1]), axis=1)] = 1.0
        else:
            P = rule.probabilities(pts)
            _require_valid(P, pts)
        F = F.reshape(-1, nprobe, K)
        P = P.reshape(-1, nprobe, L)
        uniform = np.all(P.max(axis=1) == P.min(axis=1), axis=1)
        F = F[:, :q]
        P = P[:, :q]
        vol = np.prod(width, axis=1)
        # ratio estimator: exact cell mass of f_k, split across labels in the
        # proportions the nodes give; node-average of phi where f_k underflows
        C = np.einsum("q,mqi,mqk->mik", nw, P, F)
        G = C.sum(axis=1, keepdims=True)
        E = family.box_masses(lo, hi)[:, None, :]
        share = np.divide(C, G, out=np.zeros_like(C), where=G > 0.0)
        flat = np.einsum("q,mqi->mi", nw, P) / nw.sum()
        share = np.where(G > 0.0, share, flat[:, :, None])
        C = share * E
        return C, uniform, vol

    lo, hi = _initial_cells(bounds, family.fold_points(), spec.initial_cells)
    parent, parent_uniform, parent_vol = estimate(lo, hi)
    total = np.zeros((L, K))
    err = 0.0
    nchild = 2 ** d
    for depth in range(max_depth + 1):
        clo, chi = _split(lo, hi)
        child, child_uniform, _ = estimate(clo, chi)
        m = len(lo)
        summed = child.reshape(m, nchild, L, K).sum(axis=1)
        diff = np.abs(summed - parent).sum(axis=(1, 2))
        mass = np.abs(summed).sum(axis=(1, 2))
        tol = np.maximum(spec.rtol * mass, spec.atol * parent_vol / box_vol)
        uniform = parent_uniform & child_uniform.reshape(m, nchild).all(axis=1)
        done = (diff <= tol) & (uniform | (mass <= tol))
        if depth < min_depth:
            done[:] = False
        if depth == max_depth:
            done[:] = True
        total += summed[done].sum(axis=0)
        err += float(diff[done].sum())
        keep = np.repeat(~done, nchild)
        if not keep.any():
            break
        lo, hi = clo[keep], chi[keep]
        parent = child[keep]
        parent_uniform = child_uniform[keep]
        parent_vol = np.prod(hi - lo, axis=1)
    return total, err, bounds


def _add_atoms(alpha, family, rule):
    for k, w0, loc in family.atoms():
        alpha[:, k] += w0 * rule.probabilities(loc.reshape(1, -1))[0]


def risk_quadrature(weights: WeightMatrix, family: HypothesisFamily, rule: DecisionRule,
                    grid_spec: GridSpec | None = None) -> RiskReport:
    """Error matrix and risk by deterministic adaptive quadrature (d <= 3).

    ``truncated_mass`` bounds the probability lying outside the integration box.
    """
    _check_sizes(weights, family)
    alpha, err, bounds = integrate_rule(family, rule, grid_spec)
    _add_atoms(alpha, family, rule)
    truncated = 0.0
    for m in family.densities:
        if not m.components:
            continue
        worst = 0.0
        for comp in m.components:
            dist = [min(law.a - lo, hi - law.a) for law, (lo, hi) in zip(comp.components, bounds)]
            worst = max(worst, MixtureModel.single(comp).tail_mass(dist))
        truncated = max(truncated, worst)
    return RiskReport.from_alpha(weights, alpha, np.zeros_like(alpha), "quadrature",
                                 error_estimate=err, truncated_mass=truncated)


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------


def _mc_chunk(density, rule, v_row, n, seed_seq):
    rng = np.random.default_rng(seed_seq)
    X = density.sample(n, rng)
    P = rule.probabilities(X)
    _require_valid(P, X)
    z = P @ v_row
    return P.sum(axis=0), float(z.sum()), float(np.dot(z, z))


def risk_monte_carlo(weights: WeightMatrix, family: HypothesisFamily, rule: DecisionRule,
                     n_per_hypothesis: int, seed: int = 0, workers: int = 1,
                     chunk_size: int = 50_000) -> RiskReport:
    """Sampling estimate of the error matrix with binomial standard errors.

    Draws for hypothesis ``k`` come from the ``k``-th child of
    ``SeedSequence(seed)``, split further into fixed-size chunks; chunk sums
    are merged in chunk order, so the result does not depend on ``workers``.
    """
    _check_sizes(weights, family)
    if n_per_hypothesis < 100:
        raise ValueError(f"n_per_hypothesis must be >= 100, got {n_per_hypothesis}")
    K = len(family)
    n_chunks = -(-n_per_hypothesis // chunk_size)
    sizes = [chunk_size] * (n_chunks - 1) + [n_per_hypothesis - chunk_size * (n_chunks - 1)]
    tasks = []
    for k, ss in enumerate(np.random.SeedSequence(seed).spawn(K)):
        for size, child in zip(sizes, ss.spawn(n_chunks)):
            tasks.append((k, size, child))

    def run(task):
        k, size, child = task
        return _mc_chunk(family.densities[k], rule, weights.v[k], size, child)

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    n = float(n_per_hypothesis)
    sums = np.zeros((rule.n_labels, K))
    zsum = np.zeros(K)
    zsq = np.zeros(K)
    for (k, _, _), (psum, zs, zq) in zip(tasks, results):
        sums[:, k] += psum
        zsum[k] += zs
        zsq[k] += zq
    alpha = sums / n
    se = np.sqrt(alpha * (1.0 - alpha) / n)
    zvar = np.maximum(zsq / n - (zsum / n) ** 2, 0.0) / n
    return RiskReport.from_alpha(
        weights, alpha, se, "monte_carlo",
        z_stderr=float(math.sqrt(zvar.sum())),
        q_fa_stderr=float(se[0, 0]),
        q_nd_stderr=float(math.sqrt(np.sum(se[0, 1:] ** 2))))
