"""Quasi-Gaussian laws in one dimension, as coordinate products, and as mixtures.

A one-dimensional quasi-Gaussian law QN(a, alpha, sigma, C1, C2) has density

    p(x) = w(x - a) * exp(-(x - a)^2 / (2 sigma^2)) / (sigma sqrt(2 pi))

with the two-sided power weight ``w(y) = C1 |y|^alpha_neg`` for ``y < 0`` and
``w(y) = C2 y^alpha_pos`` for ``y > 0``.  Unit mass ties the coefficients
together through the half-moments ``I_alpha(sigma)``::

    C1 I_{alpha_neg}(sigma) + C2 I_{alpha_pos}(sigma) = sigma sqrt(2 pi)

so a law is fixed by (a, alpha_neg, alpha_pos, sigma) plus the fraction of
mass that lies left of ``a``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy.special import gammainc, gammaincc

from . import kernels

SQRT_2PI = math.sqrt(2.0 * math.pi)
NORMALIZATION_RTOL = 1e-10
WEIGHT_SUM_TOL = 1e-12


class ModelValidationError(ValueError):
    """A model parameter or model document violates an invariant.

    ``path`` names the offending field, e.g. ``components[1].marginals[0].sigma``.
    """

    def __init__(self, path: str, message: str):
        self.path = path
        self.message = message
        super().__init__(f"{path}: {message}" if path else message)


def half_moment(alpha: float, sigma: float) -> float:
    """Return ``I_alpha(sigma) = int_0^inf x^alpha exp(-x^2/(2 sigma^2)) dx``.

    Evaluated in closed form as ``2^((alpha-1)/2) sigma^(alpha+1) Gamma((alpha+1)/2)``.
    """
    if not alpha > -1.0:
        raise ValueError(f"alpha must be > -1, got {alpha}")
    if not sigma > 0.0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    return 2.0 ** ((alpha - 1.0) / 2.0) * sigma ** (alpha + 1.0) * math.gamma((alpha + 1.0) / 2.0)


def solve_normalization(alpha_neg: float, alpha_pos: float, sigma: float,
                        negative_mass_fraction: float) -> tuple[float, float]:
    """Coefficients ``(c_neg, c_pos)`` giving unit mass with the requested left-side mass."""
    if not 0.0 <= negative_mass_fraction <= 1.0:
        raise ValueError(f"negative_mass_fraction must lie in [0, 1], got {negative_mass_fraction}")
    i_neg = half_moment(alpha_neg, sigma)
    i_pos = half_moment(alpha_pos, sigma)
    total = sigma * SQRT_2PI
    return negative_mass_fraction * total / i_neg, (1.0 - negative_mass_fraction) * total / i_pos


def _check_finite(path, value):
    if isinstance(value, bool) or not isinstance(value, (int, float, np.floating, np.integer)):
        raise ModelValidationError(path, f"expected a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ModelValidationError(path, f"must be finite, got {value}")
    return value


@dataclass(frozen=True)
class QuasiGaussian1D:
    """One-dimensional quasi-Gaussian law with explicit coefficients.

    The normalization identity is re-checked on construction, so a law loaded
    from disk is self-validating.  Use :meth:`from_mass_split` to build a law
    from its free parameters.
    """

    a: float
    alpha_neg: float
    alpha_pos: float
    sigma: float
    c_neg: float
    c_pos: float

    def __post_init__(self):
        for name in ("a", "alpha_neg", "alpha_pos", "sigma", "c_neg", "c_pos"):
            object.__setattr__(self, name, _check_finite(name, getattr(self, name)))
        if not self.alpha_neg > -1.0:
            raise ModelValidationError("alpha_neg", f"must be > -1, got {self.alpha_neg}")
        if not self.alpha_pos > -1.0:
            raise ModelValidationError("alpha_pos", f"must be > -1, got {self.alpha_pos}")
        if not self.sigma > 0.0:
            raise ModelValidationError("sigma", f"must be > 0, got {self.sigma}")
        if self.c_neg < 0.0:
            raise ModelValidationError("c_neg", f"must be >= 0, got {self.c_neg}")
        if self.c_pos < 0.0:
            raise ModelValidationError("c_pos", f"must be >= 0, got {self.c_pos}")
        if not self.c_neg + self.c_pos > 0.0:
            raise ModelValidationError("c_neg", "c_neg and c_pos cannot both be zero")
        lhs = (self.c_neg * half_moment(self.alpha_neg, self.sigma)
               + self.c_pos * half_moment(self.alpha_pos, self.sigma))
        rhs = self.sigma * SQRT_2PI
        if abs(lhs - rhs) > NORMALIZATION_RTOL * rhs:
            raise ModelValidationError(
                "c_pos", f"normalization violated: c_neg*I_neg + c_pos*I_pos = {lhs!r}, "
                f"expected sigma*sqrt(2*pi) = {rhs!r}")

    @classmethod
    def from_mass_split(cls, a=0.0, alpha_neg=0.0, alpha_pos=0.0, sigma=1.0, negative_mass=0.5):
        c_neg, c_pos = solve_normalization(alpha_neg, alpha_pos, sigma, negative_mass)
        return cls(a, alpha_neg, alpha_pos, sigma, c_neg, c_pos)

    @property
    def negative_mass(self) -> float:
        return self.c_neg * half_moment(self.alpha_neg, self.sigma) / (self.sigma * SQRT_2PI)

    def pdf(self, x):
        x = np.asarray(x, dtype=float)
        y = x - self.a
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            weight = np.where(y < 0.0, self.c_neg * np.abs(y) ** self.alpha_neg,
                              self.c_pos * np.abs(y) ** self.alpha_pos)
            out = weight * np.exp(-0.5 * (y / self.sigma) ** 2) / (self.sigma * SQRT_2PI)
        if np.any(y == 0.0):
            out = np.where(y == 0.0, self._fold_value(), out)
        return out[()] if out.ndim == 0 else out

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)
        out = kernels.component_logpdf(x.reshape(-1, 1), *self._kernel_params())[:, 0]
        return out.reshape(x.shape)[()] if x.ndim == 0 else out.reshape(x.shape)

    def _fold_value(self):
        return math.exp(kernels._fold_logpdf(*self._log_coefficients(), self.alpha_neg,
                                             self.alpha_pos, self.sigma))

    def _log_coefficients(self):
        lcn = math.log(self.c_neg) if self.c_neg > 0.0 else -math.inf
        lcp = math.log(self.c_pos) if self.c_pos > 0.0 else -math.inf
        return lcn, lcp

    def _kernel_params(self):
        lcn, lcp = self._log_coefficients()
        return tuple(np.array([[v]]) for v in
                     (self.a, self.alpha_neg, self.alpha_pos, self.sigma, lcn, lcp))

    def mean(self) -> float:
        return self.a + (self.c_pos * half_moment(self.alpha_pos + 1.0, self.sigma)
                         - self.c_neg * half_moment(self.alpha_neg + 1.0, self.sigma)) / (
            self.sigma * SQRT_2PI)

    def tail_mass(self, distance: float) -> float:
        """Probability that ``|X - a| > distance``."""
        z = 0.5 * (distance / self.sigma) ** 2
        p = self.negative_mass
        return float(p * gammaincc(0.5 * (self.alpha_neg + 1.0), z)
                     + (1.0 - p) * gammaincc(0.5 * (self.alpha_pos + 1.0), z))

    def interval_mass(self, lo, hi) -> np.ndarray:
        """Probability of ``[lo, hi]``, elementwise, from the incomplete gamma function."""
        lo, hi = np.broadcast_arrays(np.asarray(lo, dtype=float), np.asarray(hi, dtype=float))
        p = self.negative_mass
        # distances from the fold of the near and far ends of each one-sided piece
        neg = _side_mass(np.maximum(self.a - hi, 0.0), np.maximum(self.a - lo, 0.0),
                         self.alpha_neg, self.sigma)
        pos = _side_mass(np.maximum(lo - self.a, 0.0), np.maximum(hi - self.a, 0.0),
                         self.alpha_pos, self.sigma)
        return p * neg + (1.0 - p) * pos

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        # side by mass split, magnitude sigma*sqrt(2T) with T ~ Gamma((alpha+1)/2)
        neg = rng.random(n) < self.negative_mass
        t = np.empty(n)
        n_neg = int(neg.sum())
        t[neg] = rng.standard_gamma(0.5 * (self.alpha_neg + 1.0), n_neg)
        t[~neg] = rng.standard_gamma(0.5 * (self.alpha_pos + 1.0), n - n_neg)
        mag = self.sigma * np.sqrt(2.0 * t)
        return self.a + np.where(neg, -mag, mag)


def _side_mass(near, far, alpha, sigma):
    # mass of one normalized half between two distances from the fold; the
    # complementary form keeps relative accuracy far out in the tail
    s = 0.5 * (alpha + 1.0)
    t_near = 0.5 * (near / sigma) ** 2
    t_far = 0.5 * (far / sigma) ** 2
    return np.where(t_near > s, gammaincc(s, t_near) - gammaincc(s, t_far),
                    gammainc(s, t_far) - gammainc(s, t_near))


def pdf_1d(law: QuasiGaussian1D, x):
    return law.pdf(x)


def _as_points(x, d):
    X = np.asarray(x, dtype=float)
    if X.ndim == 0 and d == 1:
        return X.reshape(1, 1), True
    single = X.ndim == 1
    if X.ndim == 0 or (single and d != 1 and X.shape[0] != d):
        raise ValueError(f"expected points of dimension {d}, got array of shape {X.shape}")
    if single:
        X = X.reshape(1, d) if X.shape[0] == d else X.reshape(-1, 1)
        single = X.shape[0] == 1
    if X.shape[1] != d:
        raise ValueError(f"expected points of dimension {d}, got array of shape {X.shape}")
    return X, single


@dataclass(frozen=True)
class ProductDensity:
    """Independent quasi-Gaussian coordinates."""

    components: tuple[QuasiGaussian1D, ...]

    def __post_init__(self):
        comps = tuple(self.components)
        if not comps:
            raise ModelValidationError("marginals", "at least one coordinate required")
        for j, c in enumerate(comps):
            if not isinstance(c, QuasiGaussian1D):
                raise ModelValidationError(f"marginals[{j}]", f"expected QuasiGaussian1D, got {c!r}")
        object.__setattr__(self, "components", comps)

    @property
    def dim(self) -> int:
        return len(self.components)

    def logpdf(self, x):
        """Sum of marginal log densities; ``-inf`` where any factor vanishes."""
        return self.as_mixture().logpdf(x)

    def pdf(self, x):
        return self.as_mixture().pdf(x)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return np.column_stack([c.sample(n, rng) for c in self.components])

    def as_mixture(self) -> MixtureModel:
        return MixtureModel((1.0,), (self,))


def log_pdf_product(density: ProductDensity, x):
    X, single = _as_points(x, density.dim)
    with np.errstate(divide="ignore", invalid="ignore"):
        logs = np.column_stack([np.log(c.pdf(X[:, j])) for j, c in enumerate(density.components)])
        out = logs.sum(axis=1)
    out[np.any(logs == -np.inf, axis=1)] = -np.inf
    return float(out[0]) if single else out


@dataclass(frozen=True)
class MixtureModel:
    """Weighted mixture of product densities, optionally with a point mass.

    ``atom_weight`` is the probability of the exact point ``atom_location``.
    A model with ``atom_weight == 1`` has no continuous components.
    """

    weights: tuple[float, ...]
    components: tuple[ProductDensity, ...]
    atom_weight: float = 0.0
    atom_location: tuple[float, ...] | None = field(default=None)

    def __post_init__(self):
        weights = tuple(_check_finite(f"components[{k}].weight", w) for k, w in enumerate(self.weights))
        comps = tuple(self.components)
        if len(weights) != len(comps):
            raise ModelValidationError("components", "weights and components differ in length")
        atom_weight = _check_finite("atom.weight", self.atom_weight)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "atom_weight", atom_weight)
        if not 0.0 <= atom_weight <= 1.0:
            raise ModelValidationError("atom.weight", f"must lie in [0, 1], got {atom_weight}")
        for k, w in enumerate(weights):
            if not w > 0.0:
                raise ModelValidationError(f"components[{k}].weight", f"must be > 0, got {w}")
        if not comps and atom_weight != 1.0:
            raise ModelValidationError("components", "at least one component required")
        total = atom_weight + math.fsum(weights)
        if abs(total - 1.0) > WEIGHT_SUM_TOL:
            raise ModelValidationError("components", f"weights sum to {total!r}, expected 1")
        dims = {c.dim for c in comps}
        if len(dims) > 1:
            raise ModelValidationError("components", f"components differ in dimension: {sorted(dims)}")
        if atom_weight > 0.0:
            if self.atom_location is None:
                raise ModelValidationError("atom.location", "required when atom weight > 0")
            loc = tuple(_check_finite(f"atom.location[{j}]", v) for j, v in enumerate(self.atom_location))
            if dims and len(loc) != next(iter(dims)):
                raise ModelValidationError("atom.location", "dimension differs from components")
            if not loc:
                raise ModelValidationError("atom.location", "must not be empty")
            object.__setattr__(self, "atom_location", loc)
        elif self.atom_location is not None:
            raise ModelValidationError("atom.location", "given without positive atom weight")

    @classmethod
    def single(cls, density: ProductDensity | QuasiGaussian1D) -> MixtureModel:
        if isinstance(density, QuasiGaussian1D):
            density = ProductDensity((density,))
        return cls((1.0,), (density,))

    @classmethod
    def atom_only(cls, location: Sequence[float]) -> MixtureModel:
        return cls((), (), 1.0, tuple(location))

    @property
    def dim(self) -> int:
        if self.components:
            return self.components[0].dim
        return len(self.atom_location)

    @property
    def n_components(self) -> int:
        return len(self.components)

    @cached_property
    def kernel_params(self):
        """Per-component (K, d) arrays: a, alpha_neg, alpha_pos, sigma, log c_neg, log c_pos."""
        K, d = self.n_components, self.dim
        arrays = [np.empty((K, d)) for _ in range(6)]
        for k, comp in enumerate(self.components):
            for j, m in enumerate(comp.components):
                lcn, lcp = m._log_coefficients()
                for arr, v in zip(arrays, (m.a, m.alpha_neg, m.alpha_pos, m.sigma, lcn, lcp)):
                    arr[k, j] = v
        return tuple(arrays)

    @cached_property
    def log_weights(self) -> np.ndarray:
        return np.log(np.asarray(self.weights, dtype=float))

    def component_logpdf(self, X: np.ndarray) -> np.ndarray:
        """(n, K) matrix of per-component log densities at the rows of ``X``."""
        return kernels.component_logpdf(np.ascontiguousarray(X, dtype=float), *self.kernel_params)

    def logpdf(self, x):
        """Log density of the absolutely continuous part (the atom carries no density)."""
        X, single = _as_points(x, self.dim)
        if not self.components:
            out = np.full(X.shape[0], -np.inf)
        else:
            L = self.component_logpdf(X)
            if L.shape[1] == 1:
                out = L[:, 0] + self.log_weights[0]
                return float(out[0]) if single else out
            L += self.log_weights
            m = L.max(axis=1)
            finite = np.isfinite(m)
            safe = np.where(finite, m, 0.0)
            with np.errstate(divide="ignore"):
                out = np.where(finite, safe + np.log(np.exp(L - safe[:, None]).sum(axis=1)), m)
        return float(out[0]) if single else out

    def pdf(self, x):
        out = np.exp(self.logpdf(x))
        return float(out) if np.ndim(out) == 0 else out

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        probs = np.array((self.atom_weight,) + self.weights)
        labels = rng.choice(probs.size, size=n, p=probs / probs.sum())
        out = np.empty((n, self.dim))
        if self.atom_weight > 0.0:
            out[labels == 0] = self.atom_location
        for k, comp in enumerate(self.components, start=1):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                out[idx] = comp.sample(idx.size, rng)
        return out

    def box_mass(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Continuous mass of each axis-aligned box ``[lo[m], hi[m]]``."""
        lo = np.atleast_2d(lo)
        hi = np.atleast_2d(hi)
        out = np.zeros(lo.shape[0])
        for w, comp in zip(self.weights, self.components):
            term = np.full(lo.shape[0], w)
            for j, law in enumerate(comp.components):
                term *= law.interval_mass(lo[:, j], hi[:, j])
            out += term
        return out

    def tail_mass(self, distances: Sequence[float]) -> float:
        """Upper bound on the continuous mass outside ``|x_j - a_j| <= distances[j]``."""
        total = 0.0
        for w, comp in zip(self.weights, self.components):
            total += w * min(1.0, sum(m.tail_mass(L) for m, L in zip(comp.components, distances)))
        return total


def mixture_pdf(model: MixtureModel, x):
    return model.pdf(x)


def sample(model: MixtureModel | ProductDensity, n: int, seed: int) -> np.ndarray:
    """``n`` i.i.d. draws as an (n, d) array; deterministic in ``seed``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return model.sample(n, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# JSON model document
# ---------------------------------------------------------------------------

_MARGINAL_FIELDS = ("a", "alpha_neg", "alpha_pos", "sigma", "c_neg", "c_pos")


def model_to_dict(model: MixtureModel | ProductDensity) -> dict:
    if isinstance(model, ProductDensity):
        model = model.as_mixture()
    atom = None
    if model.atom_weight > 0.0:
        atom = {"weight": model.atom_weight, "location": list(model.atom_location)}
    return {
        "dim": model.dim,
        "atom": atom,
        "components": [
            {"weight": w,
             "marginals": [{f: getattr(m, f) for f in _MARGINAL_FIELDS} for m in comp.components]}
            for w, comp in zip(model.weights, model.components)
        ],
    }


def _require(doc, key, path, kind):
    if not isinstance(doc, dict):
        raise ModelValidationError(path, f"expected an object, got {type(doc).__name__}")
    if key not in doc:
        raise ModelValidationError(f"{path}.{key}" if path else key, "missing field")
    value = doc[key]
    if kind is not None and not isinstance(value, kind):
        raise ModelValidationError(f"{path}.{key}" if path else key,
                                   f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _reraise(prefix, exc):
    raise ModelValidationError(f"{prefix}.{exc.path}" if exc.path else prefix, exc.message) from None


def model_from_dict(doc: dict) -> MixtureModel:
    """Build and validate a model; errors carry the field path of the first violation."""
    dim = _require(doc, "dim", "", int)
    if isinstance(dim, bool) or dim < 1:
        raise ModelValidationError("dim", f"must be a positive integer, got {dim!r}")
    comps_doc = _require(doc, "components", "", list)
    atom_doc = doc.get("atom")
    weights, comps = [], []
    for k, cdoc in enumerate(comps_doc):
        path = f"components[{k}]"
        weights.append(_check_finite(f"{path}.weight", _require(cdoc, "weight", path, None)))
        margs = _require(cdoc, "marginals", path, list)
        if len(margs) != dim:
            raise ModelValidationError(f"{path}.marginals", f"expected {dim} marginals, got {len(margs)}")
        laws = []
        for j, mdoc in enumerate(margs):
            mpath = f"{path}.marginals[{j}]"
            values = [_check_finite(f"{mpath}.{f}", _require(mdoc, f, mpath, None)) for f in _MARGINAL_FIELDS]
            try:
                laws.append(QuasiGaussian1D(*values))
            except ModelValidationError as exc:
                _reraise(mpath, exc)
        comps.append(ProductDensity(tuple(laws)))
    atom_weight, atom_location = 0.0, None
    if atom_doc is not None:
        atom_weight = _check_finite("atom.weight", _require(atom_doc, "weight", "atom", None))
        loc = _require(atom_doc, "location", "atom", list)
        if len(loc) != dim:
            raise ModelValidationError("atom.location", f"expected {dim} coordinates, got {len(loc)}")
        atom_location = tuple(_check_finite(f"atom.location[{j}]", v) for j, v in enumerate(loc))
        if atom_weight == 0.0:
            atom_location = None
    return MixtureModel(tuple(weights), tuple(comps), atom_weight, atom_location)


def dumps_model(model: MixtureModel | ProductDensity) -> str:
    return json.dumps(model_to_dict(model), indent=2)


def save_model(path, model: MixtureModel | ProductDensity) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_model(model) + "\n")


def load_model(path) -> MixtureModel:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ModelValidationError("", f"invalid JSON in {path}: {exc}") from None
    return model_from_dict(doc)
