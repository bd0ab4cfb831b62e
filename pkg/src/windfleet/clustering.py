"""Operational zone extraction via truncated Dirichlet-process Gaussian mixtures.

The mixture is fitted with mean-field variational inference over a
stick-breaking representation truncated at a fixed component budget,
with Normal-Wishart priors on the component parameters. The evidence
lower bound (ELBO) is evaluated after every full update sweep and is
non-decreasing up to floating-point noise; convergence is declared when
the per-iteration improvement drops below the tolerance.

Also provides posterior responsibilities, hard zone assignment,
hierarchical subclustering, a Shapiro-Wilk normality test and the
8-neighbour majority smoothing of label grids.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular
from scipy.special import digamma, gammaln, logsumexp, multigammaln, ndtr, ndtri

from .errors import DegenerateDataError, DomainError

_LOG_2PI = math.log(2.0 * math.pi)

DEFAULT_TRUNCATION = 6
DEFAULT_TOL = 1e-5
DEFAULT_MAX_ITER = 1000

# Relative diagonal regularization of the empirical covariance prior,
# plus an absolute floor so fully collapsed clouds stay invertible.
_COV_REG_REL = 1e-6
_COV_REG_ABS = 1e-12

# A component counts as effective when its weight is at least 2/n.
_EFFECTIVE_WEIGHT_NUM = 2.0


@dataclass(frozen=True)
class GaussianComponent:
    """Expected-value parameters of one mixture component."""

    weight: float
    mean: np.ndarray
    covariance: np.ndarray


@dataclass
class MixtureModel:
    """A fitted truncated DP Gaussian mixture with fit diagnostics."""

    components: list[GaussianComponent]
    truncation: int
    concentration: float
    final_elbo_delta: float
    iterations_run: int
    seed: int
    converged: bool
    n_points: int
    elbo_trace: np.ndarray = field(repr=False)

    @property
    def dimension(self) -> int:
        return int(self.components[0].mean.shape[0])

    @property
    def weights(self) -> np.ndarray:
        return np.array([c.weight for c in self.components])

    def effective_components(self, n_points: int | None = None) -> list[int]:
        """Indices of components whose weight clears the 2/n threshold."""
        n = self.n_points if n_points is None else n_points
        threshold = _EFFECTIVE_WEIGHT_NUM / n
        return [k for k, c in enumerate(self.components) if c.weight >= threshold]

    def to_json(self) -> str:
        doc = {
            "truncation": self.truncation,
            "concentration": self.concentration,
            "seed": self.seed,
            "n_points": self.n_points,
            "diagnostics": {
                "final_elbo_delta": self.final_elbo_delta,
                "iterations_run": self.iterations_run,
                "converged": self.converged,
                "final_elbo": float(self.elbo_trace[-1]),
            },
            "components": [
                {
                    "weight": c.weight,
                    "mean": c.mean.tolist(),
                    "covariance": c.covariance.ravel().tolist(),  # row-major
                }
                for c in self.components
            ],
        }
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MixtureModel":
        doc = json.loads(text)
        components = []
        for c in doc["components"]:
            mean = np.asarray(c["mean"], dtype=float)
            d = mean.shape[0]
            cov = np.asarray(c["covariance"], dtype=float).reshape(d, d)
            components.append(GaussianComponent(float(c["weight"]), mean, cov))
        diag = doc["diagnostics"]
        return cls(
            components=components,
            truncation=int(doc["truncation"]),
            concentration=float(doc["concentration"]),
            final_elbo_delta=float(diag["final_elbo_delta"]),
            iterations_run=int(diag["iterations_run"]),
            seed=int(doc["seed"]),
            converged=bool(diag["converged"]),
            n_points=int(doc["n_points"]),
            elbo_trace=np.array([diag["final_elbo"]]),
        )


@dataclass
class ZoneAssignment:
    """Hard labels and posterior responsibilities per turbine."""

    labels: dict
    responsibilities: dict


def _kmeans_pp_centers(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    idx = int(rng.integers(n))
    centers = [X[idx]]
    min_d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = float(min_d2.sum())
        if total <= 0.0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=min_d2 / total))
        centers.append(X[idx])
        min_d2 = np.minimum(min_d2, ((X - X[idx]) ** 2).sum(axis=1))
    return np.array(centers)


def _init_responsibilities(X: np.ndarray, truncation: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    k_eff = min(truncation, n)
    centers = _kmeans_pp_centers(X, k_eff, rng)
    d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    resp = np.zeros((n, truncation))
    resp[np.arange(n), labels] = 1.0
    return resp




class _Posterior:
    """Variational posterior state for one update sweep."""

    __slots__ = ("a", "b", "beta", "m", "nu", "chol_vinv", "logdet_w", "e_logdet", "e_logpi")

    def __init__(self, a, b, beta, m, nu, chol_vinv, logdet_w, e_logdet, e_logpi):
        self.a = a
        self.b = b
        self.beta = beta
        self.m = m
        self.nu = nu
        self.chol_vinv = chol_vinv
        self.logdet_w = logdet_w
        self.e_logdet = e_logdet
        self.e_logpi = e_logpi


def _m_step(X, resp, gamma_c, m0, beta0, nu0, w0_inv) -> _Posterior:
    n, d = X.shape
    K = resp.shape[1]
    nk = resp.sum(axis=0)

    # Stick-breaking Beta posteriors for the first K-1 sticks; the last
    # stick is pinned to 1 so the weights close to a distribution.
    tail = nk.sum() - np.cumsum(nk)
    a = 1.0 + nk[: K - 1]
    b = gamma_c + tail[: K - 1]

    beta = beta0 + nk
    nu = nu0 + nk

    safe_nk = np.where(nk > 1e-12, nk, 1.0)
    xbar = (resp.T @ X) / safe_nk[:, None]
    xbar = np.where((nk > 1e-12)[:, None], xbar, m0[None, :])
    m = (beta0 * m0[None, :] + nk[:, None] * xbar) / beta[:, None]

    chol_vinv = []
    logdet_w = np.empty(K)
    e_logdet = np.empty(K)
    js = np.arange(1, d + 1)
    for k in range(K):
        diff = X - xbar[k]
        scatter = (resp[:, k][:, None] * diff).T @ diff
        dev = xbar[k] - m0
        coeff = beta0 * nk[k] / (beta0 + nk[k])
        vinv = w0_inv + scatter + coeff * np.outer(dev, dev)
        L = cholesky(vinv, lower=True)
        chol_vinv.append(L)
        logdet_w[k] = -2.0 * float(np.log(np.diag(L)).sum())
        e_logdet[k] = (
            float(digamma((nu[k] + 1.0 - js) / 2.0).sum()) + d * math.log(2.0) + logdet_w[k]
        )

    if K > 1:
        dig_ab = digamma(a + b)
        e_log_v = digamma(a) - dig_ab
        e_log_1mv = digamma(b) - dig_ab
        prefix = np.concatenate(([0.0], np.cumsum(e_log_1mv)))
        e_logpi = np.empty(K)
        e_logpi[: K - 1] = e_log_v + prefix[: K - 1]
        e_logpi[K - 1] = prefix[K - 1]
    else:
        e_logpi = np.zeros(1)

    return _Posterior(a, b, beta, m, nu, chol_vinv, logdet_w, e_logdet, e_logpi)


def _e_step(X: np.ndarray, post: _Posterior) -> tuple[np.ndarray, np.ndarray]:
    n, d = X.shape
    K = len(post.chol_vinv)
    log_rho = np.empty((n, K))
    for k in range(K):
        y = solve_triangular(post.chol_vinv[k], (X - post.m[k]).T, lower=True)
        quad = (y**2).sum(axis=0)
        log_rho[:, k] = (
            post.e_logpi[k]
            + 0.5 * post.e_logdet[k]
            - 0.5 * d * _LOG_2PI
            - 0.5 * (d / post.beta[k] + post.nu[k] * quad)
        )
    log_norm = logsumexp(log_rho, axis=1)
    resp = np.exp(log_rho - log_norm[:, None])
    return log_norm, resp


def _kl_terms(post: _Posterior, gamma_c, m0, beta0, nu0, logdet_w0_inv, w0_inv, d) -> float:
    # KL(q(v) || Beta(1, gamma)) summed over the K-1 free sticks.
    kl = 0.0
    a, b = post.a, post.b
    if a.size:
        ln_b_prior = -math.log(gamma_c)  # ln B(1, gamma)
        ln_b_q = gammaln(a) + gammaln(b) - gammaln(a + b)
        kl_beta = (
            ln_b_prior
            - ln_b_q
            + (a - 1.0) * digamma(a)
            + (b - gamma_c) * digamma(b)
            + (1.0 - a + gamma_c - b) * digamma(a + b)
        )
        kl += float(kl_beta.sum())

    # KL(q(mean, precision) || Normal-Wishart prior) per component.
    js = np.arange(1, d + 1)
    for k in range(len(post.chol_vinv)):
        L = post.chol_vinv[k]
        nu_k = post.nu[k]
        beta_k = post.beta[k]
        dev = post.m[k] - m0
        y = solve_triangular(L, dev, lower=True)
        wquad = nu_k * float((y**2).sum())
        kl_normal = 0.5 * (
            d * beta0 / beta_k - d + d * math.log(beta_k / beta0) + beta0 * wquad
        )
        w_k = cho_solve((L, True), np.eye(d))
        trace = float(np.trace(w0_inv @ w_k))
        mdg = float(digamma((nu_k + 1.0 - js) / 2.0).sum())
        kl_wishart = (
            -0.5 * nu0 * (logdet_w0_inv + post.logdet_w[k])
            + 0.5 * nu_k * (trace - d)
            + multigammaln(nu0 / 2.0, d)
            - multigammaln(nu_k / 2.0, d)
            + 0.5 * (nu_k - nu0) * mdg
        )
        kl += kl_normal + kl_wishart
    return kl


def fit_dpgmm(
    points,
    truncation: int = DEFAULT_TRUNCATION,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
    concentration: float | None = None,
    n_init: int = 1,
) -> MixtureModel:
    """Fit a truncated DP Gaussian mixture by variational inference.

    ``points`` is an (n, d) array-like; 1-D input is treated as n points in
    one dimension. The stick-breaking concentration defaults to
    ``1 / truncation``. Iteration stops once the ELBO improvement falls
    below ``tol``; hitting ``max_iter`` first flags the model as
    non-converged but still returns it.

    ``n_init`` restarts the optimization from that many seeded
    initializations and keeps the run with the best final ELBO; everything
    stays deterministic for a fixed ``seed``.

    Returned weights, means and covariances are expected values under the
    variational posterior; the weights sum to one and every covariance is
    symmetric positive definite.
    """
    X = np.asarray(points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise DomainError(f"points must be a 2-D array, got shape {X.shape}")
    n, d = X.shape
    if n < 2:
        raise DegenerateDataError(f"need at least 2 points, got {n}")
    if n < d + 1:
        raise DegenerateDataError(f"need more points ({n}) than dimensions + 1 ({d + 1})")
    if truncation < 1:
        raise DomainError(f"truncation must be >= 1, got {truncation}")
    if tol <= 0:
        raise DomainError(f"tol must be > 0, got {tol}")
    if max_iter < 1:
        raise DomainError(f"max_iter must be >= 1, got {max_iter}")
    if n_init < 1:
        raise DomainError(f"n_init must be >= 1, got {n_init}")
    K = int(truncation)
    gamma_c = 1.0 / K if concentration is None else float(concentration)
    if gamma_c <= 0:
        raise DomainError(f"concentration must be > 0, got {gamma_c}")

    rng = np.random.default_rng(seed)

    m0 = X.mean(axis=0)
    mean_var = float(X.var(axis=0).mean())
    reg = _COV_REG_REL * mean_var + _COV_REG_ABS
    cov0 = np.cov(X.T, bias=True).reshape(d, d) + reg * np.eye(d)
    beta0 = 1.0
    nu0 = float(d)
    w0_inv = cov0
    sign, logdet_w0_inv = np.linalg.slogdet(w0_inv)
    if sign <= 0:
        raise DegenerateDataError("covariance prior is not positive definite")

    best = None
    for _ in range(n_init):
        resp = _init_responsibilities(X, K, rng)
        elbos: list[float] = []
        delta = math.inf
        converged = False
        post = None
        for _ in range(max_iter):
            post = _m_step(X, resp, gamma_c, m0, beta0, nu0, w0_inv)
            log_norm, resp = _e_step(X, post)
            elbo = float(log_norm.sum()) - _kl_terms(
                post, gamma_c, m0, beta0, nu0, logdet_w0_inv, w0_inv, d
            )
            elbos.append(elbo)
            if len(elbos) > 1:
                delta = elbos[-1] - elbos[-2]
                if delta < tol:
                    converged = True
                    break
        if best is None or elbos[-1] > best[0]:
            best = (elbos[-1], post, elbos, delta, converged)

    _, post, elbos, delta, converged = best
    weights = _expected_weights(post.a, post.b, K)
    components = []
    for k in range(K):
        # inverse of the expected precision: (nu_k W_k)^-1 = W_k^-1 / nu_k
        L = post.chol_vinv[k]
        cov = (L @ L.T) / post.nu[k]
        cov = 0.5 * (cov + cov.T)
        components.append(GaussianComponent(float(weights[k]), post.m[k].copy(), cov))

    return MixtureModel(
        components=components,
        truncation=K,
        concentration=gamma_c,
        final_elbo_delta=float(delta),
        iterations_run=len(elbos),
        seed=seed,
        converged=converged,
        n_points=n,
        elbo_trace=np.array(elbos),
    )


def _expected_weights(a: np.ndarray, b: np.ndarray, K: int) -> np.ndarray:
    if K == 1:
        return np.ones(1)
    e_v = a / (a + b)
    e_rest = b / (a + b)
    weights = np.empty(K)
    carry = 1.0
    for k in range(K - 1):
        weights[k] = e_v[k] * carry
        carry *= e_rest[k]
    weights[K - 1] = carry
    return weights


def responsibilities(model: MixtureModel, point) -> np.ndarray:
    """Posterior component probabilities for one point; sums to one."""
    x = np.asarray(point, dtype=float).ravel()
    d = model.dimension
    if x.shape[0] != d:
        raise DomainError(f"point has dimension {x.shape[0]}, model expects {d}")
    K = len(model.components)
    log_p = np.empty(K)
    for k, comp in enumerate(model.components):
        L = cholesky(comp.covariance, lower=True)
        y = solve_triangular(L, x - comp.mean, lower=True)
        log_det = 2.0 * float(np.log(np.diag(L)).sum())
        log_p[k] = (
            math.log(comp.weight)
            - 0.5 * (d * _LOG_2PI + log_det)
            - 0.5 * float((y**2).sum())
        )
    log_p -= logsumexp(log_p)
    return np.exp(log_p)


def assign(model: MixtureModel, points: Mapping) -> ZoneAssignment:
    """Hard-assign each keyed point to its most likely component.

    Ties break toward the lower component index. ``points`` maps a key
    (typically a turbine id) to a d-vector.
    """
    labels = {}
    resp = {}
    for key in points:
        r = responsibilities(model, points[key])
        labels[key] = int(np.argmax(r))
        resp[key] = r
    return ZoneAssignment(labels=labels, responsibilities=resp)


def subcluster(
    points: Mapping,
    assignment: ZoneAssignment,
    zone_index: int,
    truncation: int = DEFAULT_TRUNCATION,
    tol: float = DEFAULT_TOL,
    seed: int = 0,
    max_iter: int = DEFAULT_MAX_ITER,
) -> MixtureModel:
    """Refit the mixture on the members of one zone.

    Whether to adopt the split is the caller's decision; see
    ``should_adopt_split``. Zones with fewer than 4 members are rejected.
    """
    members = sorted(k for k, lbl in assignment.labels.items() if lbl == zone_index)
    if len(members) < 4:
        raise DegenerateDataError(
            f"zone {zone_index} has {len(members)} members, need at least 4 to subcluster"
        )
    X = np.array([np.asarray(points[k], dtype=float).ravel() for k in members])
    return fit_dpgmm(X, truncation=truncation, tol=tol, max_iter=max_iter, seed=seed)


def should_adopt_split(
    submodel: MixtureModel,
    subassignment: ZoneAssignment,
    points: Mapping | None = None,
    min_components: int = 2,
    min_members: int = 3,
    alpha: float = 0.05,
) -> bool:
    """Adopt a subclustering only when it is genuinely informative.

    Requires at least ``min_components`` effective components, each with
    at least ``min_members`` assigned members. When ``points`` is given,
    additionally requires the parent zone's coordinates to reject
    normality on at least one axis (p <= alpha): a zone whose data still
    looks like one Gaussian is kept whole even if the refit fragments it.
    """
    effective = submodel.effective_components()
    if len(effective) < min_components:
        return False
    counts = Counter(subassignment.labels.values())
    if not all(counts.get(k, 0) >= min_members for k in effective):
        return False
    if points is not None:
        member_points = np.array(
            [np.asarray(points[k], dtype=float).ravel() for k in subassignment.labels]
        )
        for axis in range(member_points.shape[1]):
            values = member_points[:, axis]
            if values.min() == values.max():
                continue
            _, p = shapiro_wilk(values)
            if p <= alpha:
                return True
        return False
    return True


# ---------------------------------------------------------------------------
# Shapiro-Wilk normality test
# ---------------------------------------------------------------------------

_SW_MIN_N = 3
_SW_MAX_N = 5000

# Polynomial corrections for the two largest order-statistic weights,
# in ascending powers of n**-0.5.
_SW_C1 = (0.0, 0.221157, -0.147981, -2.071190, 4.434685, -2.706056)
_SW_C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)

_sw_weight_cache: dict[int, np.ndarray] = {}


def _sw_weights(n: int) -> np.ndarray:
    """Order-statistic weights of the W statistic for sample size n."""
    cached = _sw_weight_cache.get(n)
    if cached is not None:
        return cached
    if n == 3:
        a = np.array([math.sqrt(0.5), 0.0, -math.sqrt(0.5)])
        a = -a  # ascending order convention: negative first
        _sw_weight_cache[n] = a
        return a
    m = ndtri((np.arange(1, n + 1) - 0.375) / (n + 0.25))
    ssq = float((m**2).sum())
    rsn = n**-0.5
    a_n = _sw_poly(_SW_C1, rsn) + m[-1] / math.sqrt(ssq)
    a = m / math.sqrt(ssq)
    if n > 5:
        a_n1 = _sw_poly(_SW_C2, rsn) + m[-2] / math.sqrt(ssq)
        phi = (ssq - 2.0 * m[-1] ** 2 - 2.0 * m[-2] ** 2) / (
            1.0 - 2.0 * a_n**2 - 2.0 * a_n1**2
        )
        a = m / math.sqrt(phi)
        a[-1] = a_n
        a[-2] = a_n1
        a[0] = -a_n
        a[1] = -a_n1
    else:
        phi = (ssq - 2.0 * m[-1] ** 2) / (1.0 - 2.0 * a_n**2)
        a = m / math.sqrt(phi)
        a[-1] = a_n
        a[0] = -a_n
    _sw_weight_cache[n] = a
    return a


def _sw_poly(coeffs, x: float) -> float:
    return float(sum(c * x**i for i, c in enumerate(coeffs)))


def _sw_pvalue(w: float, n: int) -> float:
    """Upper-tail p-value for the W statistic (normal approximation)."""
    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return float(min(max(p, 0.0), 1.0))
    if w >= 1.0:
        return 1.0
    if n <= 11:
        g = -2.273 + 0.459 * n
        if g - math.log1p(-w) <= 0:
            return 0.0
        stat = -math.log(g - math.log1p(-w))
        mu = 0.5440 - 0.39978 * n + 0.025054 * n**2 - 0.0006714 * n**3
        sigma = math.exp(1.3822 - 0.77857 * n + 0.062767 * n**2 - 0.0020322 * n**3)
    else:
        ln_n = math.log(n)
        stat = math.log1p(-w)
        mu = -1.5861 - 0.31082 * ln_n - 0.083751 * ln_n**2 + 0.0038915 * ln_n**3
        sigma = math.exp(-0.4803 - 0.082676 * ln_n + 0.0030302 * ln_n**2)
    z = (stat - mu) / sigma
    return float(ndtr(-z))


def shapiro_wilk(samples) -> tuple[float, float]:
    """Shapiro-Wilk W statistic and p-value for 3 <= n <= 5000.

    Raises ``DomainError`` for sample sizes outside that range or for a
    zero-variance sample.
    """
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    n = x.shape[0]
    if n < _SW_MIN_N or n > _SW_MAX_N:
        raise DomainError(f"sample size must be in [{_SW_MIN_N}, {_SW_MAX_N}], got {n}")
    if x[0] == x[-1]:
        raise DomainError("zero-variance sample")
    a = _sw_weights(n)
    centered = x - x.mean()
    w = float((a @ x) ** 2 / (centered**2).sum())
    w = min(w, 1.0)
    return w, _sw_pvalue(w, n)


# ---------------------------------------------------------------------------
# Spatial label smoothing
# ---------------------------------------------------------------------------

ABSENT_LABEL = -1


def smooth_labels(grid, absent: int = ABSENT_LABEL) -> np.ndarray:
    """Replace each cell's label with the modal label of its 8 neighbours.

    Cells marked ``absent`` are skipped and never counted. Ties keep the
    original label. All reads come from the input grid (one synchronous
    pass), so the result for one cell never depends on another cell's
    update within the same call.
    """
    g = np.asarray(grid)
    if g.ndim != 2:
        raise DomainError(f"label grid must be 2-D, got shape {g.shape}")
    out = g.copy()
    rows, cols = g.shape
    for r in range(rows):
        for c in range(cols):
            if g[r, c] == absent:
                continue
            neighbours = []
            for dr in (-1, 0, 1):
                for dc in (-1, 0, 1):
                    if dr == 0 and dc == 0:
                        continue
                    rr, cc = r + dr, c + dc
                    if 0 <= rr < rows and 0 <= cc < cols and g[rr, cc] != absent:
                        neighbours.append(int(g[rr, cc]))
            if not neighbours:
                continue
            counts = Counter(neighbours)
            top = counts.most_common()
            best_count = top[0][1]
            modes = [lbl for lbl, cnt in top if cnt == best_count]
            if len(modes) == 1:
                out[r, c] = modes[0]
    return out
