"""Small dense CP decompositions: the factor-norm regularizer functional, the
norm-balancing rescaling, multi-start exact-fit estimation of tensor nuclear
p-norms, and the non-convexity certificate for the 2/3-quasinorm of the
spectrum.

Everything here operates on small dense tensors (each dimension at most 8)
in double precision and is deterministic given seeds; restarts use
independent seed streams and best-of aggregation breaks ties by restart
index.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int

MAX_SIDE = 8


class DecompositionFitError(RuntimeError):
    """No decomposition of the requested rank fit within tolerance."""


def _pnorm(v, p):
    v = np.abs(np.asarray(v, dtype=np.float64))
    if p == np.inf:
        return float(v.max()) if v.size else 0.0
    return float((v**p).sum() ** (1.0 / p))


def _check_p(p):
    if p == np.inf:
        return np.inf
    p = float(p)
    if not p >= 1:
        raise ValueError(f"p must be in [1, inf], got {p}")
    return p


class SmallDecomposition:
    """A list of rank-one components, each a triple of dense vectors."""

    def __init__(self, components):
        components = [
            tuple(np.asarray(u, dtype=np.float64) for u in comp)
            for comp in components
        ]
        if not components:
            raise ValueError("need at least one component")
        shape = tuple(len(u) for u in components[0])
        if len(shape) != 3:
            raise ValueError("components must be triples of vectors")
        for comp in components:
            if tuple(len(u) for u in comp) != shape:
                raise ValueError("inconsistent component dimensions")
        self.components = components
        self.shape = shape

    @property
    def rank(self):
        return len(self.components)

    def reconstruct(self):
        """Dense tensor represented by the decomposition."""
        out = np.zeros(self.shape)
        for u1, u2, u3 in self.components:
            out += u1[:, None, None] * u2[None, :, None] * u3[None, None, :]
        return out

    @classmethod
    def from_factors(cls, factors):
        """Build from three (n_d, R) factor matrices."""
        u1, u2, u3 = factors
        return cls(
            [(u1[:, r], u2[:, r], u3[:, r]) for r in range(u1.shape[1])]
        )

    @classmethod
    def random(cls, shape, rank, rng, scale=1.0):
        return cls(
            [
                tuple(scale * rng.standard_normal(n) for n in shape)
                for _ in range(rank)
            ]
        )


@dataclass(frozen=True)
class NormalizedDecomposition:
    """Spectrum plus unit-p-norm component vectors.

    ``sigma[r]`` is the product of the three mode p-norms of component r of
    the originating decomposition; the stored vectors have unit p-norm.
    """

    sigma: np.ndarray
    components: tuple
    p: float

    def __post_init__(self):
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("spectrum entries must be nonnegative")
        for comp in self.components:
            for u in comp:
                if abs(_pnorm(u, self.p) - 1.0) > 1e-8:
                    raise ValueError("component vectors must have unit p-norm")

    @property
    def rank(self):
        return len(self.sigma)

    def reconstruct(self):
        out = None
        for s, (u1, u2, u3) in zip(self.sigma, self.components):
            term = s * u1[:, None, None] * u2[None, :, None] * u3[None, None, :]
            out = term if out is None else out + term
        return out


def omega(decomp, p, alpha):
    """Mean over modes of the alpha-th powers of component p-norms, summed
    over components: (1/3) sum_r sum_d ||u_r^(d)||_p^alpha.

    With p = alpha = 2 this is the squared-Frobenius factor penalty; as a
    function of the represented tensor (minimized over decompositions) it
    acts on the spectrum like an l_{alpha/3} penalty.
    """
    p = _check_p(p)
    alpha = float(alpha)
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    total = 0.0
    for comp in decomp.components:
        for u in comp:
            total += _pnorm(u, p) ** alpha
    return total / 3.0


def balance(decomp, p):
    """Rescale every component so its three mode p-norms are equal.

    Each vector of component r is scaled by c_d = g_r / ||u_r^(d)||_p with
    g_r the geometric mean of the three norms; the scales multiply to one so
    the represented tensor is unchanged. Among all rescalings this minimizes
    the omega functional, whose value becomes sum_r g_r^alpha. Components
    containing a zero vector represent the zero tensor and are dropped with
    a warning.
    """
    p = _check_p(p)
    balanced = []
    dropped = 0
    for comp in decomp.components:
        norms = [_pnorm(u, p) for u in comp]
        if min(norms) == 0.0:
            dropped += 1
            continue
        g = float(np.cbrt(norms[0] * norms[1] * norms[2]))
        balanced.append(tuple(u * (g / nd) for u, nd in zip(comp, norms)))
    if dropped:
        warnings.warn(
            f"dropped {dropped} component(s) with a zero mode vector "
            "(zero tensor contribution)",
            stacklevel=2,
        )
    if not balanced:
        raise ValueError("all components were zero; nothing to balance")
    return SmallDecomposition(balanced)


def normalize_decomposition(decomp, p):
    """Spectrum form: sigma_r = prod_d ||u_r^(d)||_p, vectors rescaled to
    unit p-norm. Zero components contribute sigma = 0 and are dropped."""
    p = _check_p(p)
    sigma = []
    comps = []
    for comp in decomp.components:
        norms = [_pnorm(u, p) for u in comp]
        if min(norms) == 0.0:
            continue
        sigma.append(norms[0] * norms[1] * norms[2])
        comps.append(tuple(u / nd for u, nd in zip(comp, norms)))
    if not comps:
        return NormalizedDecomposition(
            sigma=np.zeros(0), components=(), p=p
        )
    order = np.argsort(-np.asarray(sigma), kind="stable")
    sigma = np.asarray(sigma)[order]
    comps = tuple(comps[int(r)] for r in order)
    return NormalizedDecomposition(sigma=sigma, components=comps, p=p)


def spectrum_qnorm(decomp, q):
    """(sum_r sigma_r^q)^(1/q) of a spectrum, for q in (0, inf).

    Accepts a :class:`NormalizedDecomposition` or a bare spectrum array.
    q = 2/3 gives the quasinorm whose sublevel sets witness the
    non-convexity of the squared-Frobenius factor penalty; q = 1 gives the
    nuclear p-norm value of the decomposition.
    """
    q = float(q)
    if not q > 0:
        raise ValueError(f"q must be positive, got {q}")
    sigma = decomp.sigma if isinstance(decomp, NormalizedDecomposition) else decomp
    sigma = np.asarray(sigma, dtype=np.float64)
    if sigma.size == 0:
        return 0.0
    return float((sigma**q).sum() ** (1.0 / q))


def _khatri_rao(a, b):
    return (a[:, None, :] * b[None, :, :]).reshape(-1, a.shape[1])


def _rebalance_columns(factors):
    """Equalize the three mode norms of every component in place.

    Block-coordinate least squares alone cannot move along the joint
    rescaling direction (it holds two factor matrices fixed at a time), so
    without this step the factor-norm descent stalls away from the balanced
    optimum.
    """
    norms = [np.linalg.norm(f, axis=0) for f in factors]
    prod = norms[0] * norms[1] * norms[2]
    ok = prod > 0
    g = np.cbrt(prod, where=ok, out=np.zeros_like(prod))
    for f, n in zip(factors, norms):
        scale = np.ones_like(n)
        scale[ok] = g[ok] / n[ok]
        f *= scale


# Ridge continuation: the spectrum tracks the annealed optimum, so the
# terminal ridge bounds the bias of the reported spectrum values.
_ANNEAL_LEVELS = tuple(10.0 ** (-e) for e in range(2, 14))
_POLISH_LEVELS = tuple(10.0 ** (-e) for e in range(3, 14))


def _als_fit(tensor, rank, rng, anneal):
    """Alternating least squares toward an exact fit with small factor norms.

    Every sweep solves one ridge-regularized (or minimum-norm) least-squares
    problem per mode and then rebalances component norms (block solves alone
    cannot move along the joint rescaling direction).

    Two complementary strategies, selected by ``anneal``:

    * annealed: a geometric ridge continuation from 1e-2 downward pulls the
      factors toward the globally norm-minimal balanced representation;
      excellent at locating minimal spectra, but on some overranked
      problems the strongly regularized early phase funnels every start
      into a branch that never reaches an exact fit;
    * fit-first: minimum-norm sweeps reach an exact fit, then a mild
      proximal polish (short ridge bursts interleaved with refitting
      sweeps) descends the factor norms locally without leaving the fit
      manifold.

    The multi-start search runs both and keeps the best valid fit.
    Returns (n1, R), (n2, R), (n3, R) factor matrices.
    """
    n1, n2, n3 = tensor.shape
    scale = max(float(np.abs(tensor).max()), 1e-30) ** (1.0 / 3.0)
    factors = [scale * rng.standard_normal((n, rank)) for n in (n1, n2, n3)]
    unfoldings = [
        tensor.reshape(n1, n2 * n3),
        np.ascontiguousarray(tensor.transpose(1, 0, 2)).reshape(n2, n1 * n3),
        np.ascontiguousarray(tensor.transpose(2, 0, 1)).reshape(n3, n1 * n2),
    ]
    others = [(1, 2), (0, 2), (0, 1)]

    def sweep(ridge):
        for d in range(3):
            a, b = (factors[i] for i in others[d])
            k = _khatri_rao(a, b)
            gram = (a.T @ a) * (b.T @ b)
            rhs = unfoldings[d] @ k
            if ridge > 0.0:
                gram = gram + ridge * np.eye(rank)
                factors[d] = np.linalg.solve(gram, rhs.T).T
            else:
                factors[d] = np.linalg.lstsq(gram, rhs.T, rcond=None)[0].T
        _rebalance_columns(factors)

    if anneal:
        for ridge in _ANNEAL_LEVELS:
            for _ in range(10):
                sweep(ridge)
        for _ in range(30):
            sweep(0.0)
        residual = _fit_residual(tensor, factors)
        for _ in range(200):
            if residual <= 1e-10:
                break
            sweep(0.0)
            new_residual = _fit_residual(tensor, factors)
            if new_residual > 0.98 * residual:
                break
            residual = new_residual
    else:
        for i in range(200):
            sweep(0.0)
            if i % 10 == 9 and _fit_residual(tensor, factors) <= 1e-12:
                break
        for ridge in _POLISH_LEVELS:
            for _ in range(8):
                sweep(ridge)
            for _ in range(3):
                sweep(0.0)
        for _ in range(20):
            sweep(0.0)
    return factors


def _fit_residual(tensor, factors):
    u1, u2, u3 = factors
    rec = np.einsum("ir,jr,kr->ijk", u1, u2, u3)
    return float(np.linalg.norm(tensor - rec))


def _search_decompositions(tensor, ranks, p, restarts, seed, residual_tol,
                           objective):
    """Best exact-fit decomposition over restarts, candidate ranks and both
    fitting strategies.

    ``objective`` maps a spectrum to the value being minimized. Ties break
    lexicographically by (value, restart index, rank, strategy). Returns
    (value, NormalizedDecomposition, n_successful_fits).
    """
    best = None
    n_ok = 0
    for s in range(restarts):
        for rank in ranks:
            for strategy, anneal in enumerate((True, False)):
                rng = np.random.default_rng(
                    np.random.SeedSequence(
                        [seed, s, rank, strategy]
                    ).generate_state(1)[0]
                )
                factors = _als_fit(tensor, rank, rng, anneal)
                if _fit_residual(tensor, factors) > residual_tol:
                    continue
                n_ok += 1
                normalized = normalize_decomposition(
                    SmallDecomposition.from_factors(factors), p
                )
                value = objective(normalized.sigma)
                key = (value, s, rank, strategy)
                if best is None or key < best[0]:
                    best = (key, value, normalized)
    if best is None:
        return None, None, 0
    return best[1], best[2], n_ok


def nuclear_pnorm_estimate(tensor, rank, p=2, restarts=20, seed=0,
                           residual_tol=1e-8):
    """Upper bound on the tensor nuclear p-norm by multi-start exact fitting.

    The nuclear p-norm is the minimum l1 norm of the spectrum over
    p-normalized decompositions of the tensor (any rank). This estimator
    fits rank-``rank`` decompositions by alternating least squares from
    ``restarts`` random initializations, keeps those with Frobenius fit
    residual at most ``residual_tol`` and returns the smallest spectrum l1
    norm found with its witness decomposition. Being a best-of-local-search
    value it is always an upper bound.

    Raises :class:`DecompositionFitError` when no restart fits, i.e. the
    requested rank is too small for an exact representation.
    """
    tensor = np.asarray(tensor, dtype=np.float64)
    if tensor.ndim != 3:
        raise ValueError("tensor must be 3-dimensional")
    if max(tensor.shape) > MAX_SIDE:
        raise ValueError(
            f"estimator is for small tensors (each side <= {MAX_SIDE})"
        )
    check_positive_int(rank, "rank")
    check_positive_int(restarts, "restarts")
    p = _check_p(p)
    if not np.any(tensor):
        return 0.0, NormalizedDecomposition(np.zeros(0), (), p)
    value, witness, n_ok = _search_decompositions(
        tensor, (rank,), p, restarts, seed, residual_tol,
        objective=lambda sigma: float(sigma.sum()),
    )
    if witness is None:
        raise DecompositionFitError(
            f"rank too small: no rank-{rank} decomposition reached residual "
            f"<= {residual_tol} in {restarts} restarts"
        )
    return value, witness


@dataclass(frozen=True)
class NonconvexityReport:
    """Numeric witness that the minimal spectrum 2/3-quasinorm is not convex.

    The two endpoint tensors are rank-one (value exactly 1 by explicit unit
    witnesses); their midpoint has rank 2, so its value strictly exceeds the
    trace lower bound 1 shared by every decomposition. The best value found
    for the midpoint therefore exceeding the endpoint average certifies a
    convexity violation.
    """

    endpoint_values: tuple
    endpoint_estimates: tuple
    midpoint_value: float
    midpoint_sigma: tuple
    trace_lower_bound: float
    required_margin: float
    expected_value: float
    convexity_violated: bool
    restarts: int
    seed: int

    def to_dict(self):
        return {
            "endpoint_values": list(self.endpoint_values),
            "endpoint_estimates": list(self.endpoint_estimates),
            "midpoint_value": self.midpoint_value,
            "midpoint_sigma": list(self.midpoint_sigma),
            "trace_lower_bound": self.trace_lower_bound,
            "required_margin": self.required_margin,
            "expected_value": self.expected_value,
            "convexity_violated": self.convexity_violated,
            "restarts": self.restarts,
            "seed": self.seed,
        }


# The midpoint search is capped at rank 4: a 2x2x1 tensor has rank at most 2,
# the slack guards against degenerate local fits.
_MIDPOINT_RANKS = (2, 3, 4)
_CERTIFICATE_MARGIN = 1.2


def nonconvexity_certificate(restarts=50, seed=0):
    """Certify non-convexity of the minimal spectrum 2/3-quasinorm.

    Evaluates the quasinorm at the 2x2x1 tensors diag(1, 0) and diag(0, 1)
    (exactly 1 via explicit rank-one unit witnesses, cross-checked by the
    numeric search) and at their midpoint I/2 (best found over ``restarts``
    random restarts at ranks 2..4). The midpoint value is lower-bounded by
    the trace argument (>= 1, strict for rank two) and expected to land on
    sqrt(2), the value of the diagonal witness with spectrum (1/2, 1/2);
    exceeding the endpoint average 1 violates convexity.
    """
    check_positive_int(restarts, "restarts")
    q = 2.0 / 3.0

    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0])
    one = np.array([1.0])
    endpoints = []
    endpoint_values = []
    for vec in (e1, e2):
        tensor = np.zeros((2, 2, 1))
        tensor[:, :, 0] = np.outer(vec, vec)
        witness = SmallDecomposition([(vec, vec, one)])
        if not np.array_equal(witness.reconstruct(), tensor):
            raise AssertionError("endpoint witness failed to reconstruct")
        endpoint_values.append(
            spectrum_qnorm(normalize_decomposition(witness, 2), q)
        )
        endpoints.append(tensor)

    endpoint_estimates = []
    for tensor in endpoints:
        value, witness, n_ok = _search_decompositions(
            tensor, (1,), 2, min(restarts, 10), seed, 1e-8,
            objective=lambda sigma: spectrum_qnorm(sigma, q),
        )
        if witness is None:
            raise DecompositionFitError(
                "retry budget exhausted fitting a rank-one endpoint"
            )
        endpoint_estimates.append(value)

    midpoint = np.zeros((2, 2, 1))
    midpoint[:, :, 0] = 0.5 * np.eye(2)
    mid_value, mid_witness, n_ok = _search_decompositions(
        midpoint, _MIDPOINT_RANKS, 2, restarts, seed, 1e-8,
        objective=lambda sigma: spectrum_qnorm(sigma, q),
    )
    if mid_witness is None:
        raise DecompositionFitError(
            f"retry budget exhausted: no exact fit of the midpoint in "
            f"{restarts} restarts at ranks {_MIDPOINT_RANKS}"
        )

    return NonconvexityReport(
        endpoint_values=tuple(endpoint_values),
        endpoint_estimates=tuple(endpoint_estimates),
        midpoint_value=mid_value,
        midpoint_sigma=tuple(float(s) for s in mid_witness.sigma),
        trace_lower_bound=1.0,
        required_margin=_CERTIFICATE_MARGIN,
        expected_value=math.sqrt(2.0),
        convexity_violated=bool(
            mid_value > 0.5 * (endpoint_values[0] + endpoint_values[1])
        ),
        restarts=restarts,
        seed=seed,
    )
