"""Executable verification of the package's mathematical claims: the
norm-balancing identity, the non-convexity certificate and the
hierarchical-MRR closed form. Backs the ``verify`` CLI subcommand and the
acceptance tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .decompositions import (
    SmallDecomposition,
    balance,
    nonconvexity_certificate,
    normalize_decomposition,
    nuclear_pnorm_estimate,
    omega,
    spectrum_qnorm,
    _pnorm,
)
from .hierarchy import (
    HierarchyParams,
    hierarchy_mrr_closed_form,
    hierarchy_mrr_simulated,
)


@dataclass(frozen=True)
class OracleResult:
    name: str
    passed: bool
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": self.passed, "details": self.details}


@dataclass(frozen=True)
class VerificationReport:
    results: tuple

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def to_dict(self):
        return {
            "passed": self.passed,
            "oracles": [r.to_dict() for r in self.results],
        }

    def table(self):
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            detail = ", ".join(
                f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}"
                for k, v in r.details.items()
            )
            lines.append(f"{status}  {r.name:<28} {detail}")
        lines.append("overall: " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines)


def _check_balancing(seed, n_random):
    """Balance equalizes mode norms, preserves the tensor and realizes the
    product-of-norms value of the regularizer at alpha = 3."""
    worst_norm_dev = 0.0
    worst_tensor_dev = 0.0
    worst_value_dev = 0.0
    shrink_ok = True
    for p in (2, 3):
        for s in range(n_random):
            rng = np.random.default_rng(
                np.random.SeedSequence([seed, p, s]).generate_state(1)[0]
            )
            dec = SmallDecomposition.random((4, 3, 5), rank=4, rng=rng)
            bal = balance(dec, p)
            for orig_comp, comp in zip(dec.components, bal.components):
                norms = [_pnorm(u, p) for u in comp]
                g = float(
                    np.cbrt(np.prod([_pnorm(u, p) for u in orig_comp]))
                )
                worst_norm_dev = max(
                    worst_norm_dev, max(abs(n - g) / g for n in norms)
                )
            worst_tensor_dev = max(
                worst_tensor_dev,
                float(np.abs(bal.reconstruct() - dec.reconstruct()).max()),
            )
            target = sum(
                np.prod([_pnorm(u, p) for u in comp]) for comp in dec.components
            )
            worst_value_dev = max(
                worst_value_dev, abs(omega(bal, p, 3) - target) / target
            )
            shrink_ok = shrink_ok and omega(bal, p, 3) <= omega(dec, p, 3) * (1 + 1e-12)
    passed = (
        worst_norm_dev <= 1e-10
        and worst_tensor_dev <= 1e-12
        and worst_value_dev <= 1e-10
        and shrink_ok
    )
    return OracleResult(
        "balancing-identity",
        passed,
        {
            "max_norm_dev": worst_norm_dev,
            "max_tensor_dev": worst_tensor_dev,
            "max_value_dev": worst_value_dev,
            "never_increases": shrink_ok,
        },
    )


def _check_certificate(seed, restarts):
    report = nonconvexity_certificate(restarts=restarts, seed=seed)
    sqrt2 = math.sqrt(2.0)
    passed = (
        report.endpoint_values == (1.0, 1.0)
        and all(abs(v - 1.0) <= 1e-6 for v in report.endpoint_estimates)
        and 1.2 <= report.midpoint_value <= 1.4143
        and abs(report.midpoint_value - sqrt2) <= 1e-4
        and report.convexity_violated
    )
    return OracleResult(
        "nonconvexity-certificate",
        passed,
        {
            "endpoints": list(report.endpoint_values),
            "midpoint": report.midpoint_value,
            "expected": sqrt2,
            "margin_low": 1.2,
            "violated": report.convexity_violated,
        },
    )


def _check_hierarchy():
    worst = 0.0
    for n in (3, 4, 5):
        for d in (1, 2, 3):
            params = HierarchyParams(n, d)
            worst = max(
                worst,
                abs(
                    hierarchy_mrr_closed_form(params)
                    - hierarchy_mrr_simulated(params)
                ),
            )
    params = HierarchyParams(10, 4)
    gap = 1.0 - hierarchy_mrr_closed_form(params)
    asym = 1.0 / (2 * 10)
    rel = abs(gap - asym) / asym
    passed = worst <= 1e-12 and rel <= 0.2
    return OracleResult(
        "hierarchy-mrr",
        passed,
        {"max_sim_dev": worst, "asymptote_rel_dev": rel},
    )


def _check_nuclear_rank_one(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (rng.standard_normal(n) for n in (4, 3, 2))
    tensor = a[:, None, None] * b[None, :, None] * c[None, None, :]
    deviations = []
    for p in (1, 2, 3):
        value, witness = nuclear_pnorm_estimate(
            tensor, rank=1, p=p, restarts=5, seed=seed
        )
        expected = _pnorm(a, p) * _pnorm(b, p) * _pnorm(c, p)
        deviations.append(abs(value - expected) / expected)
        rec_dev = float(np.abs(witness.reconstruct() - tensor).max())
        deviations.append(rec_dev)
    worst = max(deviations)
    return OracleResult(
        "nuclear-norm-rank-one", worst <= 1e-6, {"max_dev": worst}
    )


def run_verification(seed=0, restarts=50, n_random=20):
    """Run every oracle; returns a :class:`VerificationReport`."""
    results = (
        _check_balancing(seed, n_random),
        _check_certificate(seed, restarts),
        _check_hierarchy(),
        _check_nuclear_rank_one(seed),
    )
    return VerificationReport(results=results)
