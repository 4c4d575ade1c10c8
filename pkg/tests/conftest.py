import numpy as np
import pytest

from tensorkb.datasets import TripleStore
from tensorkb.models import ModelConfig, init_model


def random_store(rng, n_entities, n_predicates, n_triples, split_tag="train"):
    """Random duplicate-free triple store covering every entity/predicate."""
    seen = set()
    rows = []
    # guarantee every index appears so vocab sizes stay honest
    for j in range(n_predicates):
        rows.append((j % n_entities, j, (j + 1) % n_entities))
        seen.add(rows[-1])
    while len(rows) < n_triples:
        t = (
            int(rng.integers(n_entities)),
            int(rng.integers(n_predicates)),
            int(rng.integers(n_entities)),
        )
        if t not in seen:
            seen.add(t)
            rows.append(t)
    return TripleStore(np.asarray(rows), n_entities, n_predicates,
                       split_tag=split_tag)


def make_model(variant, n_entities, n_predicates, rank, seed=0, scale=0.5,
               dtype="float64"):
    cfg = ModelConfig(variant=variant, rank=rank, init_scale=scale, seed=seed,
                      dtype=dtype)
    return init_model(cfg, (n_entities, n_predicates))


def brute_score(model, i, j, k):
    """Independent per-triple scorer: explicit Python loop over the rank."""
    arrays = model.arrays()
    total = 0.0
    if model.variant == "cp":
        u1, u2, u3 = arrays["subject"], arrays["predicate"], arrays["object"]
        for r in range(model.rank):
            total += float(u1[i, r]) * float(u2[j, r]) * float(u3[k, r])
        return total
    if model.variant == "distmult":
        e, w = arrays["entity"], arrays["predicate"]
        for r in range(model.rank):
            total += float(e[i, r]) * float(w[j, r]) * float(e[k, r])
        return total
    er, ei = arrays["entity_re"], arrays["entity_im"]
    wr, wi = arrays["predicate_re"], arrays["predicate_im"]
    for r in range(model.rank):
        u = complex(er[i, r], ei[i, r])
        w = complex(wr[j, r], wi[j, r])
        v = complex(er[k, r], ei[k, r])
        total += (u * w * v.conjugate()).real
    return total


def finite_difference_max_rel_error(model, objective, step=1e-5, floor=1e-3):
    """Max relative deviation between an analytic gradient and central
    finite differences over every parameter entry.

    ``objective(model) -> (value, Gradients)``. The per-entry relative error
    uses max(|analytic|, |numeric|, floor) as denominator so near-zero
    entries compare absolutely at the floor scale.
    """
    _, grads = objective(model)
    dense = grads.to_dense(model)
    worst = 0.0
    for name, arr in model.arrays().items():
        g = dense[name].ravel()
        flat = arr.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + step
            up = objective(model)[0]
            flat[idx] = orig - step
            down = objective(model)[0]
            flat[idx] = orig
            fd = (up - down) / (2.0 * step)
            rel = abs(g[idx] - fd) / max(abs(g[idx]), abs(fd), floor)
            worst = max(worst, rel)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
