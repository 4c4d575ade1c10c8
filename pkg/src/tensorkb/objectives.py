"""Training objectives: full-softmax fiber losses for the standard and
reciprocal formulations, and the three sampled/weighted regularization
penalties, all with analytic gradients.

Losses and penalties reduce over a minibatch by SUM (not mean), so the
per-example regularizer accounting matches the per-triple penalty terms of
the sampled objectives, and one epoch accumulates each training example
exactly once.

Gradients are reported sparsely: matrices that receive updates only at the
rows touched by the batch carry (row-index, row-gradient) pairs, while the
candidate-side matrix of a softmax (every entity competes in the
normalizer) carries a dense gradient.
"""

from __future__ import annotations

import numpy as np

from .datasets import ModeMarginals
from .models import CPModel, DistMultModel


class Gradients:
    """Per-parameter gradient pieces, dense and/or row-sparse.

    Arrays handed to :meth:`add_dense` are owned by the container and may be
    mutated by later accumulation. Row pieces may contain duplicate indices;
    consumers must combine duplicates before any state update.
    """

    def __init__(self):
        self.dense = {}
        self.rows = {}

    def add_dense(self, name, arr):
        cur = self.dense.get(name)
        if cur is None:
            self.dense[name] = arr
        else:
            cur += arr

    def add_rows(self, name, idx, vals):
        self.rows.setdefault(name, []).append((idx, vals))

    def merge(self, other):
        for name, arr in other.dense.items():
            self.add_dense(name, arr)
        for name, pieces in other.rows.items():
            for idx, vals in pieces:
                self.add_rows(name, idx, vals)
        return self

    def scale(self, c):
        for arr in self.dense.values():
            arr *= c
        for pieces in self.rows.values():
            for _, vals in pieces:
                vals *= c
        return self

    def combined_rows(self, name):
        """Duplicate-free (unique row indices, summed row gradients)."""
        pieces = self.rows.get(name, [])
        if not pieces:
            return None
        idx = np.concatenate([p[0] for p in pieces])
        vals = np.concatenate([p[1] for p in pieces])
        uniq, inverse = np.unique(idx, return_inverse=True)
        buf = np.zeros((len(uniq), vals.shape[1]), dtype=vals.dtype)
        np.add.at(buf, inverse, vals)
        return uniq, buf

    def to_dense(self, model):
        """Full dense gradient per parameter (test/diagnostic path)."""
        out = {name: np.zeros_like(arr) for name, arr in model.arrays().items()}
        for name, arr in self.dense.items():
            out[name] += arr
        for name, pieces in self.rows.items():
            for idx, vals in pieces:
                np.add.at(out[name], idx, vals)
        return out


def log_softmax_loss_terms(scores, targets):
    """Multiclass log-loss terms of score fibers.

    For each row b with target t: loss_b = -scores[b, t] + lse(scores[b]).
    The log-sum-exp subtracts the row maximum first, so uniformly offsetting
    a fiber leaves its loss unchanged up to roundoff. Returns the per-row
    losses and the softmax probabilities (the gradient of lse w.r.t. scores).
    """
    m = scores.max(axis=1, keepdims=True)
    e = np.exp(scores - m)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(len(scores))
    losses = (m[:, 0] + np.log(s[:, 0])) - scores[rows, targets]
    probs = e
    probs /= s
    return losses, probs


def _check_batch(model, batch):
    batch = np.asarray(batch, dtype=np.int64).reshape(-1, 3)
    if len(batch) == 0:
        raise ValueError("empty batch")
    if batch.min() < 0:
        raise IndexError("negative index in batch")
    if max(batch[:, 0].max(), batch[:, 2].max()) >= model.n_entities:
        raise IndexError("entity index out of range for model")
    if batch[:, 1].max() >= model.n_predicates:
        raise IndexError("predicate index out of range for model")
    return batch


def _softmax_grad(scores, targets):
    losses, g = log_softmax_loss_terms(scores, targets)
    g[np.arange(len(g)), targets] -= 1
    return float(losses.sum()), g


def rhs_fiber_loss_and_grad(model, batch):
    """Sum over the batch of -X[i,j,k] + log sum_k' exp X[i,j,k'].

    The gradient touches the subject and predicate rows of the batch plus the
    full object-side matrix (softmax over all objects).
    """
    batch = _check_batch(model, batch)
    i, j, k = batch[:, 0], batch[:, 1], batch[:, 2]

    if isinstance(model, CPModel):
        profs = model.subject[i] * model.predicate[j]
        loss, g = _softmax_grad(profs @ model.object.T, k)
        t = g @ model.object
        grads = Gradients()
        grads.add_dense("object", g.T @ profs)
        grads.add_rows("subject", i, t * model.predicate[j])
        grads.add_rows("predicate", j, t * model.subject[i])
        return loss, grads

    if isinstance(model, DistMultModel):
        profs = model.entity[i] * model.predicate[j]
        loss, g = _softmax_grad(profs @ model.entity.T, k)
        t = g @ model.entity
        grads = Gradients()
        grads.add_dense("entity", g.T @ profs)
        grads.add_rows("entity", i, t * model.predicate[j])
        grads.add_rows("predicate", j, t * model.entity[i])
        return loss, grads

    a, b = model.entity_re[i], model.entity_im[i]
    c, d = model.predicate_re[j], model.predicate_im[j]
    p_re = a * c - b * d
    p_im = a * d + b * c
    scores = p_re @ model.entity_re.T + p_im @ model.entity_im.T
    loss, g = _softmax_grad(scores, k)
    t_re = g @ model.entity_re
    t_im = g @ model.entity_im
    grads = Gradients()
    grads.add_dense("entity_re", g.T @ p_re)
    grads.add_dense("entity_im", g.T @ p_im)
    grads.add_rows("entity_re", i, c * t_re + d * t_im)
    grads.add_rows("entity_im", i, -d * t_re + c * t_im)
    grads.add_rows("predicate_re", j, a * t_re + b * t_im)
    grads.add_rows("predicate_im", j, -b * t_re + a * t_im)
    return loss, grads


def lhs_fiber_loss_and_grad(model, batch):
    """Sum over the batch of -X[i,j,k] + log sum_i' exp X[i',j,k].

    Mirror of :func:`rhs_fiber_loss_and_grad` over the subject mode; the
    dense gradient lands on the subject-side matrix.
    """
    batch = _check_batch(model, batch)
    i, j, k = batch[:, 0], batch[:, 1], batch[:, 2]

    if isinstance(model, CPModel):
        profs = model.predicate[j] * model.object[k]
        loss, g = _softmax_grad(profs @ model.subject.T, i)
        t = g @ model.subject
        grads = Gradients()
        grads.add_dense("subject", g.T @ profs)
        grads.add_rows("predicate", j, t * model.object[k])
        grads.add_rows("object", k, t * model.predicate[j])
        return loss, grads

    if isinstance(model, DistMultModel):
        profs = model.entity[k] * model.predicate[j]
        loss, g = _softmax_grad(profs @ model.entity.T, i)
        t = g @ model.entity
        grads = Gradients()
        grads.add_dense("entity", g.T @ profs)
        grads.add_rows("entity", k, t * model.predicate[j])
        grads.add_rows("predicate", j, t * model.entity[k])
        return loss, grads

    c, d = model.predicate_re[j], model.predicate_im[j]
    e, f = model.entity_re[k], model.entity_im[k]
    g_prof = c * e + d * f
    h_prof = d * e - c * f
    scores = g_prof @ model.entity_re.T - h_prof @ model.entity_im.T
    loss, g = _softmax_grad(scores, i)
    t_re = g @ model.entity_re
    t_im = g @ model.entity_im
    grads = Gradients()
    grads.add_dense("entity_re", g.T @ g_prof)
    grads.add_dense("entity_im", -(g.T @ h_prof))
    grads.add_rows("predicate_re", j, e * t_re + f * t_im)
    grads.add_rows("predicate_im", j, f * t_re - e * t_im)
    grads.add_rows("entity_re", k, c * t_re - d * t_im)
    grads.add_rows("entity_im", k, d * t_re + c * t_im)
    return loss, grads


def standard_loss(model, batch):
    """Both fiber losses per triple: the standard-formulation objective."""
    loss_r, grads = rhs_fiber_loss_and_grad(model, batch)
    loss_l, grads_l = lhs_fiber_loss_and_grad(model, batch)
    grads.merge(grads_l)
    return loss_r + loss_l, grads


def reciprocal_loss(model, batch):
    """Object-fiber loss over a reciprocal-augmented batch.

    Each augmented example contributes only the rhs term; summing the two
    augmented images of an original triple reproduces the two-sided
    reciprocal objective of that triple exactly.
    """
    return rhs_fiber_loss_and_grad(model, batch)


def _touched_rows(model, batch):
    """Per-example (plane-names, marginal-mode, row-indices) of the three
    parameter rows entering the score of each triple."""
    i, j, k = batch[:, 0], batch[:, 1], batch[:, 2]
    if isinstance(model, CPModel):
        return [
            (("subject",), 1, i),
            (("predicate",), 2, j),
            (("object",), 3, k),
        ]
    if isinstance(model, DistMultModel):
        return [
            (("entity",), 1, i),
            (("predicate",), 2, j),
            (("entity",), 3, k),
        ]
    return [
        (("entity_re", "entity_im"), 1, i),
        (("predicate_re", "predicate_im"), 2, j),
        (("entity_re", "entity_im"), 3, k),
    ]


def fro_penalty_sampled(model, batch, lam):
    """Squared-norm penalty on the rows touched by each example.

    value = lam * sum_examples sum_{touched row} ||row||_2^2, with complex
    rows measured by squared modulus. Sampling frequency supplies the
    marginal-probability weighting implicitly.
    """
    batch = _check_batch(model, batch)
    grads = Gradients()
    per_example = None
    for names, _, idx in _touched_rows(model, batch):
        planes = [model.arrays()[name][idx] for name in names]
        ssq = planes[0] ** 2
        for extra in planes[1:]:
            ssq = ssq + extra**2
        term = ssq.sum(axis=1)
        per_example = term if per_example is None else per_example + term
        if lam != 0.0:
            for name, plane in zip(names, planes):
                grads.add_rows(name, idx, (2.0 * lam) * plane)
    value = float(lam * np.sum(per_example))
    return value, grads


def n3_penalty_sampled(model, batch, lam):
    """Cubic penalty on the rows touched by each example.

    value = (lam / 3) * sum_examples sum_{touched entry} |entry|^3. The
    entrywise gradient of |x|^3 is 3 sign(x) x^2; complex entries contribute
    |c|^3 with gradient 3 |c| c split over the real and imaginary planes.
    One epoch of these terms is the sampled surrogate of the weighted
    nuclear 3-norm.
    """
    batch = _check_batch(model, batch)
    grads = Gradients()
    per_example = None
    for names, _, idx in _touched_rows(model, batch):
        planes = [model.arrays()[name][idx] for name in names]
        if len(planes) == 1:
            mod = np.abs(planes[0])
            term = (mod**3).sum(axis=1)
            if lam != 0.0:
                grads.add_rows(names[0], idx, lam * (planes[0] * mod))
        else:
            re, im = planes
            mod = np.sqrt(re**2 + im**2)
            term = (mod**3).sum(axis=1)
            if lam != 0.0:
                grads.add_rows(names[0], idx, lam * (mod * re))
                grads.add_rows(names[1], idx, lam * (mod * im))
        per_example = term if per_example is None else per_example + term
    value = float((lam / 3.0) * np.sum(per_example))
    return value, grads


def n2_weighted_penalty(model, marginals, lam):
    """Marginal-weighted 2-norm penalty, cubed, over whole factor columns.

    value = (lam / 3) * sum_r sum_modes ( sum_i q_i * |entry|^2 )^{3/2}.
    Unlike the sampled penalties this weights by the mode marginals
    explicitly and its gradient is dense: every coefficient of every factor
    is updated on each evaluation.
    """
    if not isinstance(marginals, ModeMarginals):
        raise TypeError("marginals must be a ModeMarginals")
    arrays = model.arrays()
    expected = {
        1: model.n_entities,
        2: model.n_predicates,
        3: model.n_entities,
    }
    qs = {1: marginals.q1, 2: marginals.q2, 3: marginals.q3}
    for mode, size in expected.items():
        if len(qs[mode]) != size:
            raise ValueError(
                f"marginal for mode {mode} has length {len(qs[mode])}, "
                f"model expects {size}"
            )

    if isinstance(model, CPModel):
        roles = [(("subject",), 1), (("predicate",), 2), (("object",), 3)]
    elif isinstance(model, DistMultModel):
        roles = [(("entity",), 1), (("predicate",), 2), (("entity",), 3)]
    else:
        roles = [
            (("entity_re", "entity_im"), 1),
            (("predicate_re", "predicate_im"), 2),
            (("entity_re", "entity_im"), 3),
        ]

    grads = Gradients()
    value = 0.0
    for names, mode in roles:
        q = qs[mode].astype(arrays[names[0]].dtype, copy=False)
        planes = [arrays[name] for name in names]
        sq = planes[0] ** 2
        for extra in planes[1:]:
            sq = sq + extra**2
        s = q @ sq  # (R,) column sums weighted by q
        value += float((s**1.5).sum())
        if lam != 0.0:
            w = np.sqrt(s)[None, :] * q[:, None]
            for name, plane in zip(names, planes):
                grads.add_dense(name, lam * (w * plane))
    return (lam / 3.0) * value, grads
