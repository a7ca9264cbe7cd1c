"""Central finite differences through the full model for every loss."""

import numpy as np

from adaptive_exploration import objectives as obj
from adaptive_exploration.core_numeric import l2_normalize
from adaptive_exploration.memory import FeatureMemory
from adaptive_exploration.model import EmbeddingModel, SourceClassifier, backward, forward
from adaptive_exploration.selection import SelectionSet

H = 1e-5


def rel_error(a, n, floor=1e-6):
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)"""
    a, n = np.ravel(a), np.ravel(n)
    return float(np.max(np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)))


def fd_params(params, loss_of_params, h=H):
    out = []
    for p in params:
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            old = p[ix]
            p[ix] = old + h
            lp = loss_of_params()
            p[ix] = old - h
            lm = loss_of_params()
            p[ix] = old
            g[ix] = (lp - lm) / (2 * h)
        out.append(g)
    return out


class Problem:
    """Random model, memory and selection at N_t=32, dims [16, 32, 8]."""

    def __init__(self, seed=0, dims=(16, 32, 8), n=32, batch=12, tau=0.1):
        r = np.random.default_rng(seed)
        self.model = EmbeddingModel(list(dims), seed=seed)
        for k in range(1, len(self.model.params), 2):
            self.model.params[k][:] = r.normal(0, 0.1, self.model.params[k].shape)
        self.x = r.normal(size=(n, dims[0]))
        self.mem = FeatureMemory(n, dims[-1])
        self.mem.update(np.arange(n), l2_normalize(r.normal(size=(n, dims[-1]))), 0.0)
        self.idx = np.sort(r.choice(n, size=batch, replace=False))
        rows = []
        for i in range(n):
            # some neighbors inside the batch so the pair losses have positives
            near = r.choice(self.idx, size=r.integers(0, 4), replace=False)
            far = r.choice(n, size=r.integers(0, 4), replace=False)
            rows.append(np.union1d(np.union1d(near, far), [i]))
        self.sel = SelectionSet.from_rows(rows)
        self.tau = tau
        self.clf = SourceClassifier(5, dims[-1], seed=seed + 1)
        self.clf.params[1][:] = r.normal(0, 0.1, 5)
        self.labels = r.integers(0, 5, size=batch)

    def loss_fn(self, name):
        m, idx, sel, tau = self.mem, self.idx, self.sel, self.tau
        if name == "L_s":
            return lambda f: obj.loss_source(self.clf, f, self.labels)[:2]
        if name == "L_alpha":
            return lambda f: obj.loss_alpha(m, f, idx, tau)
        if name == "L_beta1":
            return lambda f: obj.loss_beta(m, f, idx, sel, tau, balanced=False)
        if name == "L_beta2":
            return lambda f: obj.loss_beta(m, f, idx, sel, tau, balanced=True)
        if name == "triplet":
            return lambda f: obj.loss_triplet_baseline(f, idx, sel, 0.3)
        if name == "contrastive":
            return lambda f: obj.loss_contrastive_baseline(f, idx, sel, 1.0)
        raise KeyError(name)

    def check(self, name):
        """Return the max relative error over all model parameters."""
        fn = self.loss_fn(name)
        X = self.x[self.idx]
        f, tape = forward(self.model, X)
        _, g = fn(f)
        analytic = backward(self.model, tape, g).arrays
        numeric = fd_params(self.model.params, lambda: fn(forward(self.model, X)[0])[0])
        return max(rel_error(a, n) for a, n in zip(analytic, numeric))

    def check_classifier(self):
        X = self.x[self.idx]
        f = forward(self.model, X)[0]
        _, _, buf = obj.loss_source(self.clf, f, self.labels)
        numeric = fd_params(self.clf.params, lambda: obj.loss_source(self.clf, f, self.labels)[0])
        return max(rel_error(a, n) for a, n in zip(buf.arrays, numeric))


LOSSES = ("L_s", "L_alpha", "L_beta1", "L_beta2", "triplet", "contrastive")
