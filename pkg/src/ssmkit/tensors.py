"""Explicit polynomial tensors and the intrusive composition oracle.

Built-in test models optionally carry their quadratic/cubic coefficient
arrays.  Composing those tensors directly with an expansion is the
independent reference path against which the evaluation-only engine is
checked, so nothing in this module may call the black box or the engine.
"""

from __future__ import annotations

import numpy as np

from . import indexing


class ExplicitTensors:
    """Sparse quadratic/cubic coefficient storage over the state z = (x, xdot).

    ``quadratic`` maps a sorted index pair (a, b) to a length-``dim`` vector
    g such that the quadratic force is ``sum g * z[a] * z[b]`` (one entry per
    unordered pair, orderings already combined).  ``cubic`` does the same for
    sorted triples.  ``dim`` is the output length, ``state_dim`` the length
    of z.
    """

    def __init__(self, dim, state_dim, quadratic=None, cubic=None):
        self.dim = int(dim)
        self.state_dim = int(state_dim)
        self.quadratic = {}
        self.cubic = {}
        for key, vec in (quadratic or {}).items():
            self.add_quadratic(key, vec)
        for key, vec in (cubic or {}).items():
            self.add_cubic(key, vec)

    def add_quadratic(self, key, vec):
        a, b = sorted(int(i) for i in key)
        vec = np.asarray(vec, dtype=float).reshape(self.dim)
        if (a, b) in self.quadratic:
            self.quadratic[(a, b)] = self.quadratic[(a, b)] + vec
        else:
            self.quadratic[(a, b)] = vec

    def add_cubic(self, key, vec):
        key = tuple(sorted(int(i) for i in key))
        vec = np.asarray(vec, dtype=float).reshape(self.dim)
        if key in self.cubic:
            self.cubic[key] = self.cubic[key] + vec
        else:
            self.cubic[key] = vec

    # -- direct evaluation --------------------------------------------------

    def evaluate(self, z):
        """Contract the tensors at a (possibly complex) state vector."""
        z = np.asarray(z).reshape(self.state_dim)
        out = np.zeros(self.dim, dtype=np.result_type(z.dtype, float))
        for (a, b), g in self.quadratic.items():
            out = out + g * (z[a] * z[b])
        for (a, b, c), g in self.cubic.items():
            out = out + g * (z[a] * z[b] * z[c])
        return out

    def evaluate_quadratic(self, z):
        z = np.asarray(z).reshape(self.state_dim)
        out = np.zeros(self.dim, dtype=np.result_type(z.dtype, float))
        for (a, b), g in self.quadratic.items():
            out = out + g * (z[a] * z[b])
        return out

    def evaluate_cubic(self, z):
        z = np.asarray(z).reshape(self.state_dim)
        out = np.zeros(self.dim, dtype=np.result_type(z.dtype, float))
        for (a, b, c), g in self.cubic.items():
            out = out + g * (z[a] * z[b] * z[c])
        return out

    # -- multilinear forms ----------------------------------------------------

    def bilinear(self, u, v):
        """The symmetric bilinear form Q with Q(z, z) = quadratic part."""
        out = np.zeros(self.dim, dtype=np.result_type(u.dtype, v.dtype, float))
        for (a, b), g in self.quadratic.items():
            if a == b:
                out = out + g * (u[a] * v[a])
            else:
                out = out + g * 0.5 * (u[a] * v[b] + u[b] * v[a])
        return out

    def trilinear(self, u, v, w):
        """The symmetric trilinear form T with T(z, z, z) = cubic part."""
        out = np.zeros(self.dim, dtype=np.result_type(u.dtype, v.dtype, w.dtype, float))
        sixth = 1.0 / 6.0
        for (a, b, c), g in self.cubic.items():
            s = (u[a] * v[b] * w[c] + u[a] * v[c] * w[b]
                 + u[b] * v[a] * w[c] + u[b] * v[c] * w[a]
                 + u[c] * v[a] * w[b] + u[c] * v[b] * w[a])
            out = out + g * (sixth * s)
        return out

    def lifted(self, n):
        """Tensors of the first-order nonlinearity F(z) = (-f, 0) given f tensors.

        ``self`` must be expressed over the state z already (state_dim = 2n);
        the output dimension is padded from n to 2n with the sign flip applied.
        """
        if self.dim == self.state_dim:
            return self
        out = ExplicitTensors(2 * n, self.state_dim)
        for key, g in self.quadratic.items():
            vec = np.zeros(2 * n)
            vec[:n] = -g
            out.quadratic[key] = vec
        for key, g in self.cubic.items():
            vec = np.zeros(2 * n)
            vec[:n] = -g
            out.cubic[key] = vec
        return out


def compose_tensor_at(m, table, tensors):
    """Degree-m coefficient of F(W(p)) by direct tensor contraction.

    Sums the symmetric bilinear/trilinear forms over ordered splits of m.
    This is the intrusive reference for the evaluation-only engine.
    """
    out = np.zeros(tensors.dim, dtype=complex)
    if indexing.degree(m) < 2:
        return out
    for m1, m2 in indexing.pairs_summing_to(m, 1):
        u = table.manifold(m1)
        v = table.manifold(m2)
        if m1 == m2:
            out = out + tensors.bilinear(u, u)
        else:
            out = out + 2.0 * tensors.bilinear(u, v)
    if indexing.degree(m) >= 3:
        for triple in indexing.triples_summing_to(m, 1):
            kind, _, _ = indexing.classify_triple(triple)
            u, v, w = (table.manifold(t) for t in triple)
            if kind == "all_equal":
                mult = 1.0
            elif kind == "two_equal":
                mult = 3.0
            else:
                mult = 6.0
            out = out + mult * tensors.trilinear(u, v, w)
    return out


def make_tensor_composer(tensors):
    """A compose(m, table) callable running the intrusive path."""

    def compose(m, table):
        return compose_tensor_at(m, table, tensors)

    return compose
