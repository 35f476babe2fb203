"""Multi-index enumeration, arithmetic, and coefficient storage.

A multi-index is a tuple of non-negative integer exponents, one entry per
reduced coordinate; it addresses the monomial ``p**m = p[0]**m[0] * ...``.
Every enumeration order produced here is part of the public contract
(output files and evaluation caches key on it), so the orders are frozen:
multi-indices of one degree are listed reverse-lexicographically, i.e.
``(2,0)`` before ``(1,1)`` before ``(0,2)``.
"""

from __future__ import annotations

import json
import math
import struct

import numpy as np

from .errors import CapacityError, MissingCoefficientError

# Refuse to materialize enumerations larger than this.
MAX_INDICES_PER_DEGREE = 2_000_000

_MAGIC = b"SSMTAB01"


def degree(m):
    """Total degree ``|m|`` of a multi-index."""
    return sum(m)


def unit_index(M_dim, j):
    """The multi-index ``e_j`` with a single 1 in slot ``j``."""
    e = [0] * M_dim
    e[j] = 1
    return tuple(e)


def add(m1, m2):
    return tuple(a + b for a, b in zip(m1, m2))


def subtract(m1, m2):
    """Componentwise ``m1 - m2``, or None if any entry would go negative."""
    out = []
    for a, b in zip(m1, m2):
        if a < b:
            return None
        out.append(a - b)
    return tuple(out)


def index_count(M_dim, k):
    """Number of multi-indices with ``M_dim`` slots and total degree ``k``."""
    return math.comb(k + M_dim - 1, M_dim - 1)


def enumerate_degree(M_dim, k):
    """All multi-indices of total degree ``k``, reverse-lexicographically.

    The order is stable across versions: it is the iteration backbone for
    the order-by-order solver and the key order in serialized tables.
    """
    if M_dim < 1:
        raise ValueError("M_dim must be >= 1")
    if k < 0:
        raise ValueError("degree must be >= 0")
    count = index_count(M_dim, k)
    if count > MAX_INDICES_PER_DEGREE:
        raise CapacityError(
            f"degree {k} in {M_dim} variables has {count} multi-indices, "
            f"exceeding the cap of {MAX_INDICES_PER_DEGREE}"
        )
    out = []

    def _fill(prefix, remaining, slots):
        if slots == 1:
            out.append(prefix + (remaining,))
            return
        for first in range(remaining, -1, -1):
            _fill(prefix + (first,), remaining - first, slots - 1)

    _fill((), k, M_dim)
    return out


def _subindices(m):
    """All u with 0 <= u_i <= m_i, ascending lexicographic order."""
    out = [()]
    for mi in m:
        out = [u + (v,) for u in out for v in range(mi + 1)]
    return out


def pairs_summing_to(m, min_deg=1):
    """Unordered pairs (m1, m2) with m1 + m2 = m and both degrees >= min_deg.

    The diagonal pair (m/2, m/2) appears once when m is even in every
    component.  Pairs are reported with ``m1 >= m2`` in tuple order.
    """
    if degree(m) < 2:
        raise ValueError("pairs require degree(m) >= 2")
    if min_deg < 1:
        raise ValueError("min_deg must be >= 1")
    out = []
    for m1 in _subindices(m):
        m2 = subtract(m, m1)
        if m1 < m2:
            continue
        if degree(m1) < min_deg or degree(m2) < min_deg:
            continue
        out.append((m1, m2))
    return out


def triples_summing_to(m, min_deg=1):
    """Multisets {m1, m2, m3} with m1 + m2 + m3 = m, each degree >= min_deg.

    Each multiset appears once, as a tuple sorted descending.
    """
    if min_deg < 1:
        raise ValueError("min_deg must be >= 1")
    seen = set()
    out = []
    for m1 in _subindices(m):
        if degree(m1) < min_deg:
            continue
        rest = subtract(m, m1)
        for m2 in _subindices(rest):
            if degree(m2) < min_deg:
                continue
            m3 = subtract(rest, m2)
            if degree(m3) < min_deg:
                continue
            key = tuple(sorted((m1, m2, m3), reverse=True))
            if key not in seen:
                seen.add(key)
                out.append(key)
    out.sort(reverse=True)
    return out


def classify_triple(triple):
    """Classify a sorted triple as all_equal / two_equal / distinct.

    For the two_equal case returns (kind, repeated, single).
    """
    m1, m2, m3 = triple
    if m1 == m2 == m3:
        return ("all_equal", m1, None)
    if m1 == m2:
        return ("two_equal", m1, m3)
    if m2 == m3:
        return ("two_equal", m2, m1)
    return ("distinct", None, None)


def conjugate_index(m):
    """Swap exponents of conjugate-pair coordinates: (a,b,c,d) -> (b,a,d,c).

    Only meaningful when the reduced coordinates are ordered in conjugate
    pairs, which is how master subspaces are built here.
    """
    if len(m) % 2:
        raise ValueError("conjugate_index needs an even number of coordinates")
    out = []
    for a in range(0, len(m), 2):
        out.extend((m[a + 1], m[a]))
    return tuple(out)


def monomial(p, m):
    """Evaluate ``p**m`` for a complex point p."""
    val = 1.0 + 0.0j
    for pi, mi in zip(p, m):
        if mi:
            val *= pi ** mi
    return val


class CoefficientTable:
    """Degree-indexed storage of manifold and reduced-dynamics coefficients.

    For every stored multi-index ``m`` the table holds the manifold
    coefficient (length ``N`` complex vector) and the reduced-dynamics
    coefficient (length ``M_dim``).  Coefficients are grouped by total
    degree because the homological solve proceeds order by order; within a
    degree they keep the canonical enumeration order.
    """

    def __init__(self, M_dim, N):
        self.M_dim = int(M_dim)
        self.N = int(N)
        self._levels = {}  # degree -> {m: (manifold, reduced)}
        # (m, [mode indices]) for every index that triggered a resonant solve
        self.resonances = []
        # Omega -> forced-correction record, filled by the forced module
        self.nonautonomous = {}

    # -- storage ----------------------------------------------------------

    def set(self, m, manifold, reduced):
        m = tuple(int(v) for v in m)
        if len(m) != self.M_dim:
            raise ValueError(f"multi-index {m} has wrong length for M_dim={self.M_dim}")
        w = np.asarray(manifold, dtype=complex).reshape(self.N).copy()
        r = np.asarray(reduced, dtype=complex).reshape(self.M_dim).copy()
        w.flags.writeable = False
        r.flags.writeable = False
        self._levels.setdefault(degree(m), {})[m] = (w, r)

    def has(self, m):
        return tuple(m) in self._levels.get(degree(m), {})

    def manifold(self, m):
        try:
            return self._levels[degree(m)][tuple(m)][0]
        except KeyError:
            raise MissingCoefficientError(f"manifold coefficient {tuple(m)} not computed yet")

    def reduced(self, m):
        try:
            return self._levels[degree(m)][tuple(m)][1]
        except KeyError:
            raise MissingCoefficientError(f"reduced coefficient {tuple(m)} not computed yet")

    def indices(self, k):
        return list(self._levels.get(k, {}).keys())

    @property
    def degrees(self):
        return sorted(self._levels.keys())

    @property
    def max_order(self):
        return max(self._levels) if self._levels else 0

    def items(self):
        for k in self.degrees:
            for m, (w, r) in self._levels[k].items():
                yield m, w, r

    def truncated(self, order):
        """A table containing only degrees <= order (coefficients shared)."""
        out = CoefficientTable(self.M_dim, self.N)
        for k in self.degrees:
            if k <= order:
                out._levels[k] = dict(self._levels[k])
        out.resonances = [(m, r) for m, r in self.resonances if degree(m) <= order]
        return out

    # -- polynomial evaluation ---------------------------------------------

    def manifold_at(self, p):
        """W(p): the physical-space point parameterized by p."""
        z = np.zeros(self.N, dtype=complex)
        for m, w, _ in self.items():
            z += w * monomial(p, m)
        return z

    def reduced_at(self, p):
        """R(p): the reduced vector field at p."""
        out = np.zeros(self.M_dim, dtype=complex)
        for m, _, r in self.items():
            out += r * monomial(p, m)
        return out

    def tangent_times_reduced(self, p):
        """DW(p) @ R(p), evaluated without forming the Jacobian."""
        rp = self.reduced_at(p)
        acc = np.zeros(self.N, dtype=complex)
        for m, w, _ in self.items():
            s = 0.0 + 0.0j
            for j, mj in enumerate(m):
                if mj:
                    lowered = m[:j] + (mj - 1,) + m[j + 1:]
                    s += mj * monomial(p, lowered) * rp[j]
            if s != 0:
                acc += w * s
        return acc

    # -- diagnostics ---------------------------------------------------------

    def conjugate_defect(self):
        """Largest relative violation of W_{conj(m)} = conj(W_m) over the table."""
        worst = 0.0
        for m, w, r in self.items():
            mc = conjugate_index(m)
            if not self.has(mc):
                return math.inf
            wc = self.manifold(mc)
            rc = self.reduced(mc)
            scale = max(np.linalg.norm(w), np.linalg.norm(r), 1e-300)
            dw = np.linalg.norm(wc - np.conj(w))
            # reduced coefficients swap within conjugate pairs as well
            rr = np.conj(r)
            swapped = rr.reshape(-1, 2)[:, ::-1].reshape(-1)
            dr = np.linalg.norm(rc - swapped)
            worst = max(worst, (dw + dr) / scale)
        return worst

    # -- serialization -------------------------------------------------------

    def save(self, path):
        """Write the binary sidecar plus a JSON summary next to it.

        Layout (little-endian): magic ``SSMTAB01``; uint32 M_dim, N,
        max_order, n_records; records sorted by (degree, canonical order),
        each ``uint16 exponents[M_dim]`` + ``complex128 manifold[N]`` +
        ``complex128 reduced[M_dim]``; then uint32 n_omega and per-Omega
        records ``float64 Omega`` + x0, x0_bar (complex128[N]) + s_plus,
        s_minus (complex128[M_dim]).
        """
        path = str(path)
        records = []
        for k in self.degrees:
            for m in enumerate_degree(self.M_dim, k):
                if m in self._levels[k]:
                    records.append((m, *self._levels[k][m]))
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<IIII", self.M_dim, self.N, self.max_order, len(records)))
            for m, w, r in records:
                fh.write(struct.pack(f"<{self.M_dim}H", *m))
                fh.write(np.ascontiguousarray(w, dtype=np.complex128).tobytes())
                fh.write(np.ascontiguousarray(r, dtype=np.complex128).tobytes())
            omegas = sorted(self.nonautonomous.keys())
            fh.write(struct.pack("<I", len(omegas)))
            for om in omegas:
                rec = self.nonautonomous[om]
                fh.write(struct.pack("<d", om))
                for arr, n in ((rec.x0, self.N), (rec.x0_bar, self.N),
                               (rec.s0_plus, self.M_dim), (rec.s0_minus, self.M_dim)):
                    fh.write(np.ascontiguousarray(arr, dtype=np.complex128).reshape(n).tobytes())
        summary = {
            "M_dim": self.M_dim,
            "N": self.N,
            "max_order": self.max_order,
            "records": sum(len(v) for v in self._levels.values()),
            "per_degree": {str(k): len(self._levels[k]) for k in self.degrees},
            "manifold_norms": {
                str(k): float(max(np.linalg.norm(w) for w, _ in self._levels[k].values()))
                for k in self.degrees
            },
            "resonances": [[list(m), list(map(int, modes))] for m, modes in self.resonances],
            "omega_samples": sorted(map(float, self.nonautonomous.keys())),
        }
        with open(path + ".json", "w") as fh:
            json.dump(summary, fh, indent=2)

    @classmethod
    def load(cls, path):
        from .forced import ForcedCorrection  # local import to avoid a cycle

        with open(str(path), "rb") as fh:
            magic = fh.read(8)
            if magic != _MAGIC:
                raise ValueError(f"not a coefficient table file (magic {magic!r})")
            M_dim, N, _max_order, n_records = struct.unpack("<IIII", fh.read(16))
            table = cls(M_dim, N)
            for _ in range(n_records):
                m = struct.unpack(f"<{M_dim}H", fh.read(2 * M_dim))
                w = np.frombuffer(fh.read(16 * N), dtype=np.complex128)
                r = np.frombuffer(fh.read(16 * M_dim), dtype=np.complex128)
                table.set(m, w, r)
            (n_omega,) = struct.unpack("<I", fh.read(4))
            for _ in range(n_omega):
                (om,) = struct.unpack("<d", fh.read(8))
                x0 = np.frombuffer(fh.read(16 * N), dtype=np.complex128)
                x0b = np.frombuffer(fh.read(16 * N), dtype=np.complex128)
                sp = np.frombuffer(fh.read(16 * M_dim), dtype=np.complex128)
                sm = np.frombuffer(fh.read(16 * M_dim), dtype=np.complex128)
                table.nonautonomous[om] = ForcedCorrection(
                    Omega=om, x0=x0, x0_bar=x0b, s0_plus=sp, s0_minus=sm,
                    resonant_plus=(), resonant_minus=())
        return table
