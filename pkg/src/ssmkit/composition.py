"""Evaluation-only composition of a black-box nonlinearity with an expansion.

Given a force F with only quadratic and cubic terms, the degree-m
coefficient of F(W(p)) is assembled purely from point evaluations of F:

* parity splits isolate the quadratic part (even) and cubic part (odd),
* designed sums/differences of expansion coefficients turn each split of
  m into a handful of evaluations,
* complex inputs are reconstructed from evaluations on real vectors when
  the black box is only trusted for real input.

Evaluations are cached by the *combination of multi-indices* that produced
the input vector, never by floating-point content, so hits are exact and
auditable.  The same bookkeeping yields a closed-form evaluation count that
the engine's counters are regression-tested against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import indexing

#: combination-cache hit values are returned as-is; they are marked read-only.


def split_even(F, z):
    """Quadratic part of F at z: (F(z) + F(-z)) / 2."""
    z = np.asarray(z)
    return (np.asarray(F(z)) + np.asarray(F(-z))) / 2.0


def split_odd(F, z):
    """Cubic part of F at z: (F(z) - F(-z)) / 2."""
    z = np.asarray(z)
    return (np.asarray(F(z)) - np.asarray(F(-z))) / 2.0


def eval_complex_quadratic(F2, v):
    """Evaluate an exactly-quadratic real-input map at a complex vector.

    Uses three real evaluations: with va = Re v, vb = Im v, vp = va + vb,

        F2(v) = i F2(vp) + (1 - i) F2(va) - (1 + i) F2(vb).
    """
    v = np.asarray(v, dtype=complex)
    va = v.real.copy()
    vb = v.imag.copy()
    vp = va + vb
    return (1j * np.asarray(F2(vp))
            + (1.0 - 1j) * np.asarray(F2(va))
            - (1.0 + 1j) * np.asarray(F2(vb)))


def eval_complex_cubic(F3, v):
    """Evaluate an exactly-cubic real-input map at a complex vector.

    Uses four real evaluations: with vm = va - vb in addition to the above,

        F3(v) = 2 F3(va) + (-1 + i)/2 F3(vp) - (1 + i)/2 F3(vm) - 2i F3(vb).
    """
    v = np.asarray(v, dtype=complex)
    va = v.real.copy()
    vb = v.imag.copy()
    vp = va + vb
    vm = va - vb
    return (2.0 * np.asarray(F3(va))
            + 0.5 * (-1.0 + 1j) * np.asarray(F3(vp))
            - 0.5 * (1.0 + 1j) * np.asarray(F3(vm))
            - 2j * np.asarray(F3(vb)))


def quadratic_splits(m):
    """Pair splits of m with their even-part evaluation recipes.

    Yields (members, [(weight, terms), ...]) where terms is a tuple of
    (multi_index, sign) describing the signed coefficient sum handed to the
    black box.  The weighted recipe only reproduces the split's contribution
    as a whole, so a zero member must skip the entire split, never single
    evaluations.
    """
    for m1, m2 in indexing.pairs_summing_to(m, 1):
        if m1 == m2:
            yield (m1,), [(1.0, ((m1, 1),))]
        else:
            yield (m1, m2), [(0.5, ((m1, 1), (m2, 1))),
                             (-0.5, ((m1, 1), (m2, -1)))]


def cubic_splits(m):
    """Triple splits of m with their odd-part evaluation recipes."""
    if indexing.degree(m) < 3:
        return
    for triple in indexing.triples_summing_to(m, 1):
        kind, rep, single = indexing.classify_triple(triple)
        if kind == "all_equal":
            yield (rep,), [(1.0, ((rep, 1),))]
        elif kind == "two_equal":
            yield (rep, single), [(0.5, ((rep, 1), (single, 1))),
                                  (-0.5, ((rep, 1), (single, -1))),
                                  (-1.0, ((single, 1),))]
        else:
            m1, m2, m3 = triple
            yield triple, [(1.0, ((m1, 1), (m2, 1), (m3, 1))),
                           (-1.0, ((m1, 1), (m2, 1))),
                           (-1.0, ((m1, 1), (m3, 1))),
                           (-1.0, ((m2, 1), (m3, 1))),
                           (1.0, ((m1, 1),)),
                           (1.0, ((m2, 1),)),
                           (1.0, ((m3, 1),))]


def canonical_terms(terms):
    """Sort terms by multi-index and force a leading + sign.

    Returns (key, flip) where flip is -1 when all signs were negated; an
    odd-part value for the canonical key must be multiplied by flip, an
    even-part value is unaffected.
    """
    terms = tuple(sorted(terms, key=lambda t: t[0], reverse=True))
    if terms[0][1] < 0:
        return tuple((m, -s) for m, s in terms), -1
    return terms, 1


@dataclass
class EvalCounters:
    """Evaluation statistics; all fields are monotone non-decreasing."""

    black_box: int = 0          # calls into the underlying nonlinearity
    points: int = 0             # distinct evaluation points (each costs 2 calls)
    combo_even: int = 0         # combination-level even evaluations (cache misses)
    combo_odd: int = 0
    real_even: int = 0          # real-input even-part evaluations consumed
    real_odd: int = 0
    complex_even: int = 0       # complex-input evaluations routed through identities
    complex_odd: int = 0
    cache_hits: int = 0

    def snapshot(self):
        return dict(self.__dict__)

    def delta(self, before):
        return {k: v - before[k] for k, v in self.__dict__.items()}


_POINT_TAGS_EVEN = ("a", "b", "p")
_POINT_TAGS_ODD = ("a", "b", "p", "m")
# complex-identity weights per tag
_EVEN_WEIGHTS = {"p": 1j, "a": 1.0 - 1j, "b": -(1.0 + 1j)}
_ODD_WEIGHTS = {"a": 2.0, "p": 0.5 * (-1.0 + 1j), "m": -0.5 * (1.0 + 1j), "b": -2j}


class CompositionEngine:
    """Evaluates [F o W]_m through the black box, with caching and counters.

    ``F`` maps a state vector to a force vector of the same length and must
    contain only quadratic and cubic terms.  When ``real_only`` is set the
    black box is never handed a complex vector: complex inputs are
    reconstructed from real evaluations.  ``batch`` optionally evaluates a
    list of points in one round trip (results must be identical to serial
    evaluation).
    """

    def __init__(self, F, N, real_only=True, autoscale_limit=1e3, batch=None):
        self._F = F
        self._batch = batch
        self.N = int(N)
        self.real_only = bool(real_only)
        self.autoscale_limit = float(autoscale_limit)
        self._points = {}   # (combo_key, tag) -> (even_value, odd_value)
        self._combos = {}   # (parity, combo_key) -> value
        self.counters = EvalCounters()
        self.degree_log = []  # (degree, composed multi-indices, counter deltas)

    @classmethod
    def for_system(cls, sys, autoscale_limit=1e3):
        batch = sys.F_batch if hasattr(sys, "F_batch") else None
        return cls(sys.F, sys.N, real_only=sys.real_only,
                   autoscale_limit=autoscale_limit, batch=batch)

    # -- raw evaluation -----------------------------------------------------

    def _call(self, z):
        self.counters.black_box += 1
        return np.asarray(self._F(z))

    def _point_values(self, vec):
        """Even and odd parts of F at a real point, with power-of-two rescaling."""
        norm = float(np.max(np.abs(vec))) if vec.size else 0.0
        if norm > self.autoscale_limit:
            s = 2.0 ** int(np.ceil(np.log2(norm / self.autoscale_limit)))
        else:
            s = 1.0
        zp = vec / s
        fp = self._call(zp)
        fm = self._call(-zp)
        even = (fp + fm) * (0.5 * s * s)
        odd = (fp - fm) * (0.5 * s * s * s)
        return even, odd

    def _point(self, combo_key, tag, vec):
        pkey = (combo_key, tag)
        hit = self._points.get(pkey)
        if hit is None:
            hit = self._point_values(vec)
            self._points[pkey] = hit
            self.counters.points += 1
        return hit

    # -- combination-level evaluation ----------------------------------------

    @staticmethod
    def _combo_vector(terms, table):
        vec = None
        for m, sign in terms:
            w = table.manifold(m)
            vec = sign * w if vec is None else vec + sign * w
        return vec

    def _combo_value(self, parity, terms, table):
        key, flip = canonical_terms(terms)
        ckey = (parity, key)
        cached = self._combos.get(ckey)
        if cached is not None:
            self.counters.cache_hits += 1
            return cached if (parity == "even" or flip == 1) else -cached
        vec = self._combo_vector(key, table)
        value = self._evaluate_parity(parity, key, vec)
        value = np.asarray(value)
        value.flags.writeable = False
        self._combos[ckey] = value
        if parity == "even":
            self.counters.combo_even += 1
        else:
            self.counters.combo_odd += 1
        return value if (parity == "even" or flip == 1) else -value

    def _evaluate_parity(self, parity, combo_key, vec):
        is_complex = np.iscomplexobj(vec) and np.any(vec.imag != 0)
        if is_complex and self.real_only:
            va = vec.real.copy()
            vb = vec.imag.copy()
            pts = {"a": va, "b": vb, "p": va + vb}
            if parity == "even":
                self.counters.complex_even += 1
                self.counters.real_even += 3
                acc = None
                for tag in _POINT_TAGS_EVEN:
                    val = self._point(combo_key, tag, pts[tag])[0]
                    term = _EVEN_WEIGHTS[tag] * val
                    acc = term if acc is None else acc + term
                return acc
            self.counters.complex_odd += 1
            self.counters.real_odd += 4
            pts["m"] = va - vb
            acc = None
            for tag in _POINT_TAGS_ODD:
                val = self._point(combo_key, tag, pts[tag])[1]
                term = _ODD_WEIGHTS[tag] * val
                acc = term if acc is None else acc + term
            return acc
        # trusted input: evaluate directly (real vector, or complex-capable box)
        vec_eval = vec.real.copy() if not is_complex and np.iscomplexobj(vec) else vec
        even, odd = self._point(combo_key, "r", vec_eval)
        if parity == "even":
            self.counters.real_even += 1
            return even
        self.counters.real_odd += 1
        return odd

    # -- public composition ----------------------------------------------------

    def compose_quadratic_at(self, m, table):
        """Degree-m coefficient of the quadratic part of F composed with W.

        Splits with an exactly-zero member contribute exactly zero by
        bilinearity and are skipped wholesale.
        """
        out = np.zeros(self.N, dtype=complex)
        for members, recipe in quadratic_splits(m):
            if any(not np.any(table.manifold(mm)) for mm in members):
                continue
            for weight, terms in recipe:
                out = out + weight * self._combo_value("even", terms, table)
        return out

    def compose_cubic_at(self, m, table):
        """Degree-m coefficient of the cubic part of F composed with W."""
        out = np.zeros(self.N, dtype=complex)
        for members, recipe in cubic_splits(m):
            if any(not np.any(table.manifold(mm)) for mm in members):
                continue
            for weight, terms in recipe:
                out = out + weight * self._combo_value("odd", terms, table)
        return out

    def compose_at(self, m, table):
        """[F o W]_m; zero below degree 2 since F has no constant/linear part."""
        if indexing.degree(m) < 2:
            return np.zeros(self.N, dtype=complex)
        return self.compose_quadratic_at(m, table) + self.compose_cubic_at(m, table)

    # -- batched prefetch ---------------------------------------------------------

    def prefetch_degree(self, ms, table):
        """Evaluate every point needed to compose the given indices, batched.

        Walks the same split plans, collects the missing evaluation points in
        deterministic order, and fills the point cache through the batch entry
        point when one is available.  Results are bit-identical to on-demand
        evaluation; only the transport is amortized.
        """
        needed = []  # (pkey, vector)
        seen = set(self._points)

        def want(combo_key, tag, vec):
            pkey = (combo_key, tag)
            if pkey not in seen:
                seen.add(pkey)
                needed.append((pkey, vec))

        for m in ms:
            for parity, splits in (("even", quadratic_splits(m)),
                                   ("odd", cubic_splits(m))):
                for members, recipe in splits:
                    if any(not np.any(table.manifold(mm)) for mm in members):
                        continue
                    for _, terms in recipe:
                        key, _ = canonical_terms(terms)
                        if (parity, key) in self._combos:
                            continue
                        vec = self._combo_vector(key, table)
                        is_complex = np.iscomplexobj(vec) and np.any(vec.imag != 0)
                        if is_complex and self.real_only:
                            va = vec.real.copy()
                            vb = vec.imag.copy()
                            want(key, "a", va)
                            want(key, "b", vb)
                            want(key, "p", va + vb)
                            if parity == "odd":
                                want(key, "m", va - vb)
                        else:
                            vec_eval = vec.real.copy() if np.iscomplexobj(vec) and not is_complex else vec
                            want(key, "r", vec_eval)

        if not needed or self._batch is None:
            for pkey, vec in needed:
                self._point(pkey[0], pkey[1], vec)
            return len(needed)

        # batch path: same arithmetic as _point_values, transport amortized
        scaled = []
        for _, vec in needed:
            norm = float(np.max(np.abs(vec))) if vec.size else 0.0
            if norm > self.autoscale_limit:
                s = 2.0 ** int(np.ceil(np.log2(norm / self.autoscale_limit)))
            else:
                s = 1.0
            scaled.append(s)
        inputs = []
        for (_, vec), s in zip(needed, scaled):
            inputs.append(vec / s)
            inputs.append(-(vec / s))
        results = self._batch(inputs)
        self.counters.black_box += len(inputs)
        for i, ((pkey, _), s) in enumerate(zip(needed, scaled)):
            fp = np.asarray(results[2 * i])
            fm = np.asarray(results[2 * i + 1])
            self._points[pkey] = ((fp + fm) * (0.5 * s * s),
                                  (fp - fm) * (0.5 * s * s * s))
            self.counters.points += 1
        return len(needed)

    # -- one-off full evaluation -------------------------------------------------

    def evaluate_full(self, z):
        """F(z) for an arbitrary state vector, honoring the real-only contract.

        Real input costs one call; complex input is reconstructed from the
        parity identities (eight calls).  Results are not cached.
        """
        z = np.asarray(z)
        if not (np.iscomplexobj(z) and np.any(z.imag != 0)):
            return np.asarray(self._call(z.real if np.iscomplexobj(z) else z), dtype=complex)
        if not self.real_only:
            return np.asarray(self._call(z), dtype=complex)
        va = z.real.copy()
        vb = z.imag.copy()
        pts = {"a": va, "b": vb, "p": va + vb, "m": va - vb}
        even = {}
        odd = {}
        for tag, pt in pts.items():
            fp = self._call(pt)
            fm = self._call(-pt)
            even[tag] = (fp + fm) / 2.0
            odd[tag] = (fp - fm) / 2.0
        quad = sum(_EVEN_WEIGHTS[t] * even[t] for t in _POINT_TAGS_EVEN)
        cub = sum(_ODD_WEIGHTS[t] * odd[t] for t in _POINT_TAGS_ODD)
        return quad + cub


class EvaluationCountPredictor:
    """Closed-form evaluation counts implied by the split enumeration.

    Walks the published split plans with its own set bookkeeping (no access
    to engine state) and reports, per composed degree, how many combination
    evaluations and distinct points a policy-conforming engine must spend.
    """

    def __init__(self, real_only=True):
        self.real_only = bool(real_only)
        self._combos = set()
        self._points = set()

    def degree_counts(self, ms, table):
        combo_even = combo_odd = 0
        new_points = 0
        for m in ms:
            for parity, splits in (("even", quadratic_splits(m)),
                                   ("odd", cubic_splits(m))):
                for members, recipe in splits:
                    if any(not np.any(table.manifold(mm)) for mm in members):
                        continue
                    for _, terms in recipe:
                        key, _ = canonical_terms(terms)
                        ckey = (parity, key)
                        if ckey in self._combos:
                            continue
                        self._combos.add(ckey)
                        if parity == "even":
                            combo_even += 1
                        else:
                            combo_odd += 1
                        vec = CompositionEngine._combo_vector(key, table)
                        is_complex = np.iscomplexobj(vec) and np.any(vec.imag != 0)
                        if is_complex and self.real_only:
                            tags = _POINT_TAGS_EVEN if parity == "even" else _POINT_TAGS_ODD
                        else:
                            tags = ("r",)
                        for tag in tags:
                            pkey = (key, tag)
                            if pkey not in self._points:
                                self._points.add(pkey)
                                new_points += 1
        return {"combo_even": combo_even, "combo_odd": combo_odd,
                "points": new_points, "black_box": 2 * new_points}
