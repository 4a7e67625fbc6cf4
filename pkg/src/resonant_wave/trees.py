"""Tree representation of the expansion coefficients.

Two levels of description are used.

*Shapes* fix the badges, branching numbers, order labels of the
single-entry diagonal nodes, the type of every counterterm vertex and the
order of the children.  A shape is a nested tuple:

    ("e",)                      end-point (order 0, diagonal line)
    ("w", d, children)          off-diagonal node with 2d + 1 children
    ("nu", c, child)            counterterm vertex of type c in {"a", "b"}
    ("v", d, children)          diagonal node with 2d + 1 children
    ("c", k)                    diagonal node with one end-point child, label k
    ("hole",)                   free entering line (self-energy graphs only)

The value of all labelled trees sharing a shape is computed bottom-up with
momentum tables; the mode labels and the j / sigma labels of diagonal nodes
are summed inside each node.

*Labelled trees* (:class:`Tree`) carry every label.  They are enumerated
exhaustively at small cutoff and give an independent evaluation as plain
products of propagators, node factors and end-point factors.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft

from .errors import BudgetError, DomainError, SmallDivisorError
from .series import truncate_centred

END = ("e",)
HOLE = ("hole",)


# --------------------------------------------------------------------------
# smooth partition of unity

def _bump(t):
    return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)


def chi(x, C0):
    """Smooth non-increasing cut-off: 1 for |x| <= C0, 0 for |x| >= 2 C0."""
    if not (0 < C0 <= 0.5):
        raise DomainError("C0 must lie in (0, 1/2]")
    t = (np.abs(np.asarray(x, dtype=float)) - C0) / C0
    up, down = _bump(1.0 - t), _bump(t)
    with np.errstate(invalid="ignore"):
        out = np.where(t <= 0, 1.0, np.where(t >= 1, 0.0, up / (up + down)))
    return float(out) if np.ndim(x) == 0 else out


def chi_partition(x, h, C0):
    """Scale-h member of the partition: chi(2^h x) - chi(2^{h+1} x), or 1 - chi(x) for h = -1."""
    if h < -1:
        raise DomainError("scales start at -1")
    if h == -1:
        return 1.0 - chi(x, C0)
    return chi(np.ldexp(x, h), C0) - chi(np.ldexp(x, h + 1), C0)


def cumulative_partition(x, h, C0):
    """Sum of the partition members up to scale h, i.e. 1 - chi(2^{h+1} x)."""
    if h < -1:
        return 0.0 * np.asarray(x, dtype=float)
    return 1.0 - chi(np.ldexp(np.asarray(x, dtype=float), h + 1), C0)


def scale_candidates(x, C0, h_cap=80):
    """Scales h with a nonzero partition member at x (at most two)."""
    ax = abs(float(x))
    if ax == 0.0:
        raise DomainError("a vanishing divisor has no finite scale")
    out = []
    if chi_partition(ax, -1, C0) != 0.0:
        out.append(-1)
    if ax < 2.0 * C0:
        h_lo = max(0, int(math.floor(math.log2(C0 / ax))) - 1)
        for h in range(h_lo, min(h_lo + 4, h_cap + 1)):
            if chi_partition(ax, h, C0) != 0.0:
                out.append(h)
    return out


# --------------------------------------------------------------------------
# shapes

def shape_badge(sk):
    return "v" if sk[0] in ("e", "v", "c") else "w"


@lru_cache(maxsize=None)
def shape_order(sk):
    """Order of a shape: degree d of off-diagonal nodes, d - 1 of diagonal ones."""
    kind = sk[0]
    if kind in ("e", "hole"):
        return 0
    if kind == "c":
        return sk[1]
    if kind == "nu":
        return 1 + shape_order(sk[2])
    own = sk[1] if kind == "w" else sk[1] - 1
    return own + sum(shape_order(c) for c in sk[2])


def _compositions(total, parts):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@lru_cache(maxsize=None)
def _child_options(order, max_degree):
    """Shapes usable as a child of the given order (either badge)."""
    if order == 0:
        return (END,)
    return enumerate_shapes(order, "v", max_degree) + enumerate_shapes(order, "w", max_degree)


@lru_cache(maxsize=None)
def enumerate_shapes(k, badge, max_degree=1):
    """All shapes of order k whose root line has the given badge."""
    if k < 0:
        return ()
    if badge not in ("v", "w"):
        raise DomainError("badge must be 'v' or 'w'")
    out = []
    if badge == "v":
        if k == 0:
            return (END,)
        for d in range(1, max_degree + 1):
            rest = k - (d - 1)
            if rest < 0:
                continue
            for orders in _compositions(rest, 2 * d + 1):
                # a full-order child of a three-child diagonal node must be off-diagonal
                pools = [
                    enumerate_shapes(o, "w", max_degree) if (d == 1 and o == k) else _child_options(o, max_degree)
                    for o in orders
                ]
                for children in itertools.product(*pools):
                    out.append(("v", d, children))
        out.append(("c", k))
    else:
        if k == 0:
            return ()
        for d in range(1, max_degree + 1):
            rest = k - d
            if rest < 0:
                continue
            for orders in _compositions(rest, 2 * d + 1):
                pools = [_child_options(o, max_degree) for o in orders]
                for children in itertools.product(*pools):
                    out.append(("w", d, children))
        if k >= 2:
            for child in enumerate_shapes(k - 1, "w", max_degree):
                out.append(("nu", "a", child))
                out.append(("nu", "b", child))
    return tuple(out)


def badge_skeleton(sk):
    """Reduce a shape to badges and child order only (drops order and vertex labels)."""
    kind = sk[0]
    if kind in ("e", "hole"):
        return (kind,)
    if kind == "c":
        return ("c",)
    if kind == "nu":
        return ("nu", badge_skeleton(sk[2]))
    return (kind, tuple(badge_skeleton(c) for c in sk[2]))


def shape_families(k, badge, max_degree=1, include_counterterms=True):
    """Distinct badge skeletons among the shapes of order k."""
    fams = []
    for sk in enumerate_shapes(k, badge, max_degree):
        if not include_counterterms and _has_nu(sk):
            continue
        b = badge_skeleton(sk)
        if b not in fams:
            fams.append(b)
    return fams


def _has_nu(sk):
    if sk[0] == "nu":
        return True
    if sk[0] in ("w", "v"):
        return any(_has_nu(c) for c in sk[2])
    return False


def shape_counts(sk):
    """Node statistics of a shape: dict with keys v3, w3, v1, w1, ends, v_high, w_high, sum_s_minus_1."""
    c = {"v3": 0, "w3": 0, "v1": 0, "w1": 0, "ends": 0, "v_high": 0, "w_high": 0, "sum_s_minus_1": 0}

    def walk(s):
        kind = s[0]
        if kind in ("e", "hole"):
            c["ends"] += 1
            return
        if kind == "c":
            c["v1"] += 1
            c["ends"] += 1
            return
        if kind == "nu":
            c["w1"] += 1
            walk(s[2])
            return
        d = s[1]
        key = ("v" if kind == "v" else "w") + ("3" if d == 1 else "_high")
        c[key] += 1
        c["sum_s_minus_1"] += 2 * d
        for ch in s[2]:
            walk(ch)

    walk(sk)
    return c


def lemma3_holds_for_counts(c):
    """Both node-count inequalities and the branching identity."""
    nodes_ok = c["v3"] <= 2 * c["w3"] + 2 * c["v1"]
    ends_ok = c["ends"] <= 2 * (c["v3"] + c["w3"]) + 1 if not (c["v_high"] or c["w_high"]) else c["ends"] <= c["sum_s_minus_1"] + 1
    identity = c["sum_s_minus_1"] == c["ends"] - 1
    return nodes_ok and ends_ok and identity


# --------------------------------------------------------------------------
# evaluation context

@dataclass(eq=False)
class TreeContext:
    """Everything a tree value depends on, in the working frame of cutoff N.

    ``C`` lists the constants C^{(k)} by order (index 0 unused); leave it
    ``None`` to have them computed from the trees themselves.  ``gamma``
    replaces them by a single parameter at order 1.
    """

    N: int
    omega: float
    sign: float
    epsilon: float
    q_couplings: tuple
    p_couplings: tuple
    divisors: np.ndarray
    nu_a: np.ndarray
    nu_b: np.ndarray
    kernel: object
    a0: object
    r0: float
    C: list = None
    gamma: float = None
    divisor_floor: float = 1e-12
    freqs: object = None
    j: int = 1

    @classmethod
    def from_state(cls, state, use_state_C=False):
        cfg = state.config
        degs = list(cfg.degrees)
        return cls(
            N=cfg.N,
            omega=cfg.omega,
            sign=cfg.sign,
            epsilon=cfg.epsilon,
            q_couplings=tuple(cfg.coupling(d) for d in degs),
            p_couplings=tuple(cfg.sign * cfg.epsilon * cfg.coupling(d) for d in degs),
            divisors=state.divisors(),
            nu_a=state.nu_row("a"),
            nu_b=state.nu_row("b"),
            kernel=state.ground.kernel,
            a0=state.ground.a0.resized(cfg.N),
            r0=state.ground.r0,
            C=list(state.C) if use_state_C else None,
            gamma=state.gamma,
            divisor_floor=cfg.divisor_floor,
            freqs=state.freqs,
            j=cfg.j,
        )

    def with_kernel_cutoff(self, M):
        """Copy whose Green kernel tables are truncated to modes |n| <= M."""
        from .qsolver import GreenKernel

        k = self.kernel
        kern = GreenKernel(k.beta, k.p.resized(M), k.cd.resized(M), k.label)
        fields = {k: v for k, v in self.__dict__.items() if not k.startswith("_")}
        out = TreeContext(**{**fields, "kernel": kern})
        return out

    @property
    def max_degree(self):
        return len(self.q_couplings)

    def divisor(self, n, m):
        return float(self.divisors[n + self.N, m + self.N])

    def nu(self, c, m):
        row = self.nu_a if c == "a" else self.nu_b
        return float(row[m + self.N])

    def endpoint_table(self):
        N = self.N
        c = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        a = self.a0.coeffs
        idx = np.arange(2 * N + 1)
        c[idx, idx] = a
        c[idx, idx[::-1]] -= a
        return c


_KERNEL_CACHE = {}


def cached_kernel_matrices(kernel, N):
    key = (id(kernel), N)
    hit = _KERNEL_CACHE.get(key)
    if hit is None or hit[0] is not kernel:
        hit = (kernel, kernel_component_matrices(kernel, N))
        _KERNEL_CACHE[key] = hit
    return hit[1]


def kernel_component_matrices(kernel, N):
    """Per-label matrices K_j[n + N, n' + N], j = 1..4, including propagators.

    Entry (n, n') sums over the first mode label n1 with second mode label
    n2 = n - n' - n1 and line momentum q = n2 + n'.  Assembled by explicit
    loops over labels.
    """
    Ns = kernel.p.N
    p = {n: kernel.p.coeff(n) for n in range(-Ns, Ns + 1)}
    cd = {n: kernel.cd.coeff(n) for n in range(-Ns, Ns + 1)}
    beta = kernel.beta
    mats = {j: np.zeros((2 * N + 1, 2 * N + 1), dtype=complex) for j in (1, 2, 3, 4)}
    for n in range(-N, N + 1):
        for n_prime in range(-N, N + 1):
            for n1 in range(-Ns, Ns + 1):
                n2 = n - n_prime - n1
                if abs(n2) > Ns:
                    continue
                q = n2 + n_prime
                r, c = n + N, n_prime + N
                if q == 0:
                    mats[1][r, c] += p[n1] * p[n2] / beta
                    continue
                iq = 1j * q
                mats[2][r, c] += beta * cd[n1] * cd[n2] / iq ** 2
                mats[3][r, c] += p[n1] * cd[n2] / iq
                mats[4][r, c] -= cd[n1] * p[n2] / iq
    return mats


def diagonal_node_factor(kernel, j, n1, n2):
    """Kernel part of a diagonal node factor with first label n1 and second label n2."""
    p, cd = kernel.p.coeff, kernel.cd.coeff
    if j == 1:
        return p(n1) * p(n2) / kernel.beta
    if j == 2:
        return kernel.beta * cd(n1) * cd(n2)
    if j == 3:
        return p(n1) * cd(n2)
    if j == 4:
        return -cd(n1) * p(n2)
    raise DomainError("j label must be 1..4")


def line_delta(j):
    return 2 if j == 2 else 1


# --------------------------------------------------------------------------
# shape evaluation with momentum tables

class SpectralProducts:
    """Untruncated products of centred momentum tables through cached zero-padded FFTs.

    The padding holds the full linear convolution of up to ``max_factors``
    tables, so no wrap-around occurs; only the final product is cut back to
    the cutoff.
    """

    def __init__(self, N, max_factors):
        self.N = N
        self.size = sfft.next_fast_len(max_factors * (2 * N + 1) - (max_factors - 1))
        self._cache = {}

    def spectrum(self, key, table):
        if key not in self._cache:
            self._cache[key] = sfft.fft2(table, s=(self.size, self.size))
        return self._cache[key]

    def product(self, factors):
        if len(factors) == 1:
            return factors[0][1]
        acc = None
        for key, table in factors:
            f = self.spectrum(key, table)
            acc = f if acc is None else acc * f
        return self.crop(acc, len(factors))

    def crop(self, spectrum, n_factors):
        full = sfft.ifft2(spectrum)
        c = n_factors * self.N
        return full[c - self.N : c + self.N + 1, c - self.N : c + self.N + 1]



class ShapeEvaluator:
    """Bottom-up momentum tables for shapes, memoised by shape."""

    def __init__(self, ctx):
        self.ctx = ctx
        N = ctx.N
        self._tables = {END: ctx.endpoint_table()}
        self.spectral = SpectralProducts(ctx.N, 2 * ctx.max_degree + 1)
        self._kmats = cached_kernel_matrices(ctx.kernel, N)
        self._kfull = sum(self._kmats.values())
        n = np.arange(-N, N + 1)
        self._mask = (np.abs(n)[:, None] != np.abs(n)[None, :]) & (n[None, :] != 0)
        den = ctx.divisors
        bad = self._mask & (np.abs(den) < ctx.divisor_floor)
        if np.any(bad):
            i, jj = np.argwhere(bad)[0]
            raise SmallDivisorError("divisor below floor", int(i - N), int(jj - N), float(den[i, jj]))
        self._prop = np.zeros_like(den)
        self._prop[self._mask] = 1.0 / den[self._mask]
        self._C = {} if ctx.C is None else {k: ctx.C[k] for k in range(1, len(ctx.C))}

    def C(self, k):
        if self.ctx.gamma is not None:
            return self.ctx.gamma if k == 1 else 0.0
        if k not in self._C:
            self._C[k] = self.tree_C(k)
        return self._C[k]

    def tree_C(self, k):
        """r0^{-1} sum_n a0_{-n} (sum of diagonal-root shapes of order k with three or more children)."""
        N = self.ctx.N
        total = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        for sk in enumerate_shapes(k, "v", self.ctx.max_degree):
            if sk[0] == "v":
                total += self.table(sk)
        idx = np.arange(2 * N + 1)
        diag = total[idx, idx]
        a = self.ctx.a0.coeffs
        return float(np.real(np.sum(a[::-1] * diag))) / self.ctx.r0

    def _product(self, children):
        return self.spectral.product([(ch, self.table(ch)) for ch in children])

    def _apply_diagonal(self, P, factor):
        """Output of a diagonal node given the children table P, summed over j and sigma."""
        N = self.ctx.N
        out = np.zeros_like(P)
        idx = np.arange(2 * N + 1)
        plus = P[idx, idx]
        minus = P[idx, idx[::-1]].copy()
        minus[N] = 0.0
        out_plus = self._kfull @ plus
        out_minus = self._kfull @ minus
        out_minus[N] = 0.0
        out[idx, idx] += factor * out_plus
        out[idx, idx[::-1]] += factor * out_minus
        return out

    def table(self, sk):
        if sk in self._tables:
            return self._tables[sk]
        ctx = self.ctx
        kind = sk[0]
        if kind == "w":
            P = self._product(sk[2])
            t = ctx.p_couplings[sk[1] - 1] * P * self._prop
        elif kind == "nu":
            child = self.table(sk[2])
            if sk[1] == "a":
                t = ctx.nu_a[None, :] * child
            else:
                t = ctx.nu_b[None, :] * child[:, ::-1]
            t = t * self._prop
        elif kind == "v":
            P = self._product(sk[2])
            t = self._apply_diagonal(P, -ctx.q_couplings[sk[1] - 1])
        elif kind == "c":
            t = self._apply_diagonal(self._tables[END], -6.0 * self.C(sk[1]))
        else:
            raise DomainError(f"cannot evaluate shape {sk!r}")
        self._tables[sk] = t
        return t

    def layer(self, k):
        """Sum of all shapes of order k (both badges): the tree side of the order-k coefficients."""
        N = self.ctx.N
        total = np.zeros((2 * N + 1, 2 * N + 1), dtype=complex)
        for badge in ("w", "v"):
            for sk in enumerate_shapes(k, badge, self.ctx.max_degree):
                total += self.table(sk)
        return total


def lemma2_relative_error(state, k, cutoff=None):
    """max|tree layer - recursion layer| / max|recursion layer| at order k, on |n|, |m| <= cutoff."""
    ev = ShapeEvaluator(TreeContext.from_state(state))
    trees = ev.layer(k)
    rec = state.orders[k].coeffs
    N = state.N
    M = N if cutoff is None else min(cutoff, N)
    sl = slice(N - M, N + M + 1)
    scale = float(np.max(np.abs(rec[sl, sl])))
    diff = float(np.max(np.abs(trees[sl, sl] - rec[sl, sl])))
    return diff / scale if scale > 0 else diff


# --------------------------------------------------------------------------
# labelled trees

@dataclass(frozen=True)
class Node:
    id: int
    kind: str  # "v", "w" or "e"
    s: int = 0
    j: int = None
    sigma: int = None
    order_label: int = None
    nu_type: str = None
    first_mode: tuple = (0, 0)
    second_mode: tuple = (0, 0)
    degree: int = 1


@dataclass(frozen=True)
class Line:
    id: int
    source: int
    target: int  # None for the root line
    badge: str
    delta: int = None
    momentum: tuple = (0, 0)


@dataclass(frozen=True, eq=False)
class Tree:
    nodes: tuple
    lines: tuple
    root_line: int

    def node(self, i):
        return self.nodes[i]

    def line_out(self, node_id):
        return next(l for l in self.lines if l.source == node_id)

    def children(self, node_id):
        return [l.source for l in self.lines if l.target == node_id]

    @property
    def root_node(self):
        return self.lines[self.root_line].source

    def total_momentum(self):
        """Momentum of the represented coefficient: root line plus first mode of the special vertex."""
        root = self.node(self.root_node)
        ln = self.lines[self.root_line]
        return (ln.momentum[0] + root.first_mode[0], ln.momentum[1] + root.first_mode[1])

    def order(self):
        k = 0
        for v in self.nodes:
            if v.kind == "w":
                k += v.degree if v.s > 1 else 1
            elif v.kind == "v":
                k += v.order_label if v.s == 1 else v.degree - 1
        return k

    def counts(self):
        c = {"v3": 0, "w3": 0, "v1": 0, "w1": 0, "ends": 0, "v_high": 0, "w_high": 0, "sum_s_minus_1": 0}
        for v in self.nodes:
            if v.kind == "e":
                c["ends"] += 1
                continue
            c["sum_s_minus_1"] += v.s - 1
            key = {("v", 3): "v3", ("w", 3): "w3", ("v", 1): "v1", ("w", 1): "w1"}.get((v.kind, v.s))
            if key is None:
                key = "v_high" if v.kind == "v" else "w_high"
            c[key] += 1
        return c

    def momentum_defects(self):
        """Lines whose stored momentum differs from the value recomputed from the mode labels."""
        bad = []
        for ln in self.lines:
            if self.node(ln.source).kind == "e":
                expected = (0, 0)
            else:
                expected = tuple(np.add(self.node(ln.source).second_mode, self._subtree_modes(ln.source, skip_self=True)))
            if tuple(ln.momentum) != tuple(int(x) for x in expected):
                bad.append(ln.id)
        return bad

    def _subtree_modes(self, node_id, skip_self=False):
        v = self.node(node_id)
        total = np.zeros(2, dtype=int)
        if not skip_self:
            total += np.array(v.first_mode)
            if v.kind != "e":
                total += np.array(v.second_mode)
        for ch in self.children(node_id):
            total += self._subtree_modes(ch)
        return total

    def mode_sum(self):
        """K of the tree: sum of |n'| + |n| over nodes and |n'| over end-points."""
        return int(sum(abs(v.first_mode[0]) + (abs(v.second_mode[0]) if v.kind != "e" else 0) for v in self.nodes))

    def canonical(self):
        """Canonical nested encoding (ordered children)."""

        def enc(i):
            v = self.node(i)
            ln = self.line_out(i)
            head = (v.kind, v.s, v.j, v.sigma, v.order_label, v.nu_type, v.first_mode, v.second_mode, v.degree,
                    ln.badge, ln.delta, ln.momentum)
            return (head, tuple(enc(c) for c in self.children(i)))

        return enc(self.root_node)

    def to_json(self):
        return json.dumps(
            {
                "nodes": [v.__dict__ for v in self.nodes],
                "lines": [l.__dict__ for l in self.lines],
                "root_line": self.root_line,
            },
            sort_keys=True,
            default=list,
        )

    def to_dot(self, scales=None):
        out = ["digraph tree {", "  rankdir=RL;", '  root [shape=point];']
        for v in self.nodes:
            if v.kind == "e":
                label = f"e {v.first_mode}"
            elif v.kind == "w":
                label = f"w s={v.s}" + (f" nu_{v.nu_type}" if v.nu_type else "")
            else:
                label = f"v s={v.s} j={v.j} {v.first_mode} {v.second_mode}"
            out.append(f'  n{v.id} [label="{label}"];')
        for ln in self.lines:
            tgt = "root" if ln.target is None else f"n{ln.target}"
            lab = f"{ln.badge} {ln.momentum}"
            if scales is not None:
                lab += f" h={scales[ln.id]}"
            out.append(f'  n{ln.source} -> {tgt} [label="{lab}"];')
        out.append("}")
        return "\n".join(out)


def _end_modes(M):
    # the end-point table vanishes at (0, 0), so that mode is never labelled
    modes = []
    for n in range(1, M + 1):
        for sgn in (1, -1):
            modes += [(sgn * n, sgn * n), (sgn * n, -sgn * n)]
    return modes


class _Budget:
    def __init__(self, limit):
        self.limit = limit
        self.count = 0

    def tick(self, k=1):
        self.count += k
        if self.count > self.limit:
            raise BudgetError(f"labelled enumeration exceeds {self.limit} partial trees")


def _labelled(sk, M, budget, memo):
    """List of (labelled nested tuple, total momentum) for a shape."""
    if sk in memo:
        return memo[sk]
    kind = sk[0]
    out = []
    if kind == "e":
        for mode in _end_modes(M):
            out.append((("e", mode), mode))
    elif kind == "w":
        for combo in itertools.product(*[_labelled(c, M, budget, memo) for c in sk[2]]):
            n = sum(t[1][0] for t in combo)
            m = sum(t[1][1] for t in combo)
            if abs(n) > M or abs(m) > M or abs(n) == abs(m):
                continue
            out.append((("w", sk[1], tuple(t[0] for t in combo), (n, m)), (n, m)))
            budget.tick()
    elif kind == "nu":
        for lab, (n, m) in _labelled(sk[2], M, budget, memo):
            m_out = m if sk[1] == "a" else -m
            out.append((("nu", sk[1], lab, (n, m_out)), (n, m_out)))
            budget.tick()
    elif kind in ("v", "c"):
        if kind == "v":
            combos = itertools.product(*[_labelled(c, M, budget, memo) for c in sk[2]])
        else:
            combos = (((lab, mode),) for lab, mode in _labelled(END, M, budget, memo))
        for combo in combos:
            n_p = sum(t[1][0] for t in combo)
            m_p = sum(t[1][1] for t in combo)
            # the recursion truncates the source of a diagonal node to the cutoff
            if abs(n_p) > M or abs(m_p) > M:
                continue
            sigmas = []
            if m_p == n_p:
                sigmas.append(1)
            if m_p == -n_p and n_p != 0:
                sigmas.append(-1)
            for sigma in sigmas:
                for j in (1, 2, 3, 4):
                    for n1 in range(-M, M + 1):
                        n2_range = [-n_p] if j == 1 else range(-M, M + 1)
                        for n2 in n2_range:
                            if abs(n2) > M:
                                continue
                            q = n2 + n_p
                            if (j == 1) != (q == 0):
                                continue
                            total = q + n1
                            if abs(total) > M or (sigma == -1 and total == 0):
                                continue
                            lab = (kind, sk[1], tuple(t[0] for t in combo), sigma, j, n1, n2, q)
                            out.append((lab, (total, sigma * total)))
                            budget.tick()
    else:
        raise DomainError(f"cannot label shape {sk!r}")
    memo[sk] = out
    return out


def _build_tree(lab):
    nodes, lines = [], []

    def add(l, target):
        nid = len(nodes)
        kind = l[0]
        if kind == "e":
            nodes.append(Node(nid, "e", 0, first_mode=l[1]))
            lines.append(Line(len(lines), nid, target, "v", None, (0, 0)))
            return
        if kind == "w":
            nodes.append(Node(nid, "w", 2 * l[1] + 1, degree=l[1]))
            lines.append(Line(len(lines), nid, target, "w", None, l[3]))
            for ch in l[2]:
                add(ch, nid)
            return
        if kind == "nu":
            nodes.append(Node(nid, "w", 1, nu_type=l[1]))
            lines.append(Line(len(lines), nid, target, "w", None, l[3]))
            add(l[2], nid)
            return
        _, d, children, sigma, j, n1, n2, q = l
        s = 1 if kind == "c" else 2 * d + 1
        nodes.append(
            Node(nid, "v", s, j=j, sigma=sigma, order_label=d if kind == "c" else None,
                 first_mode=(n1, sigma * n1), second_mode=(n2, sigma * n2), degree=1 if kind == "c" else d)
        )
        lines.append(Line(len(lines), nid, target, "v", line_delta(j) if q != 0 else None, (q, sigma * q)))
        for ch in children:
            add(ch, nid)

    add(lab, None)
    return Tree(tuple(nodes), tuple(lines), 0)


def enumerate_trees_by_root(k, mode_cutoff, max_degree=1, max_trees=300_000):
    """All labelled trees of order k with mode labels within the cutoff, grouped by root momentum."""
    if k < 1 or k > 3:
        raise DomainError("labelled enumeration supports orders 1..3")
    if mode_cutoff > 8:
        raise BudgetError("mode cutoff for labelled enumeration is limited to 8")
    budget = _Budget(max_trees)
    memo = {}
    out = {}
    for badge in ("w", "v"):
        for sk in enumerate_shapes(k, badge, max_degree):
            for lab, total in _labelled(sk, mode_cutoff, budget, memo):
                out.setdefault(total, []).append(lab)
    return out


def enumerate_trees(k, n, m, mode_cutoff, max_degree=1, max_trees=300_000):
    """All labelled trees of order k representing u^{(k)}_{n,m}, mode labels within the cutoff."""
    if abs(n) > mode_cutoff or abs(m) > mode_cutoff:
        return []
    groups = enumerate_trees_by_root(k, mode_cutoff, max_degree, max_trees)
    return [_build_tree(lab) for lab in groups.get((n, m), [])]


def tree_value(t, ctx):
    """Product of propagators, node factors and end-point factors of a labelled tree."""
    val = 1.0 + 0.0j
    N = ctx.N
    a0 = ctx.a0
    C_lookup = None
    for ln in t.lines:
        src = t.node(ln.source)
        if src.kind == "e":
            continue
        n, m = ln.momentum
        if ln.badge == "w":
            den = ctx.divisor(n, m)
            if abs(den) < ctx.divisor_floor:
                raise SmallDivisorError("divisor below floor", n, m, den)
            val /= den
        elif n != 0:
            val /= (1j * n) ** ln.delta
    for v in t.nodes:
        if v.kind == "e":
            n_p, m_p = v.first_mode
            val *= a0.coeff(m_p) if n_p != 0 else 0.0
        elif v.kind == "w":
            if v.s == 1:
                val *= ctx.nu(v.nu_type, t.line_out(v.id).momentum[1])
            else:
                val *= ctx.p_couplings[v.degree - 1]
        else:
            kf = diagonal_node_factor(ctx.kernel, v.j, v.first_mode[0], v.second_mode[0])
            if v.s == 1:
                if C_lookup is None:
                    C_lookup = ShapeEvaluator(ctx) if ctx.C is None and ctx.gamma is None else None
                C = _C_value(ctx, C_lookup, v.order_label)
                val *= -6.0 * C * kf
            else:
                val *= -ctx.q_couplings[v.degree - 1] * kf
    return val


def _C_value(ctx, evaluator, k):
    if ctx.gamma is not None:
        return ctx.gamma if k == 1 else 0.0
    if ctx.C is not None:
        return ctx.C[k]
    return evaluator.C(k)


def check_lemma3(t):
    """Node-count bounds and the branching identity for a labelled tree or a shape."""
    c = shape_counts(t) if isinstance(t, tuple) else t.counts()
    return lemma3_holds_for_counts(c)


# --------------------------------------------------------------------------
# scales, clusters and self-energy graphs on labelled trees

@dataclass(eq=False)
class ScaledTree:
    base: Tree
    scales: dict
    weight: float = 1.0
    clusters: list = field(default_factory=list)
    self_energy_flags: list = field(default_factory=list)


def line_argument(ctx, n, m):
    """|omega n| - omega_t(m) for a line of momentum (n, m) in the working frame."""
    w2 = ctx.divisors[n + ctx.N, m + ctx.N] + ctx.omega ** 2 * n * n
    return abs(ctx.omega * n) - math.sqrt(w2)


def assign_scales(t, ctx, C0):
    """All scale assignments with nonzero partition weight; weights multiply to the telescoped value."""
    choices = []
    for ln in t.lines:
        if ln.badge != "w":
            choices.append([(-1, 1.0)])
            continue
        x = line_argument(ctx, *ln.momentum)
        opts = []
        for h in scale_candidates(x, C0):
            opts.append((h, float(chi_partition(x, h, C0))))
        choices.append(opts)
    out = []
    for combo in itertools.product(*choices):
        scales = {ln.id: h for ln, (h, _) in zip(t.lines, combo)}
        weight = float(np.prod([w for _, w in combo]))
        out.append(ScaledTree(t, scales, weight))
    return out


def _cluster_components(t, scales, h):
    """Connected components of nodes (and end-points) joined by lines of scale <= h."""
    parent = list(range(len(t.nodes)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for ln in t.lines:
        if ln.target is not None and scales[ln.id] <= h:
            parent[find(ln.source)] = find(ln.target)
    comps = {}
    for v in t.nodes:
        comps.setdefault(find(v.id), set()).add(v.id)
    return list(comps.values())


def find_clusters_and_resonances(st):
    """Fill the cluster family and self-energy flags of a scaled tree."""
    t, scales = st.base, st.scales
    levels = sorted({h for h in scales.values()})
    clusters = []
    for h in levels:
        for comp in _cluster_components(t, scales, h):
            internal = [ln for ln in t.lines if ln.target is not None and ln.source in comp and ln.target in comp]
            if not any(scales[ln.id] == h for ln in internal):
                continue
            if len(comp) < 2 and not internal:
                continue
            incoming = [ln for ln in t.lines if ln.target in comp and ln.source not in comp]
            outgoing = [ln for ln in t.lines if ln.source in comp and (ln.target is None or ln.target not in comp)]
            clusters.append(
                {
                    "scale": h,
                    "nodes": sorted(comp),
                    "lines": sorted(ln.id for ln in internal),
                    "incoming": [ln.id for ln in incoming],
                    "outgoing": [ln.id for ln in outgoing],
                }
            )
    flags = []
    for cl in clusters:
        flag = {"is_resonance": False, "type": None, "n_T": None, "m_T": None, "external_scale": None}
        if len(cl["incoming"]) == 1 and len(cl["outgoing"]) == 1:
            lin = t.lines[cl["incoming"][0]]
            lout = t.lines[cl["outgoing"][0]]
            ext = [scales[lin.id], scales[lout.id]]
            flag["external_scale"] = min(ext)
            if (
                lin.badge == "w"
                and lout.badge == "w"
                and lin.momentum[0] == lout.momentum[0]
                and abs(lin.momentum[1]) == abs(lout.momentum[1])
                and min(ext) > cl["scale"]
            ):
                flag["is_resonance"] = True
                flag["type"] = "a" if lout.momentum[1] == lin.momentum[1] else "b"
                flag["n_T"] = lout.momentum[0] - lin.momentum[0]
                flag["m_T"] = lout.momentum[1] - lin.momentum[1]
        flags.append(flag)
    st.clusters = clusters
    st.self_energy_flags = flags
    return st


def count_scales(st, h):
    """Counts N_h (lines), C_h (clusters), S_h (self-energy graphs by external scale), M_h (counterterm vertices)."""
    t, scales = st.base, st.scales
    N_h = sum(1 for ln in t.lines if scales[ln.id] == h)
    C_h = sum(1 for cl in st.clusters if cl["scale"] == h)
    S_h = sum(1 for f in st.self_energy_flags if f["is_resonance"] and f["external_scale"] == h)
    M_h = 0
    for v in t.nodes:
        if v.kind == "w" and v.s == 1:
            out = t.line_out(v.id)
            inn = next(ln for ln in t.lines if ln.target == v.id)
            if max(scales[out.id], scales[inn.id]) == h:
                M_h += 1
    return {"N": N_h, "C": C_h, "S": S_h, "M": M_h}


def scaled_value(st, ctx, C0):
    """Tree value with every w-line propagator restricted to its assigned scale."""
    w = 1.0
    for ln in st.base.lines:
        if ln.badge == "w":
            w *= float(chi_partition(line_argument(ctx, *ln.momentum), st.scales[ln.id], C0))
    return w * tree_value(st.base, ctx)


# --------------------------------------------------------------------------
# self-energy shapes

@lru_cache(maxsize=None)
def _hole_child_options(order, max_degree, diagonal=True):
    out = []
    if order == 0:
        out.append(HOLE)
    out.extend(enumerate_hole_shapes(order, "w", max_degree, _root=False))
    if diagonal:
        out.extend(enumerate_hole_shapes(order, "v", max_degree, _root=False))
    return tuple(out)


@lru_cache(maxsize=None)
def enumerate_hole_shapes(k, badge="w", max_degree=1, _root=True):
    """Shapes of order k with exactly one free entering line (the hole).

    With the default badge these are the candidate self-energy graphs: the
    outgoing line is off-diagonal.  A lone counterterm vertex acting on the
    hole is not included.
    """
    out = []
    if k < 0:
        return ()
    if badge == "w":
        for d in range(1, max_degree + 1):
            rest = k - d
            if rest < 0:
                continue
            for orders in _compositions(rest, 2 * d + 1):
                for pos in range(2 * d + 1):
                    pools = []
                    for i, o in enumerate(orders):
                        pools.append(_hole_child_options(o, max_degree) if i == pos else _child_options(o, max_degree))
                    for children in itertools.product(*pools):
                        out.append(("w", d, children))
        if k >= 1:
            for child in enumerate_hole_shapes(k - 1, "w", max_degree, _root=False):
                out.append(("nu", "a", child))
                out.append(("nu", "b", child))
    else:
        for d in range(1, max_degree + 1):
            rest = k - (d - 1)
            if rest < 0:
                continue
            for orders in _compositions(rest, 2 * d + 1):
                for pos in range(2 * d + 1):
                    pools = []
                    for i, o in enumerate(orders):
                        full = d == 1 and o == k and k > 0
                        if i == pos:
                            if d == 1 and o == k:
                                opts = _hole_child_options(o, max_degree, diagonal=False)
                            else:
                                opts = _hole_child_options(o, max_degree)
                        else:
                            opts = enumerate_shapes(o, "w", max_degree) if full else _child_options(o, max_degree)
                        pools.append(opts)
                    for children in itertools.product(*pools):
                        out.append(("v", d, children))
    return tuple(out)


def self_energy_shapes(k, max_degree=1):
    """Self-energy shapes of order k (outgoing and entering lines both off-diagonal)."""
    return tuple(sk for sk in enumerate_hole_shapes(k, "w", max_degree) if sk != HOLE)
