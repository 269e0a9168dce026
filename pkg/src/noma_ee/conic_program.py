"""Canonical conic program container and the small modeling layer above it.

A ConicSubproblem is
    maximize  c' x + const
    s.t.      b - A x  in  K1 x K2 x ... (LINEAR / PSD_CONE / EXP_CONE blocks)

with x a flat real vector.  PSD blocks hold the scaled triangular
vectorization of a symmetric matrix (upper triangle, column-major,
off-diagonals times sqrt(2)); exponential-cone blocks are consecutive (x, y, z) triples with
membership y*exp(x/y) <= z, y > 0.  Complex Hermitian matrix variables are
carried as real component vectors (diagonal, real and imaginary upper
triangle) and enter PSD blocks through the standard 2Mx2M real embedding
[[S, -A], [A, S]].

The text serialization at the bottom of this module is the interchange
format consumed by ``solve-conic``: it is line-oriented, self-contained
and documented in ``serialize``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

LINEAR = "LINEAR"
PSD_CONE = "PSD_CONE"
EXP_CONE = "EXP_CONE"

_SQRT2 = np.sqrt(2.0)


def tri_len(dim: int) -> int:
    return dim * (dim + 1) // 2


def svec_indices(dim: int):
    """(row, col) pairs of the scaled upper triangle, column-major."""
    return [(r, c) for c in range(dim) for r in range(c + 1)]


def svec(mat: np.ndarray) -> np.ndarray:
    dim = mat.shape[0]
    out = np.empty(tri_len(dim))
    for i, (r, c) in enumerate(svec_indices(dim)):
        out[i] = mat[r, c] * (_SQRT2 if r != c else 1.0)
    return out


def unsvec(vec: np.ndarray, dim: int) -> np.ndarray:
    out = np.zeros((dim, dim))
    for i, (r, c) in enumerate(svec_indices(dim)):
        v = vec[i] / (_SQRT2 if r != c else 1.0)
        out[r, c] = v
        out[c, r] = v
    return out


class Aff:
    """Sparse affine scalar expression: sum coeffs[i] * x_i + const."""

    __slots__ = ("coeffs", "const")

    def __init__(self, coeffs: dict[int, float] | None = None, const: float = 0.0):
        self.coeffs = coeffs if coeffs is not None else {}
        self.const = const

    @staticmethod
    def of(var: int, coef: float = 1.0) -> "Aff":
        return Aff({var: coef})

    def add(self, other) -> "Aff":
        if isinstance(other, (int, float)):
            return Aff(dict(self.coeffs), self.const + float(other))
        coeffs = dict(self.coeffs)
        for i, v in other.coeffs.items():
            coeffs[i] = coeffs.get(i, 0.0) + v
        return Aff(coeffs, self.const + other.const)

    def add_term(self, var: int, coef: float) -> None:
        if coef != 0.0:
            self.coeffs[var] = self.coeffs.get(var, 0.0) + coef

    def scaled(self, factor: float) -> "Aff":
        return Aff({i: v * factor for i, v in self.coeffs.items()}, self.const * factor)

    def value(self, x: np.ndarray) -> float:
        return self.const + sum(v * x[i] for i, v in self.coeffs.items())


class VarTable:
    """Flat registry of real scalar variables with readable names."""

    def __init__(self):
        self.names: list[str] = []

    def new(self, name: str) -> int:
        self.names.append(name)
        return len(self.names) - 1

    def array(self, name: str, shape) -> np.ndarray:
        idx = np.empty(shape, dtype=int)
        for pos in np.ndindex(*shape):
            idx[pos] = self.new(f"{name}[{','.join(map(str, pos))}]")
        return idx

    @property
    def count(self) -> int:
        return len(self.names)


class HermVar:
    """Components of an MxM complex Hermitian matrix variable.

    diag[i]            -> X[i, i] (real)
    re[i, j], im[i, j] -> real/imag parts of X[i, j] for i < j
    """

    def __init__(self, table: VarTable, name: str, M: int):
        self.M = M
        self.name = name
        self.diag = np.array([table.new(f"{name}.d[{i}]") for i in range(M)])
        self.re = {}
        self.im = {}
        for i in range(M):
            for j in range(i + 1, M):
                self.re[(i, j)] = table.new(f"{name}.re[{i},{j}]")
                self.im[(i, j)] = table.new(f"{name}.im[{i},{j}]")

    def component_vars(self) -> list[int]:
        out = list(self.diag)
        out += list(self.re.values()) + list(self.im.values())
        return out

    def trace(self) -> Aff:
        return Aff({int(i): 1.0 for i in self.diag})

    def inner(self, G: np.ndarray) -> Aff:
        """Real inner product Tr[G X] for Hermitian coefficient G, affine in x."""
        expr = Aff()
        GR, GI = np.real(G), np.imag(G)
        for i in range(self.M):
            expr.add_term(int(self.diag[i]), GR[i, i])
        for (i, j), var in self.re.items():
            expr.add_term(var, 2.0 * GR[i, j])
        for (i, j), var in self.im.items():
            expr.add_term(var, 2.0 * GI[i, j])
        return expr

    def entry(self, r: int, c: int) -> tuple[Aff, Aff]:
        """Affine (real part, imag part) of X[r, c]."""
        if r == c:
            return Aff.of(int(self.diag[r])), Aff()
        if r < c:
            return Aff.of(self.re[(r, c)]), Aff.of(self.im[(r, c)])
        return Aff.of(self.re[(c, r)]), Aff.of(self.im[(c, r)]).scaled(-1.0)

    def value(self, x: np.ndarray) -> np.ndarray:
        X = np.zeros((self.M, self.M), dtype=complex)
        for i in range(self.M):
            X[i, i] = x[self.diag[i]]
        for (i, j), var in self.re.items():
            X[i, j] += x[var]
            X[j, i] += x[var]
        for (i, j), var in self.im.items():
            X[i, j] += 1j * x[var]
            X[j, i] -= 1j * x[var]
        return X

    def assign(self, x: np.ndarray, X: np.ndarray) -> None:
        """Write a Hermitian matrix value into the flat vector x."""
        for i in range(self.M):
            x[self.diag[i]] = np.real(X[i, i])
        for (i, j), var in self.re.items():
            x[var] = np.real(X[i, j])
        for (i, j), var in self.im.items():
            x[var] = np.imag(X[i, j])


class HermExpr:
    """Affine MxM Hermitian matrix expression.

    terms: (HermVar, real coefficient) pairs, scalar variables times a
    constant Hermitian matrix, plus a constant Hermitian offset.
    """

    __slots__ = ("M", "herm_terms", "scalar_terms", "const")

    def __init__(self, M: int):
        self.M = M
        self.herm_terms: list[tuple[HermVar, float]] = []
        self.scalar_terms: list[tuple[int, np.ndarray]] = []
        self.const = np.zeros((M, M), dtype=complex)

    @staticmethod
    def of(var: HermVar, coef: float = 1.0) -> "HermExpr":
        e = HermExpr(var.M)
        e.herm_terms.append((var, coef))
        return e

    def plus_herm(self, var: HermVar, coef: float = 1.0) -> "HermExpr":
        self.herm_terms.append((var, coef))
        return self

    def plus_scalar(self, var: int, G: np.ndarray) -> "HermExpr":
        self.scalar_terms.append((var, np.asarray(G, dtype=complex)))
        return self

    def plus_const(self, G: np.ndarray) -> "HermExpr":
        self.const = self.const + G
        return self

    def entry(self, r: int, c: int) -> tuple[Aff, Aff]:
        re = Aff(const=float(np.real(self.const[r, c])))
        im = Aff(const=float(np.imag(self.const[r, c])))
        for var, coef in self.herm_terms:
            er, ei = var.entry(r, c)
            re = re.add(er.scaled(coef))
            im = im.add(ei.scaled(coef))
        for var, G in self.scalar_terms:
            re.add_term(var, float(np.real(G[r, c])))
            im.add_term(var, float(np.imag(G[r, c])))
        return re, im

    def trace_aff(self) -> Aff:
        out = Aff(const=float(np.real(np.trace(self.const))))
        for var, coef in self.herm_terms:
            out = out.add(var.trace().scaled(coef))
        for var, G in self.scalar_terms:
            out.add_term(var, float(np.real(np.trace(G))))
        return out

    def inner_aff(self, G: np.ndarray) -> Aff:
        """Affine form of the real inner product Tr[G * expr]."""
        out = Aff(const=float(np.real(np.trace(G @ self.const))))
        for var, coef in self.herm_terms:
            out = out.add(var.inner(G).scaled(coef))
        for var, Gs in self.scalar_terms:
            out.add_term(var, float(np.real(np.trace(G @ Gs))))
        return out

    def value(self, x: np.ndarray) -> np.ndarray:
        X = self.const.copy()
        for var, coef in self.herm_terms:
            X = X + coef * var.value(x)
        for var, G in self.scalar_terms:
            X = X + x[var] * G
        return X


@dataclass
class ConeBlock:
    kind: str
    size: int        # number of cone rows
    dim: int = 0     # matrix dimension for PSD blocks


@dataclass
class ConicSubproblem:
    """Assembled conic program plus the penalty/Dinkelbach parameters it encodes."""

    num_vars: int
    var_names: list[str]
    c: np.ndarray            # maximize c' x + const
    const: float
    A: sp.csc_matrix         # b - A x in cone product
    b: np.ndarray
    blocks: list[ConeBlock]
    q: float = 0.0
    lam: float = 0.0
    mu: float = 0.0

    def objective_value(self, x: np.ndarray) -> float:
        return float(self.c @ x) + self.const

    def slack(self, x: np.ndarray) -> np.ndarray:
        return self.b - self.A @ x

    def max_violation(self, x: np.ndarray) -> dict[str, float]:
        """Worst cone-membership violation per block kind, relative to the
        row magnitudes (0 when feasible)."""
        s = self.slack(x)
        Ax = self.A @ x
        out = {LINEAR: 0.0, PSD_CONE: 0.0, EXP_CONE: 0.0}
        at = 0
        for blk in self.blocks:
            seg = s[at:at + blk.size]
            scale = max(1.0, float(np.abs(self.b[at:at + blk.size]).max(initial=0.0)),
                        float(np.abs(Ax[at:at + blk.size]).max(initial=0.0)))
            if blk.kind == LINEAR:
                if seg.size:
                    rs = np.maximum(1.0, np.maximum(np.abs(self.b[at:at + blk.size]),
                                                    np.abs(Ax[at:at + blk.size])))
                    out[LINEAR] = max(out[LINEAR], float((np.maximum(-seg, 0.0) / rs).max()))
            elif blk.kind == PSD_CONE:
                lam_min = float(np.linalg.eigvalsh(unsvec(seg, blk.dim)).min())
                out[PSD_CONE] = max(out[PSD_CONE], max(0.0, -lam_min) / scale)
            else:
                xx, yy, zz = seg
                if yy > 1e-12:
                    viol = yy * np.exp(min(xx / yy, 700.0)) - zz
                else:
                    viol = max(xx, -zz, -yy)
                out[EXP_CONE] = max(out[EXP_CONE], max(0.0, float(viol)) / scale)
            at += blk.size
        return out

    def counts(self) -> dict[str, int]:
        out = {"vars": self.num_vars, LINEAR: 0, PSD_CONE: 0, EXP_CONE: 0,
               "psd_blocks": 0, "exp_blocks": 0}
        for blk in self.blocks:
            out[blk.kind] += blk.size
            if blk.kind == PSD_CONE:
                out["psd_blocks"] += 1
            elif blk.kind == EXP_CONE:
                out["exp_blocks"] += 1
        return out

    # -- text interchange ---------------------------------------------------

    def serialize(self) -> str:
        """Self-contained text form.

        Line grammar (everything after '#' ignored)::

            conic-subproblem v1
            nvars <n>
            meta <q> <lambda> <mu>
            obj <const> [<i>:<coef> ...]      # maximize
            var <i> <name>                    # optional, repeated
            block linear <rows>
            block psd <dim>
            block exp
            row <b> [<i>:<Acoef> ...]         # one cone row: s = b - sum A x
            end

        Rows belong to the most recent ``block`` line; PSD rows are the
        scaled upper triangle in column-major order.
        """
        def fmt(v) -> str:
            return f"{float(v):.17g}"

        lines = ["conic-subproblem v1", f"nvars {self.num_vars}",
                 f"meta {fmt(self.q)} {fmt(self.lam)} {fmt(self.mu)}"]
        obj_terms = " ".join(f"{i}:{fmt(v)}" for i, v in enumerate(self.c) if v != 0.0)
        lines.append(f"obj {fmt(self.const)} {obj_terms}".rstrip())
        for i, name in enumerate(self.var_names):
            lines.append(f"var {i} {name}")
        Acsr = self.A.tocsr()
        at = 0
        for blk in self.blocks:
            if blk.kind == LINEAR:
                lines.append(f"block linear {blk.size}")
            elif blk.kind == PSD_CONE:
                lines.append(f"block psd {blk.dim}")
            else:
                lines.append("block exp")
            for r in range(at, at + blk.size):
                lo, hi = Acsr.indptr[r], Acsr.indptr[r + 1]
                terms = " ".join(f"{c}:{fmt(v)}" for c, v in zip(Acsr.indices[lo:hi], Acsr.data[lo:hi]))
                lines.append(f"row {fmt(self.b[r])} {terms}".rstrip())
            at += blk.size
        lines.append("end")
        return "\n".join(lines) + "\n"

    @staticmethod
    def parse(text: str) -> "ConicSubproblem":
        num_vars = 0
        const = 0.0
        meta = (0.0, 0.0, 0.0)
        obj: dict[int, float] = {}
        names: dict[int, str] = {}
        blocks: list[ConeBlock] = []
        rows_b: list[float] = []
        trip_r: list[int] = []
        trip_c: list[int] = []
        trip_v: list[float] = []
        cur: ConeBlock | None = None

        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line or line == "conic-subproblem v1":
                continue
            parts = line.split()
            head = parts[0]
            if head == "nvars":
                num_vars = int(parts[1])
            elif head == "meta":
                meta = tuple(float(p) for p in parts[1:4])
            elif head == "obj":
                const = float(parts[1])
                for term in parts[2:]:
                    i, v = term.split(":")
                    obj[int(i)] = float(v)
            elif head == "var":
                names[int(parts[1])] = parts[2]
            elif head == "block":
                if parts[1] == "linear":
                    cur = ConeBlock(LINEAR, int(parts[2]))
                elif parts[1] == "psd":
                    dim = int(parts[2])
                    cur = ConeBlock(PSD_CONE, tri_len(dim), dim)
                else:
                    cur = ConeBlock(EXP_CONE, 3)
                blocks.append(cur)
            elif head == "row":
                r = len(rows_b)
                rows_b.append(float(parts[1]))
                for term in parts[2:]:
                    i, v = term.split(":")
                    trip_r.append(r)
                    trip_c.append(int(i))
                    trip_v.append(float(v))
            elif head == "end":
                break
            else:
                raise ValueError(f"unrecognized line: {raw!r}")

        m = len(rows_b)
        A = sp.coo_matrix((trip_v, (trip_r, trip_c)), shape=(m, num_vars)).tocsc()
        c = np.zeros(num_vars)
        for i, v in obj.items():
            c[i] = v
        var_names = [names.get(i, f"x{i}") for i in range(num_vars)]
        return ConicSubproblem(num_vars=num_vars, var_names=var_names, c=c, const=const,
                               A=A, b=np.asarray(rows_b), blocks=blocks,
                               q=meta[0], lam=meta[1], mu=meta[2])


class ProgramBuilder:
    """Accumulates rows block-by-block and assembles a ConicSubproblem.

    Linear rows are collected into one leading LINEAR block; PSD and EXP
    blocks are appended in call order after it.
    """

    def __init__(self, table: VarTable):
        self.table = table
        self.obj = Aff()
        self._lin_b: list[float] = []
        self._lin_trip: list[tuple[int, int, float]] = []
        self._tail_blocks: list[ConeBlock] = []
        self._tail_b: list[float] = []
        self._tail_trip: list[tuple[int, int, float]] = []

    # expr <= bound  ->  slack = bound - expr >= 0
    def add_leq(self, expr: Aff, bound: float = 0.0) -> None:
        r = len(self._lin_b)
        self._lin_b.append(bound - expr.const)
        for i, v in expr.coeffs.items():
            if v != 0.0:
                self._lin_trip.append((r, i, v))

    def add_geq(self, expr: Aff, bound: float = 0.0) -> None:
        self.add_leq(expr.scaled(-1.0), -bound)

    def add_psd(self, expr: HermExpr) -> None:
        """Require the Hermitian expression to be PSD via the real embedding."""
        M = expr.M
        if M == 1:
            re, _ = expr.entry(0, 0)
            self.add_geq(re, 0.0)
            return
        dim = 2 * M
        # embedded E = [[S, -A], [A, S]]; fill the scaled lower triangle
        entries = {}
        for r in range(M):
            for c in range(M):
                re, im = expr.entry(r, c)
                entries[(r, c)] = (re, im)
        row0 = len(self._tail_b)
        for (r, c) in svec_indices(dim):
            if r < M and c < M:
                aff = entries[(r, c)][0]
            elif r >= M and c >= M:
                aff = entries[(r - M, c - M)][0]
            else:  # upper-right block (r < M <= c): -A = -Im(X) at (r, c-M)
                aff = entries[(r, c - M)][1].scaled(-1.0)
            scale = _SQRT2 if r != c else 1.0
            rr = len(self._tail_b)
            self._tail_b.append(aff.const * scale)
            for i, v in aff.coeffs.items():
                if v != 0.0:
                    self._tail_trip.append((rr, i, -v * scale))
        self._tail_blocks.append(ConeBlock(PSD_CONE, len(self._tail_b) - row0, dim))

    def add_psd_real2(self, a11: Aff, a21: Aff, a22: Aff) -> None:
        """2x2 real symmetric PSD block [[a11, a21], [a21, a22]]."""
        row0 = len(self._tail_b)
        for aff, scale in ((a11, 1.0), (a21, _SQRT2), (a22, 1.0)):
            rr = len(self._tail_b)
            self._tail_b.append(aff.const * scale)
            for i, v in aff.coeffs.items():
                if v != 0.0:
                    self._tail_trip.append((rr, i, -v * scale))
        self._tail_blocks.append(ConeBlock(PSD_CONE, len(self._tail_b) - row0, 2))

    def add_exp_leq(self, arg: Aff, bound: Aff) -> None:
        """exp(arg) <= bound as the exponential-cone triple (arg, 1, bound)."""
        for aff in (arg, Aff(const=1.0), bound):
            rr = len(self._tail_b)
            self._tail_b.append(aff.const)
            for i, v in aff.coeffs.items():
                if v != 0.0:
                    self._tail_trip.append((rr, i, -v))
        self._tail_blocks.append(ConeBlock(EXP_CONE, 3))

    def assemble(self, q: float = 0.0, lam: float = 0.0, mu: float = 0.0) -> ConicSubproblem:
        n = self.table.count
        m_lin = len(self._lin_b)
        m_tail = len(self._tail_b)
        rows = []
        cols = []
        vals = []
        for (r, i, v) in self._lin_trip:
            rows.append(r); cols.append(i); vals.append(v)
        for (r, i, v) in self._tail_trip:
            rows.append(m_lin + r); cols.append(i); vals.append(v)
        A = sp.coo_matrix((vals, (rows, cols)), shape=(m_lin + m_tail, n)).tocsc()
        b = np.concatenate([np.asarray(self._lin_b), np.asarray(self._tail_b)]) \
            if m_tail else np.asarray(self._lin_b, dtype=float)
        blocks = ([ConeBlock(LINEAR, m_lin)] if m_lin else []) + self._tail_blocks
        c = np.zeros(n)
        for i, v in self.obj.coeffs.items():
            c[i] = v
        return ConicSubproblem(num_vars=n, var_names=list(self.table.names), c=c,
                               const=self.obj.const, A=A, b=b, blocks=blocks,
                               q=q, lam=lam, mu=mu)
