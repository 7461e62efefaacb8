"""Box-constrained equality-form LP container and its text format.

The problem is min c^T x over A x = b, l <= x <= u with A a d x n matrix
(d <= n) of full row rank and a strictly interior start x0.  The width U =
max(||(u-l)/(u-x0)||_inf, ||(u-l)/(x0-l)||_inf, ||u-l||_inf, ||c||_inf) is
computed at load and drives iteration limits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

from ..errors import Infeasible, ParseError
from ..matrix_core import ConstraintMatrix


@dataclass
class LPProblem:
    A: scipy.sparse.csr_matrix   # d x n equality matrix
    b: np.ndarray
    c: np.ndarray
    l: np.ndarray
    u: np.ndarray
    x0: np.ndarray
    U: float = field(init=False)
    constraints: ConstraintMatrix = field(init=False)  # A^T, the tall Gram-side matrix

    def __post_init__(self):
        self.A = scipy.sparse.csr_matrix(self.A, dtype=np.float64)
        d, n = self.A.shape
        self.b = np.asarray(self.b, dtype=np.float64).ravel()
        self.c = np.asarray(self.c, dtype=np.float64).ravel()
        self.l = np.asarray(self.l, dtype=np.float64).ravel()
        self.u = np.asarray(self.u, dtype=np.float64).ravel()
        self.x0 = np.asarray(self.x0, dtype=np.float64).ravel()
        if d > n:
            raise ValueError(f"equality matrix is {d} x {n}; need d <= n")
        for name, vec, size in (("b", self.b, d), ("c", self.c, n), ("l", self.l, n),
                                ("u", self.u, n), ("x0", self.x0, n)):
            if vec.shape[0] != size:
                raise ValueError(f"{name} has length {vec.shape[0]}, expected {size}")
        if not np.all(self.l < self.u):
            raise ValueError("need l < u entrywise")
        if not (np.all(self.x0 > self.l) and np.all(self.x0 < self.u)):
            raise Infeasible("x0 is not strictly inside the box")
        resid = np.linalg.norm(self.A @ self.x0 - self.b)
        if resid > 1e-9 * max(1.0, np.linalg.norm(self.b)):
            raise Infeasible(f"A x0 - b has norm {resid:.2e}; x0 is not feasible")
        span = self.u - self.l
        self.U = float(max(
            np.max(span / (self.u - self.x0)),
            np.max(span / (self.x0 - self.l)),
            np.max(span),
            np.max(np.abs(self.c)) if n else 0.0,
        ))
        # validates full row rank of A via the tall transpose
        self.constraints = ConstraintMatrix(self.A.T.tocsr())

    @property
    def d(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.A.shape[1]


class _Tokens:
    """Whitespace token stream that remembers line numbers for errors."""

    def __init__(self, text: str):
        self.items: list[tuple[str, int]] = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            body = line.split("#", 1)[0]
            for tok in body.split():
                self.items.append((tok, lineno))
        self.pos = 0
        self.last_line = 1

    def next(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.items):
            raise ParseError(self.last_line, f"unexpected end of file while reading {what}")
        tok, line = self.items[self.pos]
        self.pos += 1
        self.last_line = line
        return tok, line

    def next_int(self, what: str) -> int:
        tok, line = self.next(what)
        try:
            return int(tok)
        except ValueError:
            raise ParseError(line, f"expected integer for {what}, got {tok!r}") from None

    def next_float(self, what: str) -> float:
        tok, line = self.next(what)
        try:
            return float(tok)
        except ValueError:
            raise ParseError(line, f"expected number for {what}, got {tok!r}") from None


def parse_lp(text: str) -> LPProblem:
    """Parse the line-oriented LP format.

    Layout: header "d n", then an entry count and that many "i j value"
    coordinate triples for A (0-based), then the b, c, l, u, x0 vectors as
    whitespace-separated numbers.  '#' starts a comment.
    """
    toks = _Tokens(text)
    d = toks.next_int("d")
    n = toks.next_int("n")
    if d <= 0 or n <= 0:
        raise ParseError(toks.last_line, "header dimensions must be positive")
    nnz = toks.next_int("entry count")
    rows = np.empty(nnz, dtype=np.int64)
    cols = np.empty(nnz, dtype=np.int64)
    vals = np.empty(nnz, dtype=np.float64)
    for k in range(nnz):
        rows[k] = toks.next_int("entry row")
        cols[k] = toks.next_int("entry column")
        vals[k] = toks.next_float("entry value")
        if not (0 <= rows[k] < d and 0 <= cols[k] < n):
            raise ParseError(toks.last_line, f"entry ({rows[k]}, {cols[k]}) out of range")
    vectors = {}
    for name, size in (("b", d), ("c", n), ("l", n), ("u", n), ("x0", n)):
        vectors[name] = np.array([toks.next_float(name) for _ in range(size)])
    if toks.pos != len(toks.items):
        raise ParseError(toks.items[toks.pos][1], "trailing tokens after x0")
    A = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(d, n)).tocsr()
    try:
        return LPProblem(A=A, b=vectors["b"], c=vectors["c"], l=vectors["l"],
                         u=vectors["u"], x0=vectors["x0"])
    except (ValueError,) as exc:
        raise ParseError(toks.last_line, str(exc)) from exc


def read_lp(path) -> LPProblem:
    with open(path) as fh:
        return parse_lp(fh.read())


def format_lp(p: LPProblem) -> str:
    coo = p.A.tocoo()
    lines = [f"{p.d} {p.n}", f"{coo.nnz}"]
    for i, j, v in zip(coo.row, coo.col, coo.data):
        lines.append(f"{i} {j} {v:.17g}")
    for vec in (p.b, p.c, p.l, p.u, p.x0):
        lines.append(" ".join(f"{v:.17g}" for v in vec))
    return "\n".join(lines) + "\n"


def write_lp(path, p: LPProblem) -> None:
    with open(path, "w") as fh:
        fh.write(format_lp(p))
