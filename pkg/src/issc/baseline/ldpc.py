"""Rate-2/3 LDPC code: seeded (3, 9)-regular construction with girth >= 6,
systematic encoding, and sum-product belief-propagation decoding.

The parity-check matrix is generated once and stored as a text artifact
(`m n` header, then `row col` pairs) so every run uses the identical code.
"""

from __future__ import annotations

import math

import numpy as np

DEFAULT_N = 648
DEFAULT_COLUMN_WEIGHT = 3
DEFAULT_RATE = (2, 3)

_MSG_CLIP = 30.0
_TANH_FLOOR = 1e-15


def build_parity_check(
    n: int = DEFAULT_N,
    rate: tuple[int, int] = DEFAULT_RATE,
    column_weight: int = DEFAULT_COLUMN_WEIGHT,
    seed: int = 2023,
) -> np.ndarray:
    """Random regular parity-check matrix with no length-4 cycles.

    Rows are filled to equal weight; a column is only accepted if none of its
    row pairs already co-occur in an earlier column, which enforces girth >= 6.
    """
    num, den = rate
    if (n * (den - num)) % den != 0:
        raise ValueError(f"block length {n} incompatible with rate {num}/{den}")
    m = n * (den - num) // den
    if (column_weight * n) % m != 0:
        raise ValueError("row weight would not be integral")
    row_weight = column_weight * n // m

    for attempt in range(200):
        rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(attempt,)))
        h = np.zeros((m, n), dtype=np.uint8)
        capacity = np.full(m, row_weight, dtype=np.int64)
        paired = np.zeros((m, m), dtype=bool)
        ok = True
        for col in range(n):
            placed = None
            for _ in range(400):
                avail = np.nonzero(capacity > 0)[0]
                if len(avail) < column_weight:
                    break
                probs = capacity[avail] / capacity[avail].sum()
                rows = rng.choice(avail, size=column_weight, replace=False, p=probs)
                conflict = any(
                    paired[rows[i], rows[j]]
                    for i in range(column_weight)
                    for j in range(i + 1, column_weight)
                )
                if not conflict:
                    placed = np.sort(rows)
                    break
            if placed is None:
                ok = False
                break
            h[placed, col] = 1
            capacity[placed] -= 1
            for i in range(column_weight):
                for j in range(i + 1, column_weight):
                    paired[placed[i], placed[j]] = True
                    paired[placed[j], placed[i]] = True
        if ok and _gf2_rank(h) == m:
            return h
    raise RuntimeError("could not construct a full-rank girth-6 parity-check matrix")


def validate_parity_check(h: np.ndarray) -> None:
    """Regularity and girth checks; raises on violation."""
    m, n = h.shape
    col_w = h.sum(axis=0)
    row_w = h.sum(axis=1)
    if not (col_w == col_w[0]).all():
        raise ValueError("column weights are not uniform")
    if not (row_w == row_w[0]).all():
        raise ValueError("row weights are not uniform")
    overlap = h.astype(np.int64) @ h.astype(np.int64).T
    np.fill_diagonal(overlap, 0)
    if overlap.max() > 1:
        raise ValueError("parity-check matrix contains a length-4 cycle")


def save_parity_check(h: np.ndarray, path) -> None:
    rows, cols = np.nonzero(h)
    with open(path, "w") as f:
        f.write(f"{h.shape[0]} {h.shape[1]}\n")
        for r, c in zip(rows, cols):
            f.write(f"{r} {c}\n")


def parse_parity_check(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    m, n = (int(v) for v in lines[0].split())
    h = np.zeros((m, n), dtype=np.uint8)
    for line in lines[1:]:
        r, c = line.split()
        h[int(r), int(c)] = 1
    return h


def load_parity_check(path) -> np.ndarray:
    with open(path) as f:
        return parse_parity_check(f.read())


def _gf2_rank(h: np.ndarray) -> int:
    w = h.copy().astype(np.uint8)
    m, n = w.shape
    rank = 0
    for c in range(n):
        rows = np.nonzero(w[rank:, c])[0]
        if len(rows) == 0:
            continue
        p = rank + rows[0]
        if p != rank:
            w[[rank, p]] = w[[p, rank]]
        others = np.nonzero(w[:, c])[0]
        others = others[others != rank]
        w[others] ^= w[rank]
        rank += 1
        if rank == m:
            break
    return rank


def _gf2_inverse(b: np.ndarray) -> np.ndarray:
    m = b.shape[0]
    aug = np.concatenate([b.astype(np.uint8), np.eye(m, dtype=np.uint8)], axis=1)
    for c in range(m):
        rows = np.nonzero(aug[c:, c])[0]
        if len(rows) == 0:
            raise ValueError("matrix is singular over GF(2)")
        p = c + rows[0]
        if p != c:
            aug[[c, p]] = aug[[p, c]]
        others = np.nonzero(aug[:, c])[0]
        others = others[others != c]
        aug[others] ^= aug[c]
    return aug[:, m:]


class LdpcCode:
    """Systematic encoder and belief-propagation decoder for one fixed code.

    Parity positions are the pivot columns of a deterministic GF(2)
    elimination (scanned right to left), so message bits occupy the remaining
    columns verbatim in every codeword.
    """

    def __init__(self, h: np.ndarray):
        validate_parity_check(h)
        self.h = h.astype(np.uint8)
        self.m, self.n = h.shape
        self.k = self.n - self.m
        if 3 * self.k != 2 * self.n:
            raise ValueError(f"code rate {self.k}/{self.n} is not 2/3")
        self.parity_pos, self.message_pos = self._systematic_split()
        b = self.h[:, self.parity_pos]
        a = self.h[:, self.message_pos]
        self.parity_map = (_gf2_inverse(b).astype(np.int64) @ a.astype(np.int64)) % 2
        self.parity_map = self.parity_map.astype(np.uint8)
        self._build_edges()

    @property
    def rate(self) -> float:
        return self.k / self.n

    def _systematic_split(self):
        w = self.h.copy()
        pivots = []
        r = 0
        for c in range(self.n - 1, -1, -1):
            rows = np.nonzero(w[r:, c])[0]
            if len(rows) == 0:
                continue
            p = r + rows[0]
            if p != r:
                w[[r, p]] = w[[p, r]]
            others = np.nonzero(w[:, c])[0]
            others = others[others != r]
            w[others] ^= w[r]
            pivots.append(c)
            r += 1
            if r == self.m:
                break
        if r < self.m:
            raise ValueError("parity-check matrix is rank deficient")
        parity = np.array(sorted(pivots))
        message = np.array(sorted(set(range(self.n)) - set(pivots)))
        return parity, message

    def _build_edges(self):
        chk, var = np.nonzero(self.h)
        self.edge_chk = chk
        self.edge_var = var
        self.n_edges = len(chk)
        row_w = int(self.h.sum(axis=1)[0])
        col_w = int(self.h.sum(axis=0)[0])
        # edges are emitted row-major by nonzero(), so check grouping is a reshape
        self.check_edges = np.arange(self.n_edges).reshape(self.m, row_w)
        order = np.argsort(var, kind="stable")
        self.var_edges = order.reshape(self.n, col_w)

    def encode(self, messages: np.ndarray) -> np.ndarray:
        """(k,) or (blocks, k) message bits -> systematic codewords."""
        messages = np.asarray(messages, dtype=np.uint8)
        squeeze = messages.ndim == 1
        messages = np.atleast_2d(messages)
        if messages.shape[1] != self.k:
            raise ValueError(f"message length {messages.shape[1]} != k={self.k}")
        parity = (messages.astype(np.int64) @ self.parity_map.T.astype(np.int64)) % 2
        codewords = np.zeros((messages.shape[0], self.n), dtype=np.uint8)
        codewords[:, self.message_pos] = messages
        codewords[:, self.parity_pos] = parity.astype(np.uint8)
        return codewords[0] if squeeze else codewords

    def syndrome(self, codewords: np.ndarray) -> np.ndarray:
        codewords = np.atleast_2d(np.asarray(codewords, dtype=np.int64))
        return (codewords @ self.h.T.astype(np.int64)) % 2

    def extract_message(self, codewords: np.ndarray) -> np.ndarray:
        return np.asarray(codewords)[..., self.message_pos]

    def decode(self, llrs: np.ndarray, max_iters: int = 50):
        """Sum-product decoding of LLRs (positive favours bit 0).

        Accepts (n,) or (blocks, n); returns (hard bits, converged flags).
        Early-stops per block on an all-zero syndrome; non-convergence is a
        returned flag, not an error.
        """
        llrs = np.asarray(llrs, dtype=np.float64)
        squeeze = llrs.ndim == 1
        llrs = np.atleast_2d(llrs)
        if llrs.shape[1] != self.n:
            raise ValueError(f"LLR length {llrs.shape[1]} != n={self.n}")
        nb = llrs.shape[0]
        mcv = np.zeros((nb, self.n_edges), dtype=np.float64)
        out_bits = (llrs < 0).astype(np.uint8)
        converged = (self.syndrome(out_bits).sum(axis=1) == 0)

        active = ~converged
        for _ in range(max_iters):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            sub_llr = llrs[idx]
            sub_mcv = mcv[idx]

            var_sum = sub_llr + sub_mcv[:, self.var_edges].sum(axis=2)
            mvc = var_sum[:, self.edge_var] - sub_mcv
            np.clip(mvc, -_MSG_CLIP, _MSG_CLIP, out=mvc)

            t = np.tanh(mvc / 2.0)
            t = np.where(np.abs(t) < _TANH_FLOOR, _TANH_FLOOR, t)
            t_chk = t[:, self.check_edges]
            prod = t_chk.prod(axis=2, keepdims=True)
            ratio = np.clip(prod / t_chk, -1.0 + _TANH_FLOOR, 1.0 - _TANH_FLOOR)
            new_mcv = 2.0 * np.arctanh(ratio)
            sub_mcv[:, self.check_edges.reshape(-1)] = new_mcv.reshape(len(idx), -1)
            mcv[idx] = sub_mcv

            posterior = sub_llr + sub_mcv[:, self.var_edges].sum(axis=2)
            bits = (posterior < 0).astype(np.uint8)
            out_bits[idx] = bits
            done = self.syndrome(bits).sum(axis=1) == 0
            converged[idx[done]] = True
            active[idx[done]] = False

        if squeeze:
            return out_bits[0], bool(converged[0])
        return out_bits, converged


def load_default_code() -> LdpcCode:
    """The shared n=648, k=432 code shipped as a package artifact."""
    from importlib.resources import files

    text = (files("issc") / "data" / "ldpc_648_432.txt").read_text()
    return LdpcCode(parse_parity_check(text))


def interleave_indices(length: int, seed: int) -> np.ndarray:
    """Seeded bit permutation applied across code blocks before modulation."""
    return np.random.default_rng(seed).permutation(length)
