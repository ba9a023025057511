"""Analytic attention cost model and a wall-clock harness for flat vs hierarchical stacks."""

import csv
import io
import math
import statistics
import time
import warnings
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .encoder import EncoderConfig, init_layer_params, self_attention

C_ATTN = 2  # QK^T and attn.V, n^2 d multiply-adds each
C_PROJ = 4  # Q, K, V and output projections, n d^2 each
WARMUP = 2
CSV_COLUMNS = ["n", "d", "s", "flat_flops", "hier_flops", "ratio", "flat_ms", "hier_ms", "measured_ratio"]


@dataclass
class ComplexityParams:
    n: int
    d: int
    s: int
    depth: int = 1
    include_projections: bool = False

    def __post_init__(self):
        for name in ("n", "d", "s", "depth"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.s > self.n:
            raise ValueError("cannot split n tokens into more than n sentences")

    @property
    def sentence_len(self):
        return math.ceil(self.n / self.s)


@dataclass
class CostReport:
    params: ComplexityParams
    flat_flops: float
    hier_flops: float
    flat_ms: float = None
    hier_ms: float = None

    @property
    def ratio(self):
        return self.hier_flops / self.flat_flops

    @property
    def measured_ratio(self):
        if self.flat_ms is None or self.hier_ms is None:
            return None
        return self.hier_ms / self.flat_ms

    def row(self):
        p = self.params
        opt = lambda v, fmt: "" if v is None else format(v, fmt)  # noqa: E731
        return [p.n, p.d, p.s, f"{self.flat_flops:.0f}", f"{self.hier_flops:.0f}", f"{self.ratio:.6f}",
                opt(self.flat_ms, ".3f"), opt(self.hier_ms, ".3f"), opt(self.measured_ratio, ".6f")]


def flop_model(p):
    """Multiply-add counts of a flat stack over ``n`` tokens vs the two-level stack.

    The hierarchical token term pads every sentence to ``ceil(n / s)`` tokens
    and counts the padded work.
    """
    m = p.sentence_len
    flat = p.depth * C_ATTN * p.n**2 * p.d
    token = p.depth * C_ATTN * p.s * m**2 * p.d
    sent = p.depth * C_ATTN * p.s**2 * p.d
    if p.include_projections:
        flat += p.depth * C_PROJ * p.n * p.d**2
        token += p.depth * C_PROJ * p.s * m * p.d**2
        sent += p.depth * C_PROJ * p.s * p.d**2
    return CostReport(p, float(flat), float(token + sent))


def _stack(x, mask, store, prefix, depth, heads):
    for i in range(depth):
        x = self_attention(x, mask, store, f"{prefix}{i}", heads)
    return x


def measure(p, trials=5, heads=4, seed=0):
    """Median wall-clock milliseconds of attention-only stacks (no feed-forward), eval mode."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if p.d % heads:
        raise ValueError("d must be divisible by heads")
    rng = nc.make_rng(seed)
    cfg = EncoderConfig(vocab_size=1, hidden_dim=p.d, num_heads=heads, ffn_dim=1)
    store = nc.ParamStore(np.float32)
    for i in range(p.depth):
        init_layer_params(store, f"flat{i}", cfg, rng)
        init_layer_params(store, f"tok{i}", cfg, rng)
        init_layer_params(store, f"sent{i}", cfg, rng)
    store.set_frozen({""})
    m = p.sentence_len
    tokens = rng.standard_normal((1, p.n, p.d)).astype(np.float32)
    padded = np.zeros((p.s * m, p.d), dtype=np.float32)
    padded[: p.n] = tokens[0]
    padded = padded.reshape(p.s, m, p.d)
    tok_mask = (np.arange(p.s * m) < p.n).reshape(p.s, m).astype(np.float32)
    sent_mask = np.ones((1, p.s), dtype=np.float32)

    def flat():
        _stack(nc.Tensor(tokens), np.ones((1, p.n), dtype=np.float32), store, "flat", p.depth, heads)

    def hier():
        h = _stack(nc.Tensor(padded), tok_mask, store, "tok", p.depth, heads)
        sent = nc.masked_mean(h, tok_mask)
        _stack(nc.reshape(sent, (1, p.s, p.d)), sent_mask, store, "sent", p.depth, heads)

    def timed(fn):
        for _ in range(WARMUP):
            fn()
        runs = []
        for _ in range(trials):
            t0 = time.perf_counter()
            fn()
            runs.append((time.perf_counter() - t0) * 1e3)
        if min(runs) < 1.0:
            warnings.warn("runs shorter than 1 ms are dominated by timer resolution", stacklevel=3)
        return statistics.median(runs)

    report = flop_model(p)
    report.flat_ms = timed(flat)
    report.hier_ms = timed(hier)
    return report


def grid_values(n):
    """Powers of two from 1 up to ``n``."""
    out, s = [], 1
    while s <= n:
        out.append(s)
        s *= 2
    return out


def report_csv(reports):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in reports:
        w.writerow(r.row())
    return buf.getvalue()
