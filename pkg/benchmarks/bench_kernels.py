"""Compare the numba kernels with their numpy fallbacks.

Times every kernel in both registries on fixed inputs, checks that the two
agree, then times one model forward pass in subprocesses with MDB_NUMBA=0
and MDB_NUMBA=1 (the flag is read at import).

    python3 benchmarks/bench_kernels.py [--repeat 20] [--skip-model]
"""

import argparse
import importlib.util
import os
import statistics
import subprocess
import sys
import time

import numpy as np

from mdbert import kernels

MODEL_SNIPPET = """
import time
import numpy as np
from mdbert._accel import BACKEND
from mdbert.encoder import EncoderConfig
from mdbert.model import MDBert, ModelConfig
from mdbert.textprep import CLS, Document
rng = np.random.default_rng(0)
cfg = EncoderConfig(vocab_size=500, hidden_dim=64, num_heads=4, token_layers=2, sentence_layers=2, ffn_dim=128)
model = MDBert.initialize(ModelConfig(cfg, 20), seed=0)
docs = [Document(str(i), [[CLS] + rng.integers(5, 500, 30).tolist() for _ in range(16)], np.zeros(20))
        for i in range(8)]
model.predict(docs)
runs = []
for _ in range({repeat}):
    t0 = time.perf_counter()
    model.predict(docs)
    runs.append(time.perf_counter() - t0)
print(BACKEND, sorted(runs)[len(runs) // 2] * 1e3)
"""


def inputs(rng):
    x = rng.standard_normal((64, 32, 64))
    w = rng.standard_normal((64, 64, 32))
    mask = (rng.random((64, 32)) < 0.8).astype(np.float64)
    mask[:, 0] = 1.0
    rows = rng.standard_normal((2048, 64))
    gain, bias = rng.standard_normal(64), rng.standard_normal(64)
    soft = kernels.NUMPY["softmax_rows"](rows)
    _, xhat, rstd = kernels.NUMPY["layer_norm_rows"](rows, gain, bias, 1e-12)
    ptr = np.arange(0, 2001, 10, dtype=np.int64)
    post_ids = np.tile(np.arange(10, dtype=np.int64), 200) * 50 + np.repeat(np.arange(200) % 50, 10)
    post_ids = np.sort(post_ids.reshape(200, 10), axis=1).reshape(-1)
    post_tf = rng.integers(1, 4, 2000).astype(np.float64)
    doc_len = rng.integers(1, 20, 500).astype(np.float64)
    bm25 = (ptr, post_ids, post_tf, doc_len, float(doc_len.mean()), np.arange(0, 200, 7, dtype=np.int64),
            rng.random(200), 1.2, 0.75, 500)
    return {
        "matmul3": (x, w),
        "rowsum": (rows,),
        "softmax_rows": (rows,),
        "softmax_rows_backward": (soft, rows),
        "layer_norm_rows": (rows, gain, bias, 1e-12),
        "layer_norm_rows_backward": (rows, xhat, rstd, gain),
        "gelu": (rows,),
        "gelu_backward": (rows, rows),
        "masked_mean": (x, mask),
        "bm25_scores": bm25,
        "midranks": (np.round(rng.random(5000), 2),),
    }


def median_ms(fn, args, repeat):
    fn(*args)
    runs = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        runs.append((time.perf_counter() - t0) * 1e3)
    return statistics.median(runs)


def max_diff(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return max(float(np.max(np.abs(np.asarray(x) - np.asarray(y)))) for x, y in zip(a, b))


def model_timings(repeat):
    out = {}
    for flag in ("0", "1"):
        env = dict(os.environ, MDB_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", MODEL_SNIPPET.format(repeat=repeat)], env=env,
                             capture_output=True, text=True, check=True)
        backend, ms = res.stdout.split()
        out[backend] = float(ms)
    return out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--skip-model", action="store_true")
    args = ap.parse_args(argv)
    if importlib.util.find_spec("numba") is None:
        print("numba is not installed; the numba column times the uncompiled loops")
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for name, case in inputs(rng).items():
        np_fn, nb_fn = kernels.NUMPY[name], kernels.NUMBA[name]
        t_np = median_ms(np_fn, case, args.repeat)
        t_nb = median_ms(nb_fn, case, args.repeat)
        diff = max_diff(np_fn(*case), nb_fn(*case))
        print(f"{name:26s} {t_np:10.3f} {t_nb:10.3f} {t_np / t_nb:8.2f} {diff:10.1e}")
    if not args.skip_model:
        t = model_timings(max(3, args.repeat // 4))
        speed = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"\nmodel forward, 8 docs x 16 sentences x 31 tokens: numpy {t['numpy']:.1f} ms, "
              f"numba {t.get('numba', float('nan')):.1f} ms, speedup {speed:.2f}")


if __name__ == "__main__":
    main()
