"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py                 # kernel timings, desk shapes
    python3 benchmarks/bench_kernels.py --full          # default architecture shapes
    python3 benchmarks/bench_kernels.py --end-to-end    # one training epoch per backend

Kernel timings call both backends in one process. The end-to-end run starts a
subprocess per backend because the active backend is fixed at import time.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from stegalyze.kernels import HAS_NUMBA, get_backend

EPOCH_SNIPPET = """
import time
from stegalyze import data, training
from stegalyze.model import ModelConfig
spec = data.StegoCorpusSpec(str(data.sample_corpus_path()), bpw=3, per_class={n}, seed=0)
model = data.markov_train(data.read_cover_corpus(spec.cover_path))
covers, stegos = data.generate_corpus(model, spec)
sentences = covers + [t for t, _ in stegos]
vocab = data.build_vocab(sentences)
c = ModelConfig(vocab_size=len(vocab), embed_dim={d}, hidden={k}, feature_maps={F})
enc = data.encode_batch(vocab, sentences, [0] * len(covers) + [1] * len(stegos), c.max_seq_len, c.min_len)
t = time.perf_counter()
training.train(c, enc, enc, epochs=1, seed=0)
print(time.perf_counter() - t)
"""


def kernel_cases(B, T, d, k, F, width, V, dtype):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(B, T, d)).astype(dtype)
    W = rng.normal(scale=0.1, size=(4 * k, k + d)).astype(dtype)
    b = np.zeros(4 * k, dtype=dtype)
    lengths = rng.integers(T // 3, T + 1, size=B)
    mask = (np.arange(T)[None, :] < lengths[:, None]).astype(dtype)
    h = rng.normal(size=(B, T, 2 * k)).astype(dtype)
    ids = rng.integers(0, V, size=B * T)
    rows = rng.normal(size=(B * T, d)).astype(dtype)

    def cases(be):
        H, C, G, Hraw = be.lstm_forward(x, W, b, mask)
        dH = np.ones_like(H)
        cols = be.unfold(h, width)
        return {
            "lstm_forward": lambda: be.lstm_forward(x, W, b, mask),
            "lstm_backward": lambda: be.lstm_backward(dH, x, W, mask, C, G, Hraw),
            "unfold": lambda: be.unfold(h, width),
            "fold": lambda: be.fold(cols, width, T),
            "scatter_add_rows": lambda: be.scatter_add_rows(V, ids, rows),
        }

    return cases


def best_of(fn, repeat):
    fn()  # warm-up, includes jit compilation
    number = max(1, int(0.2 / max(min(timeit.repeat(fn, number=1, repeat=3)), 1e-6)))
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def run_kernels(args):
    if args.full:
        shape = dict(B=128, T=30, d=256, k=200, F=128, width=5, V=20_000)
    else:
        shape = dict(B=128, T=30, d=32, k=32, F=32, width=5, V=2_000)
    dtype = np.float64 if args.float64 else np.float32
    print(f"shapes {shape}, {np.dtype(dtype).name}")
    make = kernel_cases(dtype=dtype, **shape)
    numpy_cases = make(get_backend("numpy"))
    numba_cases = make(get_backend("numba")) if HAS_NUMBA else {}
    print(f"{'kernel':<18}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, fn in numpy_cases.items():
        t_np = best_of(fn, args.repeat) * 1e3
        if name in numba_cases:
            t_nb = best_of(numba_cases[name], args.repeat) * 1e3
            print(f"{name:<18}{t_np:>12.3f}{t_nb:>12.3f}{t_np / t_nb:>9.1f}x")
        else:
            print(f"{name:<18}{t_np:>12.3f}{'n/a':>12}")


def run_end_to_end(args):
    code = EPOCH_SNIPPET.format(n=args.per_class, d=32, k=32, F=32)
    print(f"one epoch, {2 * args.per_class} sentences, d=k=F=32")
    for backend in ("numpy", "numba"):
        env = dict(os.environ, STEGALYZE_KERNELS=backend)
        r = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
        if r.returncode:
            print(f"{backend:<8} failed: {r.stderr.strip().splitlines()[-1]}")
        else:
            print(f"{backend:<8} {float(r.stdout.strip().splitlines()[-1]):8.2f} s")


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--full", action="store_true", help="use the default architecture sizes")
    p.add_argument("--float64", action="store_true", help="time 64-bit kernels instead of 32-bit")
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--end-to-end", action="store_true", help="also time one training epoch per backend")
    p.add_argument("--per-class", type=int, default=1000)
    args = p.parse_args(argv)
    run_kernels(args)
    if args.end_to_end:
        run_end_to_end(args)


if __name__ == "__main__":
    main()
