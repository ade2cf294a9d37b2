"""Compiled vs pure-Python kernels.

    python benchmarks/bench_kernels.py [--repeat N]

Times the fused AdamW update over a model-sized parameter vector, the
ranked triplet matcher on frame-sized inputs, and one full training step.
Results are printed as a table; the compiled column is skipped when the
extension was not built.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from tempura import _pykernels

try:
    from tempura import _ckernels
except ImportError:
    _ckernels = None


def bench_adamw(impl, n, repeat):
    r = np.random.default_rng(0)
    p, g, m, v = r.standard_normal(n), r.standard_normal(n), np.zeros(n), np.zeros(n)
    call = lambda: impl.adamw_update(p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1e-4, 0.1, 0.001)
    return min(timeit.repeat(call, number=20, repeat=repeat)) / 20


def bench_match(impl, n_cand, n_gt, use_iou, repeat):
    r = np.random.default_rng(1)
    cand = r.integers(0, 4, (n_cand, 5)).astype(np.int64)
    gt = r.integers(0, 4, (n_gt, 5)).astype(np.int64)
    xy = r.uniform(0, 0.5, (n_cand + n_gt, 2, 2))
    boxes = np.concatenate([xy, xy + 0.3], axis=2).reshape(-1, 8)
    cb, gb = boxes[:n_cand].copy(), boxes[n_cand:].copy()
    call = lambda: impl.match_ranked(cand, gt, cb, gb, use_iou, 0.5)
    return min(timeit.repeat(call, number=50, repeat=repeat)) / 50


STEP_SNIPPET = """
import time, numpy as np
from tempura.config import RunConfig
from tempura.data import GeneratorConfig, generate
from tempura.model import TempuraModel, prepare
from tempura.autodiff import AdamW, backward
from tempura.rng import stream
videos = generate(GeneratorConfig(n_videos=20))
model = TempuraModel(RunConfig(task="sgcls").model_config(8, 12, 64))
params = model.trainable()
opt = AdamW(params, lr=1e-3)
pvs = [prepare(v) for v in videos]
best = 1e9
for rep in range(3):
    t0 = time.perf_counter()
    for pv in pvs:
        res = model.forward(pv, True, None, model.draw_eps(stream(0, "eps", 1), len(pv.subj)))
        opt.zero_grad(); backward(res.loss)
        for p in params:
            if p.grad is None: p.grad = np.zeros_like(p.data)
        opt.step()
    best = min(best, (time.perf_counter() - t0) / len(pvs))
print(best)
"""


def bench_step(pure: bool) -> float:
    env = dict(os.environ)
    if pure:
        env["TEMPURA_PURE_PYTHON"] = "1"
    else:
        env.pop("TEMPURA_PURE_PYTHON", None)
    out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--no-step", action="store_true", help="skip the end-to-end training step")
    args = ap.parse_args()

    rows = []
    for n in (1_000, 100_000):
        py = bench_adamw(_pykernels, n, args.repeat)
        c = bench_adamw(_ckernels, n, args.repeat) if _ckernels else None
        rows.append((f"adamw_update n={n}", py, c))
    for n_cand, n_gt, iou in ((12, 6, False), (50, 10, False), (50, 10, True)):
        py = bench_match(_pykernels, n_cand, n_gt, iou, args.repeat)
        c = bench_match(_ckernels, n_cand, n_gt, iou, args.repeat) if _ckernels else None
        rows.append((f"match_ranked {n_cand}x{n_gt}{' iou' if iou else ''}", py, c))
    if not args.no_step:
        py = bench_step(pure=True)
        c = bench_step(pure=False) if _ckernels else None
        rows.append(("train step (sgcls, per video)", py, c))

    print(f"{'kernel':34s} {'python':>12s} {'compiled':>12s} {'speedup':>8s}")
    for name, py, c in rows:
        cs = f"{c * 1e6:10.1f}us" if c else f"{'n/a':>12s}"
        sp = f"{py / c:7.1f}x" if c else f"{'':>8s}"
        print(f"{name:34s} {py * 1e6:10.1f}us {cs} {sp}")


if __name__ == "__main__":
    main()
