"""Benchmark the compiled kernel core against the pure-numpy fallback.

Run with ``python -m imbarb.bench``.  Times the hot kernels at the batch
sizes the trainers actually use.
"""

from __future__ import annotations

import time

import numpy as np

from imbarb._kernels import available_backends


def _time(fn, repeats: int) -> float:
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def _cases():
    rng = np.random.default_rng(0)
    nets = {
        "teacher 5-256-128-3": [5, 256, 128, 3],
        "ddqn 5-256-128-153": [5, 256, 128, 153],
        "student 5-64-32-3": [5, 64, 32, 3],
    }
    for name, dims in nets.items():
        weights = [np.ascontiguousarray(rng.standard_normal((i, o)) * 0.1) for i, o in zip(dims, dims[1:])]
        biases = [rng.standard_normal(o) * 0.1 for o in dims[1:]]
        for batch in (1, 256):
            x = np.ascontiguousarray(rng.standard_normal((batch, dims[0])))
            upstream = np.ascontiguousarray(rng.standard_normal((batch, dims[-1])))
            yield f"forward {name} b={batch}", lambda be, w=weights, b=biases, xx=x: be.dense_forward(xx, w, b)

            def fwd_bwd(be, w=weights, b=biases, xx=x, up=upstream):
                _, acts = be.dense_forward_cached(xx, w, b)
                be.dense_backward(acts, w, up)

            yield f"fwd+bwd {name} b={batch}", fwd_bwd

    probs = rng.dirichlet(np.ones(51), size=256)
    rewards = rng.uniform(-100, 100, 256)
    gammas = np.full(256, 0.999)
    atoms = np.linspace(-1e5, 1e5, 51)
    yield "c51 project 256x51", lambda be: be.categorical_project(probs, rewards, gammas, atoms)

    param = rng.standard_normal(256 * 128)
    grad = rng.standard_normal(256 * 128)
    m = np.zeros_like(param)
    v = np.zeros_like(param)
    yield "adam 32k params", lambda be: be.adam_step(param, grad, m, v, 1e-3, 0.9, 0.999, 1e-8, 0.1, 0.001)


def main() -> int:
    backends = available_backends()
    print(f"backends: {', '.join(backends)}")
    header = f"{'kernel':<34}" + "".join(f"{name:>14}" for name in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10}"
    print(header)
    for label, fn in _cases():
        repeats = 200 if "b=1" in label or "adam" in label else 50
        times = {name: _time(lambda be=be: fn(be), repeats) for name, be in backends.items()}
        row = f"{label:<34}" + "".join(f"{t * 1e6:>12.1f}us" for t in times.values())
        if len(times) > 1:
            values = list(times.values())
            row += f"{values[0] / values[-1]:>9.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
