"""Shared oracles for the test suite."""

import numpy as np

FD_STEP = 1e-5


def central_difference(f, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Gradient of scalar ``f`` at array ``x`` by central differences (x is perturbed in place and restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f()
        x[i] = old - h
        down = f()
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - b| / max(|a| + |b|, floor), coordinatewise."""
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), floor), initial=0.0))


def naive_mlp(weights, biases, x, output_activation="identity"):
    """Per-example, per-unit forward pass written with Python loops."""
    out = []
    for row in x:
        h = list(row)
        for li, (w, b) in enumerate(zip(weights, biases)):
            z = [sum(h[i] * w[i][j] for i in range(len(h))) + b[j] for j in range(w.shape[1])]
            if li < len(weights) - 1:
                h = [max(v, 0.0) for v in z]
            elif output_activation == "sigmoid":
                h = [1.0 / (1.0 + np.exp(-v)) for v in z]
            else:
                h = z
        out.append(h)
    return np.array(out)


# one line per acceptance criterion, printed in the terminal summary by conftest
ACCEPTANCE_LINES = []
