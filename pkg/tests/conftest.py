import sys

import numpy as np
import pytest


def numerical_grad(f, x, h=1e-3):
    """Central finite differences of scalar ``f()`` w.r.t. every element of ``x`` (mutated in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        g.flat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(analytic, numeric):
    """Max-norm relative error ``|a - n|_inf / max(|a|_inf, |n|_inf)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))
    if scale == 0:
        return 0.0
    return float(np.abs(a - n).max() / scale)


def naive_conv2d(x, w, b, stride, padding):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, o, ho, wo))
    for nn in range(n):
        for oo in range(o):
            for y in range(ho):
                for xx in range(wo):
                    acc = b[oo]
                    for cc in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                yi, xj = y * stride - padding + i, xx * stride - padding + j
                                if 0 <= yi < h and 0 <= xj < wd:
                                    acc += x[nn, cc, yi, xj] * w[oo, cc, i, j]
                    out[nn, oo, y, xx] = acc
    return out


def naive_tconv2d(x, w, b, stride):
    n, c, h, wd = x.shape
    _, o, kh, kw = w.shape
    out = np.zeros((n, o, (h - 1) * stride + kh, (wd - 1) * stride + kw))
    for nn in range(n):
        for cc in range(c):
            for y in range(h):
                for xx in range(wd):
                    out[nn, :, y * stride:y * stride + kh, xx * stride:xx * stride + kw] += x[nn, cc, y, xx] * w[cc]
    return out + b[None, :, None, None]


def naive_maxpool2(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2))
    for idx in np.ndindex(n, c, h // 2, w // 2):
        nn, cc, y, xx = idx
        out[idx] = max(x[nn, cc, 2 * y + i, 2 * xx + j] for i in range(2) for j in range(2))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.status_lines():
        terminalreporter.write_line(line)
