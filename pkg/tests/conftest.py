import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------------------
# Independent oracles (kept free of the implementation under test)
# ---------------------------------------------------------------------------

def conv_oracle(x, w, b, stride):
    """Direct 6-nested-loop same-padded convolution, ReLU applied."""
    bs, c, h, wd = x.shape
    f, _, kh, kw = w.shape
    oh = -(-h // stride)
    ow = -(-wd // stride)
    pad_h = max((oh - 1) * stride + kh - h, 0)
    pad_w = max((ow - 1) * stride + kw - wd, 0)
    pt, pl = pad_h // 2, pad_w // 2
    out = np.zeros((bs, f, oh, ow))
    for n in range(bs):
        for k in range(f):
            for oy in range(oh):
                for ox in range(ow):
                    acc = b[k]
                    for ci in range(c):
                        for i in range(kh):
                            for j in range(kw):
                                iy = oy * stride + i - pt
                                ix = ox * stride + j - pl
                                if 0 <= iy < h and 0 <= ix < wd:
                                    acc += x[n, ci, iy, ix] * w[k, ci, i, j]
                    out[n, k, oy, ox] = max(acc, 0.0)
    return out


def maxpool_oracle(x, ph, pw):
    """Brute-force window scan with truncated edge windows."""
    bs, c, h, w = x.shape
    oh = -(-h // ph)
    ow = -(-w // pw)
    out = np.empty((bs, c, oh, ow))
    for n in range(bs):
        for ci in range(c):
            for oy in range(oh):
                for ox in range(ow):
                    win = x[n, ci, oy * ph:(oy + 1) * ph, ox * pw:(ox + 1) * pw]
                    out[n, ci, oy, ox] = win.max()
    return out


def pareto_fronts_oracle(pairs):
    """O(n^3)-ish reference: repeatedly strip the non-dominated set."""
    def dom(a, b):
        return a[0] >= b[0] and a[1] >= b[1] and (a[0] > b[0] or a[1] > b[1])

    remaining = list(range(len(pairs)))
    fronts = []
    while remaining:
        front = [
            i for i in remaining
            if not any(dom(pairs[j], pairs[i]) for j in remaining if j != i)
        ]
        fronts.append(front)
        remaining = [i for i in remaining if i not in front]
    return fronts


def finite_difference(loss_fn, array, eps=1e-4):
    """Central finite differences of a scalar loss wrt every array entry."""
    grad = np.zeros_like(array)
    it = np.nditer(array, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = array[idx]
        array[idx] = orig + eps
        lp = loss_fn()
        array[idx] = orig - eps
        lm = loss_fn()
        array[idx] = orig
        grad[idx] = (lp - lm) / (2 * eps)
    return grad


def assert_grads_close(analytic, numeric, rtol=1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    rel = np.abs(analytic - numeric) / denom
    assert rel.max() < rtol, f"max relative gradient error {rel.max():.3e}"
