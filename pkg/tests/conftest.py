import numpy as np
import pytest

from tslfi.autodiff import Tensor


def central_diff_check(fn, leaves, h=1e-5, rtol=1e-4, max_coords=12, rng=None):
    """Compare analytic gradients of scalar fn() against central differences.

    `fn` rebuilds its graph from the given leaf Tensors on every call.
    Checks up to `max_coords` randomly chosen coordinates per leaf.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    for t in leaves:
        t.grad = None
    out = fn()
    out.backward()
    worst = 0.0
    for t in leaves:
        assert t.grad is not None, "leaf did not receive a gradient"
        assert t.grad.shape == t.data.shape
        flat_idx = rng.permutation(t.data.size)[:max_coords]
        for fi in flat_idx:
            idx = np.unravel_index(fi, t.data.shape)
            keep = t.data[idx]
            t.data[idx] = keep + h
            up = fn().item()
            t.data[idx] = keep - h
            dn = fn().item()
            t.data[idx] = keep
            num = (up - dn) / (2.0 * h)
            ana = t.grad[idx]
            err = abs(ana - num) / max(1.0, abs(ana), abs(num))
            worst = max(worst, err)
            assert err <= rtol, (
                f"gradient mismatch at {idx}: analytic {ana}, numeric {num}"
            )
    return worst


@pytest.fixture
def gradcheck():
    return central_diff_check
