"""Central-difference gradient verification shared by several test modules."""

import numpy as np
import torch


def central_difference_agrees(fn, x: torch.Tensor, n_probes: int = 6,
                              rel_tol: float = 1e-3, step: float = 1e-5,
                              seed: int = 0) -> None:
    """Assert autograd and central differences match at random coordinates.

    ``fn`` maps a float64 tensor to a scalar.  Relative agreement is checked
    per probed coordinate (absolute fallback for near-zero derivatives).
    """
    assert x.dtype == torch.float64, "gradient checks run in double precision"
    x = x.clone().requires_grad_(True)
    out = fn(x)
    (grad,) = torch.autograd.grad(out, x)
    rng = np.random.default_rng(seed)
    flat = x.detach().reshape(-1)
    gflat = grad.reshape(-1)
    idx = rng.choice(flat.numel(), size=min(n_probes, flat.numel()), replace=False)
    for i in idx:
        i = int(i)
        h = step * max(1.0, abs(float(flat[i])))
        xp = flat.clone()
        xm = flat.clone()
        xp[i] += h
        xm[i] -= h
        with torch.no_grad():
            fp = float(fn(xp.reshape(x.shape)))
            fm = float(fn(xm.reshape(x.shape)))
        numeric = (fp - fm) / (2 * h)
        analytic = float(gflat[i])
        scale = max(abs(numeric), abs(analytic))
        if scale < 1e-8:
            assert abs(numeric - analytic) < 1e-8
        else:
            assert abs(numeric - analytic) / scale < rel_tol, (
                f"coordinate {i}: analytic {analytic:.8g} vs numeric {numeric:.8g}"
            )
