import numpy as np


def finite_difference_check(loss_fn, tensors, eps=1e-4, max_coords=None, rng=None, floor=1e-6, points=4):
    """Compare reverse-mode gradients with central finite differences.

    ``points=2`` uses ``(f(x+h) - f(x-h)) / 2h``; ``points=4`` uses the
    fourth-order stencil ``(-f(x+2h) + 8f(x+h) - 8f(x-h) + f(x-2h)) / 12h``,
    whose smaller truncation error tolerates a larger, roundoff-safe ``h``.

    ``loss_fn()`` must rebuild the graph from the current contents of
    ``tensors`` and return a scalar Tensor. When ``max_coords`` is set, that
    many coordinates are sampled per tensor (all of them for smaller tensors).

    Returns the largest elementwise relative error
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    for t in tensors:
        t.grad = None
    loss_fn().backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = (rng or np.random.default_rng(0)).choice(flat.size, size=max_coords, replace=False)
        ga = ga.reshape(-1)
        for i in coords:
            orig = flat[i]

            def f(delta):
                flat[i] = orig + delta
                return float(loss_fn().data)

            if points == 4:
                num = (-f(2 * eps) + 8 * f(eps) - 8 * f(-eps) + f(-2 * eps)) / (12.0 * eps)
            else:
                num = (f(eps) - f(-eps)) / (2.0 * eps)
            flat[i] = orig
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            worst = max(worst, err)
    for t in tensors:
        t.grad = None
    return worst
