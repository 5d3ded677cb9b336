"""Central finite-difference gradient oracle used by the nn tests and the
acceptance suite. Kept independent of the backpropagation code it checks:
it only calls loss functions, never `backward`."""

import numpy as np


def central_difference(loss_fn, params, probes, h=1e-5):
    """Numeric d(loss)/d(param entry) for each (param_idx, flat_idx) probe.

    ``loss_fn()`` evaluates the loss at the current parameter values;
    parameters are perturbed in place and restored.
    """
    grads = []
    for p_idx, flat_idx in probes:
        flat = params[p_idx].reshape(-1)
        original = flat[flat_idx]
        flat[flat_idx] = original + h
        up = loss_fn()
        flat[flat_idx] = original - h
        down = loss_fn()
        flat[flat_idx] = original
        grads.append((up - down) / (2.0 * h))
    return np.array(grads)


def relative_errors(analytic, numeric):
    analytic = np.asarray(analytic, dtype=float)
    numeric = np.asarray(numeric, dtype=float)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-6)
    return np.abs(analytic - numeric) / scale


def sample_probes(params, count, rng):
    """Uniform probes over all parameter entries, without replacement when
    possible."""
    sizes = [p.size for p in params]
    total = sum(sizes)
    chosen = rng.subset(total, min(count, total))
    probes = []
    offsets = np.cumsum([0] + sizes)
    for flat in chosen:
        p_idx = int(np.searchsorted(offsets, flat, side="right") - 1)
        probes.append((p_idx, int(flat - offsets[p_idx])))
    return probes
