"""Reference oracles and builders shared by the tests."""

import itertools

import numpy as np

from omicsurv.data import MultiOmicsDataset, OmicsLayer, SurvivalLabels


def brute_partial_loglik(eta, time, event):
    """Breslow log partial likelihood by explicit loops."""
    total = 0.0
    for i in range(len(time)):
        if not event[i]:
            continue
        risk = [j for j in range(len(time)) if time[j] >= time[i]]
        total += eta[i] - np.log(sum(np.exp(eta[j]) for j in risk))
    return total


def brute_c_index(risk, time, event):
    """Harrell's C by enumerating ordered pairs."""
    num = den = 0.0
    for i, j in itertools.permutations(range(len(time)), 2):
        if not event[i]:
            continue
        if time[i] < time[j] or (time[i] == time[j] and not event[j]):
            den += 1
            if risk[i] > risk[j]:
                num += 1
            elif risk[i] == risk[j]:
                num += 0.5
    return num / den


def random_labels(rng, n, event_rate=0.7, ties=False):
    time = rng.integers(1, max(3, n // 2), n).astype(float) if ties else rng.exponential(100, n)
    event = rng.random(n) < event_rate
    event[0] = True
    return SurvivalLabels(time, event)


def make_dataset(values_by_layer, time, event, ids=None):
    n = len(time)
    ids = ids or tuple(f"s{i}" for i in range(n))
    layers = tuple(OmicsLayer(name, tuple(f"{name}_{j}" for j in range(v.shape[1])), v)
                   for name, v in values_by_layer.items())
    return MultiOmicsDataset(ids, layers, SurvivalLabels(time, event))


def numeric_gradient(f, params, h=1e-6):
    """Central differences of scalar ``f(params)`` for a list of arrays."""
    grads = []
    for k, p in enumerate(params):
        g = np.zeros_like(p, dtype=float)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + h
            up = f(params)
            p[idx] = orig - h
            down = f(params)
            p[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    f(params)
    return grads


def max_rel_error(analytic, numeric, floor=1e-7):
    """Largest |a - n| / max(|a|, |n|, floor) over all entries."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=float)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def grid_argmax(f, lo=-10.0, hi=10.0):
    """1-D maximiser by successively refined grids."""
    for _ in range(6):
        grid = np.linspace(lo, hi, 201)
        vals = np.array([f(b) for b in grid])
        k = int(np.argmax(vals))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, 200)]
    return 0.5 * (lo + hi)


def train_side_state(result):
    """Every array fitted on the training rows of a fold run with artifacts kept."""
    art = result.artifacts
    state = list(art.per_layer_indices) + [art.scaler.mean, art.scaler.std, art.selected,
                                           art.kmeans.centroids, art.cox.beta]
    model = art.model
    if hasattr(model, "get_params"):
        state += model.get_params()
    else:
        state += [model.mean_, model.components_]
    return state


def replace_rows(dataset, rows, new_values):
    """Copy of ``dataset`` with ``rows`` of every layer set by ``new_values(layer_values)``."""
    layers = {}
    for layer in dataset.layers:
        v = layer.values.copy()
        v[rows] = new_values(v)
        layers[layer.name] = v
    return make_dataset(layers, dataset.survival.time, dataset.survival.event,
                        ids=dataset.sample_ids)
