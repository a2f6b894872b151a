"""Independent oracles shared by the test modules."""

from __future__ import annotations

from math import comb

import numpy as np

from t2tgan import diffcore as dc
from t2tgan import nets

FD_STEP = 1e-5
FD_RTOL = 1e-4


def fd_noise(loss_scale: float) -> float:
    """Rounding bound of a float64 central difference of a loss of magnitude ``loss_scale``."""
    return np.finfo(np.float64).eps * max(loss_scale, 1.0) / FD_STEP


def rel_err(a: float, b: float, noise: float = 0.0) -> float:
    """|a - b| relative to the larger magnitude, with differences inside ``noise`` scored below FD_RTOL."""
    scale = max(abs(a), abs(b), noise / FD_RTOL)
    return 0.0 if scale == 0.0 else abs(a - b) / scale


def projected(fn, weights):
    """Scalar loss sum(fn(...) * weights) so every output element contributes."""

    def loss(*tensors):
        out = fn(*tensors)
        return dc.sum_all(dc.mul(out, dc.Tensor(weights)))

    return loss


def gradcheck(
    loss_fn,
    arrays: list[np.ndarray],
    rng=None,
    max_coords: int | None = None,
    pattern=None,
    loss_scale: float | None = None,
) -> float:
    """Worst relative error between reverse-mode and central-difference gradients.

    ``loss_fn`` takes tensors and returns a scalar tensor. With ``max_coords``
    only that many random coordinates per input are probed. ``pattern`` maps
    the input arrays to a hashable description of every piecewise branch taken
    (ReLU signs, pooling winners); a probe whose +/- step changes it straddles
    a kink where no derivative exists, so another coordinate is drawn instead.
    ``loss_scale`` is the sum of magnitudes of the terms making up the loss
    (default: |loss|); it sets the rounding allowance of the difference quotient.
    """
    leaves = [dc.Tensor(a.copy(), requires_grad=True) for a in arrays]
    value = loss_fn(*leaves)
    noise = fd_noise(abs(value.item()) if loss_scale is None else loss_scale)
    grads = dc.backward(value)
    base = pattern(arrays) if pattern is not None else None
    worst = 0.0
    for k, a in enumerate(arrays):
        analytic = grads.get(leaves[k], np.zeros_like(a))
        coords = list(np.ndindex(a.shape))
        limit = len(coords)
        if max_coords is not None and len(coords) > max_coords:
            coords = [coords[i] for i in rng.permutation(len(coords))]
            limit = max_coords
        checked = 0
        for idx in coords:
            if checked == limit:
                break
            probes = []
            for sign in (1.0, -1.0):
                probe = [x.copy() for x in arrays]
                probe[k][idx] += sign * FD_STEP
                probes.append(probe)
            if pattern is not None and any(pattern(p) != base for p in probes):
                continue
            vals = [loss_fn(*[dc.Tensor(x) for x in p]).item() for p in probes]
            numeric = (vals[0] - vals[1]) / (2 * FD_STEP)
            worst = max(worst, rel_err(float(analytic[idx]), numeric, noise))
            checked += 1
        if checked < limit:
            raise AssertionError(f"input {k}: only {checked} of {limit} probes avoided a kink")
    return worst


def op_cases(rng):
    """(name, scalar loss, inputs, kink pattern or None) for every differentiable op."""
    w = lambda *s: rng.normal(size=s)  # noqa: E731
    yield "add", projected(dc.add, w(3, 4)), [w(3, 4), w(3, 4)], None
    yield "sub", projected(dc.sub, w(3, 4)), [w(3, 4), w(3, 4)], None
    yield "mul", projected(dc.mul, w(3, 4)), [w(3, 4), w(3, 4)], None
    yield "scale", projected(lambda a: dc.scale(a, -1.7), w(5)), [w(5)], None
    yield "bias_add", projected(lambda x, b: dc.bias_add(x, b, axis=1), w(2, 3, 4)), [w(2, 3, 4), w(3)], None
    yield "reshape", projected(lambda x: dc.reshape(x, (6, 2)), w(6, 2)), [w(3, 4)], None
    yield "transpose", projected(lambda x: dc.transpose(x, (2, 0, 1)), w(4, 2, 3)), [w(2, 3, 4)], None
    yield "concat", projected(lambda a, b: dc.concat([a, b]), w(5, 3)), [w(2, 3), w(3, 3)], None
    yield "take_rows", projected(lambda a: dc.take_rows(a, 1, 3), w(2, 3)), [w(4, 3)], None
    yield "sum_all", lambda a: dc.sum_all(a), [w(3, 3)], None
    yield "mean_all", lambda a: dc.mean_all(a), [w(3, 3)], None
    yield "matmul", projected(dc.matmul, w(3, 5)), [w(3, 4), w(4, 5)], None
    yield (
        "conv1d",
        projected(lambda x, k: dc.conv1d(x, k, stride=1, padding=2), w(2, 3, 9)),
        [w(2, 2, 9), w(3, 2, 5)],
        None,
    )
    yield (
        "conv1d_strided",
        projected(lambda x, k: dc.conv1d(x, k, stride=2, padding=1), w(1, 2, 5)),
        [w(1, 3, 10), w(2, 3, 3)],
        None,
    )
    yield (
        "maxpool1d",
        projected(lambda x: dc.maxpool1d(x, 2)[0], w(2, 3, 4)),
        [w(2, 3, 9)],
        lambda arrs: dc.maxpool1d(dc.Tensor(arrs[0]), 2)[1].tobytes(),
    )
    yield "sigmoid", projected(dc.sigmoid, w(7)), [w(7) * 3], None
    yield "tanh", projected(dc.tanh, w(7)), [w(7) * 2], None
    yield "relu", projected(dc.relu, w(7)), [w(7)], lambda arrs: (arrs[0] > 0).tobytes()
    yield "mse_loss", lambda a, b: dc.mse_loss(a, b), [w(6), w(6)], None
    yield "l1_loss", lambda a, b: dc.l1_loss(a, b), [w(6), w(6)], lambda arrs: (arrs[0] > arrs[1]).tobytes()
    T, B, I, H = 6, 2, 2, 3
    yield (
        "lstm",
        projected(dc.lstm, w(T, B, H)),
        [w(T, B, I), w(I, 4 * H) * 0.5, w(H, 4 * H) * 0.5, w(4 * H)],
        None,
    )


OP_NAMES = [case[0] for case in op_cases(np.random.default_rng(0))]


def network_case(kind: str, seed: int, batch: int = 1):
    """Full generator (``"g"``) or discriminator (``"d"``) as a scalar loss of (input, *params).

    Parameters come from the seeded initialiser, the input is uniform on [0, 1]
    like normalised segments, and the output is projected on random weights.
    Returns (loss, arrays, rng, pattern, loss_scale); pattern is None for the
    smooth generator and loss_scale is sum |weight * output| at the base point.
    """
    rng = np.random.default_rng(seed)
    bundle = nets.init_bundle(seed)
    params = (bundle.g_pa if kind == "g" else bundle.d_a).arrays()
    names = list(params)
    x = rng.uniform(size=(batch, nets.SEGMENT_LEN))
    if kind == "g":
        forward, out_shape = nets.generator_forward, (batch, nets.SEGMENT_LEN)
    else:
        forward, out_shape = nets.discriminator_forward, (batch,)
    weights = rng.normal(size=out_shape)

    def loss(x_t, *param_t):
        return dc.sum_all(dc.mul(forward(dict(zip(names, param_t)), x_t), dc.Tensor(weights)))

    def pattern(arrays):
        # ReLU signs and pooling winners of every convolutional block
        x_a, p = arrays[0], dict(zip(names, arrays[1:]))
        h = dc.Tensor(x_a.reshape(batch, 1, nets.SEGMENT_LEN))
        parts = []
        for k in range(1, len(nets.CONV_CHANNELS)):
            h = dc.bias_add(dc.conv1d(h, dc.Tensor(p[f"conv{k}_w"]), padding=nets.PADDING), dc.Tensor(p[f"conv{k}_b"]), axis=1)
            parts.append((h.data > 0).tobytes())
            h, winners = dc.maxpool1d(dc.relu(h), nets.POOL)
            parts.append(winners.tobytes())
        return tuple(parts)

    arrays = [x] + [params[n] for n in names]
    out = forward(params, x).data
    loss_scale = float(np.abs(out * weights).sum())
    return loss, arrays, rng, (None if kind == "g" else pattern), loss_scale


def monotone_paths(n: int, m: int):
    """Every alignment path from (0, 0) to (n-1, m-1) using match/insert/delete steps."""
    if n == 1 and m == 1:
        yield ((0, 0),)
        return
    for di, dj in ((1, 0), (0, 1), (1, 1)):
        if n - di >= 1 and m - dj >= 1:
            for path in monotone_paths(n - di, m - dj):
                yield path + ((n - 1, m - 1),)


def brute_force_dtw(a, b) -> float:
    """Minimum cost over an explicit enumeration of all alignment paths."""
    return min(sum(abs(a[i] - b[j]) for i, j in path) for path in monotone_paths(len(a), len(b)))


def count_monotone_paths(n: int, m: int) -> int:
    """Delannoy number D(n-1, m-1): number of match/insert/delete paths."""
    p, q = n - 1, m - 1
    return sum(comb(p, k) * comb(q, k) * 2**k for k in range(min(p, q) + 1))


def elementwise_mean(bundles) -> dict[str, np.ndarray]:
    names = list(bundles[0].named_arrays())
    return {k: np.mean(np.stack([b.named_arrays()[k] for b in bundles]), axis=0) for k in names}


def pearson(a, b) -> float:
    return float(np.corrcoef(a, b)[0, 1])

