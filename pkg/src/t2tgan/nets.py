"""The four networks: generators P2A / A2P and discriminators D_A / D_P."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import checkpoint
from . import diffcore as dc

SEGMENT_LEN = 1000
HIDDEN = 50
CONV_CHANNELS = (1, 16, 32, 64, 128)
KERNEL = 5
PADDING = 2
POOL = 2
NETWORKS = ("g_pa", "g_ap", "d_a", "d_p")


class StructureError(ValueError):
    pass


class _ParamSet:
    """Dataclass mixin: named float64 arrays in declaration order."""

    def arrays(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray]):
        return cls(**{f.name: np.asarray(arrays[f.name], dtype=np.float64) for f in fields(cls)})

    def copy(self):
        return type(self).from_arrays({k: v.copy() for k, v in self.arrays().items()})


@dataclass
class GeneratorParams(_ParamSet):
    lstm1_w_ih: np.ndarray
    lstm1_w_hh: np.ndarray
    lstm1_b: np.ndarray
    lstm2_w_ih: np.ndarray
    lstm2_w_hh: np.ndarray
    lstm2_b: np.ndarray
    out_w: np.ndarray
    out_b: np.ndarray


@dataclass
class DiscriminatorParams(_ParamSet):
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    conv3_w: np.ndarray
    conv3_b: np.ndarray
    conv4_w: np.ndarray
    conv4_b: np.ndarray
    dense_w: np.ndarray
    dense_b: np.ndarray


def generator_shapes(hidden: int = HIDDEN) -> dict[str, tuple[int, ...]]:
    g = 4 * hidden
    return {
        "lstm1_w_ih": (1, g),
        "lstm1_w_hh": (hidden, g),
        "lstm1_b": (g,),
        "lstm2_w_ih": (hidden, g),
        "lstm2_w_hh": (hidden, g),
        "lstm2_b": (g,),
        "out_w": (hidden, 1),
        "out_b": (1,),
    }


def pooled_lengths(length: int = SEGMENT_LEN) -> list[int]:
    """Sequence length after each conv+pool block."""
    out = []
    for _ in range(len(CONV_CHANNELS) - 1):
        length = (length + 2 * PADDING - KERNEL) + 1
        length //= POOL
        out.append(length)
    return out


def discriminator_shapes() -> dict[str, tuple[int, ...]]:
    shapes = {}
    for k, (cin, cout) in enumerate(zip(CONV_CHANNELS[:-1], CONV_CHANNELS[1:]), start=1):
        shapes[f"conv{k}_w"] = (cout, cin, KERNEL)
        shapes[f"conv{k}_b"] = (cout,)
    shapes["dense_w"] = (CONV_CHANNELS[-1] * pooled_lengths()[-1], 1)
    shapes["dense_b"] = (1,)
    return shapes


def glorot_bound(shape: tuple[int, ...]) -> float:
    if len(shape) == 3:  # conv kernel [out, in, K]
        fan_in, fan_out = shape[1] * shape[2], shape[0] * shape[2]
    else:
        fan_in, fan_out = shape
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def _init(shapes: dict[str, tuple[int, ...]], rng: np.random.Generator, hidden: int | None = None):
    out = {}
    for name, shape in shapes.items():
        if len(shape) == 1:
            b = np.zeros(shape)
            if hidden is not None and name.startswith("lstm"):
                b[hidden : 2 * hidden] = 1.0  # forget gate
            out[name] = b
        else:
            bound = glorot_bound(shape)
            out[name] = rng.uniform(-bound, bound, size=shape)
    return out


@dataclass
class ModelBundle:
    g_pa: GeneratorParams
    g_ap: GeneratorParams
    d_a: DiscriminatorParams
    d_p: DiscriminatorParams
    opt: dict[str, dc.AdamState] = field(default_factory=dict)

    def networks(self) -> dict[str, _ParamSet]:
        return {name: getattr(self, name) for name in NETWORKS}

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for net, params in self.networks().items():
            for k, v in params.arrays().items():
                out[f"{net}.{k}"] = v
        return out

    @classmethod
    def from_named_arrays(cls, arrays: dict[str, np.ndarray]) -> "ModelBundle":
        check_structure(template_bundle().named_arrays(), arrays)
        parts = {net: {} for net in NETWORKS}
        for key, arr in arrays.items():
            net, name = key.split(".", 1)
            parts[net][name] = arr
        return cls(
            g_pa=GeneratorParams.from_arrays(parts["g_pa"]),
            g_ap=GeneratorParams.from_arrays(parts["g_ap"]),
            d_a=DiscriminatorParams.from_arrays(parts["d_a"]),
            d_p=DiscriminatorParams.from_arrays(parts["d_p"]),
        )

    def copy(self, with_optimizer: bool = True) -> "ModelBundle":
        return ModelBundle(
            g_pa=self.g_pa.copy(),
            g_ap=self.g_ap.copy(),
            d_a=self.d_a.copy(),
            d_p=self.d_p.copy(),
            opt={k: s.copy() for k, s in self.opt.items()} if with_optimizer else {},
        )


def check_structure(expected: dict[str, np.ndarray], got: dict[str, np.ndarray]) -> None:
    """Raise ``StructureError`` naming the first parameter whose name or shape differs."""
    for (ek, ev), (gk, gv) in zip(expected.items(), got.items()):
        if ek != gk:
            raise StructureError(f"parameter mismatch: expected {ek!r}, found {gk!r}")
        if np.shape(ev) != np.shape(gv):
            raise StructureError(f"parameter {ek!r}: shape {np.shape(gv)} != expected {np.shape(ev)}")
    if len(expected) != len(got):
        missing = [k for k in expected if k not in got] or [k for k in got if k not in expected]
        raise StructureError(f"parameter count differs ({len(got)} vs {len(expected)}); first: {missing[0]!r}")


def init_bundle(seed: int) -> ModelBundle:
    """Glorot-uniform weights, zero biases, forget-gate bias 1."""
    streams = np.random.SeedSequence(seed).spawn(len(NETWORKS))
    rngs = {name: np.random.default_rng(s) for name, s in zip(NETWORKS, streams)}
    return ModelBundle(
        g_pa=GeneratorParams.from_arrays(_init(generator_shapes(), rngs["g_pa"], HIDDEN)),
        g_ap=GeneratorParams.from_arrays(_init(generator_shapes(), rngs["g_ap"], HIDDEN)),
        d_a=DiscriminatorParams.from_arrays(_init(discriminator_shapes(), rngs["d_a"])),
        d_p=DiscriminatorParams.from_arrays(_init(discriminator_shapes(), rngs["d_p"])),
    )


def zero_bundle() -> ModelBundle:
    zeros = lambda shapes: {k: np.zeros(s) for k, s in shapes.items()}  # noqa: E731
    return ModelBundle(
        g_pa=GeneratorParams.from_arrays(zeros(generator_shapes())),
        g_ap=GeneratorParams.from_arrays(zeros(generator_shapes())),
        d_a=DiscriminatorParams.from_arrays(zeros(discriminator_shapes())),
        d_p=DiscriminatorParams.from_arrays(zeros(discriminator_shapes())),
    )


_TEMPLATE: ModelBundle | None = None


def template_bundle() -> ModelBundle:
    global _TEMPLATE
    if _TEMPLATE is None:
        _TEMPLATE = zero_bundle()
    return _TEMPLATE


# ---------------------------------------------------------------------------
# forward passes


def _batch(x, what: str) -> dc.Tensor:
    x = dc.as_tensor(x)
    if x.data.ndim == 1:
        x = dc.reshape(x, (1, x.shape[0]))
    if x.data.ndim != 2 or x.shape[1] != SEGMENT_LEN:
        raise dc.ShapeError(f"{what}: expected segments of length {SEGMENT_LEN}, got shape {x.shape}")
    return x


def _tensors(params, requires_grad: bool) -> dict[str, dc.Tensor]:
    if isinstance(params, dict):
        return {k: dc.as_tensor(v) for k, v in params.items()}
    arrays = params.arrays()
    return dc.parameters(arrays) if requires_grad else dc.constants(arrays)


def generator_forward(params, x) -> dc.Tensor:
    """Map segments [B, 1000] (or one [1000] segment) to translated segments [B, 1000].

    ``params`` is a ``GeneratorParams`` (treated as constants) or a dict of
    tensors, which lets callers differentiate through it.
    """
    p = _tensors(params, requires_grad=False)
    x = _batch(x, "generator_forward")
    B, T = x.shape
    seq = dc.reshape(dc.transpose(x, (1, 0)), (T, B, 1))
    h = dc.lstm(seq, p["lstm1_w_ih"], p["lstm1_w_hh"], p["lstm1_b"])
    h = dc.lstm(h, p["lstm2_w_ih"], p["lstm2_w_hh"], p["lstm2_b"])
    y = dc.matmul(dc.reshape(h, (T * B, HIDDEN)), p["out_w"])
    y = dc.bias_add(y, p["out_b"])
    y = dc.transpose(dc.reshape(y, (T, B)), (1, 0))
    return dc.sigmoid(y)


def discriminator_forward(params, x, return_lengths: bool = False):
    """Score segments [B, 1000] as real (near 1) or generated (near 0); returns [B]."""
    p = _tensors(params, requires_grad=False)
    x = _batch(x, "discriminator_forward")
    B = x.shape[0]
    h = dc.reshape(x, (B, 1, SEGMENT_LEN))
    lengths = []
    for k in range(1, len(CONV_CHANNELS)):
        h = dc.conv1d(h, p[f"conv{k}_w"], stride=1, padding=PADDING)
        h = dc.bias_add(h, p[f"conv{k}_b"], axis=1)
        h = dc.relu(h)
        h, _ = dc.maxpool1d(h, POOL)
        lengths.append(h.shape[-1])
    flat = dc.reshape(h, (B, h.shape[1] * h.shape[2]))
    score = dc.bias_add(dc.matmul(flat, p["dense_w"]), p["dense_b"])
    score = dc.sigmoid(dc.reshape(score, (B,)))
    return (score, lengths) if return_lengths else score


def generate(params: GeneratorParams, x: np.ndarray, chunk: int = 64) -> np.ndarray:
    """Inference helper: plain arrays in, plain arrays out."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None] if single else x
    outs = [generator_forward(params, x2[i : i + chunk]).data for i in range(0, len(x2), chunk)]
    y = np.concatenate(outs, axis=0) if outs else np.empty((0, SEGMENT_LEN))
    return y[0] if single else y


# ---------------------------------------------------------------------------
# persistence


def save_bundle(path: str | Path, bundle: ModelBundle) -> Path:
    return checkpoint.save(path, bundle.named_arrays())


def load_bundle(path: str | Path) -> ModelBundle:
    return ModelBundle.from_named_arrays(checkpoint.load(path))
