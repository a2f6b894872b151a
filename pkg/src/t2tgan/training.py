"""Cycle-consistent adversarial objective and the per-batch training procedure."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import diffcore as dc
from .nets import (
    DiscriminatorParams,
    GeneratorParams,
    ModelBundle,
    discriminator_forward,
    generator_forward,
)


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LossWeights:
    lambda_c: float = 10.0
    lambda_i: float = 5.0

    def __post_init__(self):
        if self.lambda_c < 0 or self.lambda_i < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class LossBreakdown:
    adv_pa: float = math.nan
    adv_ap: float = math.nan
    cycle: float = math.nan
    identity: float = math.nan
    total_g: float = math.nan
    d_a_loss: float = math.nan
    d_p_loss: float = math.nan

    def merged(self, other: "LossBreakdown") -> "LossBreakdown":
        """Fill fields that are NaN here from ``other``."""
        return LossBreakdown(
            **{
                f.name: getattr(other, f.name) if math.isnan(getattr(self, f.name)) else getattr(self, f.name)
                for f in fields(self)
            }
        )

    @staticmethod
    def mean(items: Sequence["LossBreakdown"]) -> "LossBreakdown":
        return LossBreakdown(
            **{f.name: float(np.mean([getattr(i, f.name) for i in items])) for f in fields(LossBreakdown)}
        )

    def as_row(self) -> list[float]:
        return [getattr(self, f.name) for f in fields(self)]


LOSS_COLUMNS = ["epoch"] + [f.name for f in fields(LossBreakdown)]


# ---------------------------------------------------------------------------
# loss terms


def adversarial_loss(score, target: float) -> dc.Tensor:
    """Least-squares adversarial term: mean of (score - target)^2 over the batch."""
    score = dc.as_tensor(score)
    return dc.mse_loss(score, np.full(score.shape, float(target)))


def cycle_loss(x, x_cyc) -> dc.Tensor:
    """Mean absolute reconstruction error for one translation direction."""
    return dc.l1_loss(x_cyc, x)


def identity_loss(x, g_same_x) -> dc.Tensor:
    """Mean absolute change a generator applies to a segment already in its output domain."""
    return dc.l1_loss(g_same_x, x)


def _batch_arrays(batch) -> tuple[np.ndarray, np.ndarray]:
    ppg, abp = batch
    ppg = np.atleast_2d(np.asarray(ppg, dtype=np.float64))
    abp = np.atleast_2d(np.asarray(abp, dtype=np.float64))
    if ppg.shape != abp.shape or ppg.shape[0] < 1:
        raise ValueError(f"batch channels must share a non-empty shape, got {ppg.shape} and {abp.shape}")
    return ppg, abp


def _finite(name: str, value: float) -> float:
    if not math.isfinite(value):
        raise TrainingError(f"non-finite {name} loss ({value})")
    return value


# ---------------------------------------------------------------------------
# generator side


@dataclass
class _GeneratorGraph:
    pa: dict[str, dc.Tensor]
    ap: dict[str, dc.Tensor]
    fake_abp: dc.Tensor
    idt_abp: dc.Tensor
    fake_ppg: dc.Tensor
    idt_ppg: dc.Tensor


def _generator_graph(bundle: ModelBundle, ppg: np.ndarray, abp: np.ndarray) -> _GeneratorGraph:
    B = ppg.shape[0]
    pa = dc.parameters(bundle.g_pa.arrays())
    ap = dc.parameters(bundle.g_ap.arrays())
    out_pa = generator_forward(pa, np.concatenate([ppg, abp]))
    out_ap = generator_forward(ap, np.concatenate([abp, ppg]))
    return _GeneratorGraph(
        pa=pa,
        ap=ap,
        fake_abp=dc.take_rows(out_pa, 0, B),
        idt_abp=dc.take_rows(out_pa, B, 2 * B),
        fake_ppg=dc.take_rows(out_ap, 0, B),
        idt_ppg=dc.take_rows(out_ap, B, 2 * B),
    )


def generator_losses(
    graph: _GeneratorGraph,
    d_a: DiscriminatorParams,
    d_p: DiscriminatorParams,
    ppg: np.ndarray,
    abp: np.ndarray,
    weights: LossWeights,
) -> tuple[dc.Tensor, dict[str, dc.Tensor]]:
    rec_ppg = generator_forward(graph.ap, graph.fake_abp)
    rec_abp = generator_forward(graph.pa, graph.fake_ppg)
    terms = {
        "adv_pa": adversarial_loss(discriminator_forward(d_a, graph.fake_abp), 1.0),
        "adv_ap": adversarial_loss(discriminator_forward(d_p, graph.fake_ppg), 1.0),
        "cycle": dc.add(cycle_loss(ppg, rec_ppg), cycle_loss(abp, rec_abp)),
        "identity": dc.add(identity_loss(abp, graph.idt_abp), identity_loss(ppg, graph.idt_ppg)),
    }
    total = dc.add(
        dc.add(dc.add(terms["adv_pa"], terms["adv_ap"]), dc.scale(terms["cycle"], weights.lambda_c)),
        dc.scale(terms["identity"], weights.lambda_i),
    )
    return total, terms


def _apply_generator_update(
    bundle: ModelBundle, graph: _GeneratorGraph, total: dc.Tensor, terms, adam: AdamConfig
) -> tuple[ModelBundle, LossBreakdown]:
    losses = LossBreakdown(**{k: _finite(k, v.item()) for k, v in terms.items()})
    losses.total_g = _finite("total_g", total.item())
    grads = dc.backward(total)
    opt = dict(bundle.opt)
    new = {}
    for net, leaves in (("g_pa", graph.pa), ("g_ap", graph.ap)):
        params = getattr(bundle, net).arrays()
        state = opt.get(net) or dc.AdamState.fresh(params)
        try:
            updated, opt[net] = dc.adam_step(
                params,
                dc.grads_by_name(grads, leaves.values()),
                state,
                lr=adam.lr,
                beta1=adam.beta1,
                beta2=adam.beta2,
                eps=adam.eps,
            )
        except dc.NonFiniteGradientError as exc:
            raise TrainingError(f"{net}: {exc}") from exc
        new[net] = GeneratorParams.from_arrays(updated)
    return (
        ModelBundle(g_pa=new["g_pa"], g_ap=new["g_ap"], d_a=bundle.d_a, d_p=bundle.d_p, opt=opt),
        losses,
    )


def generator_step(
    bundle: ModelBundle, batch, weights: LossWeights = LossWeights(), adam: AdamConfig = AdamConfig()
) -> tuple[ModelBundle, LossBreakdown]:
    """One Adam step on both generators against the current (frozen) discriminators."""
    ppg, abp = _batch_arrays(batch)
    graph = _generator_graph(bundle, ppg, abp)
    total, terms = generator_losses(graph, bundle.d_a, bundle.d_p, ppg, abp, weights)
    return _apply_generator_update(bundle, graph, total, terms, adam)


# ---------------------------------------------------------------------------
# discriminator side


def discriminator_loss(params, real, fake) -> dc.Tensor:
    """Average of the real->1 and generated->0 least-squares terms."""
    real = dc.as_tensor(real)
    B = real.shape[0]
    scores = discriminator_forward(params, dc.concat([real, dc.as_tensor(fake)]))
    return dc.scale(
        dc.add(
            adversarial_loss(dc.take_rows(scores, 0, B), 1.0),
            adversarial_loss(dc.take_rows(scores, B, scores.shape[0]), 0.0),
        ),
        0.5,
    )


def discriminator_step(
    bundle: ModelBundle, batch, adam: AdamConfig = AdamConfig(), fakes=None
) -> tuple[ModelBundle, LossBreakdown]:
    """One Adam step on D_A and D_P; generated segments enter as constants.

    ``fakes`` = (generated ABP, generated PPG) may be supplied when the caller
    already ran the generators on this batch.
    """
    ppg, abp = _batch_arrays(batch)
    if fakes is None:
        fake_abp = generator_forward(bundle.g_pa, ppg).data
        fake_ppg = generator_forward(bundle.g_ap, abp).data
    else:
        fake_abp, fake_ppg = (np.asarray(f, dtype=np.float64) for f in fakes)
    opt = dict(bundle.opt)
    new = {}
    losses = LossBreakdown()
    for net, real, fake, field_name in (
        ("d_a", abp, fake_abp, "d_a_loss"),
        ("d_p", ppg, fake_ppg, "d_p_loss"),
    ):
        params = getattr(bundle, net).arrays()
        leaves = dc.parameters(params)
        loss = discriminator_loss(leaves, real, fake)
        setattr(losses, field_name, _finite(field_name, loss.item()))
        grads = dc.grads_by_name(dc.backward(loss), leaves.values())
        state = opt.get(net) or dc.AdamState.fresh(params)
        try:
            updated, opt[net] = dc.adam_step(
                params, grads, state, lr=adam.lr, beta1=adam.beta1, beta2=adam.beta2, eps=adam.eps
            )
        except dc.NonFiniteGradientError as exc:
            raise TrainingError(f"{net}: {exc}") from exc
        new[net] = DiscriminatorParams.from_arrays(updated)
    return (
        ModelBundle(g_pa=bundle.g_pa, g_ap=bundle.g_ap, d_a=new["d_a"], d_p=new["d_p"], opt=opt),
        losses,
    )


# ---------------------------------------------------------------------------
# loops


def train_batch(
    bundle: ModelBundle, batch, weights: LossWeights = LossWeights(), adam: AdamConfig = AdamConfig()
) -> tuple[ModelBundle, LossBreakdown]:
    """Discriminator step followed by generator step.

    The generators' forward graph is built once: the discriminator update does
    not touch generator weights, so its generated inputs are exactly the ones
    the generator step would recompute.
    """
    ppg, abp = _batch_arrays(batch)
    graph = _generator_graph(bundle, ppg, abp)
    bundle, d_losses = discriminator_step(
        bundle, (ppg, abp), adam, fakes=(graph.fake_abp.data, graph.fake_ppg.data)
    )
    total, terms = generator_losses(graph, bundle.d_a, bundle.d_p, ppg, abp, weights)
    bundle, g_losses = _apply_generator_update(bundle, graph, total, terms, adam)
    return bundle, g_losses.merged(d_losses)


def train_epoch(
    bundle: ModelBundle,
    shard,
    rng: np.random.Generator,
    batch_size: int = 32,
    weights: LossWeights = LossWeights(),
    adam: AdamConfig = AdamConfig(),
) -> tuple[ModelBundle, LossBreakdown]:
    """Shuffle ``shard`` with ``rng`` and train on consecutive mini-batches.

    ``shard`` is anything with ``ppg`` and ``abp`` arrays of shape [N, 1000].
    Returns the updated bundle and the per-batch mean of the loss terms.
    """
    ppg = np.asarray(shard.ppg)
    abp = np.asarray(shard.abp)
    n = len(ppg)
    if n < 1:
        raise ValueError("cannot train on an empty shard")
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = rng.permutation(n)
    history = []
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        bundle, losses = train_batch(bundle, (ppg[idx], abp[idx]), weights, adam)
        history.append(losses)
    return bundle, LossBreakdown.mean(history)


def append_loss_log(path: str | Path, epoch: int, losses: LossBreakdown) -> None:
    """Append one row to a comma-separated loss log, writing the header on first use."""
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(LOSS_COLUMNS)
        w.writerow([epoch] + [repr(float(v)) for v in losses.as_row()])


def losses_to_dict(losses: LossBreakdown) -> dict[str, float]:
    return asdict(losses)
