"""Simulated federated training: shards stay on clients, only weights move."""

from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .nets import ModelBundle, StructureError, check_structure, init_bundle, save_bundle
from .signals import DatasetTensor
from .training import AdamConfig, LossBreakdown, LossWeights, TrainingError, train_epoch

log = logging.getLogger(__name__)

# stream tags for SeedSequence([seed, tag, ...])
_INIT, _SHUFFLE, _SELECT, _CLIENT = 1, 2, 3, 4


def derived_seed(seed: int, *path: int) -> np.random.SeedSequence:
    """Counter-style child seed: the same (seed, path) always gives the same stream."""
    return np.random.SeedSequence([int(seed), *map(int, path)])


def init_seed(seed: int) -> int:
    """Integer seed for the initial global bundle."""
    return int(derived_seed(seed, _INIT).generate_state(1, np.uint32)[0])


def client_rng(seed: int, client_id: int) -> np.random.Generator:
    """Batch-order generator owned by one client for the whole run."""
    return np.random.default_rng(derived_seed(seed, _CLIENT, client_id))


@dataclass(frozen=True)
class FederationConfig:
    n_clients: int = 20
    clients_per_round: int = 6
    rounds: int = 10
    local_epochs: int = 5
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        for f in fields(self):
            if f.name == "seed":
                continue
            v = getattr(self, f.name)
            if f.name == "rounds":
                if not isinstance(v, int) or v < 0:
                    raise ValueError(f"rounds must be a non-negative int, got {v!r}")
            elif not isinstance(v, int) or v < 1:
                raise ValueError(f"{f.name} must be a positive int, got {v!r}")
        if self.clients_per_round > self.n_clients:
            raise ValueError(
                f"clients_per_round ({self.clients_per_round}) exceeds n_clients ({self.n_clients})"
            )


@dataclass
class ClientState:
    id: int
    shard: DatasetTensor
    bundle: ModelBundle
    rng: np.random.Generator = field(repr=False, default=None)


@dataclass
class RoundLog:
    round: int
    selected: list[int]
    client_losses: dict[int, LossBreakdown]
    aggregation_seconds: float
    # optimizer updates each client applied this round (from its Adam step counter)
    client_steps: dict[int, int] = field(default_factory=dict)

    @property
    def mean_losses(self) -> LossBreakdown:
        return LossBreakdown.mean([self.client_losses[c] for c in sorted(self.client_losses)])


ROUND_COLUMNS = (
    ["round", "clients", "client_steps"] + [f.name for f in fields(LossBreakdown)] + ["aggregation_seconds"]
)


# ---------------------------------------------------------------------------
# protocol pieces


def partition_indices(n_items: int, n: int, rng: np.random.Generator) -> list[np.ndarray]:
    if n < 1:
        raise ValueError("number of shards must be positive")
    if n_items < n:
        raise ValueError(f"cannot split {n_items} segments into {n} non-empty shards")
    order = rng.permutation(n_items)
    size = n_items // n
    return [order[k * size : (k + 1) * size] for k in range(n)]


def partition_dataset(dataset, n: int, seed) -> list:
    """Shuffle with ``seed`` then cut into ``n`` equal shards; the remainder is dropped.

    ``dataset`` is a ``DatasetTensor`` (shards are ``DatasetTensor``) or any
    sequence (shards are lists).
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    parts = partition_indices(len(dataset), n, rng)
    if isinstance(dataset, DatasetTensor):
        return [dataset.subset(idx) for idx in parts]
    return [[dataset[i] for i in idx] for idx in parts]


def select_clients(n_clients: int, k: int, rng: np.random.Generator) -> list[int]:
    if not 1 <= k <= n_clients:
        raise ValueError(f"cannot select {k} of {n_clients} clients")
    return [int(i) for i in rng.choice(n_clients, size=k, replace=False)]


def aggregate(bundles: Sequence[ModelBundle]) -> ModelBundle:
    """Unweighted mean of every parameter array, reduced in the given order.

    Callers pass bundles sorted by client id. The mean is accumulated as
    m += (x - m) / k, which keeps a set of identical bundles bit-identical and
    sends {w, -w} exactly to zero. The result carries no optimizer state.
    """
    if not bundles:
        raise ValueError("nothing to aggregate")
    reference = bundles[0].named_arrays()
    for b in bundles[1:]:
        check_structure(reference, b.named_arrays())
    mean = {k: v.copy() for k, v in reference.items()}
    for k, b in enumerate(bundles[1:], start=2):
        for name, arr in b.named_arrays().items():
            m = mean[name]
            m += (arr - m) / k
    return ModelBundle.from_named_arrays(mean)


def broadcast(global_bundle: ModelBundle, clients: Sequence[ClientState]) -> list[ClientState]:
    """Overwrite each client's weights with copies of the global ones.

    Shards and client-local optimizer state and batch-order generators are kept.
    """
    reference = global_bundle.named_arrays()
    out = []
    for c in clients:
        check_structure(reference, c.bundle.named_arrays())
        fresh = global_bundle.copy(with_optimizer=False)
        fresh.opt = c.bundle.opt
        out.append(ClientState(id=c.id, shard=c.shard, bundle=fresh, rng=c.rng))
    return out


def train_client(
    client: ClientState,
    epochs: int,
    batch_size: int,
    weights: LossWeights = LossWeights(),
    adam: AdamConfig = AdamConfig(),
) -> tuple[ClientState, LossBreakdown]:
    """Run ``epochs`` local epochs; returns the updated client and its last-epoch losses."""
    bundle = client.bundle
    losses = LossBreakdown()
    for _ in range(epochs):
        bundle, losses = train_epoch(bundle, client.shard, client.rng, batch_size, weights, adam)
    return ClientState(id=client.id, shard=client.shard, bundle=bundle, rng=client.rng), losses


def _train_remote(args):
    # worker entry point; the generator travels as its bit-generator state
    client, rng_state, epochs, batch_size, weights, adam = args
    rng = np.random.default_rng()
    rng.bit_generator.state = rng_state
    client.rng = rng
    updated, losses = train_client(client, epochs, batch_size, weights, adam)
    state = updated.rng.bit_generator.state
    updated.rng = None
    return updated, state, losses


# ---------------------------------------------------------------------------
# driver


def make_clients(dataset: DatasetTensor, config: FederationConfig, initial: ModelBundle) -> list[ClientState]:
    shards = partition_dataset(dataset, config.n_clients, np.random.default_rng(derived_seed(config.seed, _SHUFFLE)))
    return [
        ClientState(id=i, shard=s, bundle=initial.copy(with_optimizer=False), rng=client_rng(config.seed, i))
        for i, s in enumerate(shards)
    ]


def run_federation(
    dataset: DatasetTensor,
    config: FederationConfig = FederationConfig(),
    weights: LossWeights = LossWeights(),
    adam: AdamConfig = AdamConfig(),
    out_dir: str | Path | None = None,
    workers: int = 1,
    initial: ModelBundle | None = None,
) -> tuple[ModelBundle, list[RoundLog]]:
    """Select, broadcast, train locally, aggregate; repeated ``config.rounds`` times.

    The result depends only on (dataset, config, weights, adam): clients own
    their generators, and aggregation order is ascending client id whatever
    order workers finish in. With ``out_dir`` set, ``global_round_<R>.ckpt`` and
    ``rounds.csv`` are written after every round.
    """
    global_bundle = initial.copy(with_optimizer=False) if initial is not None else init_bundle(init_seed(config.seed))
    clients = make_clients(dataset, config, global_bundle)
    select_rng = np.random.default_rng(derived_seed(config.seed, _SELECT))
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "rounds.csv").unlink(missing_ok=True)
    logs: list[RoundLog] = []
    pool = ProcessPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for r in range(1, config.rounds + 1):
            selected = select_clients(config.n_clients, config.clients_per_round, select_rng)
            chosen = sorted(selected)
            synced = broadcast(global_bundle, [clients[i] for i in chosen])
            try:
                trained = _train_round(synced, config, weights, adam, pool)
            except TrainingError as exc:
                raise TrainingError(f"round {r}: {exc}") from exc
            for c, _ in trained:
                clients[c.id] = c
            t0 = time.perf_counter()
            global_bundle = aggregate([c.bundle for c, _ in trained])
            elapsed = time.perf_counter() - t0
            steps = {
                c.id: _adam_steps(c.bundle) - _adam_steps(s.bundle) for s, (c, _) in zip(synced, trained)
            }
            entry = RoundLog(r, selected, {c.id: l for c, l in trained}, elapsed, steps)
            logs.append(entry)
            log.info("round %d clients %s total_g %.6f", r, chosen, entry.mean_losses.total_g)
            if out is not None:
                save_bundle(out / f"global_round_{r}.ckpt", global_bundle)
                append_round_log(out / "rounds.csv", entry)
    finally:
        if pool is not None:
            pool.shutdown()
    return global_bundle, logs


def _adam_steps(bundle: ModelBundle) -> int:
    state = bundle.opt.get("g_pa")
    return state.step if state is not None else 0


def _train_round(clients, config, weights, adam, pool):
    if pool is None:
        results = []
        for c in clients:
            try:
                results.append(train_client(c, config.local_epochs, config.batch_size, weights, adam))
            except TrainingError as exc:
                raise TrainingError(f"client {c.id}: {exc}") from exc
        return results
    jobs = []
    for c in clients:
        bare = ClientState(id=c.id, shard=c.shard, bundle=c.bundle, rng=None)
        args = (bare, c.rng.bit_generator.state, config.local_epochs, config.batch_size, weights, adam)
        jobs.append((c, pool.submit(_train_remote, args)))
    results = []
    for c, fut in jobs:
        try:
            updated, state, losses = fut.result()
        except TrainingError as exc:
            raise TrainingError(f"client {c.id}: {exc}") from exc
        c.rng.bit_generator.state = state
        updated.rng = c.rng
        results.append((updated, losses))
    return results


def append_round_log(path: str | Path, entry: RoundLog) -> None:
    path = Path(path)
    new = not path.exists() or path.stat().st_size == 0
    with path.open("a", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if new:
            w.writerow(ROUND_COLUMNS)
        w.writerow(
            [
                entry.round,
                ";".join(map(str, entry.selected)),
                ";".join(str(entry.client_steps.get(c, 0)) for c in entry.selected),
            ]
            + [repr(float(v)) for v in entry.mean_losses.as_row()]
            + [f"{entry.aggregation_seconds:.6f}"]
        )


def read_round_log(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(newline="") as fh:
        return list(csv.DictReader(fh))
