"""Collaborative training protocols over an in-process message bus:
centralized pooling, federated averaging, sequential split execution, and
the hybrid of the two, with byte-exact communication accounting.

Every mode drives the same joint step (trunk forward, optional adapter,
optional transmission defense, server-side head update, trunk update), so a
single-client split or hybrid run reproduces the centralized parameter
trajectory exactly. Client heads always step with the server learning rate
and trunks with the client learning rate, in every mode.

Determinism: all randomness is drawn from streams keyed by
(seed, purpose, round, client rank), so results are independent of worker
scheduling. Parameter arrays are never mutated in place.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .data import ClientDataset
from .errors import DimensionError, ValidationError
from .model import TwoHeadModel, init_model
from .nn import (
    CUT_DIM,
    AdamState,
    AdapterCache,
    AdapterParams,
    HeadParams,
    TrunkParams,
    adam_step,
    adapter_backward,
    adapter_forward,
    adapter_to_dict,
    derive_rng,
    dict_to_adapter,
    dict_to_head,
    dict_to_trunk,
    forward_trunk,
    head_loss_backward,
    head_to_dict,
    init_adapter,
    param_count,
    trunk_backward,
    trunk_to_dict,
)

MODES = ("centralized", "fedavg", "split", "hybrid")

# Transmitted payloads are priced at 32-bit width regardless of the float64
# arithmetic used internally.
BYTES_PER_ELEMENT = 4

MESSAGE_KINDS = ("weights", "activations", "activation_grads", "labels")

# Two scalars (treatment, outcome) ride along with every transmitted batch.
LABEL_ELEMENTS_PER_ROW = 2


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class DefenseConfig:
    """Row-wise L2 clipping to ``clip_norm`` plus additive Gaussian noise."""

    clip_norm: float = math.inf
    noise_sigma: float = 0.0

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValidationError("clip_norm must be positive")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be non-negative")

    def is_noop(self) -> bool:
        return math.isinf(self.clip_norm) and self.noise_sigma == 0.0


def _active_defense(defense: DefenseConfig | None) -> DefenseConfig | None:
    if defense is None or defense.is_noop():
        return None
    return defense


@dataclass
class RoundConfig:
    """Protocol hyperparameters for one training run."""

    mode: str
    rounds: int = 5
    local_epochs: int = 1
    batch_size: int = 256
    lr_client: float = 1e-3
    lr_server: float = 1e-3
    defense: DefenseConfig | None = None
    personalization: bool = False
    participation: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode '{self.mode}'")
        if self.rounds < 1 or self.local_epochs < 1 or self.batch_size < 1:
            raise ValidationError("rounds, local_epochs, batch_size must be >= 1")
        if self.lr_client <= 0 or self.lr_server <= 0:
            raise ValidationError("learning rates must be positive")
        if not 0.0 < self.participation <= 1.0:
            raise ValidationError("participation must lie in (0, 1]")
        if self.personalization and self.mode != "hybrid":
            raise ValidationError("personalization adapters require hybrid mode")


# ---------------------------------------------------------------------------
# communication ledger


@dataclass(frozen=True)
class LedgerEntry:
    round: int
    direction: str
    kind: str
    n_elements: int
    n_bytes: int


class CommLedger:
    """Append-only record of transmitted payloads, priced at 4 bytes/element."""

    def __init__(self):
        self.entries: list[LedgerEntry] = []

    def record(self, round_idx: int, direction: str, kind: str, n_elements: int) -> None:
        if direction not in ("up", "down"):
            raise ValidationError(f"unknown direction '{direction}'")
        if kind not in MESSAGE_KINDS:
            raise ValidationError(f"unknown message kind '{kind}'")
        if n_elements < 0:
            raise ValidationError("element count must be non-negative")
        self.entries.append(
            LedgerEntry(
                round=int(round_idx),
                direction=direction,
                kind=kind,
                n_elements=int(n_elements),
                n_bytes=int(n_elements) * BYTES_PER_ELEMENT,
            )
        )

    def total_bytes(self) -> int:
        return sum(e.n_bytes for e in self.entries)

    def total_mb(self) -> float:
        return self.total_bytes() / 2**20

    def bytes_by_kind(self) -> dict[str, int]:
        out = {kind: 0 for kind in MESSAGE_KINDS}
        for e in self.entries:
            out[e.kind] += e.n_bytes
        return out

    def bytes_by_round(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for e in self.entries:
            out[e.round] = out.get(e.round, 0) + e.n_bytes
        return out

    def kinds_used(self) -> set[str]:
        return {e.kind for e in self.entries}


@dataclass(frozen=True)
class RoundRecord:
    round: int
    mean_loss: float
    bytes_delta: int


@dataclass
class TrainResult:
    """Final shared model, client-local adapters, traffic, and loss history."""

    model: TwoHeadModel
    adapters: dict[str, AdapterParams]
    ledger: CommLedger
    history: list[RoundRecord]


# ---------------------------------------------------------------------------
# protocol state


@dataclass
class ClientState:
    """Client-side view: local data, trunk (when held), optional adapter.

    Adapter parameters are client-local and are excluded from every
    outbound message.
    """

    client_id: str
    data: ClientDataset
    trunk: TrunkParams | None = None
    trunk_opt: AdamState | None = None
    adapter: AdapterParams | None = None
    adapter_opt: AdamState | None = None


@dataclass
class ServerState:
    """Server-side view: the heads always, a global trunk only outside pure
    split mode, and the communication ledger."""

    head1: HeadParams
    head0: HeadParams
    head1_opt: AdamState
    head0_opt: AdamState
    trunk: TrunkParams | None = None
    ledger: CommLedger = field(default_factory=CommLedger)


# ---------------------------------------------------------------------------
# defense


@dataclass
class _DefenseCache:
    z: np.ndarray
    norms: np.ndarray
    scale: np.ndarray
    clipped: np.ndarray


def _defense_forward(
    z: np.ndarray, defense: DefenseConfig, rng: np.random.Generator | None
) -> tuple[np.ndarray, _DefenseCache]:
    norms = np.linalg.norm(z, axis=1)
    with np.errstate(divide="ignore"):
        ratio = defense.clip_norm / norms
    scale = np.minimum(1.0, ratio)
    out = z * scale[:, None]
    if defense.noise_sigma > 0.0:
        if rng is None:
            raise ValidationError("defense noise requires a generator")
        out = out + defense.noise_sigma * rng.standard_normal(z.shape)
    return out, _DefenseCache(z=z, norms=norms, scale=scale, clipped=scale < 1.0)


def _defense_backward(cache: _DefenseCache, grad: np.ndarray) -> np.ndarray:
    # Exact Jacobian of the row rescaling; the additive noise is treated as a
    # constant (straight-through), so it does not appear here.
    out = grad * cache.scale[:, None]
    if cache.clipped.any():
        dot = np.einsum("ij,ij->i", cache.z, grad)
        norms_sq = np.where(cache.clipped, cache.norms**2, 1.0)
        adj = np.where(cache.clipped, cache.scale * dot / norms_sq, 0.0)
        out = out - adj[:, None] * cache.z
    return out


def apply_defense(
    z: np.ndarray, defense: DefenseConfig, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Clip each row to the defense norm, then add Gaussian noise.

    A no-op configuration (infinite clip, zero sigma) returns the input
    object unchanged, so undefended and "defense off" runs are bit-identical.
    """
    if defense.is_noop():
        return z
    out, _ = _defense_forward(np.asarray(z, dtype=np.float64), defense, rng)
    return out


def apply_adapter(z: np.ndarray, adapter: AdapterParams) -> np.ndarray:
    """Residual client-local correction at the cut representation."""
    z_tilde, _ = adapter_forward(adapter, np.asarray(z, dtype=np.float64))
    return z_tilde


def cut_representations(
    trunk: TrunkParams,
    x: np.ndarray,
    adapter: AdapterParams | None = None,
    defense: DefenseConfig | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """The cut-layer view an observer at the collaboration boundary sees:
    trunk output, adapter-corrected and defended exactly as transmitted."""
    z, _ = forward_trunk(trunk, x)
    if adapter is not None:
        z = apply_adapter(z, adapter)
    defense = _active_defense(defense)
    if defense is not None:
        z = apply_defense(z, defense, rng)
    return z


# ---------------------------------------------------------------------------
# the joint training step shared by every mode


@dataclass
class _NetState:
    trunk: TrunkParams
    head1: HeadParams
    head0: HeadParams
    trunk_opt: AdamState
    head1_opt: AdamState
    head0_opt: AdamState
    adapter: AdapterParams | None = None
    adapter_opt: AdamState | None = None


def _step(
    net: _NetState,
    x: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
    defense: DefenseConfig | None = None,
    noise_rng: np.random.Generator | None = None,
) -> float:
    """One mini-batch update of trunk, heads, and adapter. Mutates ``net``."""
    z, cache = forward_trunk(net.trunk, x)
    acache: AdapterCache | None = None
    if net.adapter is not None:
        z_t, acache = adapter_forward(net.adapter, z)
    else:
        z_t = z
    dcache: _DefenseCache | None = None
    if defense is not None:
        z_tx, dcache = _defense_forward(z_t, defense, noise_rng)
    else:
        z_tx = z_t

    loss, g_head1, g_head0, g_ztx = head_loss_backward(net.head1, net.head0, z_tx, t, y)
    h1, net.head1_opt = adam_step(head_to_dict(net.head1), g_head1, net.head1_opt)
    h0, net.head0_opt = adam_step(head_to_dict(net.head0), g_head0, net.head0_opt)
    net.head1 = dict_to_head(h1)
    net.head0 = dict_to_head(h0)

    g_zt = _defense_backward(dcache, g_ztx) if dcache is not None else g_ztx
    if net.adapter is not None:
        a_grads, g_z = adapter_backward(net.adapter, acache, g_zt)
        a_params, net.adapter_opt = adam_step(
            adapter_to_dict(net.adapter), a_grads, net.adapter_opt
        )
        net.adapter = dict_to_adapter(a_params)
    else:
        g_z = g_zt
    g_trunk = trunk_backward(net.trunk, cache, g_z)
    t_params, net.trunk_opt = adam_step(trunk_to_dict(net.trunk), g_trunk, net.trunk_opt)
    net.trunk = dict_to_trunk(t_params)
    return loss


def iter_batches(n: int, batch_size: int, rng: np.random.Generator):
    """Yield index arrays covering a shuffled permutation of range(n)."""
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


# ---------------------------------------------------------------------------
# aggregation


def fedavg_aggregate(
    param_sets: list[dict[str, np.ndarray]], sizes: list[int]
) -> dict[str, np.ndarray]:
    """Data-size-weighted coordinate-wise average of parameter dicts."""
    if not param_sets:
        raise ValidationError("nothing to aggregate")
    if len(sizes) != len(param_sets):
        raise DimensionError("one size per parameter set required")
    if any(s <= 0 for s in sizes):
        raise ValidationError("aggregation sizes must be positive")
    keys = set(param_sets[0])
    for params in param_sets[1:]:
        if set(params) != keys:
            raise DimensionError("parameter sets have mismatched keys")
        for key in keys:
            if np.shape(params[key]) != np.shape(param_sets[0][key]):
                raise DimensionError(f"shape mismatch for '{key}'")
    total = float(sum(sizes))
    out = {key: np.zeros_like(np.asarray(param_sets[0][key], dtype=np.float64)) for key in keys}
    for params, size in zip(param_sets, sizes):
        coeff = size / total
        for key in keys:
            out[key] = out[key] + np.asarray(params[key], dtype=np.float64) * coeff
    return out


# ---------------------------------------------------------------------------
# shared run helpers


def _trainable_clients(clients: list[ClientDataset]) -> list[ClientDataset]:
    trainable = [c for c in clients if c.n_train > 0]
    if not trainable:
        raise ValidationError("every client has an empty train split")
    for skipped in (c for c in clients if c.n_train == 0):
        warnings.warn(
            f"client '{skipped.client_id}' has no train rows; excluded from training",
            stacklevel=3,
        )
    return trainable


def _pooled_train(clients: list[ClientDataset]):
    x = np.vstack([c.x_train for c in clients])
    t = np.concatenate([c.t_train for c in clients])
    y = np.concatenate([c.y_train for c in clients])
    return x, t, y


def _select_participants(
    trainable: list[ClientDataset], config: RoundConfig, round_idx: int
) -> list[tuple[int, ClientDataset]]:
    if config.participation >= 1.0:
        return list(enumerate(trainable))
    count = max(1, math.ceil(config.participation * len(trainable)))
    rng = derive_rng(config.seed, "participation", round_idx)
    ranks = sorted(rng.choice(len(trainable), size=count, replace=False).tolist())
    return [(rank, trainable[rank]) for rank in ranks]


def _full_param_elements(model: TwoHeadModel) -> int:
    return (
        param_count(trunk_to_dict(model.trunk))
        + param_count(head_to_dict(model.head1))
        + param_count(head_to_dict(model.head0))
    )


# ---------------------------------------------------------------------------
# runs


def run_centralized(
    clients: list[ClientDataset], config: RoundConfig, on_round_end=None
) -> TrainResult:
    """Mini-batch training over the pooled train rows; zero communication."""
    trainable = _trainable_clients(clients)
    x, t, y = _pooled_train(trainable)
    model = init_model(x.shape[1], derive_rng(config.seed, "init"))
    net = _NetState(
        trunk=model.trunk,
        head1=model.head1,
        head0=model.head0,
        trunk_opt=AdamState(lr=config.lr_client),
        head1_opt=AdamState(lr=config.lr_server),
        head0_opt=AdamState(lr=config.lr_server),
    )
    ledger = CommLedger()
    history = []
    for r in range(config.rounds):
        rng_batch = derive_rng(config.seed, "batch", r, 0)
        losses = []
        for _ in range(config.local_epochs):
            for idx in iter_batches(x.shape[0], config.batch_size, rng_batch):
                losses.append(_step(net, x[idx], t[idx], y[idx]))
        history.append(RoundRecord(round=r, mean_loss=float(np.mean(losses)), bytes_delta=0))
        if on_round_end is not None:
            on_round_end(r, TwoHeadModel(net.trunk, net.head1, net.head0))
    return TrainResult(
        model=TwoHeadModel(net.trunk, net.head1, net.head0),
        adapters={},
        ledger=ledger,
        history=history,
    )


def run_fedavg(
    clients: list[ClientDataset], config: RoundConfig, on_round_end=None
) -> TrainResult:
    """Full-model local training with size-weighted averaging each round.

    Every participating client downloads the full model and uploads its
    locally trained copy; only weights ever cross the boundary. Client
    optimizer moments persist locally across rounds.
    """
    trainable = _trainable_clients(clients)
    d = trainable[0].x_train.shape[1]
    model = init_model(d, derive_rng(config.seed, "init"))
    global_trunk, global_h1, global_h0 = model.trunk, model.head1, model.head0
    w_elems = _full_param_elements(model)
    nets = [
        _NetState(
            trunk=global_trunk,
            head1=global_h1,
            head0=global_h0,
            trunk_opt=AdamState(lr=config.lr_client),
            head1_opt=AdamState(lr=config.lr_server),
            head0_opt=AdamState(lr=config.lr_server),
        )
        for _ in trainable
    ]
    ledger = CommLedger()
    history = []
    for r in range(config.rounds):
        participants = _select_participants(trainable, config, r)
        bytes_before = ledger.total_bytes()
        losses = []
        trunk_sets, h1_sets, h0_sets, sizes = [], [], [], []
        for rank, client in participants:
            ledger.record(r, "down", "weights", w_elems)
            net = nets[rank]
            net.trunk, net.head1, net.head0 = global_trunk, global_h1, global_h0
            rng_batch = derive_rng(config.seed, "batch", r, rank)
            for _ in range(config.local_epochs):
                for idx in iter_batches(client.n_train, config.batch_size, rng_batch):
                    losses.append(
                        _step(net, client.x_train[idx], client.t_train[idx], client.y_train[idx])
                    )
            ledger.record(r, "up", "weights", w_elems)
            trunk_sets.append(trunk_to_dict(net.trunk))
            h1_sets.append(head_to_dict(net.head1))
            h0_sets.append(head_to_dict(net.head0))
            sizes.append(client.n_train)
        global_trunk = dict_to_trunk(fedavg_aggregate(trunk_sets, sizes))
        global_h1 = dict_to_head(fedavg_aggregate(h1_sets, sizes))
        global_h0 = dict_to_head(fedavg_aggregate(h0_sets, sizes))
        history.append(
            RoundRecord(
                round=r,
                mean_loss=float(np.mean(losses)),
                bytes_delta=ledger.total_bytes() - bytes_before,
            )
        )
        if on_round_end is not None:
            on_round_end(r, TwoHeadModel(global_trunk, global_h1, global_h0))
    return TrainResult(
        model=TwoHeadModel(global_trunk, global_h1, global_h0),
        adapters={},
        ledger=ledger,
        history=history,
    )


def split_round(
    client: ClientState,
    server: ServerState,
    x: np.ndarray,
    t: np.ndarray,
    y: np.ndarray,
    round_idx: int = 0,
    defense: DefenseConfig | None = None,
    noise_rng: np.random.Generator | None = None,
) -> float:
    """One split-protocol batch: the client sends (defended) activations and
    labels up, the server updates its heads and returns the activation
    gradient, and the client updates its trunk (and adapter)."""
    if client.trunk is None or client.trunk_opt is None:
        raise ValidationError(f"client '{client.client_id}' does not hold a trunk")
    defense = _active_defense(defense)
    b = x.shape[0]
    server.ledger.record(round_idx, "up", "activations", b * CUT_DIM)
    server.ledger.record(round_idx, "up", "labels", b * LABEL_ELEMENTS_PER_ROW)
    net = _NetState(
        trunk=client.trunk,
        head1=server.head1,
        head0=server.head0,
        trunk_opt=client.trunk_opt,
        head1_opt=server.head1_opt,
        head0_opt=server.head0_opt,
        adapter=client.adapter,
        adapter_opt=client.adapter_opt,
    )
    loss = _step(net, x, t, y, defense, noise_rng)
    server.ledger.record(round_idx, "down", "activation_grads", b * CUT_DIM)
    client.trunk, client.trunk_opt = net.trunk, net.trunk_opt
    client.adapter, client.adapter_opt = net.adapter, net.adapter_opt
    server.head1, server.head1_opt = net.head1, net.head1_opt
    server.head0, server.head0_opt = net.head0, net.head0_opt
    return loss


def run_split(
    clients: list[ClientDataset], config: RoundConfig, on_round_end=None
) -> TrainResult:
    """Sequential split training: one trunk relayed client-to-client through
    the server, heads held by the server throughout.

    The relay is priced as weights traffic whenever the trunk changes hands;
    the final model is therefore order-sensitive by design. The server never
    retains trunk parameters.
    """
    trainable = _trainable_clients(clients)
    model0 = init_model(trainable[0].x_train.shape[1], derive_rng(config.seed, "init"))
    theta_elems = param_count(trunk_to_dict(model0.trunk))
    server = ServerState(
        head1=model0.head1,
        head0=model0.head0,
        head1_opt=AdamState(lr=config.lr_server),
        head0_opt=AdamState(lr=config.lr_server),
        trunk=None,
    )
    states = [ClientState(client_id=c.client_id, data=c) for c in trainable]
    states[0].trunk = model0.trunk
    states[0].trunk_opt = AdamState(lr=config.lr_client)
    holder = 0
    history = []
    for r in range(config.rounds):
        bytes_before = server.ledger.total_bytes()
        losses = []
        for k, cs in enumerate(states):
            if k != holder:
                server.ledger.record(r, "up", "weights", theta_elems)
                server.ledger.record(r, "down", "weights", theta_elems)
                cs.trunk, cs.trunk_opt = states[holder].trunk, states[holder].trunk_opt
                states[holder].trunk = None
                states[holder].trunk_opt = None
                holder = k
            rng_batch = derive_rng(config.seed, "batch", r, k)
            rng_noise = derive_rng(config.seed, "defense", r, k)
            data = cs.data
            for _ in range(config.local_epochs):
                for idx in iter_batches(data.n_train, config.batch_size, rng_batch):
                    losses.append(
                        split_round(
                            cs,
                            server,
                            data.x_train[idx],
                            data.t_train[idx],
                            data.y_train[idx],
                            round_idx=r,
                            defense=config.defense,
                            noise_rng=rng_noise,
                        )
                    )
        history.append(
            RoundRecord(
                round=r,
                mean_loss=float(np.mean(losses)),
                bytes_delta=server.ledger.total_bytes() - bytes_before,
            )
        )
        if on_round_end is not None:
            on_round_end(r, TwoHeadModel(states[holder].trunk, server.head1, server.head0))
    return TrainResult(
        model=TwoHeadModel(states[holder].trunk, server.head1, server.head0),
        adapters={},
        ledger=server.ledger,
        history=history,
    )


def run_hybrid(
    clients: list[ClientDataset], config: RoundConfig, on_round_end=None
) -> TrainResult:
    """Split execution with federated aggregation of the client trunks.

    Per round the server broadcasts the shared trunk; clients (in fixed
    order, sharing the one server head) run their local split batches, then
    upload their trunks for size-weighted averaging. Adapters, when enabled,
    stay on their clients and never enter a weights message.
    """
    trainable = _trainable_clients(clients)
    model0 = init_model(trainable[0].x_train.shape[1], derive_rng(config.seed, "init"))
    theta_elems = param_count(trunk_to_dict(model0.trunk))
    server = ServerState(
        head1=model0.head1,
        head0=model0.head0,
        head1_opt=AdamState(lr=config.lr_server),
        head0_opt=AdamState(lr=config.lr_server),
        trunk=model0.trunk,
    )
    states = []
    for rank, client in enumerate(trainable):
        adapter = None
        adapter_opt = None
        if config.personalization:
            adapter = init_adapter(derive_rng(config.seed, "adapter", rank))
            adapter_opt = AdamState(lr=config.lr_client)
        states.append(
            ClientState(
                client_id=client.client_id,
                data=client,
                trunk_opt=AdamState(lr=config.lr_client),
                adapter=adapter,
                adapter_opt=adapter_opt,
            )
        )
    history = []
    for r in range(config.rounds):
        participants = _select_participants(trainable, config, r)
        bytes_before = server.ledger.total_bytes()
        for _rank, _client in participants:
            server.ledger.record(r, "down", "weights", theta_elems)
        losses = []
        trunk_sets, sizes = [], []
        for rank, client in participants:
            cs = states[rank]
            cs.trunk = server.trunk
            rng_batch = derive_rng(config.seed, "batch", r, rank)
            rng_noise = derive_rng(config.seed, "defense", r, rank)
            for _ in range(config.local_epochs):
                for idx in iter_batches(client.n_train, config.batch_size, rng_batch):
                    losses.append(
                        split_round(
                            cs,
                            server,
                            client.x_train[idx],
                            client.t_train[idx],
                            client.y_train[idx],
                            round_idx=r,
                            defense=config.defense,
                            noise_rng=rng_noise,
                        )
                    )
            server.ledger.record(r, "up", "weights", theta_elems)
            trunk_sets.append(trunk_to_dict(cs.trunk))
            sizes.append(client.n_train)
        server.trunk = dict_to_trunk(fedavg_aggregate(trunk_sets, sizes))
        history.append(
            RoundRecord(
                round=r,
                mean_loss=float(np.mean(losses)),
                bytes_delta=server.ledger.total_bytes() - bytes_before,
            )
        )
        if on_round_end is not None:
            on_round_end(r, TwoHeadModel(server.trunk, server.head1, server.head0))
    adapters = {
        cs.client_id: cs.adapter for cs in states if cs.adapter is not None
    }
    return TrainResult(
        model=TwoHeadModel(server.trunk, server.head1, server.head0),
        adapters=adapters,
        ledger=server.ledger,
        history=history,
    )


RUNNERS = {
    "centralized": run_centralized,
    "fedavg": run_fedavg,
    "split": run_split,
    "hybrid": run_hybrid,
}


def run_protocol(clients: list[ClientDataset], config: RoundConfig, on_round_end=None) -> TrainResult:
    return RUNNERS[config.mode](clients, config, on_round_end=on_round_end)
