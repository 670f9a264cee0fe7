"""Tests for the training protocols, aggregation, defense, and ledger."""

import math

import numpy as np
import pytest

from fedsplit import collab, data, nn
from fedsplit.errors import DimensionError, ValidationError
from fedsplit.nn import derive_rng


def make_clients(n_clients=2, n_per_client=120, d=5, seed=7, shift=0.3):
    spec = data.synthetic_spec_from_scales(
        n_per_client=n_per_client,
        n_clients=n_clients,
        n_features=d,
        client_shift_scale=shift,
        effect_scale=1.0,
        propensity_scale=0.3,
        baseline_scale=0.6,
        rng=derive_rng(seed, "spec"),
    )
    table, _ = data.generate_synthetic(spec, derive_rng(seed, "draw"))
    splits = data.stratified_split(table, (0.7, 0.15, 0.15), derive_rng(seed, "split"))
    stats = data.fit_preprocess(table, splits.train)
    processed = data.preprocess_table(stats, table)
    return data.partition_clients(processed, splits)


def model_max_diff(a, b):
    pieces = [
        (nn.trunk_to_dict(a.trunk), nn.trunk_to_dict(b.trunk)),
        (nn.head_to_dict(a.head1), nn.head_to_dict(b.head1)),
        (nn.head_to_dict(a.head0), nn.head_to_dict(b.head0)),
    ]
    worst = 0.0
    for da, db in pieces:
        for key in da:
            worst = max(worst, float(np.max(np.abs(np.asarray(da[key]) - np.asarray(db[key])))))
    return worst


def config(mode, **kw):
    base = dict(rounds=3, local_epochs=1, batch_size=32, seed=13)
    base.update(kw)
    return collab.RoundConfig(mode=mode, **base)


# ---------------------------------------------------------------------------
# aggregation


def test_fedavg_aggregate_identical_inputs_idempotent():
    params = {"w": np.array([1.0, 2.0]), "b": np.array([0.5])}
    out = collab.fedavg_aggregate([params, params, params], [3, 5, 2])
    assert np.allclose(out["w"], params["w"])
    assert np.allclose(out["b"], params["b"])


def test_fedavg_aggregate_hand_value():
    # (1/4)*0 + (3/4)*4 = 3
    out = collab.fedavg_aggregate(
        [{"w": np.array([0.0])}, {"w": np.array([4.0])}], [1, 3]
    )
    assert out["w"][0] == 3.0


def test_fedavg_aggregate_single_client_identity():
    params = {"w": np.random.default_rng(0).normal(size=(3, 2))}
    out = collab.fedavg_aggregate([params], [17])
    assert np.array_equal(out["w"], params["w"])


def brute_force_weighted_mean(param_sets, sizes):
    total = float(sum(sizes))
    out = {}
    for key in param_sets[0]:
        shape = np.shape(param_sets[0][key])
        acc = np.zeros(shape)
        flat_acc = acc.ravel()
        for params, size in zip(param_sets, sizes):
            coeff = size / total
            flat = np.asarray(params[key], dtype=np.float64).ravel()
            for i in range(flat.size):
                flat_acc[i] = flat_acc[i] + flat[i] * coeff
        out[key] = acc
    return out


def test_fedavg_aggregate_matches_brute_force_bitwise():
    rng = np.random.default_rng(1)
    for trial in range(50):
        k = int(rng.integers(1, 6))
        shape = tuple(rng.integers(1, 5, size=int(rng.integers(1, 3))))
        param_sets = [
            {"w": rng.normal(size=shape), "b": rng.normal(size=2)} for _ in range(k)
        ]
        sizes = rng.integers(1, 100, size=k).tolist()
        fast = collab.fedavg_aggregate(param_sets, sizes)
        slow = brute_force_weighted_mean(param_sets, sizes)
        for key in fast:
            assert np.array_equal(fast[key], slow[key]), f"trial {trial} key {key}"


def test_fedavg_aggregate_validates():
    with pytest.raises(ValidationError):
        collab.fedavg_aggregate([], [])
    with pytest.raises(DimensionError):
        collab.fedavg_aggregate(
            [{"w": np.zeros(2)}, {"w": np.zeros(3)}], [1, 1]
        )
    with pytest.raises(ValidationError):
        collab.fedavg_aggregate([{"w": np.zeros(2)}], [0])


# ---------------------------------------------------------------------------
# defense


def test_apply_defense_identity_region_bit_exact():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(6, nn.CUT_DIM))
    z = z / np.linalg.norm(z, axis=1, keepdims=True) * 0.5  # all norms 0.5
    defended = collab.apply_defense(z, collab.DefenseConfig(clip_norm=1.0, noise_sigma=0.0))
    assert np.array_equal(defended, z)


def test_apply_defense_noop_returns_same_object():
    z = np.random.default_rng(3).normal(size=(4, nn.CUT_DIM))
    out = collab.apply_defense(z, collab.DefenseConfig(clip_norm=math.inf, noise_sigma=0.0))
    assert out is z


def test_apply_defense_clips_row_norm():
    z = np.zeros((1, nn.CUT_DIM))
    z[0, 0] = 2.0  # norm 2
    out = collab.apply_defense(z, collab.DefenseConfig(clip_norm=1.0, noise_sigma=0.0))
    assert np.allclose(out, z / 2.0)
    assert np.linalg.norm(out[0]) == pytest.approx(1.0)


def test_apply_defense_noise_variance():
    z = np.zeros((3200, nn.CUT_DIM))
    sigma = 0.05
    out = collab.apply_defense(
        z, collab.DefenseConfig(clip_norm=1.0, noise_sigma=sigma), derive_rng(0, "noise")
    )
    mean_sq = float(np.mean(out**2))  # > 1e5 draws
    assert abs(mean_sq - sigma**2) < 0.05 * sigma**2


def test_defense_backward_matches_finite_differences():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(5, nn.CUT_DIM)) * 2.0
    d = collab.DefenseConfig(clip_norm=1.0, noise_sigma=0.0)
    target = rng.normal(size=(5, nn.CUT_DIM))

    def objective(z_in):
        out, _ = collab._defense_forward(z_in, d, None)
        return 0.5 * float(np.sum((out - target) ** 2))

    out, cache = collab._defense_forward(z, d, None)
    grad = collab._defense_backward(cache, out - target)
    h = 1e-6
    for i, j in [(0, 0), (1, 5), (2, 31), (4, 16)]:
        zp, zm = z.copy(), z.copy()
        zp[i, j] += h
        zm[i, j] -= h
        fd = (objective(zp) - objective(zm)) / (2 * h)
        assert abs(fd - grad[i, j]) < 1e-5


def test_defense_config_validation():
    with pytest.raises(ValidationError):
        collab.DefenseConfig(clip_norm=0.0)
    with pytest.raises(ValidationError):
        collab.DefenseConfig(noise_sigma=-0.1)


# ---------------------------------------------------------------------------
# centralized


def test_centralized_ledger_empty():
    clients = make_clients(n_clients=1)
    result = collab.run_centralized(clients, config("centralized"))
    assert result.ledger.total_bytes() == 0
    assert result.ledger.total_mb() == 0.0


def test_centralized_loss_decreases_on_easy_problem():
    clients = make_clients(n_clients=1, n_per_client=400, seed=3)
    result = collab.run_centralized(
        clients, config("centralized", rounds=5, local_epochs=2, seed=1)
    )
    losses = [h.mean_loss for h in result.history]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_centralized_deterministic():
    clients = make_clients(n_clients=2)
    a = collab.run_centralized(clients, config("centralized"))
    b = collab.run_centralized(clients, config("centralized"))
    assert model_max_diff(a.model, b.model) == 0.0


# ---------------------------------------------------------------------------
# fedavg


def test_fedavg_ledger_closed_form():
    clients = make_clients(n_clients=3, d=5)
    cfg = config("fedavg", rounds=4)
    result = collab.run_fedavg(clients, cfg)
    w_elems = (64 * 5 + 64) + (32 * 64 + 32) + 2 * (32 + 1)
    assert result.ledger.total_bytes() == 2 * 4 * 3 * w_elems * 4
    assert result.ledger.kinds_used() == {"weights"}


def test_fedavg_single_client_matches_centralized():
    clients = make_clients(n_clients=1)
    cfg_f = config("fedavg", rounds=4, local_epochs=1)
    cfg_c = config("centralized", rounds=4, local_epochs=1)
    rf = collab.run_fedavg(clients, cfg_f)
    rc = collab.run_centralized(clients, cfg_c)
    assert model_max_diff(rf.model, rc.model) < 1e-9


def test_fedavg_partial_participation():
    clients = make_clients(n_clients=4, n_per_client=60)
    cfg = config("fedavg", participation=0.5, rounds=3)
    result = collab.run_fedavg(clients, cfg)
    w_elems = (64 * 5 + 64) + (32 * 64 + 32) + 66
    # 2 of 4 clients per round
    assert result.ledger.total_bytes() == 2 * 3 * 2 * w_elems * 4


# ---------------------------------------------------------------------------
# split


def test_split_single_client_matches_centralized_trajectory():
    clients = make_clients(n_clients=1)
    rs = collab.run_split(clients, config("split", rounds=4, local_epochs=2))
    rc = collab.run_centralized(clients, config("centralized", rounds=4, local_epochs=2))
    assert model_max_diff(rs.model, rc.model) < 1e-9


def test_split_per_batch_ledger_closed_form():
    clients = make_clients(n_clients=1, n_per_client=128)
    n_train = clients[0].n_train
    batch = 32
    cfg = config("split", rounds=2, local_epochs=1, batch_size=batch)
    result = collab.run_split(clients, cfg)
    n_batches = math.ceil(n_train / batch)
    # per batch: activations up + grads down (B*32*4 each) plus labels B*8;
    # single client -> no weight relay
    full, last = batch, n_train - batch * (n_batches - 1)
    per_round = (n_batches - 1) * (2 * full * 32 * 4 + full * 8) + (
        2 * last * 32 * 4 + last * 8
    )
    assert result.ledger.total_bytes() == 2 * per_round
    assert "weights" not in result.ledger.kinds_used()


def test_split_relay_counts_weight_traffic():
    clients = make_clients(n_clients=3)
    cfg = config("split", rounds=2)
    result = collab.run_split(clients, cfg)
    theta = (64 * 5 + 64) + (32 * 64 + 32)
    by_kind = result.ledger.bytes_by_kind()
    # handoffs: round 0 has 2 (c0->c1->c2), round 1 has 3 (c2->c0->c1->c2 start)
    assert by_kind["weights"] == 5 * 2 * theta * 4


def test_split_defense_off_matches_undefended():
    clients = make_clients(n_clients=2)
    cfg_none = config("split")
    cfg_noop = config("split", defense=collab.DefenseConfig(math.inf, 0.0))
    a = collab.run_split(clients, cfg_none)
    b = collab.run_split(clients, cfg_noop)
    assert model_max_diff(a.model, b.model) == 0.0


def test_split_client_order_sensitivity():
    clients = make_clients(n_clients=2, shift=0.8)
    cfg = config("split")
    forward = collab.run_split(clients, cfg)
    backward = collab.run_split(list(reversed(clients)), cfg)
    assert model_max_diff(forward.model, backward.model) > 0.0


def test_split_final_trunk_exposes_representations():
    clients = make_clients(n_clients=1)
    result = collab.run_split(clients, config("split"))
    z = collab.cut_representations(result.model.trunk, clients[0].x_test)
    assert z.shape == (clients[0].x_test.shape[0], nn.CUT_DIM)


# ---------------------------------------------------------------------------
# split_round as an exact computation partition


def test_split_round_equals_centralized_step():
    clients = make_clients(n_clients=1)
    client = clients[0]
    xb = client.x_train[:16]
    tb = client.t_train[:16]
    yb = client.y_train[:16]
    m = collab.init_model(5, derive_rng(0, "init"))

    # centralized-style step
    net = collab._NetState(
        trunk=m.trunk,
        head1=m.head1,
        head0=m.head0,
        trunk_opt=nn.AdamState(lr=1e-3),
        head1_opt=nn.AdamState(lr=1e-3),
        head0_opt=nn.AdamState(lr=1e-3),
    )
    loss_central = collab._step(net, xb, tb, yb)

    # split exchange on identical states
    m2 = collab.init_model(5, derive_rng(0, "init"))
    cs = collab.ClientState(
        client_id=client.client_id,
        data=client,
        trunk=m2.trunk,
        trunk_opt=nn.AdamState(lr=1e-3),
    )
    server = collab.ServerState(
        head1=m2.head1,
        head0=m2.head0,
        head1_opt=nn.AdamState(lr=1e-3),
        head0_opt=nn.AdamState(lr=1e-3),
    )
    loss_split = collab.split_round(cs, server, xb, tb, yb)
    assert loss_split == loss_central
    after_split = collab.TwoHeadModel(cs.trunk, server.head1, server.head0)
    after_central = collab.TwoHeadModel(net.trunk, net.head1, net.head0)
    assert model_max_diff(after_split, after_central) < 1e-9

    # ledger for that one batch: 2*B*32*4 + B*8
    assert server.ledger.total_bytes() == 2 * 16 * 32 * 4 + 16 * 8


def test_split_round_requires_trunk():
    clients = make_clients(n_clients=1)
    cs = collab.ClientState(client_id="a", data=clients[0])
    server = collab.ServerState(
        head1=nn.HeadParams(np.zeros(32), 0.0),
        head0=nn.HeadParams(np.zeros(32), 0.0),
        head1_opt=nn.AdamState(lr=1e-3),
        head0_opt=nn.AdamState(lr=1e-3),
    )
    with pytest.raises(ValidationError):
        collab.split_round(cs, server, clients[0].x_train[:4], np.zeros(4), np.zeros(4))


# ---------------------------------------------------------------------------
# hybrid


def test_hybrid_single_client_matches_split():
    clients = make_clients(n_clients=1)
    rh = collab.run_hybrid(clients, config("hybrid", rounds=4, local_epochs=2))
    rs = collab.run_split(clients, config("split", rounds=4, local_epochs=2))
    assert model_max_diff(rh.model, rs.model) < 1e-9


def test_hybrid_ledger_composition_and_adapter_exclusion():
    clients = make_clients(n_clients=2)
    cfg = config("hybrid", rounds=3, personalization=True)
    result = collab.run_hybrid(clients, cfg)
    theta = (64 * 5 + 64) + (32 * 64 + 32)
    by_kind = result.ledger.bytes_by_kind()
    # weights traffic is exactly trunk broadcast + upload: adapters excluded
    assert by_kind["weights"] == 2 * 3 * 2 * theta * 4
    assert by_kind["activations"] > 0
    assert by_kind["activation_grads"] == by_kind["activations"]
    assert len(result.adapters) == 2


def test_hybrid_defense_changes_model():
    clients = make_clients(n_clients=2)
    plain = collab.run_hybrid(clients, config("hybrid"))
    defended = collab.run_hybrid(
        clients, config("hybrid", defense=collab.DefenseConfig(1.0, 0.05))
    )
    assert model_max_diff(plain.model, defended.model) > 0.0


def test_hybrid_personalization_adapters_stay_local():
    clients = make_clients(n_clients=2)
    result = collab.run_hybrid(clients, config("hybrid", personalization=True))
    assert set(result.adapters) == {c.client_id for c in clients}
    # global model carries no adapter
    assert result.model.adapter is None


def test_personalization_outside_hybrid_rejected():
    with pytest.raises(ValidationError):
        config("split", personalization=True)


# ---------------------------------------------------------------------------
# determinism across all modes


@pytest.mark.parametrize("mode", collab.MODES)
def test_mode_determinism(mode):
    clients = make_clients(n_clients=2)
    cfg = config(mode, rounds=2)
    a = collab.run_protocol(clients, cfg)
    b = collab.run_protocol(clients, cfg)
    assert model_max_diff(a.model, b.model) == 0.0
    assert a.ledger.total_bytes() == b.ledger.total_bytes()
    assert [h.mean_loss for h in a.history] == [h.mean_loss for h in b.history]


def test_ledger_cumulative_totals_monotone():
    clients = make_clients(n_clients=2)
    result = collab.run_hybrid(clients, config("hybrid", rounds=3))
    running = 0
    for entry in result.ledger.entries:
        assert entry.n_bytes == entry.n_elements * collab.BYTES_PER_ELEMENT
        running += entry.n_bytes
    assert running == result.ledger.total_bytes()


def test_empty_clients_excluded_with_warning():
    clients = make_clients(n_clients=2)
    empty = data.ClientDataset(
        client_id="zz-empty",
        x_train=np.zeros((0, 5)),
        t_train=np.zeros(0, dtype=int),
        y_train=np.zeros(0, dtype=int),
        x_valid=np.zeros((0, 5)),
        t_valid=np.zeros(0, dtype=int),
        y_valid=np.zeros(0, dtype=int),
        x_test=np.zeros((0, 5)),
        t_test=np.zeros(0, dtype=int),
        y_test=np.zeros(0, dtype=int),
        train_rows=np.zeros(0, dtype=int),
        valid_rows=np.zeros(0, dtype=int),
        test_rows=np.zeros(0, dtype=int),
    )
    with pytest.warns(UserWarning, match="zz-empty"):
        result = collab.run_fedavg(clients + [empty], config("fedavg", rounds=1))
    assert result.model is not None
