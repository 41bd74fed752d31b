import numpy as np
import pytest

from gradcheck import check_gradient

from peanets.core import RngStream
from peanets.errors import ConfigurationError
from peanets.network import (
    Gradients,
    LayerSpec,
    LayeredNet,
    apply_max_norm,
    backward,
    forward,
    init_network,
    load_checkpoint,
    save_checkpoint,
)
from peanets.noise import NoiseConfig, identity_noise, sample_noise, stack_noise
from peanets.checkpoint import CheckpointFormatError


def small_specs(max_norm=None):
    return [
        LayerSpec(6, 4, "relu", max_norm),
        LayerSpec(4, 4, "relu", max_norm),
        LayerSpec(4, 3, "identity", max_norm),
    ]


def make_net(seed, scale=0.7):
    """Random small net with weights large enough to flip some relus."""
    rng = RngStream(seed)
    net = init_network(small_specs(), rng)
    for i, w in enumerate(net.weights):
        net.weights[i] = rng.normal(size=w.shape, sigma=scale / np.sqrt(w.shape[0]))
        net.biases[i] = rng.normal(size=net.biases[i].shape, sigma=0.3)
    return LayeredNet(net.specs, net.weights, net.biases)


def noise_for(net, rng, cfg=None):
    cfg = cfg or NoiseConfig(
        drop_rate_input=0.2, drop_rate_hidden=0.5, input_sigma=0.1, bias_sigma=0.1
    )
    return sample_noise(cfg, net.layer_sizes(), rng)


# ---------------------------------------------------------------------------
# initialization


def test_init_parameter_count_wide_net():
    rng = RngStream(0)
    net = init_network(
        [LayerSpec(784, 800), LayerSpec(800, 800), LayerSpec(800, 10, "identity")],
        rng,
    )
    expected = 784 * 800 + 800 + 800 * 800 + 800 + 800 * 10 + 10
    assert net.num_params == expected


def test_init_same_seed_identical():
    a = init_network(small_specs(), RngStream(11))
    b = init_network(small_specs(), RngStream(11))
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    for ba, bb in zip(a.biases, b.biases):
        assert np.array_equal(ba, bb)


def test_init_weight_std_near_001():
    net = init_network([LayerSpec(400, 250), LayerSpec(250, 3, "identity")], RngStream(7))
    std = float(net.weights[0].std())  # 10^5 draws
    assert 0.0095 <= std <= 0.0105
    assert abs(float(net.weights[0].mean())) < 5e-4


def test_init_bias_values():
    net = init_network(small_specs(), RngStream(3))
    assert np.all(net.biases[0] == 0.1)
    assert np.all(net.biases[1] == 0.1)
    assert np.all(net.biases[2] == 0.0)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        LayerSpec(0, 4)
    with pytest.raises(ConfigurationError):
        LayerSpec(4, 4, "tanh")
    with pytest.raises(ConfigurationError):
        LayerSpec(4, 4, "relu", max_norm=0.0)
    with pytest.raises(ConfigurationError):
        LayeredNet(
            [LayerSpec(6, 4), LayerSpec(5, 3, "identity")],
            [np.zeros((6, 4)), np.zeros((5, 3))],
            [np.zeros(4), np.zeros(3)],
        )
    with pytest.raises(ConfigurationError):
        # output layer must be identity
        init_network([LayerSpec(6, 4), LayerSpec(4, 3)], RngStream(0))


# ---------------------------------------------------------------------------
# forward


def test_forward_identity_layer_passthrough():
    net = LayeredNet([LayerSpec(3, 3, "identity")], [np.eye(3)], [np.zeros(3)])
    x = np.array([0.4, -1.2, 2.0])
    trace = forward(net, x)
    assert np.array_equal(trace.logits, x)


def test_forward_identity_noise_equals_clean():
    net = make_net(21)
    x = RngStream(5).normal(size=6)
    clean = forward(net, x)
    noisy = forward(net, x, identity_noise(net.layer_sizes()))
    for a, b in zip(clean.outputs, noisy.outputs):
        assert np.array_equal(a, b)
    for a, b in zip(clean.agreement, noisy.agreement):
        assert np.array_equal(a, b)


def test_forward_matches_straight_line_reimplementation():
    net = make_net(33)
    rng = RngStream(91)
    x = rng.normal(size=6)
    noise = noise_for(net, rng.derive("noise"))
    trace = forward(net, x, noise)

    # deliberately naive re-computation, no shared code path
    z = (x + noise.input_noise) * noise.input_mask
    for i in range(3):
        a = np.zeros(net.specs[i].fan_out)
        for j in range(net.specs[i].fan_out):
            a[j] = net.biases[i][j]
            for k in range(net.specs[i].fan_in):
                a[j] += z[k] * net.weights[i][k, j]
        if i < 2:
            h = np.maximum(a + noise.bias_noise[i], 0.0)
            z = h * noise.hidden_masks[i]
        else:
            z = a
    assert np.max(np.abs(trace.logits - z)) <= 1e-12


def test_forward_agreement_strips_own_layer_noise():
    net = make_net(40)
    rng = RngStream(13)
    x = rng.normal(size=6)
    noise = noise_for(net, rng.derive("noise"))
    trace = forward(net, x, noise)
    # layer 0 agreement: activation of the clean affine of the noisy input
    z0 = (x + noise.input_noise) * noise.input_mask
    expected0 = np.maximum(z0 @ net.weights[0] + net.biases[0], 0.0)
    assert np.allclose(trace.agreement[0], expected0, rtol=0, atol=1e-13)
    # output agreement is the logits themselves (output layer unperturbed)
    assert np.array_equal(trace.agreement[-1], trace.logits)
    # hidden agreement differs from chained activation when bias noise is on
    assert not np.array_equal(trace.agreement[0], trace.activations[0])


def test_forward_batched_matches_per_row():
    net = make_net(55)
    rng = RngStream(56)
    xs = rng.normal(size=(5, 6))
    singles = [noise_for(net, rng.derive("row", r)) for r in range(5)]
    batch_trace = forward(net, xs, stack_noise(singles))
    for r in range(5):
        row_trace = forward(net, xs[r], singles[r])
        assert np.array_equal(batch_trace.logits[r], row_trace.logits)
        for i in range(3):
            assert np.array_equal(batch_trace.agreement[i][r], row_trace.agreement[i])


def test_forward_shape_errors():
    net = make_net(60)
    with pytest.raises(ValueError):
        forward(net, np.zeros(5))
    with pytest.raises(ValueError):
        forward(net, np.zeros((2, 2, 6)))
    with pytest.raises(ValueError):
        bad = identity_noise([7, 4, 4, 3])
        forward(net, np.zeros(6), bad)


# ---------------------------------------------------------------------------
# backward


def test_backward_zero_output_grad():
    net = make_net(70)
    trace = forward(net, RngStream(1).normal(size=6))
    grads = backward(net, trace, np.zeros(3))
    assert all(np.all(g == 0) for g in grads.weights)
    assert all(np.all(g == 0) for g in grads.biases)


def test_backward_masked_unit_gets_zero_incoming_gradient():
    net = make_net(71)
    rng = RngStream(72)
    x = rng.normal(size=6)
    noise = noise_for(net, rng.derive("noise"))
    noise.hidden_masks[0][1] = 0.0
    trace = forward(net, x, noise)
    grads = backward(net, trace, np.ones(3))
    assert np.all(grads.weights[0][:, 1] == 0.0)
    assert grads.biases[0][1] == 0.0


def test_backward_rejects_mismatched_shapes():
    net = make_net(73)
    trace = forward(net, np.zeros(6))
    with pytest.raises(ValueError):
        backward(net, trace, np.zeros(4))
    with pytest.raises(ValueError):
        backward(net, trace, np.zeros(3), agreement_grads={2: np.zeros(3)})


def _quadratic_loss_and_grads(net, x, noise, targets, agree_targets):
    """0.5||logits - t||^2 plus 0.5 sum_i ||agreement_i - s_i||^2."""
    trace = forward(net, x, noise)
    loss = 0.5 * float(((trace.logits - targets) ** 2).sum())
    agrees = {}
    for i, s in agree_targets.items():
        loss += 0.5 * float(((trace.agreement[i] - s) ** 2).sum())
        agrees[i] = trace.agreement[i] - s
    grads = backward(net, trace, trace.logits - targets, agreement_grads=agrees)
    return loss, grads


def _relu_margin(trace):
    m = np.inf
    for a in trace.affine[:-1] + trace.noisy_affine[:-1]:
        m = min(m, float(np.min(np.abs(a))))
    return m


def test_backward_matches_finite_differences():
    checked = 0
    seed = 0
    while checked < 24:
        seed += 1
        net = make_net(1000 + seed)
        rng = RngStream(2000 + seed)
        x = rng.normal(size=6)
        noise = None if checked % 2 == 0 else noise_for(net, rng.derive("noise"))
        targets = rng.normal(size=3)
        agree_targets = {0: rng.normal(size=4)} if checked % 3 == 0 else {}
        base_trace = forward(net, x, noise)
        if _relu_margin(base_trace) < 1e-3:
            continue  # a +-1e-5 probe must not cross a rectifier kink

        loss, grads = _quadratic_loss_and_grads(net, x, noise, targets, agree_targets)

        def loss_at(vector, net=net, x=x, noise=noise, targets=targets, agree=agree_targets):
            probe = net.copy()
            probe.set_flat_params(vector)
            value, _ = _quadratic_loss_and_grads(probe, x, noise, targets, agree)
            return value

        rel = check_gradient(loss_at, net.get_flat_params(), grads.flat())
        assert rel <= 1e-4, f"instance {checked}: relative error {rel}"
        checked += 1


def test_backward_batched_equals_sum_of_rows():
    net = make_net(80)
    rng = RngStream(81)
    xs = rng.normal(size=(4, 6))
    singles = [noise_for(net, rng.derive("row", r)) for r in range(4)]
    out_grads = rng.normal(size=(4, 3))
    agree = rng.normal(size=(4, 4))

    batch_trace = forward(net, xs, stack_noise(singles))
    got = backward(net, batch_trace, out_grads, agreement_grads={0: agree})

    want = Gradients.zeros_like(net)
    for r in range(4):
        trace = forward(net, xs[r], singles[r])
        want.add_(backward(net, trace, out_grads[r], agreement_grads={0: agree[r]}))
    for a, b in zip(got.weights + got.biases, want.weights + want.biases):
        assert np.allclose(a, b, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# max-norm projection


def test_max_norm_rescales_only_violating_columns():
    net = init_network(small_specs(max_norm=3.5), RngStream(9))
    net.weights[0][:, 0] = 0.0
    net.weights[0][0, 0] = 7.0  # column norm 7
    net.weights[0][:, 1] = 0.0
    net.weights[0][0, 1] = 1.0  # column norm 1
    before = net.weights[0][:, 1].copy()
    apply_max_norm(net)
    assert abs(np.linalg.norm(net.weights[0][:, 0]) - 3.5) < 1e-12
    assert np.array_equal(net.weights[0][:, 1], before)
    assert net.max_column_norm() <= 3.5 + 1e-6


def test_max_norm_idempotent():
    net = init_network(small_specs(max_norm=0.05), RngStream(10))
    for w in net.weights:
        w *= 40.0
    apply_max_norm(net)
    once = [w.copy() for w in net.weights]
    apply_max_norm(net)
    for a, b in zip(net.weights, once):
        assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_max_norm_ignores_unconstrained_layers():
    net = make_net(12)
    before = [w.copy() for w in net.weights]
    apply_max_norm(net)
    for a, b in zip(net.weights, before):
        assert np.array_equal(a, b)
    assert net.max_column_norm() == 0.0


# ---------------------------------------------------------------------------
# parameter vector round trip and checkpointing


def test_flat_params_round_trip():
    net = make_net(14)
    vec = net.get_flat_params()
    other = init_network(small_specs(), RngStream(999))
    other.set_flat_params(vec)
    for a, b in zip(net.weights, other.weights):
        assert np.array_equal(a, b)
    assert np.array_equal(vec, other.get_flat_params())


def test_checkpoint_round_trip(tmp_path):
    net = init_network(small_specs(max_norm=3.5), RngStream(17))
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    loaded = load_checkpoint(path)
    assert [s.fan_in for s in loaded.specs] == [6, 4, 4]
    assert [s.max_norm for s in loaded.specs] == [3.5, 3.5, 3.5]
    for a, b in zip(net.weights, loaded.weights):
        assert np.array_equal(a, b)
    for a, b in zip(net.biases, loaded.biases):
        assert np.array_equal(a, b)


def test_checkpoint_rejects_corruption(tmp_path):
    net = init_network(small_specs(), RngStream(18))
    path = tmp_path / "net.ckpt"
    save_checkpoint(net, path)
    blob = path.read_bytes()
    (tmp_path / "bad_magic.ckpt").write_bytes(b"XX" + blob[2:])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "bad_magic.ckpt")
    (tmp_path / "truncated.ckpt").write_bytes(blob[:-16])
    with pytest.raises(CheckpointFormatError):
        load_checkpoint(tmp_path / "truncated.ckpt")
