from __future__ import annotations

import itertools

import numpy as np
import pytest

from common.errors import (
    CheckpointError,
    ConfigError,
    GridMismatchError,
    HeatmapError,
    NetworkShapeError,
    TrainingDivergedError,
)
from stages.network.checkpoint import check_compatible, load_checkpoint, save_checkpoint
from stages.network.layers import conv3_backward, conv3_forward, init_layer
from stages.network.metrics import landmark_errors_cm, pck, report_frame, score_heatmaps, summarize, write_metrics_csv
from stages.network.models import Conv3Layer, NetworkSpec, TrainingSample
from stages.network.posenet import (
    backward,
    build_posenet,
    forward,
    forward_arrays,
    loss,
    predict,
    stage_loss,
)
from stages.network.targets import make_target, readout
from stages.network.train import train_sgd, training_log_frame, write_training_log
from stages.voxel.models import VoxelField, VoxelGrid

TINY = NetworkSpec(n_landmarks=1, n_stages=2, stem_widths=(2,), stage_widths=(3,))


def _grid(dims=(3, 3, 3)) -> VoxelGrid:
    return VoxelGrid(origin=(0.0, 0.0, 0.0), cell_m=0.1, dims=dims)


def _field(values, grid=None) -> VoxelField:
    values = np.asarray(values, dtype=np.float64)
    return VoxelField(grid=grid or _grid(values.shape[-3:]), values=values)


def _relative_error(a: np.ndarray, b: np.ndarray) -> float:
    # both below finite-difference noise counts as agreement
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-7))


def _numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f with respect to every entry of x (perturbed in place)."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


# -------------------------
# Conv layer
# -------------------------
def test_identity_pointwise_conv_passes_input_through(rng):
    layer = Conv3Layer(weights=np.ones((1, 1, 1, 1, 1)), bias=np.array([0.25]), activation="identity")
    x = rng.normal(size=(1, 3, 4, 2))
    np.testing.assert_allclose(conv3_forward(layer, x), x + 0.25)


def test_pointwise_conv_is_a_per_voxel_matmul(rng):
    w = rng.normal(size=(4, 2, 1, 1, 1))
    b = rng.normal(size=4)
    layer = Conv3Layer(weights=w, bias=b, activation="identity")
    x = rng.normal(size=(2, 3, 3, 3))
    out = conv3_forward(layer, x)
    for i, j, k in itertools.product(range(3), repeat=3):
        np.testing.assert_allclose(out[:, i, j, k], w[:, :, 0, 0, 0] @ x[:, i, j, k] + b, atol=1e-12)


def test_conv_matches_direct_loops(rng):
    layer = init_layer(rng, 2, 3, 3, "identity")
    layer.bias[:] = rng.normal(size=3)
    x = rng.normal(size=(2, 4, 3, 3))
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    out = conv3_forward(layer, x)
    for o, i, j, k in itertools.product(range(3), range(4), range(3), range(3)):
        want = layer.bias[o] + np.sum(layer.weights[o] * xp[:, i : i + 3, j : j + 3, k : k + 3])
        assert out[o, i, j, k] == pytest.approx(want, abs=1e-12)


@pytest.mark.parametrize("activation", ["identity", "relu"])
def test_conv_gradients_match_finite_differences(rng, activation):
    layer = init_layer(rng, 2, 3, 3, activation)
    layer.bias[:] = rng.normal(scale=0.1, size=3)
    x = rng.normal(size=(2, 5, 5, 4))
    upstream = rng.normal(size=(3, 5, 5, 4))

    def scalar():
        return float(np.sum(conv3_forward(layer, x) * upstream))

    grad_x, grad_w, grad_b = conv3_backward(layer, x, upstream)
    assert _relative_error(grad_w, _numeric_grad(scalar, layer.weights)) <= 1e-4
    assert _relative_error(grad_b, _numeric_grad(scalar, layer.bias)) <= 1e-4
    assert _relative_error(grad_x, _numeric_grad(scalar, x)) <= 1e-4


def test_conv_shape_errors(rng):
    layer = init_layer(rng, 2, 3, 3, "relu")
    with pytest.raises(NetworkShapeError):
        conv3_forward(layer, np.zeros((1, 3, 3, 3)))
    with pytest.raises(NetworkShapeError):
        conv3_backward(layer, np.zeros((2, 3, 3, 3)), np.zeros((3, 3, 3, 2)))
    with pytest.raises(NetworkShapeError):
        Conv3Layer(weights=np.zeros((1, 1, 2, 2, 2)), bias=np.zeros(1))
    with pytest.raises(NetworkShapeError):
        Conv3Layer(weights=np.zeros((2, 1, 1, 1, 1)), bias=np.zeros(1))


def test_bias_free_stack_is_translation_equivariant(rng):
    layers = [init_layer(rng, 1, 3, 3, "relu"), init_layer(rng, 3, 2, 3, "identity")]
    x = np.zeros((1, 9, 9, 9))
    x[:, 3:5, 3:6, 3:5] = rng.normal(size=(1, 2, 3, 2))
    shifted = np.roll(x, shift=(1, -1, 1), axis=(1, 2, 3))

    def run(t):
        for layer in layers:
            t = conv3_forward(layer, t)
        return t

    np.testing.assert_allclose(run(shifted), np.roll(run(x), shift=(1, -1, 1), axis=(1, 2, 3)), atol=1e-12)


# -------------------------
# Network forward / backward
# -------------------------
def test_stage_channel_bookkeeping():
    net = build_posenet(TINY, rng_seed=3)
    assert TINY.feature_channels == 3
    assert net.stages[0][0].in_channels == 3
    assert net.stages[1][0].in_channels == 4
    assert all(block[-1].out_channels == 1 and block[-1].activation == "identity" for block in net.stages)
    assert [name for name, _ in net.layers()] == ["stem.0", "stage0.0", "stage0.1", "stage1.0", "stage1.1"]


def test_default_spec_widths():
    spec = NetworkSpec()
    net = build_posenet(spec)
    assert spec.n_stages == 6
    assert [l.out_channels for l in net.stem] == [8, 8, 8]
    assert net.stem[0].in_channels == 1
    assert [l.out_channels for l in net.stages[0]] == [16, 16, 16, 1]
    assert net.stages[3][0].in_channels == 8 + 1 + 1


def test_seeded_init_is_reproducible():
    a, b = build_posenet(TINY, rng_seed=9), build_posenet(TINY, rng_seed=9)
    for (_, la), (_, lb) in zip(a.layers(), b.layers()):
        np.testing.assert_array_equal(la.weights, lb.weights)
    c = build_posenet(TINY, rng_seed=10)
    assert not np.array_equal(a.stem[0].weights, c.stem[0].weights)


def test_audio_order_does_not_matter(rng):
    net = build_posenet(TINY, rng_seed=1)
    audio = [_field(rng.uniform(size=(1, 3, 3, 3))) for _ in range(4)]
    visual = _field(rng.uniform(size=(1, 3, 3, 3)))
    ref = forward(net, audio, visual)
    shuffled = forward(net, audio[::-1], visual)
    assert len(ref) == 2
    for a, b in zip(ref, shuffled):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.grid == visual.grid
    assert ref[1].metadata == {"kind": "pose", "stage": 1}


def test_zero_parameters_give_zero_outputs(rng):
    net = build_posenet(TINY)
    for _, layer in net.layers():
        layer.weights[...] = 0.0
        layer.bias[...] = 0.0
    outs = forward(net, [_field(rng.uniform(size=(1, 3, 3, 3)))], _field(rng.uniform(size=(1, 3, 3, 3))))
    assert all(not np.any(o.values) for o in outs)


def test_hand_computed_forward_pass():
    spec = NetworkSpec(n_landmarks=1, n_stages=1, stem_widths=(1,), stage_widths=(1,), kernel_size=1)
    net = build_posenet(spec)
    net.stem[0].weights[...] = 2.0
    net.stem[0].bias[...] = -0.5
    hidden, out = net.stages[0]
    hidden.weights[0, :, 0, 0, 0] = [1.0, -3.0]  # (fused audio, visual)
    hidden.bias[...] = 0.1
    out.weights[...] = 0.5
    out.bias[...] = 1.0

    a1 = np.array([0.0, 1.0, 0.2, 0.5, 0.3, 0.9, 0.1, 0.4]).reshape(1, 2, 2, 2)
    a2 = np.array([0.4, 0.2, 0.1, 0.6, 0.8, 0.0, 0.2, 0.3]).reshape(1, 2, 2, 2)
    vis = np.array([0.0, 0.1, 0.0, 0.2, 0.1, 0.9, 0.0, 0.05]).reshape(1, 2, 2, 2)
    grid = _grid((2, 2, 2))

    stem1 = np.maximum(2.0 * a1 - 0.5, 0.0)
    stem2 = np.maximum(2.0 * a2 - 0.5, 0.0)
    fused = np.maximum(stem1, stem2)
    h = np.maximum(fused - 3.0 * vis + 0.1, 0.0)
    expected = 0.5 * h + 1.0

    (pred,) = forward(net, [_field(a1, grid), _field(a2, grid)], _field(vis, grid))
    np.testing.assert_allclose(pred.values, expected, atol=1e-12)


def test_forward_input_errors(rng):
    net = build_posenet(TINY)
    a = _field(rng.uniform(size=(1, 3, 3, 3)))
    other = VoxelField(grid=_grid((3, 3, 4)), values=np.zeros((1, 3, 3, 4)))
    with pytest.raises(GridMismatchError):
        forward(net, [a], other)
    with pytest.raises(GridMismatchError):
        forward(net, [a, other], a)
    with pytest.raises(NetworkShapeError):
        forward(net, [a], _field(np.zeros((2, 3, 3, 3))))
    with pytest.raises(NetworkShapeError):
        forward(net, [a], None)
    with pytest.raises(NetworkShapeError):
        forward(net, [], a)


def test_single_modality_networks(rng):
    a = _field(rng.uniform(size=(1, 3, 3, 3)))
    v = _field(rng.uniform(size=(1, 3, 3, 3)))
    audio_only = build_posenet(TINY.model_copy(update={"inputs": "audio_only"}))
    visual_only = build_posenet(TINY.model_copy(update={"inputs": "visual_only"}))
    assert audio_only.stages[0][0].in_channels == 2
    assert visual_only.stem == []
    assert visual_only.stages[0][0].in_channels == 1
    assert predict(audio_only, [a], None).values.shape == (1, 3, 3, 3)
    assert predict(visual_only, [], v).values.shape == (1, 3, 3, 3)


def test_network_gradients_match_finite_differences(rng):
    net = build_posenet(TINY, rng_seed=4)
    for _, layer in net.layers():
        layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
    audio = [rng.uniform(size=(1, 3, 3, 3)) for _ in range(3)]
    visual = rng.uniform(size=(1, 3, 3, 3))
    target = rng.uniform(size=(1, 3, 3, 3))

    def scalar():
        outputs, _ = forward_arrays(net, audio, visual)
        return stage_loss(outputs, target)[0]

    outputs, cache = forward_arrays(net, audio, visual)
    _, grad_outputs = stage_loss(outputs, target)
    grads = backward(net, cache, grad_outputs)
    for (name, layer), (gw, gb) in zip(net.layers(), grads):
        assert _relative_error(gw, _numeric_grad(scalar, layer.weights)) <= 1e-4, name
        assert _relative_error(gb, _numeric_grad(scalar, layer.bias)) <= 1e-4, name


def _entry_agrees(f, x: np.ndarray, idx, analytic: float) -> bool:
    """Central difference at one entry, retried at a tenth of the step when a ReLU kink or a
    max-fusion switch lands inside the first one."""
    for h in (1e-5, 1e-6):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        numeric = (up - down) / (2 * h)
        if abs(numeric - analytic) <= 1e-3 * max(abs(numeric), abs(analytic), 1e-4):
            return True
    return False


def test_toy_scale_gradients_over_random_builds():
    rng = np.random.default_rng(2020)
    for build in range(20):
        spec = NetworkSpec(
            n_landmarks=int(rng.integers(1, 3)),
            n_stages=2,
            stem_widths=(8, 8, 8),
            stage_widths=(16, 16, 16),
            inputs=str(rng.choice(["audio_visual", "audio_only"])),
        )
        net = build_posenet(spec, rng_seed=build)
        for _, layer in net.layers():
            layer.bias[:] = rng.normal(scale=0.1, size=layer.bias.shape)
        shape = (4, 4, 3)
        audio = [rng.uniform(size=(1, *shape)) for _ in range(int(rng.integers(2, 5)))]
        visual = rng.uniform(size=(spec.n_landmarks, *shape)) if spec.uses_visual else None
        target = rng.uniform(size=(spec.n_landmarks, *shape))

        def scalar():
            outputs, _ = forward_arrays(net, audio, visual)
            return stage_loss(outputs, target)[0]

        outputs, cache = forward_arrays(net, audio, visual)
        grads = backward(net, cache, stage_loss(outputs, target)[1])
        for (name, layer), (gw, gb) in zip(net.layers(), grads):
            for _ in range(3):
                idx = tuple(int(rng.integers(0, d)) for d in layer.weights.shape)
                assert _entry_agrees(scalar, layer.weights, idx, gw[idx]), (build, name, idx)
            j = (int(rng.integers(0, layer.bias.size)),)
            assert _entry_agrees(scalar, layer.bias, j, gb[j]), (build, name, j)


# -------------------------
# Loss
# -------------------------
def test_loss_examples(rng):
    grid = _grid()
    target = _field(rng.uniform(size=(1, 3, 3, 3)), grid)
    assert loss([target, target], target) == 0.0
    shifted = _field(target.values + 0.3, grid)
    assert loss([shifted], target) == pytest.approx(0.09)


def test_loss_matches_scalar_loop(rng):
    grid = _grid((2, 3, 2))
    target = _field(rng.normal(size=(2, 2, 3, 2)), grid)
    preds = [_field(rng.normal(size=(2, 2, 3, 2)), grid) for _ in range(3)]
    oracle = 0.0
    for p in preds:
        acc = 0.0
        for idx in np.ndindex(*target.values.shape):
            acc += (p.values[idx] - target.values[idx]) ** 2
        oracle += acc / target.values.size
    assert loss(preds, target) == pytest.approx(oracle, abs=1e-9)
    assert loss(preds, target) >= 0.0


def test_loss_shape_mismatch(rng):
    with pytest.raises(NetworkShapeError):
        loss([_field(np.zeros((1, 3, 3, 3)))], _field(np.zeros((1, 2, 2, 2))))
    with pytest.raises(NetworkShapeError):
        stage_loss([np.zeros((2, 3, 3, 3))], np.zeros((1, 3, 3, 3)))


# -------------------------
# Training
# -------------------------
def _toy_sample(rng, grid=None) -> TrainingSample:
    grid = grid or _grid((4, 4, 4))
    audio = [_field(rng.uniform(size=(1, *grid.dims)), grid) for _ in range(2)]
    target = make_target([(0.2, 0.2, 0.2)], grid, sigma_m=0.3)
    visual = _field(target.values, grid)
    return TrainingSample(audio=audio, visual=visual, target=target)


def test_zero_learning_rate_changes_nothing(rng):
    net = build_posenet(TINY, rng_seed=2)
    before = [layer.weights.copy() for _, layer in net.layers()]
    log = train_sgd(net, [_toy_sample(rng), _toy_sample(rng)], epochs=3, lr=0.0)
    assert len(set(log.losses)) == 1
    for b, (_, layer) in zip(before, net.layers()):
        np.testing.assert_array_equal(b, layer.weights)


def test_training_is_deterministic(rng):
    data = [_toy_sample(rng) for _ in range(3)]
    logs, params = [], []
    for _ in range(2):
        net = build_posenet(TINY, rng_seed=5, learning_rate=0.05)
        logs.append(train_sgd(net, data, epochs=4))
        params.append(np.concatenate([layer.weights.ravel() for _, layer in net.layers()]))
    assert logs[0].losses == logs[1].losses
    np.testing.assert_array_equal(params[0], params[1])
    assert logs[0].learning_rate == 0.05 and logs[0].seed == 5


def test_single_sample_overfits():
    spec = NetworkSpec(n_landmarks=1, n_stages=1, stem_widths=(2,), stage_widths=(4,))
    net = build_posenet(spec, rng_seed=0)
    sample = _toy_sample(np.random.default_rng(42))
    log = train_sgd(net, [sample], epochs=200, lr=0.01)
    assert log.epochs[-1] == 200
    tail = log.losses[5:]
    assert all(b <= a + 1e-12 for a, b in zip(tail, tail[1:]))
    assert log.losses[-1] < 0.1 * log.losses[0]


def test_training_argument_errors(rng):
    net = build_posenet(TINY)
    with pytest.raises(ConfigError):
        train_sgd(net, [], epochs=1)
    with pytest.raises(ConfigError):
        train_sgd(net, [_toy_sample(rng)], epochs=0)
    with pytest.raises(ConfigError):
        train_sgd(net, [_toy_sample(rng)], epochs=1, lr=-0.1)


def test_divergence_is_reported(rng):
    net = build_posenet(TINY)
    with np.errstate(all="ignore"), pytest.raises(TrainingDivergedError):
        train_sgd(net, [_toy_sample(rng)], epochs=60, lr=1e12)


def test_epoch_callback_and_log_csv(tmp_path, rng):
    seen = []
    net = build_posenet(TINY)
    log = train_sgd(net, [_toy_sample(rng)], epochs=3, lr=0.01, on_epoch=lambda e, l: seen.append((e, l)))
    assert [e for e, _ in seen] == [1, 2, 3]
    assert [l for _, l in seen] == log.losses
    frame = training_log_frame(log)
    assert list(frame.columns) == ["epoch", "loss"]
    path = write_training_log(tmp_path / "log.csv", log)
    assert path.read_text().splitlines()[0] == "epoch,loss"


# -------------------------
# Targets and readout
# -------------------------
def test_target_peaks_at_the_landmark():
    grid = _grid((10, 10, 10))
    p = (0.43, 0.27, 0.61)
    target = make_target([p], grid, sigma_m=0.1)
    assert target.metadata["kind"] == "target"
    assert readout(target)[0].tolist() == pytest.approx(grid.center(grid.index_of(p)).tolist())
    assert target.values.max() < 1.0
    on_center = make_target([grid.center((4, 5, 6))], grid, sigma_m=0.1)
    assert on_center.values[0, 4, 5, 6] == 1.0


def test_target_mass_matches_closed_form():
    grid = _grid((20, 20, 20))
    sigma = 0.2
    target = make_target([(1.0, 1.0, 1.0)], grid, sigma)
    expected = (2 * np.pi) ** 1.5 * sigma**3 / grid.cell_m**3
    assert target.values.sum() == pytest.approx(expected, rel=0.05)


def test_target_errors():
    with pytest.raises(HeatmapError):
        make_target([(0, 0, 0)], _grid(), 0.0)
    with pytest.raises(HeatmapError):
        make_target([], _grid(), 0.1)


def test_readout_takes_the_argmax_of_raw_values(rng):
    values = rng.uniform(0.0, 0.5, size=(2, 3, 3, 3))
    values[0, 2, 2, 2] = 5.0
    values[0, 1, 0, 0] = 1.5  # above 1 but below the true peak
    values[1] = 0.3
    est = readout(_field(values))
    np.testing.assert_allclose(est[0], _grid().center((2, 2, 2)))
    # flat channel: lowest x-fastest index
    np.testing.assert_allclose(est[1], _grid().center((0, 0, 0)))


def test_readout_ignores_overshoot_near_the_origin():
    values = np.zeros((1, 4, 4, 4))
    values[0, 0, 0, 0] = 1.2
    values[0, 3, 3, 3] = 5.0
    est = readout(_field(values))
    np.testing.assert_allclose(est[0], [0.35, 0.35, 0.35])


def test_readout_matches_exhaustive_scan(rng):
    values = rng.uniform(size=(1, 4, 3, 5))
    best = max(itertools.product(range(4), range(3), range(5)), key=lambda ijk: (values[(0, *ijk)], -(ijk[0] + 4 * (ijk[1] + 3 * ijk[2]))))
    np.testing.assert_allclose(readout(_field(values))[0], _grid((4, 3, 5)).center(best))


# -------------------------
# Metrics
# -------------------------
def test_errors_and_pck():
    truth = [[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]], [[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]]
    pred = [[[0.125, 0.0, 0.0], [1.0, 1.0, 1.375]], [[0.0, 0.25, 0.0], [1.0, 1.0, 1.0]]]
    errors = landmark_errors_cm(pred, truth)
    np.testing.assert_array_equal(errors, [[12.5, 37.5], [25.0, 0.0]])
    assert pck(errors, 25) == 0.75
    report = summarize(errors)
    assert report.n_samples == 2
    assert report.mpjpe_cm == pytest.approx(18.75)
    assert report.per_landmark_cm == pytest.approx([18.75, 18.75])
    assert report.pck == {10: 0.25, 20: 0.5, 30: 0.75, 40: 1.0}


def test_ground_truth_heatmaps_score_perfectly():
    grid = _grid((8, 8, 6))
    rng = np.random.default_rng(10)
    truth, heatmaps = [], []
    for _ in range(10):
        landmarks = [grid.center(tuple(int(rng.integers(0, d)) for d in grid.dims)) for _ in range(2)]
        truth.append(landmarks)
        heatmaps.append(make_target(landmarks, grid, sigma_m=0.15))
    report, errors, positions = score_heatmaps(heatmaps, truth)
    assert report.n_samples == 10
    assert report.mpjpe_cm == 0.0
    assert set(report.pck.values()) == {1.0}
    assert not np.any(errors)
    np.testing.assert_array_equal(np.asarray(positions), np.asarray(truth))


def test_metrics_csv(tmp_path):
    report = summarize(np.array([[5.0], [25.0]]))
    frame = report_frame(report)
    assert list(frame.columns) == ["metric", "landmark", "value"]
    assert frame.loc[frame.metric == "mpjpe_cm", "value"].item() == pytest.approx(15.0)
    path = write_metrics_csv(tmp_path / "metrics.csv", report)
    assert "pck@20" in path.read_text()
    with pytest.raises(NetworkShapeError):
        landmark_errors_cm([[[0, 0, 0]]], [[[0, 0]]])


# -------------------------
# Checkpoints
# -------------------------
def test_checkpoint_round_trip(tmp_path, rng):
    net = build_posenet(TINY, rng_seed=8, learning_rate=0.02)
    train_sgd(net, [_toy_sample(rng)], epochs=1)
    path = save_checkpoint(tmp_path / "net.pknn", net)
    assert path.read_bytes()[:4] == b"PKNN"
    back = load_checkpoint(path)
    assert back.spec == net.spec
    assert back.rng_seed == 8 and back.learning_rate == 0.02
    for (_, a), (_, b) in zip(net.layers(), back.layers()):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.bias, b.bias)
    check_compatible(back, TINY)
    with pytest.raises(CheckpointError):
        check_compatible(back, TINY.model_copy(update={"n_stages": 3}))


def test_checkpoint_rejects_bad_files(tmp_path):
    raw = save_checkpoint(tmp_path / "net.pknn", build_posenet(TINY)).read_bytes()
    cases = {
        "magic.pknn": b"XXXX" + raw[4:],
        "version.pknn": raw[:4] + (2).to_bytes(4, "little") + raw[8:],
        "short.pknn": raw[:-8],
        "header.pknn": raw[:6],
        "manifest.pknn": raw[:12] + b"{" * 20 + raw[32:],
    }
    for name, data in cases.items():
        (tmp_path / name).write_bytes(data)
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / name)
