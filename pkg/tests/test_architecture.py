import numpy as np
import pytest

from mslstm.architecture import (
    ArchitectureConfig,
    LayerSpec,
    Model,
    SequenceSpec,
    encoder_receptive_field,
    preset,
    receptive_field,
)
from mslstm.errors import ConfigError, ShapeError, UsageError
from mslstm.tensor import Tape, Tensor, backward, sum_all


def small(name, hidden=4, channels=1):
    return preset(name, hidden=hidden, input_channels=channels)


def zeroed_model(name, hidden=4, head_bias=0.0):
    model = Model(small(name, hidden), seed=0)
    for pname, tensor in model.named_parameters():
        value = head_bias if pname == "head.bias" else 0.0
        model.set_parameter(pname, Tensor.full(tensor.shape, value))
    return model


def frames_from(rng, count, b=1, c=1, n=8, dtype=np.float64):
    return [Tensor(rng.uniform(0, 1, (b, c, n, n)).astype(dtype)) for _ in range(count)]


def test_preset_scale_lists():
    assert [s.scale for s in preset("ms6").layers] == [1, 2, 4, 4, 2, 1]
    assert [s.scale for s in preset("sms6").layers] == [1, 2, 4, 4, 2, 1]
    assert [s.scale for s in preset("convlstm6").layers] == [1] * 6
    assert [s.scale for s in preset("tms6").layers] == [1] * 6


def test_preset_cells_and_skips():
    assert all(s.cell == "conv" for s in preset("sms6").layers)
    assert all(s.cell == "multikernel" for s in preset("ms6").layers)
    assert preset("convlstm6").skips == ()
    assert preset("ms6").skips == ((0, 5), (1, 4))


def test_unknown_preset_rejected():
    with pytest.raises(ConfigError, match="convlstm6"):
        preset("resnet")


def test_pyramid_and_flat_have_equal_parameter_counts():
    assert Model(small("sms6")).parameter_count() == Model(small("convlstm6")).parameter_count()
    assert Model(small("ms6")).parameter_count() == Model(small("tms6")).parameter_count()


def test_zero_model_predicts_head_bias():
    model = zeroed_model("ms6", head_bias=0.3)
    x = Tensor(np.random.default_rng(0).uniform(0, 1, (2, 1, 8, 8)))
    pred, _ = model.step_frame(x, model.zero_states(2, 8, 8))
    np.testing.assert_allclose(pred.data, 0.3, atol=1e-15)


def test_state_shapes_follow_scales():
    model = Model(preset("ms6", hidden=32), seed=0)
    x = Tensor(np.zeros((2, 1, 16, 16)))
    _, states = model.step_frame(x, model.zero_states(2, 16, 16))
    got = [s.h.shape for s in states]
    assert got == [
        (2, 32, 16, 16),
        (2, 32, 8, 8),
        (2, 32, 4, 4),
        (2, 32, 4, 4),
        (2, 32, 8, 8),
        (2, 32, 16, 16),
    ]


@pytest.mark.parametrize("name", ["convlstm6", "sms6", "tms6", "ms6"])
def test_output_shape_matches_input_shape(name):
    model = Model(small(name, hidden=3), seed=1)
    for h, w in [(8, 8), (4, 12)]:
        x = Tensor(np.random.default_rng(h).uniform(0, 1, (1, 1, h, w)))
        pred, _ = model.step_frame(x, model.zero_states(1, h, w))
        assert pred.shape == (1, 1, h, w)


def test_indivisible_resolution_rejected():
    model = Model(small("ms6"), seed=0)
    with pytest.raises(ShapeError):
        model.step_frame(Tensor(np.zeros((1, 1, 6, 6))), model.zero_states(1, 6, 6))


@pytest.mark.parametrize("name", ["sms6", "ms6"])
def test_every_layer_receives_gradient(name):
    rng = np.random.default_rng(2)
    model = Model(small(name, hidden=2), seed=3)
    x = Tensor(rng.uniform(0, 1, (1, 1, 8, 8)))
    with Tape() as tape:
        pred, _ = model.step_frame(x, model.zero_states(1, 8, 8))
        loss = sum_all(pred)
    backward(tape, loss)
    for idx in range(len(model.cells)):
        layer_grads = [
            np.abs(tape.grad(t)).max()
            for pname, t in model.named_parameters()
            if pname.startswith(f"layer{idx}.")
        ]
        assert max(layer_grads) > 1e-12, f"layer {idx} got no gradient"


def test_rollout_of_zero_model_repeats_head_bias():
    model = zeroed_model("sms6", head_bias=0.25)
    frames = frames_from(np.random.default_rng(3), 3)
    preds = model.rollout(frames, 4)
    assert len(preds) == 4
    for p in preds:
        np.testing.assert_allclose(p.data, 0.25, atol=1e-15)


def test_rollout_minimal_sequence_is_one_step():
    model = Model(small("convlstm6", hidden=3), seed=4)
    x = frames_from(np.random.default_rng(4), 1)[0]
    preds = model.rollout([x], 1)
    direct, _ = model.step_frame(x, model.zero_states(*x.shape[:1], *x.shape[2:]))
    np.testing.assert_array_equal(preds[0].data, direct.data)


def test_rollout_feeds_back_its_own_prediction():
    model = Model(small("convlstm6", hidden=3), seed=5)
    frames = frames_from(np.random.default_rng(5), 2)
    preds = model.rollout(frames, 2)
    states = model.zero_states(1, 8, 8)
    p0, states = model.step_frame(frames[0], states)
    p1, states = model.step_frame(frames[1], states)
    p2, _ = model.step_frame(p1, states)
    np.testing.assert_array_equal(preds[0].data, p1.data)
    np.testing.assert_array_equal(preds[1].data, p2.data)


def test_rollout_rejects_bad_lengths():
    model = Model(small("convlstm6"), seed=0)
    frames = frames_from(np.random.default_rng(6), 1)
    with pytest.raises(UsageError):
        model.rollout(frames, 0)
    with pytest.raises(UsageError):
        model.rollout([], 1)


def test_rollout_is_deterministic():
    frames_data = np.random.default_rng(7).uniform(0, 1, (2, 1, 1, 8, 8))

    def run():
        model = Model(small("ms6", hidden=2), seed=9)
        frames = [Tensor(f) for f in frames_data]
        return np.stack([p.data for p in model.rollout(frames, 3)])

    assert np.array_equal(run(), run())


def test_trace_returns_all_steps_and_layers():
    model = Model(small("ms6", hidden=2), seed=10)
    frames = frames_from(np.random.default_rng(8), 4)
    preds, hiddens = model.trace(frames)
    assert len(preds) == 4
    assert len(hiddens) == 4 and all(len(h) == 6 for h in hiddens)
    assert hiddens[0][1].shape == (1, 2, 4, 4)


def test_prediction_depends_on_first_input():
    # the recurrent chain must carry X_0 all the way to the last prediction
    model = Model(small("ms6", hidden=2), seed=11)
    frames = frames_from(np.random.default_rng(9), 2)
    with Tape() as tape:
        preds = model.rollout(frames, 2)
        loss = sum_all(preds[-1])
    backward(tape, loss)
    assert np.abs(tape.grad(frames[0])).max() > 1e-12


def test_receptive_field_paper_values():
    assert encoder_receptive_field(preset("convlstm6")) == 7
    sms = encoder_receptive_field(preset("sms6"))
    assert sms == 18  # jump/extent recurrence: 3 -> 4 -> 8 -> 10 -> 18
    assert sms >= 15
    ms = encoder_receptive_field(preset("ms6"))
    assert ms > sms > encoder_receptive_field(preset("convlstm6"))


def test_receptive_field_rows_monotone():
    rows = receptive_field(preset("ms6"))
    rfs = [r["rf"] for r in rows]
    assert rfs == sorted(rfs)
    assert rows[2]["jump"] == 4
    assert rows[-1]["jump"] == 1


def test_sequence_spec_validation():
    assert SequenceSpec(10, 10).total == 20
    with pytest.raises(UsageError):
        SequenceSpec(0, 5)


def test_config_validation():
    with pytest.raises(ConfigError):
        ArchitectureConfig(layers=(LayerSpec("conv", 4, 1), LayerSpec("conv", 4, 4)))
    with pytest.raises(ConfigError):
        ArchitectureConfig(
            layers=(LayerSpec("conv", 4, 1), LayerSpec("conv", 4, 2)),
        )  # last layer not at scale 1
    with pytest.raises(ConfigError):
        ArchitectureConfig(
            layers=(LayerSpec("conv", 4, 1), LayerSpec("conv", 4, 2), LayerSpec("conv", 4, 1)),
            skips=((0, 1),),
        )  # skip across different scales
