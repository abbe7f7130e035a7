import numpy as np
import pytest

from cedn.errors import ConfigError, DimensionError, InputError, ParseError, TrainingError
from cedn.model import (
    NetworkConfig, TrainConfig, build_network, decoder_table, make_minibatch, predict, train,
    train_step, weighted_logistic_loss,
)
from cedn.model.network import config_from_dict, config_to_json
from cedn.model.training import train_config_from_dict
from cedn.tensor import Adam, load_tensors, save_tensors, sigmoid
from cedn.tensor.io import dumps_tensors, loads_tensors
from gradcheck import numeric_grad, rel_error

DECODER_TABLE = [
    ("deconv6", (1, 1, 512), "relu"),
    ("deconv5", (5, 5, 512), "relu"),
    ("deconv4", (5, 5, 256), "relu"),
    ("deconv3", (5, 5, 128), "relu"),
    ("deconv2", (5, 5, 64), "relu"),
    ("deconv1", (5, 5, 32), "relu"),
    ("pred", (5, 5, 1), "sigmoid"),
]


def desk(seed=0, **kw):
    return build_network(NetworkConfig.desk(**kw), np.random.default_rng(seed))


# -------------------------------------------------------------- config

def test_full_preset_decoder_table():
    rows = decoder_table(NetworkConfig.paper())
    assert [(r.name, r.kernel, r.activation) for r in rows] == DECODER_TABLE
    assert rows[0].setup == "conv" and all(r.setup == "unpool-conv" for r in rows[1:-1])


def test_full_preset_shape():
    cfg = NetworkConfig.paper()
    assert cfg.stages == 5 and cfg.conv6 == 4096 and cfg.conv6_kernel == 7


def test_config_errors_name_stage():
    with pytest.raises(ConfigError) as exc:
        NetworkConfig.desk(decoder=[64, 32, 8, 16])
    # decoder[2] is deconv2's width, which unpools with pool1's 16-channel switches
    assert exc.value.stage == "deconv2"
    with pytest.raises(ConfigError) as exc:
        NetworkConfig.desk(decoder=[64, 32, 16])
    assert exc.value.stage == "decoder"
    with pytest.raises(ConfigError):
        NetworkConfig.from_preset("huge")


def test_config_json_roundtrip():
    import json
    cfg = NetworkConfig.desk()
    assert config_from_dict(json.loads(config_to_json(cfg))) == cfg


# -------------------------------------------------------------- forward

def test_desk_forward_contract():
    net = desk()
    out = net.forward(np.random.default_rng(0).random((1, 3, 64, 64)))
    assert out.shape == (1, 1, 64, 64)
    assert np.all((out > 0) & (out < 1))


@pytest.mark.parametrize("hw", [(17, 17), (67, 93), (31, 64), (100, 41)])
def test_arbitrary_size(hw):
    out = predict(desk(), np.random.default_rng(1).random(hw + (3,)))
    assert out.shape == hw


def test_same_seed_same_params():
    a, b = desk(5), desk(5)
    assert a.param_hash() == b.param_hash()
    assert a.param_hash() != desk(6).param_hash()


def test_zero_final_layer_gives_half():
    net = desk()
    net.params["pred.w"][:] = 0
    net.params["pred.b"][:] = 0
    out = net.forward(np.zeros((1, 3, 32, 32)))
    assert np.all(out == 0.5)


def test_mirror_symmetry_on_exact_size():
    net = desk(2)
    mirrored = desk(2)
    # all-zero pooling windows tie at offset 0, which is not mirror symmetric;
    # nonnegative encoder weights and positive biases keep every relu active, so no window ties
    for name in net.encoder_params:
        if name.endswith(".b"):
            net.params[name][:] = 1.0
        else:
            np.abs(net.params[name], out=net.params[name])
    for name, w in net.params.items():
        mirrored.params[name][...] = w[..., ::-1] if w.ndim == 4 else w
    x = np.random.default_rng(3).random((1, 3, 32, 32)).astype(np.float32)
    net.forward(x)
    mirrored.forward(x[..., ::-1].copy())
    scale = np.abs(net.logits).max()
    np.testing.assert_allclose(mirrored.logits, net.logits[..., ::-1], rtol=1e-4, atol=1e-5 * scale)


def test_bad_input_channels():
    with pytest.raises(DimensionError):
        desk().forward(np.zeros((1, 2, 16, 16)))


# ----------------------------------------------------------------- loss

def test_loss_single_background_pixel():
    loss, _ = weighted_logistic_loss(np.array([[0.5]]), np.array([[0]]))
    assert loss == pytest.approx(np.log(2))


def test_loss_single_contour_pixel_is_ten_times():
    l0, _ = weighted_logistic_loss(np.array([[0.5]]), np.array([[0]]))
    l1, _ = weighted_logistic_loss(np.array([[0.5]]), np.array([[1]]), pos_weight=10)
    assert l1 == pytest.approx(10 * np.log(2))
    assert l1 / l0 == pytest.approx(10.0, rel=1e-12)


def test_loss_perfect_prediction():
    y = (np.random.default_rng(0).random((8, 8)) < 0.3).astype(float)
    loss, _ = weighted_logistic_loss(y, y)
    assert loss <= 1e-5


def test_gradient_ratio_exactly_pos_weight():
    pred = np.array([0.3, 0.7])
    y = np.array([1.0, 0.0])  # both errors have magnitude 0.7
    _, g = weighted_logistic_loss(pred, y, pos_weight=10.0)
    assert g[0] == -10.0 * g[1]


def test_loss_gradient_through_sigmoid():
    rng = np.random.default_rng(4)
    for _ in range(5):
        z = rng.normal(0, 2, (1, 1, 8, 8))
        y = (rng.random(z.shape) < 0.3).astype(float)
        _, g = weighted_logistic_loss(sigmoid(z), y)
        num = numeric_grad(lambda: weighted_logistic_loss(sigmoid(z), y)[0], z)
        assert rel_error(g, num) < 1e-3


def test_loss_rejects_soft_targets():
    with pytest.raises(InputError):
        weighted_logistic_loss(np.full((2, 2), 0.5), np.full((2, 2), 0.5))
    with pytest.raises(DimensionError):
        weighted_logistic_loss(np.zeros((2, 2)), np.zeros((2, 3)))


# ------------------------------------------------------------ minibatch

def test_minibatch_shape_and_mirror():
    rng = np.random.default_rng(0)
    img = rng.random((80, 90, 3))
    mask = rng.random((80, 90)) < 0.1
    x, y = make_minibatch(img, mask, TrainConfig(crop=64, crops=4), rng)
    assert x.shape == (8, 3, 64, 64) and y.shape == (8, 1, 64, 64)
    np.testing.assert_array_equal(x[4:], x[:4, ..., ::-1])
    np.testing.assert_array_equal(y[4:, ..., ::-1], y[:4])
    np.testing.assert_array_equal(x[4:][..., ::-1], x[:4])


def test_minibatch_offsets_deterministic():
    img = np.random.default_rng(0).random((80, 80, 3))
    mask = np.zeros((80, 80), bool)
    a = make_minibatch(img, mask, TrainConfig(crop=32), np.random.default_rng(9))[0]
    b = make_minibatch(img, mask, TrainConfig(crop=32), np.random.default_rng(9))[0]
    np.testing.assert_array_equal(a, b)


def test_minibatch_too_small():
    with pytest.raises(InputError, match="pad"):
        make_minibatch(np.zeros((40, 40, 3)), np.zeros((40, 40)), TrainConfig(crop=64), np.random.default_rng())


# ----------------------------------------------------------------- train

def test_train_config_presets_and_validation():
    assert TrainConfig.fine_tune().lr == 1e-5 and TrainConfig.fine_tune().epochs == 100
    assert TrainConfig().lr == 1e-4 and TrainConfig().epochs == 30 and TrainConfig().crop == 224
    with pytest.raises(ConfigError):
        TrainConfig(crop=60).validate(stages=3)
    with pytest.raises(ConfigError):
        TrainConfig(lr=0).validate()
    with pytest.raises(ConfigError):
        train_config_from_dict({"lr": 1e-4, "warmup": 3})


def _scene_pairs(n, side=64):
    from cedn.synth import SceneSpec, generate_dataset
    scenes = generate_dataset(SceneSpec(height=side, width=side, seed=3), n)
    return [(s.image, s.contours) for s in scenes]


def test_freeze_keeps_encoder_bits(tmp_path):
    net = desk()
    enc = net.param_hash(net.encoder_params)
    dec = net.param_hash(net.decoder_params)
    cfg = TrainConfig(crop=32, crops=1, epochs=1, freeze_encoder=True)
    log = train(net, _scene_pairs(2, 48), cfg, log_path=tmp_path / "log.csv", checkpoint_dir=tmp_path / "ck")
    assert net.param_hash(net.encoder_params) == enc
    assert net.param_hash(net.decoder_params) != dec
    assert len(log) == 1
    assert (tmp_path / "log.csv").read_text().splitlines()[0] == "epoch,step,loss,val_ods_f"
    assert (tmp_path / "ck" / "epoch001.cftn").exists()


def test_overfit_single_sample():
    net = desk(1)
    image, mask = _scene_pairs(1)[0]
    cfg = TrainConfig(lr=1e-3, crop=64, crops=1)
    rng = np.random.default_rng(0)
    opt = Adam(lr=cfg.lr)
    x, y = make_minibatch(image, mask, cfg, rng)
    losses = [train_step(net, opt, x, y, cfg, rng) for _ in range(200)]
    assert losses[-1] < 0.3 * losses[0]


def test_training_is_deterministic():
    data = _scene_pairs(2, 48)
    cfg = TrainConfig(crop=32, crops=1, epochs=2, seed=4)
    a, b = desk(3), desk(3)
    la, lb = train(a, data, cfg), train(b, data, cfg)
    assert la == lb and a.param_hash() == b.param_hash()


def test_divergence_reports_context():
    net = desk()
    net.params["pred.b"][:] = np.nan
    cfg = TrainConfig(crop=32, crops=1, epochs=1)
    with pytest.raises(TrainingError) as exc:
        train(net, _scene_pairs(1, 48), cfg)
    assert exc.value.epoch == 1 or exc.value.param is not None


def test_empty_dataset():
    with pytest.raises(InputError):
        train(desk(), [], TrainConfig(crop=32))


# ------------------------------------------------------------ checkpoint

def test_checkpoint_roundtrip(tmp_path):
    net = desk(7)
    save_tensors(tmp_path / "w.cftn", net.state_dict())
    other = desk(8)
    other.load_state_dict(load_tensors(tmp_path / "w.cftn"))
    assert other.param_hash() == net.param_hash()


def test_checkpoint_truncated():
    data = dumps_tensors(desk().state_dict())
    with pytest.raises(ParseError) as exc:
        loads_tensors(data[:-10])
    assert exc.value.offset is not None
