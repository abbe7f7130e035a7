"""Fully convolutional encoder-decoder contour network.

The encoder is a VGG-style stack of 3x3 conv/relu blocks, each closed by a
2x2 max-pool whose switches are kept. ``conv6`` plays the role of the
convolutionalised fc6. The decoder is deliberately light: a 1x1 reduction
(``deconv6``), then one unpool + conv block per pooling stage, replaying the
encoder switches in reverse order, and a 1-channel ``pred`` conv + sigmoid.
"""
from dataclasses import asdict, dataclass, field
import hashlib
import json

import numpy as np

from ..errors import ConfigError, DimensionError, InputError
from ..tensor import ops


@dataclass
class NetworkConfig:
    encoder: list
    conv6: int
    decoder: list
    conv6_kernel: int = 3
    encoder_kernel: int = 3
    decoder_kernel: int = 5
    dropout: float = 0.5
    in_channels: int = 3
    bias: bool = True
    preset: str = "custom"

    @property
    def stages(self):
        return len(self.encoder)

    @classmethod
    def paper(cls, **overrides):
        cfg = cls(
            encoder=[[64, 64], [128, 128], [256, 256, 256], [512, 512, 512], [512, 512, 512]],
            conv6=4096,
            conv6_kernel=7,
            decoder=[512, 512, 256, 128, 64, 32],
            preset="paper",
        )
        return cfg.replace(**overrides)

    @classmethod
    def desk(cls, **overrides):
        cfg = cls(
            encoder=[[16], [32], [64]],
            conv6=128,
            conv6_kernel=3,
            decoder=[64, 32, 16, 16],
            dropout=0.1,
            preset="desk",
        )
        return cfg.replace(**overrides)

    @classmethod
    def from_preset(cls, name, **overrides):
        if name == "paper":
            return cls.paper(**overrides)
        if name == "desk":
            return cls.desk(**overrides)
        raise ConfigError(f"unknown scale preset {name!r} (expected 'paper' or 'desk')")

    def replace(self, **overrides):
        d = asdict(self)
        d.update(overrides)
        cfg = NetworkConfig(**d)
        cfg.validate()
        return cfg

    def validate(self):
        s = self.stages
        if s < 1:
            raise ConfigError("encoder needs at least one pooling stage", stage="encoder")
        for i, block in enumerate(self.encoder):
            if not block or any(int(c) < 1 for c in block):
                raise ConfigError(f"encoder stage {i + 1} has invalid widths {block}", stage=f"conv{i + 1}")
        if len(self.decoder) != s + 1:
            raise ConfigError(
                f"decoder needs {s + 1} widths (deconv6 plus one per pooling stage), got {len(self.decoder)}",
                stage="decoder",
            )
        # each unpool replays pool k's switches, so its input must carry pool k's channels
        for i in range(s):
            pool_stage = s - i
            want = self.encoder[pool_stage - 1][-1]
            got = self.decoder[i]
            producer = "deconv6" if i == 0 else f"deconv{pool_stage + 1}"
            if got != want:
                raise ConfigError(
                    f"{producer} outputs {got} channels but unpooling with pool{pool_stage} switches needs {want}",
                    stage=producer,
                )
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}", stage="dropout")
        for name in ("conv6_kernel", "encoder_kernel", "decoder_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{name} must be a positive odd integer, got {k}", stage=name)
        return self


@dataclass
class LayerSpec:
    name: str
    setup: str
    kernel: tuple  # (k, k, out_channels)
    activation: str


def decoder_table(cfg):
    """Decoder rows as (name, setup, kernel h x w x channels, activation)."""
    s = cfg.stages
    k = cfg.decoder_kernel
    rows = [LayerSpec("deconv6", "conv", (1, 1, cfg.decoder[0]), "relu")]
    for i in range(1, s + 1):
        rows.append(LayerSpec(f"deconv{s + 1 - i}", "unpool-conv", (k, k, cfg.decoder[i]), "relu"))
    rows.append(LayerSpec("pred", "conv", (k, k, 1), "sigmoid"))
    return rows


class Conv:
    def __init__(self, name, cin, cout, k, params, rng, bias=True, gain=2.0):
        self.name, self.k, self.pad = name, k, k // 2
        self.wname, self.bname = f"{name}.w", f"{name}.b" if bias else None
        std = np.sqrt(gain / (cin * k * k))
        params[self.wname] = (rng.standard_normal((cout, cin, k, k)) * std).astype(np.float32)
        if bias:
            params[self.bname] = np.zeros(cout, dtype=np.float32)

    def forward(self, x, params):
        b = params[self.bname] if self.bname else None
        out, cols = ops.conv2d_forward(x, params[self.wname], b, 1, self.pad, return_cols=True)
        self._cache = (x, cols)
        return out

    def backward(self, g, params, grads, need_input_grad=True):
        x, cols = self._cache
        gx, gw, gb = ops.conv2d_backward(g, x, params[self.wname], 1, self.pad, cols=cols,
                                         need_input_grad=need_input_grad)
        grads[self.wname] = gw
        if self.bname:
            grads[self.bname] = gb
        self._cache = None
        return gx


class Network:
    """Parameters live in ``params`` (name -> float32 array)."""

    def __init__(self, cfg, params, encoder, conv6, decoder, pred):
        self.cfg = cfg
        self.params = params
        self.encoder = encoder  # list of stages, each a list of Conv
        self.conv6 = conv6
        self.decoder = decoder  # deconv6 first, then one Conv per unpool stage
        self.pred = pred
        self.switches = [None] * cfg.stages
        self._tape = None

    @property
    def encoder_params(self):
        names = [c.wname for stage in self.encoder for c in stage] + [self.conv6.wname]
        names += [c.bname for stage in self.encoder for c in stage if c.bname]
        if self.conv6.bname:
            names.append(self.conv6.bname)
        return sorted(names)

    @property
    def decoder_params(self):
        enc = set(self.encoder_params)
        return [n for n in self.params if n not in enc]

    def param_hash(self, names=None):
        h = hashlib.sha256()
        for name in sorted(names if names is not None else self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def forward(self, x, train_mode=False, rng=None):
        """Contour probabilities for a (N, C, H, W) batch of [0, 1] images.

        Inputs of any size are reflect-padded to a multiple of 2**stages and
        the output is cropped back.
        """
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise DimensionError(
                f"expected input (N, {self.cfg.in_channels}, H, W), got {x.shape}", axis="channels"
            )
        if not np.all(np.isfinite(x)):
            raise InputError("input image contains non-finite values")
        n, _, h, w = x.shape
        m = 2 ** self.cfg.stages
        ph, pw = (-h) % m, (-w) % m
        x = np.asarray(x, dtype=np.float32) - np.float32(0.5)
        if ph or pw:
            x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), mode="symmetric")
        rate = self.cfg.dropout
        tape = []
        for si, stage in enumerate(self.encoder):
            for conv in stage:
                x = conv.forward(x, self.params)
                tape.append(("conv", conv))
                tape.append(("relu", x))
                x = ops.relu(x)
            x, sw = ops.maxpool2x2_forward(x)
            self.switches[si] = sw
            tape.append(("pool", sw))
        enc_len = len(tape)
        x = self.conv6.forward(x, self.params)
        tape += [("conv", self.conv6), ("relu", x)]
        x = ops.relu(x)
        for di, conv in enumerate(self.decoder):
            if di > 0:
                sw = self.switches[self.cfg.stages - di]
                x = ops.unpool2x2(x, sw)
                tape.append(("unpool", sw))
            x = conv.forward(x, self.params)
            tape += [("conv", conv), ("relu", x)]
            x = ops.relu(x)
            x, mask = ops.dropout(x, rate, rng, train_mode)
            tape.append(("dropout", mask))
        logits = self.pred.forward(x, self.params)
        tape.append(("conv", self.pred))
        self.logits = logits
        self._tape = (tape, enc_len, (h, w))
        return ops.sigmoid(logits)[:, :, :h, :w]

    def backward(self, grad_logits, freeze_encoder=False):
        """Backpropagate d(loss)/d(logits) of the last forward; returns grads by name."""
        tape, enc_len, (h, w) = self._tape
        full = self.logits.shape
        if grad_logits.shape != full:
            g = np.zeros(full, dtype=np.float32)
            g[:, :, :h, :w] = grad_logits
            grad_logits = g
        g = grad_logits.astype(np.float32, copy=False)
        grads = {}
        rate = self.cfg.dropout
        # with a frozen encoder, stop at deconv6 (tape: ..., conv6, relu, deconv6, ...)
        stop = enc_len + 2 if freeze_encoder else 0
        for idx in range(len(tape) - 1, stop - 1, -1):
            kind, item = tape[idx]
            if kind == "conv":
                g = item.backward(g, self.params, grads, need_input_grad=idx != stop)
            elif kind == "relu":
                g = ops.relu_backward(g, item)
            elif kind == "dropout":
                g = ops.dropout_backward(g, item, rate)
            elif kind == "pool":
                g = ops.maxpool2x2_backward(g, item)
            elif kind == "unpool":
                g = ops.unpool2x2_backward(g, item)
        for kind, item in tape:
            if kind == "conv":
                item._cache = None
        self._tape = None
        return grads

    def state_dict(self):
        return dict(self.params)

    def load_state_dict(self, tensors):
        for name, arr in self.params.items():
            if name not in tensors:
                raise InputError(f"checkpoint lacks tensor {name!r}")
            src = np.asarray(tensors[name], dtype=np.float32)
            if src.size != arr.size:
                raise DimensionError(f"{name}: checkpoint has {src.size} values, network needs {arr.size}")
            arr[...] = src.reshape(arr.shape)


def build_network(cfg, rng):
    cfg.validate()
    params = {}
    encoder = []
    cin = cfg.in_channels
    for si, block in enumerate(cfg.encoder):
        stage = []
        for ci, cout in enumerate(block):
            stage.append(Conv(f"conv{si + 1}_{ci + 1}", cin, cout, cfg.encoder_kernel, params, rng, cfg.bias))
            cin = cout
        encoder.append(stage)
    conv6 = Conv("conv6", cin, cfg.conv6, cfg.conv6_kernel, params, rng, cfg.bias)
    table = decoder_table(cfg)
    decoder = []
    cin = cfg.conv6
    for row in table[:-1]:
        k, _, cout = row.kernel
        decoder.append(Conv(row.name, cin, cout, k, params, rng, cfg.bias))
        cin = cout
    pred = Conv("pred", cin, 1, cfg.decoder_kernel, params, rng, cfg.bias, gain=1.0)
    return Network(cfg, params, encoder, conv6, decoder, pred)


def predict(net, image):
    """Contour map (H, W) for one image given as (H, W, C) or (H, W) in [0, 1]."""
    img = np.asarray(image, dtype=np.float32)
    if img.ndim == 2:
        img = img[:, :, None]
    return net.forward(img.transpose(2, 0, 1)[None], train_mode=False)[0, 0]


def config_to_json(cfg):
    return json.dumps(asdict(cfg), indent=2, sort_keys=True)


def config_from_dict(d):
    return NetworkConfig(**d).validate()
