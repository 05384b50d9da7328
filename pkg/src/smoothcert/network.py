"""Model specifications and the sequential network built from them.

A ModelSpec is a plain description (input shape plus an ordered list of
LayerSpecs) that can be validated, serialized canonically for checkpoints,
and instantiated as a Network.  The final layer must be dense; it is the
classification head that transfer experiments replace.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .layers import Conv3x3, Dense, Flatten, ReLU, ShapeError
from .norms import NormLayer
from .tensor import check_finite_array

LAYER_KINDS = ("dense", "conv2d", "relu", "norm", "flatten")


@dataclass(frozen=True)
class LayerSpec:
    """One layer of a model: kind plus the fields that kind needs."""
    kind: str
    fan_in: int = None
    fan_out: int = None
    in_channels: int = None
    out_channels: int = None
    norm_kind: str = None
    groups: int = None
    momentum: float = 0.1
    eps: float = 1e-5

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "dense" and not (self.fan_in and self.fan_out):
            raise ValueError("dense layer needs fan_in and fan_out")
        if self.kind == "conv2d" and not (self.in_channels and self.out_channels):
            raise ValueError("conv2d layer needs in_channels and out_channels")
        if self.kind == "norm" and self.norm_kind is None:
            raise ValueError("norm layer needs norm_kind")


@dataclass(frozen=True)
class ModelSpec:
    """Input shape [C, H, W] plus an ordered stack of layers ending in the head."""
    input_shape: tuple
    layers: tuple

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        if len(self.input_shape) != 3:
            raise ValueError("input_shape must be [C, H, W]")
        if not self.layers or self.layers[-1].kind != "dense":
            raise ValueError("the final layer must be dense (the classification head)")
        if self.layers[-1].fan_out < 2:
            raise ValueError("the head must emit at least 2 classes")

    @property
    def num_classes(self):
        return self.layers[-1].fan_out

    def with_head(self, num_classes):
        """Same body, fresh head size; used when transferring to a new task."""
        head = self.layers[-1]
        new_head = LayerSpec(kind="dense", fan_in=head.fan_in, fan_out=int(num_classes))
        return ModelSpec(self.input_shape, self.layers[:-1] + (new_head,))

    # canonical JSON: sorted keys, no floats (floats carried as repr strings)
    def to_json(self):
        layers = []
        for spec in self.layers:
            entry = {"kind": spec.kind}
            for key in ("fan_in", "fan_out", "in_channels", "out_channels",
                        "norm_kind", "groups"):
                value = getattr(spec, key)
                if value is not None:
                    entry[key] = value
            if spec.kind == "norm":
                entry["momentum"] = repr(spec.momentum)
                entry["eps"] = repr(spec.eps)
            layers.append(entry)
        doc = {"input_shape": list(self.input_shape), "layers": layers}
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        layers = []
        for entry in doc["layers"]:
            kwargs = dict(entry)
            if "momentum" in kwargs:
                kwargs["momentum"] = float(kwargs["momentum"])
            if "eps" in kwargs:
                kwargs["eps"] = float(kwargs["eps"])
            layers.append(LayerSpec(**kwargs))
        return cls(tuple(doc["input_shape"]), tuple(layers))


def conv_classifier(input_shape=(1, 16, 16), channels=16, blocks=2,
                    norm_kind="layer", groups=None, num_classes=8):
    """Standard small body: `blocks` conv+norm+relu stages, flatten, dense head."""
    c, h, w = input_shape
    layers = []
    in_c = c
    for _ in range(blocks):
        layers.append(LayerSpec(kind="conv2d", in_channels=in_c, out_channels=channels))
        layers.append(LayerSpec(kind="norm", norm_kind=norm_kind, groups=groups))
        layers.append(LayerSpec(kind="relu"))
        in_c = channels
    layers.append(LayerSpec(kind="flatten"))
    layers.append(LayerSpec(kind="dense", fan_in=channels * h * w, fan_out=num_classes))
    return ModelSpec(input_shape, tuple(layers))


def _build_layer(i, spec, current_shape):
    name = f"layer{i}"
    if spec.kind == "dense":
        return Dense(spec.fan_in, spec.fan_out, name=name)
    if spec.kind == "conv2d":
        return Conv3x3(spec.in_channels, spec.out_channels, name=name)
    if spec.kind == "relu":
        return ReLU(name=name)
    if spec.kind == "flatten":
        return Flatten(name=name)
    channels = current_shape[0] if len(current_shape) == 3 else None
    if channels is None:
        raise ShapeError(f"{name} (norm): norm layers need [C,H,W] input, got {current_shape}")
    return NormLayer(spec.norm_kind, channels, groups=spec.groups,
                     momentum=spec.momentum, eps=spec.eps, name=name)


class Network:
    """Sequential network instantiated from a ModelSpec.

    forward/backward follow the layer protocol; parameter gradients
    accumulate until zero_grad.  predict_labels serves the certifier's
    model interface (eval-mode argmax over logits).
    """

    def __init__(self, spec, seed=None):
        self.spec = spec
        self.layers = []
        shape = tuple(spec.input_shape)
        for i, layer_spec in enumerate(spec.layers):
            layer = _build_layer(i, layer_spec, shape)
            shape = layer.out_shape(shape)  # validates adjacency as we go
            self.layers.append(layer)
        if len(shape) != 1:
            raise ShapeError(f"model output must be flat logits, got shape {shape}")
        self.num_classes = spec.num_classes
        if seed is not None:
            self.init_parameters(seed)

    def init_parameters(self, seed):
        """Kaiming fan-in Gaussian weights, zero biases, identity norm affine.

        Only weight tensors consume the seed stream, so the draw sequence is
        independent of how many bias/norm tensors sit between them.
        """
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_parameters(rng)
        return self

    def params(self):
        return [p for layer in self.layers for p in layer.params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def forward(self, x, train=False):
        x = np.asarray(x)
        if x.ndim != len(self.spec.input_shape) + 1 or x.shape[1:] != self.spec.input_shape:
            raise ShapeError(f"model input: expected [N, {', '.join(map(str, self.spec.input_shape))}], "
                             f"got {x.shape}")
        for layer in self.layers:
            x = layer.forward(x, train=train)
        return check_finite_array(x, "logits")

    def backward(self, dlogits):
        dx = dlogits
        for layer in reversed(self.layers):
            dx = layer.backward(dx)
        return dx

    def loss_backward(self, batch, labels):
        """Train-mode forward, mean softmax cross-entropy, full backward."""
        logits = self.forward(batch, train=True)
        loss, dlogits = softmax_cross_entropy(logits, labels)
        self.backward(dlogits)
        return loss

    def predict_labels(self, batch):
        return np.argmax(self.forward(batch, train=False), axis=1).astype(np.int64)

    def accuracy(self, images, labels, batch=512):
        hits = 0
        for start in range(0, images.shape[0], batch):
            stop = min(start + batch, images.shape[0])
            hits += int((self.predict_labels(images[start:stop]) == labels[start:stop]).sum())
        return hits / images.shape[0]

    # -- persistent state --------------------------------------------------

    def state(self):
        """Ordered name -> array mapping of parameters and norm statistics."""
        out = {}
        for i, layer in enumerate(self.layers):
            for attr in ("weight", "bias", "gamma", "beta"):
                if hasattr(layer, attr):
                    out[f"{i}.{attr}"] = getattr(layer, attr).data
            for stat_name, value in layer.state_items():
                out[f"{i}.{stat_name}"] = value
        return out

    def load_state(self, state):
        expected = self.state()
        if sorted(state.keys()) != sorted(expected.keys()):
            missing = sorted(set(expected) - set(state))
            extra = sorted(set(state) - set(expected))
            raise ValueError(f"state mismatch: missing {missing}, unexpected {extra}")
        for i, layer in enumerate(self.layers):
            for attr in ("weight", "bias", "gamma", "beta"):
                if hasattr(layer, attr):
                    tensor = getattr(layer, attr)
                    value = np.asarray(state[f"{i}.{attr}"], dtype=tensor.dtype)
                    if value.shape != tensor.shape:
                        raise ValueError(f"state {i}.{attr}: shape {value.shape} != {tensor.shape}")
                    tensor.data = value.copy()
                    tensor.grad = None
            stats = {name: state[f"{i}.{name}"] for name, _ in layer.state_items()}
            if stats:
                layer.load_state_items(stats)
        return self

    def astype(self, dtype):
        """Cast parameters in place (float64 is used by gradient checks)."""
        for p in self.params():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of softmax(logits) against integer labels.

    Accumulates in float64 regardless of the logits dtype.  Returns the scalar
    loss and d(loss)/d(logits) cast back to the logits dtype.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - log_norm
    idx = np.arange(n)
    loss = float(-log_probs[idx, labels].mean())
    probs = np.exp(log_probs)
    probs[idx, labels] -= 1.0
    return loss, (probs / n).astype(logits.dtype)
