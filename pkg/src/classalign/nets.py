"""Small fully-connected networks: feature extractor, classifier, discriminator.

The discriminator is class-aware: its 2K outputs are normalized by one joint
softmax, so row k of the first half is P(domain=source, class=k | feature)
and row k of the second half is P(domain=target, class=k | feature).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor, leaky_relu, matmul, softmax_t
from .errors import ParameterError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1


@dataclass
class MlpArch:
    """Layer widths plus activation choices for one MLP."""

    widths: list[int]
    slope: float = 0.2               # leaky-ReLU slope on hidden layers
    terminal: str = "none"           # "none" | "softmax" (joint, over the full output)

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ParameterError("an MLP needs at least an input and an output width")
        if any(w <= 0 for w in self.widths):
            raise ParameterError(f"all layer widths must be positive, got {self.widths}")
        if self.terminal not in ("none", "softmax"):
            raise ParameterError(f"unknown terminal activation {self.terminal!r}")

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]


def init_params(arch: MlpArch, seed: int, name: str = "mlp") -> list[tuple[Tensor, Tensor]]:
    """Uniform fan-in-scaled weights (bound sqrt(1/fan_in)), zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(arch.widths[:-1], arch.widths[1:])):
        bound = np.sqrt(1.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        layers.append((
            Tensor(w, requires_grad=True, name=f"{name}.w{i}"),
            Tensor(np.zeros(fan_out), requires_grad=True, name=f"{name}.b{i}"),
        ))
    return layers


class Mlp:
    """An MLP with leaky-ReLU hidden activations and an optional terminal softmax."""

    def __init__(self, arch: MlpArch, layers: list[tuple[Tensor, Tensor]]):
        if len(layers) != len(arch.widths) - 1:
            raise ShapeError(f"arch {arch.widths} expects {len(arch.widths) - 1} layers, "
                             f"got {len(layers)}")
        for (w, b), fan_in, fan_out in zip(layers, arch.widths[:-1], arch.widths[1:]):
            if w.values.shape != (fan_in, fan_out) or b.values.shape != (fan_out,):
                raise ShapeError(f"layer shapes {w.values.shape}/{b.values.shape} do not "
                                 f"match arch widths {fan_in}->{fan_out}")
        self.arch = arch
        self.layers = layers

    @classmethod
    def create(cls, arch: MlpArch, seed: int, name: str = "mlp") -> "Mlp":
        return cls(arch, init_params(arch, seed, name))

    def params(self) -> list[Tensor]:
        return [t for layer in self.layers for t in layer]

    def forward(self, x: Tensor) -> Tensor:
        if x.values.ndim != 2 or x.values.shape[1] != self.arch.input_width:
            raise ShapeError(f"input shape {x.values.shape} does not match "
                             f"MLP input width {self.arch.input_width}")
        h = x
        last = len(self.layers) - 1
        for i, (w, b) in enumerate(self.layers):
            h = matmul(h, w) + b
            if i < last:
                h = leaky_relu(h, self.arch.slope)
        if self.arch.terminal == "softmax":
            h = softmax_t(h, 1.0)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        return self.forward(x)


@dataclass
class ModelBundle:
    """Extractor, classifier, and discriminator sharing one feature space."""

    extractor: Mlp
    classifier: Mlp
    discriminator: Mlp
    num_classes: int
    seed: int
    disc_classes: int = field(default=0)    # 1 in binary-baseline mode, else num_classes

    def __post_init__(self):
        if self.disc_classes == 0:
            self.disc_classes = self.num_classes
        h = self.extractor.arch.output_width
        if self.classifier.arch.input_width != h or self.discriminator.arch.input_width != h:
            raise ShapeError("classifier/discriminator input widths must equal the "
                             f"extractor output width {h}")
        if self.classifier.arch.output_width != self.num_classes:
            raise ShapeError(f"classifier must output {self.num_classes} logits")
        if self.discriminator.arch.output_width != 2 * self.disc_classes:
            raise ShapeError(f"discriminator must output {2 * self.disc_classes} channels")

    @property
    def feature_width(self) -> int:
        return self.extractor.arch.output_width

    def task_params(self) -> list[Tensor]:
        return self.extractor.params() + self.classifier.params()

    def all_params(self) -> list[Tensor]:
        return self.task_params() + self.discriminator.params()


def build_bundle(input_dim: int, num_classes: int, seed: int,
                 extractor_hidden=(64, 64), feature_dim: int = 16,
                 disc_hidden=(64, 32), slope: float = 0.2,
                 disc_classes: int | None = None) -> ModelBundle:
    """Construct the three networks with seed-derived deterministic inits."""
    kd = num_classes if disc_classes is None else disc_classes
    f_arch = MlpArch([input_dim, *extractor_hidden, feature_dim], slope=slope)
    c_arch = MlpArch([feature_dim, num_classes], slope=slope)
    d_arch = MlpArch([feature_dim, *disc_hidden, 2 * kd], slope=slope, terminal="softmax")
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(3)]
    return ModelBundle(
        extractor=Mlp.create(f_arch, seeds[0], "extractor"),
        classifier=Mlp.create(c_arch, seeds[1], "classifier"),
        discriminator=Mlp.create(d_arch, seeds[2], "discriminator"),
        num_classes=num_classes,
        seed=seed,
        disc_classes=kd,
    )


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def feature_extract(extractor: Mlp, x) -> Tensor:
    """Map raw inputs to features."""
    return extractor.forward(_as_tensor(x))


def classify(classifier: Mlp, features) -> Tensor:
    """Map features to raw class logits (probabilities via softmax_t at T=1)."""
    return classifier.forward(_as_tensor(features))


def discriminate(discriminator: Mlp, features) -> Tensor:
    """Joint distribution over (domain, class): rows sum to 1 across all channels."""
    out = discriminator.forward(_as_tensor(features))
    if discriminator.arch.terminal != "softmax":
        out = softmax_t(out, 1.0)
    return out


# -- checkpoint format ---------------------------------------------------

def _mlp_to_dict(mlp: Mlp) -> dict:
    return {
        "widths": list(mlp.arch.widths),
        "slope": mlp.arch.slope,
        "terminal": mlp.arch.terminal,
        "layers": [
            {"weight": w.values.ravel().tolist(), "bias": b.values.tolist()}
            for w, b in mlp.layers
        ],
    }


def _mlp_from_dict(d: dict, name: str) -> Mlp:
    arch = MlpArch(list(d["widths"]), slope=d["slope"], terminal=d["terminal"])
    layers = []
    for i, layer in enumerate(d["layers"]):
        fan_in, fan_out = arch.widths[i], arch.widths[i + 1]
        w = np.asarray(layer["weight"], dtype=np.float64).reshape(fan_in, fan_out)
        b = np.asarray(layer["bias"], dtype=np.float64)
        layers.append((Tensor(w, requires_grad=True, name=f"{name}.w{i}"),
                       Tensor(b, requires_grad=True, name=f"{name}.b{i}")))
    return Mlp(arch, layers)


def save_checkpoint(bundle: ModelBundle, path):
    doc = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "num_classes": bundle.num_classes,
        "disc_classes": bundle.disc_classes,
        "seed": bundle.seed,
        "extractor": _mlp_to_dict(bundle.extractor),
        "classifier": _mlp_to_dict(bundle.classifier),
        "discriminator": _mlp_to_dict(bundle.discriminator),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)


def load_checkpoint(path) -> ModelBundle:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    version = doc.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ParameterError(f"unsupported checkpoint format version {version}")
    return ModelBundle(
        extractor=_mlp_from_dict(doc["extractor"], "extractor"),
        classifier=_mlp_from_dict(doc["classifier"], "classifier"),
        discriminator=_mlp_from_dict(doc["discriminator"], "discriminator"),
        num_classes=doc["num_classes"],
        seed=doc["seed"],
        disc_classes=doc["disc_classes"],
    )
