"""Flat JSON run configuration shared by the CLI and the test suites.

One flat object carries every knob of a run (data generation, model,
sampler, loss and schedule). Builders turn it into the typed per-module
configs. Unknown keys are rejected so typos fail loudly.
"""

import dataclasses
import json
from dataclasses import dataclass, fields
from importlib import resources

import numpy as np

from .data import SynthConfig
from .errors import ConfigConflict, ParseError, ValidationError
from .losses import LossConfig
from .model import ModelConfig
from .sampler import SamplerConfig
from .trainer import VARIANTS, TrainConfig, apply_preset


@dataclass(frozen=True)
class RunConfig:
    # data generation
    n_train_identities: int = 50
    n_test_identities: int = 50
    samples_per_identity: tuple = (8, 24)
    test_samples_per_identity: int = 16
    input_dim: int = 32
    n_cameras: int = 4
    M: int = 0
    identity_spread: float = 1.0
    nuisance_scale: float = 1.0
    camera_mixing: float = 0.3
    noise_sigma: float = 0.3
    attribute_strength: float = 3.0
    data_seed: int = 0
    # model
    hidden_dims: tuple = (64,)
    embed_dim: int = 32
    batch_norm_output: bool = True
    Q: int = 16
    # sampler
    P: int = 4
    K: int = 8
    replacement_policy: str = "resample"
    # loss
    s: float = 10.0
    am_margin: float = 0.5
    triplet_margin: float = 0.3
    gamma: float = 0.43
    lam: float = 0.25
    reduction: str = "mean"
    attr_s: float | None = None
    attr_m: float | None = None
    # schedule
    loss_variant: str = "AM0BH"
    epochs: int = 60
    warmup_epochs: int = 8
    base_lr: float = 1e-3
    start_lr: float = 1e-5
    decay: tuple = ((36, 1e-4), (52, 1e-5))
    seed: int = 0
    # evaluation
    max_rank: int = 10
    preset: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples_per_identity", _int_tuple(self.samples_per_identity))
        object.__setattr__(self, "hidden_dims", _int_tuple(self.hidden_dims))
        object.__setattr__(self, "decay", tuple((int(e), float(v)) for e, v in self.decay))
        if self.loss_variant not in VARIANTS:
            raise ValidationError(f"unknown loss variant {self.loss_variant!r}; choose from {VARIANTS}")
        if self.max_rank < 1:
            raise ValidationError("max_rank must be >= 1")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "decay":
                v = [list(pair) for pair in v]
            elif isinstance(v, tuple):
                v = list(v)
            out[f.name] = v
        return out

    # builders -------------------------------------------------------------

    @property
    def uses_attributes(self):
        return self.loss_variant == "AM0BH_Attr"

    def synth_config(self):
        return SynthConfig(
            n_train_identities=self.n_train_identities,
            n_test_identities=self.n_test_identities,
            samples_per_identity=self.samples_per_identity,
            test_samples_per_identity=self.test_samples_per_identity,
            input_dim=self.input_dim,
            n_cameras=self.n_cameras,
            M=self.M,
            identity_spread=self.identity_spread,
            nuisance_scale=self.nuisance_scale,
            camera_mixing=self.camera_mixing,
            noise_sigma=self.noise_sigma,
            attribute_strength=self.attribute_strength,
            seed=self.data_seed,
        )

    def model_config(self, ds):
        """Model sized for ``ds``; attribute slices only for the attribute variant."""
        m_attr = ds.M if self.uses_attributes else 0
        if self.uses_attributes and m_attr == 0:
            raise ConfigConflict("AM0BH_Attr needs a dataset with attribute columns (M > 0)")
        n_classes = len(np.unique(ds.ids[ds.split == "train"]))
        return ModelConfig(
            input_dim=ds.input_dim,
            embed_dim=self.embed_dim,
            n_classes=n_classes,
            hidden_dims=self.hidden_dims,
            batch_norm_output=self.batch_norm_output,
            M=m_attr,
            Q=self.Q,
        )

    def train_config(self, seed=None):
        return TrainConfig(
            epochs=self.epochs,
            warmup_epochs=self.warmup_epochs,
            base_lr=self.base_lr,
            start_lr=self.start_lr,
            decay=self.decay,
            loss_variant=self.loss_variant,
            am_margin=self.am_margin,
            seed=self.seed if seed is None else seed,
        )

    def sampler_config(self, seed=None):
        return SamplerConfig(
            P=self.P, K=self.K, seed=self.seed if seed is None else seed,
            replacement_policy=self.replacement_policy,
        )

    def loss_config(self):
        base = LossConfig(
            s=self.s,
            triplet_margin=self.triplet_margin,
            gamma=self.gamma,
            lam=self.lam,
            reduction=self.reduction,
            attr_s=self.attr_s,
            attr_m=self.attr_m,
        )
        if self.preset:
            base = apply_preset(self.preset, self.loss_variant, base)
        return base


def _int_tuple(v):
    if isinstance(v, (int, np.integer)):
        return (int(v),)
    return tuple(int(x) for x in v)


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def from_dict(values, base=None):
    """Overlay ``values`` on ``base`` (defaults if omitted)."""
    unknown = sorted(set(values) - set(FIELD_TYPES))
    if unknown:
        raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
    try:
        return dataclasses.replace(base or RunConfig(), **values)
    except TypeError as exc:
        raise ValidationError(str(exc)) from None


def load(path, base=None):
    try:
        with open(path) as fh:
            values = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc.msg}", line=exc.lineno) from None
    if not isinstance(values, dict):
        raise ParseError(f"{path}: top level must be a JSON object", line=1)
    return from_dict(values, base)


def save(cfg, path):
    with open(path, "w") as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def bundled(name="benchmark"):
    """Load one of the configs shipped in ``jointembed/configs``."""
    ref = resources.files("jointembed") / "configs" / f"{name}.json"
    if not ref.is_file():
        raise ValidationError(f"no bundled config named {name!r}")
    return from_dict(json.loads(ref.read_text()))


def parse_value(name, text):
    """Parse a command-line override string for field ``name``."""
    kind = FIELD_TYPES[name]
    try:
        if name == "decay":
            pairs = [item.split(":") for item in text.split(",") if item]
            return tuple((int(e), float(v)) for e, v in pairs)
        if name in ("samples_per_identity", "hidden_dims"):
            return tuple(int(v) for v in text.split(",") if v)
        if name == "batch_norm_output":
            low = text.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return low in ("true", "1", "yes")
        if text.lower() in ("none", "null") and "None" in str(kind):
            return None
        if kind in (int, "int"):
            return int(text)
        if "float" in str(kind):
            return float(text)
        return text
    except ValueError as exc:
        raise ValidationError(f"--{name.replace('_', '-')}: {exc}") from None
