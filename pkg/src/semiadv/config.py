"""Run configuration: one flat set of hyperparameters, stored as an INI file.

Example ``run.ini``::

    [semiadv]
    image_size = 64
    seed = 0
    lr_pretrain = 0.001

Keys not mentioned keep their defaults. The CLI's ``--config default``
uses the defaults unchanged.
"""
import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from typing import Tuple

SECTION = "semiadv"


@dataclass
class Config:
    # data
    image_size: int = 64
    n_identities: int = 60
    images_per_identity: int = 6
    gender_signal_strength: float = 1.0
    noise_sigma: float = 0.05
    train_fraction: float = 0.75
    # architecture
    leaky_slope: float = 0.2
    encoder_channels: Tuple[int, ...] = (12, 12)
    decoder_channels: Tuple[int, ...] = (64, 128)
    classifier_channels: Tuple[int, ...] = (8, 16, 32, 64, 128, 256)
    classifier_hidden: int = 256
    dropout: float = 0.5
    descriptor_dim: int = 64
    eval_classifier_channels: Tuple[int, ...] = (8, 16, 24, 48, 96)
    eval_classifier_hidden: int = 128
    eval_descriptor_dim: int = 48
    matcher_blur_prob: float = 0.5
    # optimisation
    batch_size: int = 16
    lr_aux: float = 1e-3
    lr_pretrain: float = 1e-3
    lr_train: float = 1e-3
    epochs_aux: int = 5
    epochs_matcher: int = 10
    epochs_pretrain: int = 40
    epochs_train: int = 20
    epochs_eval: int = 5
    lambda_D: float = 1.0
    lambda_G: float = 1.0
    lambda_M: float = 1.0
    # bookkeeping
    seed: int = 0
    eval_seed_offset: int = 1000
    max_impostor_pairs: int = 50000

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def to_ini(self):
        lines = [f"[{SECTION}]"]
        for k, v in self.to_dict().items():
            if isinstance(v, tuple):
                v = ", ".join(str(x) for x in v)
            lines.append(f"{k} = {v}")
        return "\n".join(lines) + "\n"


_FIELD_TYPES = {f.name: f for f in fields(Config)}


def _coerce(name, raw):
    default = getattr(Config(), name)
    raw = str(raw).strip()
    if isinstance(default, tuple):
        return tuple(int(x) for x in raw.replace(",", " ").split())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    return float(raw)


def from_mapping(mapping, base=None):
    base = base or Config()
    updates = {}
    for k, v in mapping.items():
        if k not in _FIELD_TYPES:
            raise KeyError(f"unknown config key {k!r}")
        updates[k] = _coerce(k, v)
    return base.replace(**updates)


def load_config(path=None):
    """Read an INI config; ``None`` or ``"default"`` returns the defaults."""
    if path is None or str(path) == "default":
        return Config()
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys like lambda_D are case-sensitive
    with open(path, encoding="utf-8") as fh:
        parser.read_file(fh)
    if not parser.has_section(SECTION):
        raise KeyError(f"config file {path} has no [{SECTION}] section")
    return from_mapping(dict(parser.items(SECTION)))


def desk_classifier_channels(channels, image_size, final_size=4):
    """Keep the last log2(image_size/final_size) widths so the last map is final_size^2.

    At 224 px with six widths, ceil-mode pooling gives 112,56,28,14,7,4.
    """
    n_blocks = 0
    s = image_size
    while s > final_size:
        s = -(-s // 2)
        n_blocks += 1
    if n_blocks > len(channels):
        raise ValueError(f"image size {image_size} needs {n_blocks} blocks, only {len(channels)} widths given")
    return tuple(channels[len(channels) - n_blocks:])


__all__ = ["Config", "load_config", "from_mapping", "desk_classifier_channels"]
