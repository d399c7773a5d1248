"""Gender prototype images and same/opposite/neutral selection."""
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .data import to_uint8

KINDS = ("SM", "OP", "NT")


@dataclass(frozen=True)
class PrototypeSet:
    p_male: np.ndarray    # [3, H, W]
    p_female: np.ndarray  # [3, H, W]
    p_nt: np.ndarray      # [3, H, W]
    alpha_m: float
    alpha_f: float
    n_male: int = 0
    n_female: int = 0

    @property
    def image_size(self):
        return self.p_male.shape[-1]


def _as_rgb(mean_img):
    mean_img = np.asarray(mean_img)
    if mean_img.ndim == 2:
        mean_img = mean_img[None]
    if mean_img.shape[0] == 1:
        mean_img = np.repeat(mean_img, 3, axis=0)
    if mean_img.shape[0] != 3:
        raise ValueError(f"prototype must have 1 or 3 channels, got shape {mean_img.shape}")
    return mean_img.astype(np.float32)


def prototypes_from_means(p_male, p_female, n_male, n_female):
    """Build a PrototypeSet from the two mean images and the gender counts."""
    if n_male <= 0 or n_female <= 0:
        raise ValueError(f"need at least one male and one female image (got {n_male}, {n_female})")
    total = n_male + n_female
    alpha_m = n_male / total
    alpha_f = n_female / total
    pm, pf = _as_rgb(p_male), _as_rgb(p_female)
    p_nt = alpha_f * pf + alpha_m * pm
    return PrototypeSet(pm, pf, p_nt, alpha_m, alpha_f, int(n_male), int(n_female))


def compute_prototypes(train):
    """Pixel means of the male and female images of ``train``.

    Means are accumulated in float64, then stored as float32; grayscale
    sources are replicated to three channels.
    """
    males = [r.image for r in train.records if r.gender == 1]
    females = [r.image for r in train.records if r.gender == 0]
    if not males or not females:
        raise ValueError(
            f"prototypes need both genders; got {len(males)} male and {len(females)} female images"
        )
    pm = np.mean(np.stack(males).astype(np.float64), axis=0)
    pf = np.mean(np.stack(females).astype(np.float64), axis=0)
    return prototypes_from_means(pm, pf, len(males), len(females))


def select_prototype(ps, y, kind):
    if y not in (0, 1):
        raise ValueError(f"gender label must be 0 or 1, got {y}")
    kind = str(kind).upper()
    if kind == "SM":
        return ps.p_male if y == 1 else ps.p_female
    if kind == "OP":
        return ps.p_female if y == 1 else ps.p_male
    if kind == "NT":
        return ps.p_nt
    raise ValueError(f"unknown prototype kind {kind!r}; expected one of {KINDS}")


def prototype_batch(ps, genders, kind):
    """``[N, 3, H, W]`` stack of :func:`select_prototype` for each label."""
    return np.stack([select_prototype(ps, int(y), kind) for y in genders])


def save_prototypes(ps, out_dir):
    """PNG per prototype plus ``prototypes.json`` (alphas) and exact ``prototypes.npz``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in (("male", ps.p_male), ("female", ps.p_female), ("neutral", ps.p_nt)):
        Image.fromarray(to_uint8(np.transpose(img, (1, 2, 0))), mode="RGB").save(out / f"{name}.png")
    sidecar = {
        "alpha_M": ps.alpha_m,
        "alpha_F": ps.alpha_f,
        "n_male": ps.n_male,
        "n_female": ps.n_female,
        "image_size": ps.image_size,
    }
    (out / "prototypes.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    np.savez(out / "prototypes.npz", p_male=ps.p_male, p_female=ps.p_female)
    return out


def load_prototypes(path):
    path = Path(path)
    sidecar_path = path / "prototypes.json"
    if not sidecar_path.is_file():
        raise FileNotFoundError(f"prototype sidecar not found: {sidecar_path}")
    meta = json.loads(sidecar_path.read_text())
    npz = path / "prototypes.npz"
    if npz.is_file():
        with np.load(npz) as z:
            pm, pf = z["p_male"], z["p_female"]
    else:
        pm = np.transpose(np.asarray(Image.open(path / "male.png"), dtype=np.float64) / 255, (2, 0, 1))
        pf = np.transpose(np.asarray(Image.open(path / "female.png"), dtype=np.float64) / 255, (2, 0, 1))
    return prototypes_from_means(pm, pf, meta["n_male"], meta["n_female"])
