"""Face datasets: records, on-disk loading/export, and a synthetic generator.

On-disk layout (both for loading and export) is a directory of PNG/PGM
images plus ``labels.csv`` with header ``filename,gender,identity``;
gender is 1 for male, 0 for female.
"""
import csv
import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

log = logging.getLogger(__name__)

LUMA = np.array([0.299, 0.587, 0.114])
IMAGE_SUFFIXES = {".png", ".pgm"}
LABEL_FIELDS = ["filename", "gender", "identity"]


@dataclass(frozen=True)
class FaceRecord:
    image: np.ndarray  # [1, H, W] float32 in [0, 1]
    gender: int
    identity: int
    split: str = "train"

    def __post_init__(self):
        if self.gender not in (0, 1):
            raise ValueError(f"gender must be 0 or 1, got {self.gender}")
        if self.identity < 0:
            raise ValueError(f"identity must be non-negative, got {self.identity}")


@dataclass
class DatasetSplit:
    records: list
    name: str = "synthetic"
    skipped: int = 0

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, i):
        return self.records[i]

    @property
    def n_male(self):
        return sum(r.gender == 1 for r in self.records)

    @property
    def n_female(self):
        return sum(r.gender == 0 for r in self.records)

    @property
    def n_identities(self):
        return len({r.identity for r in self.records})

    def images(self):
        """Stacked ``[N, 1, H, W]`` float32 array."""
        return np.stack([r.image for r in self.records]).astype(np.float32, copy=False)

    def genders(self):
        return np.array([r.gender for r in self.records], dtype=np.int64)

    def identities(self):
        return np.array([r.identity for r in self.records], dtype=np.int64)

    def with_images(self, images, name=None):
        """Same labels and order, new pixels."""
        if len(images) != len(self.records):
            raise ValueError("image count does not match record count")
        recs = [replace(r, image=np.asarray(img, dtype=np.float32)) for r, img in zip(self.records, images)]
        return DatasetSplit(recs, name=name or self.name)


@dataclass
class SyntheticSpec:
    n_identities: int = 60
    images_per_identity: int = 6
    image_size: int = 64
    gender_signal_strength: float = 1.0
    identity_texture_seed: int = 0
    noise_sigma: float = 0.05
    texture_grid: int = 4
    texture_amplitude: float = 0.3
    band_amplitude: float = 0.2
    band_jitter: float = 0.0

    def __post_init__(self):
        if not 0 <= self.gender_signal_strength <= 1:
            raise ValueError("gender_signal_strength must lie in [0, 1]")


# ---------------------------------------------------------------------------
# synthetic faces
# ---------------------------------------------------------------------------

def _interp_matrix(n_out, n_in):
    """Row-stochastic bilinear interpolation matrix mapping n_in samples to n_out."""
    pos = np.linspace(0, n_in - 1, n_out)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    m = np.zeros((n_out, n_in))
    m[np.arange(n_out), lo] += 1 - frac
    m[np.arange(n_out), hi] += frac
    return m


def face_template(size):
    """Shared oval face-like brightness layout."""
    yy, xx = np.mgrid[0:size, 0:size] / (size - 1) * 2 - 1
    r = np.sqrt((xx / 0.8) ** 2 + (yy / 0.95) ** 2)
    return 0.45 + 0.1 * np.clip(1 - r, 0, 1)


def gender_band(size):
    """Horizontal band (upper third of the face) with soft edges, peak 1."""
    rows = np.arange(size) / (size - 1)
    prof = np.exp(-0.5 * ((rows - 0.3) / 0.06) ** 2)
    cols = np.arange(size) / (size - 1)
    width = np.clip((0.85 - np.abs(cols - 0.5) * 2) / 0.15, 0, 1)
    return prof[:, None] * width[None, :]


def identity_textures(spec, rng):
    """Per-identity coarse random grids -> smooth full-size textures."""
    g = spec.texture_grid
    coeffs = rng.uniform(-1, 1, size=(spec.n_identities, g, g))
    interp = _interp_matrix(spec.image_size, g)
    tex = np.einsum("hi,nij,wj->nhw", interp, coeffs, interp) * spec.texture_amplitude
    return coeffs, tex


def generate_synthetic(spec, seed=0):
    """Deterministic synthetic face dataset.

    Identity lives in a smooth low-frequency texture; gender in the sign of a
    horizontal band scaled by ``gender_signal_strength``. The two use separate
    random streams and are drawn independently.
    """
    root = np.random.SeedSequence([seed, spec.identity_texture_seed])
    tex_ss, gender_ss, noise_ss, jitter_ss = root.spawn(4)
    _, textures = identity_textures(spec, np.random.default_rng(tex_ss))

    n = spec.n_identities
    grng = np.random.default_rng(gender_ss)
    genders = grng.permutation(np.arange(n) % 2)

    nrng = np.random.default_rng(noise_ss)
    jrng = np.random.default_rng(jitter_ss)
    base = face_template(spec.image_size)
    band = gender_band(spec.image_size) * spec.band_amplitude * spec.gender_signal_strength
    records = []
    for ident in range(n):
        sign = 1.0 if genders[ident] == 1 else -1.0
        for _ in range(spec.images_per_identity):
            scale = 1.0 + spec.band_jitter * jrng.standard_normal() if spec.band_jitter else 1.0
            clean = base + textures[ident] + sign * scale * band
            noisy = clean + nrng.normal(0, spec.noise_sigma, size=clean.shape)
            img = np.clip(noisy, 0, 1).astype(np.float32)[None]
            records.append(FaceRecord(img, int(genders[ident]), ident))
    return DatasetSplit(records, name="synthetic")


def split_dataset(ds, train_fraction, seed=0):
    """Identity-disjoint, gender-stratified split into (train, test)."""
    if not 0 < train_fraction < 1:
        raise ValueError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    gender_of = {}
    for r in ds.records:
        gender_of.setdefault(r.identity, r.gender)
    ids = sorted(gender_of)
    if len(ids) < 2:
        raise ValueError(f"need at least 2 identities to split, got {len(ids)}")
    n_train = int(round(train_fraction * len(ids)))
    n_train = min(max(n_train, 1), len(ids) - 1)

    rng = np.random.default_rng(seed)
    by_gender = {g: [i for i in ids if gender_of[i] == g] for g in (1, 0)}
    n_male_train = int(round(train_fraction * len(by_gender[1])))
    n_male_train = min(n_male_train, len(by_gender[1]), n_train)
    n_female_train = min(n_train - n_male_train, len(by_gender[0]))
    train_ids = set()
    for g, k in ((1, n_male_train), (0, n_female_train)):
        pool = np.array(by_gender[g], dtype=np.int64)
        if len(pool):
            train_ids.update(int(i) for i in rng.permutation(pool)[:k])

    train = [replace(r, split="train") for r in ds.records if r.identity in train_ids]
    test = [replace(r, split="test") for r in ds.records if r.identity not in train_ids]
    return DatasetSplit(train, name=f"{ds.name}-train"), DatasetSplit(test, name=f"{ds.name}-test")


# ---------------------------------------------------------------------------
# disk I/O
# ---------------------------------------------------------------------------

def _decode_image(path):
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            arr = np.asarray(im)
    except (UnidentifiedImageError, OSError) as exc:
        raise ValueError(f"cannot decode image {path}: {exc}") from None
    if mode in ("I;16", "I;16B", "I;16L", "I"):
        scale = 65535.0 if mode.startswith("I;16") else float(max(arr.max(), 1))
        return arr.astype(np.float64) / scale
    arr = arr.astype(np.float64) / 255.0
    if arr.ndim == 3:
        arr = arr[..., :3] @ LUMA if arr.shape[2] >= 3 else arr[..., 0]
    return arr


def to_grayscale(rgb):
    """Luminance of an ``[..., 3]`` array in [0, 1]."""
    return np.asarray(rgb, dtype=np.float64) @ LUMA


def _resize(arr, size):
    if arr.shape == (size, size):
        return arr
    im = Image.fromarray(arr.astype(np.float32), mode="F")
    return np.asarray(im.resize((size, size), Image.BILINEAR), dtype=np.float64)


def read_labels(labels_file):
    labels = {}
    with open(labels_file, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = set(LABEL_FIELDS) - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{labels_file}: missing columns {sorted(missing)}")
        for row in reader:
            labels[row["filename"]] = (int(row["gender"]), int(row["identity"]))
    return labels


def load_dataset(root_path, labels_file=None, image_size=64, split="train"):
    """Load every image under ``root_path`` that has a row in the labels file.

    Images without a label are skipped and counted in ``DatasetSplit.skipped``.
    """
    root = Path(root_path)
    labels_file = Path(labels_file) if labels_file is not None else root / "labels.csv"
    labels = read_labels(labels_file)
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    present = {p.name for p in files}
    absent = sorted(set(labels) - present)
    if absent:
        raise FileNotFoundError(f"labelled images not found under {root}: {absent[:5]}")
    records, skipped = [], 0
    for p in files:
        if p.name not in labels:
            skipped += 1
            continue
        gender, ident = labels[p.name]
        img = np.clip(_resize(_decode_image(p), image_size), 0, 1)
        records.append(FaceRecord(img.astype(np.float32)[None], gender, ident, split))
    if skipped:
        log.warning("%d image(s) under %s have no label and were skipped", skipped, root)
    return DatasetSplit(records, name=root.name, skipped=skipped)


def to_uint8(img):
    return np.round(np.clip(np.asarray(img, dtype=np.float64), 0, 1) * 255).astype(np.uint8)


def export_dataset(ds, out_dir):
    """Write ``ds`` as 8-bit grayscale PNGs plus ``labels.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, r in enumerate(ds.records):
        name = f"{i:05d}_id{r.identity:04d}.png"
        Image.fromarray(to_uint8(r.image[0]), mode="L").save(out / name)
        rows.append({"filename": name, "gender": r.gender, "identity": r.identity})
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LABEL_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return out


def iter_batches(n, batch_size, rng=None):
    """Index batches over range(n), shuffled when ``rng`` is given."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for lo in range(0, n, batch_size):
        yield order[lo:lo + batch_size]


__all__ = [
    "DatasetSplit",
    "FaceRecord",
    "SyntheticSpec",
    "export_dataset",
    "face_template",
    "gender_band",
    "generate_synthetic",
    "iter_batches",
    "load_dataset",
    "read_labels",
    "split_dataset",
    "to_grayscale",
]
