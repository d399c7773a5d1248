"""Training loops: auxiliary networks, autoencoder pre-training, semi-adversarial training."""
import csv
import logging
import math
from pathlib import Path

import numpy as np

from . import models
from .config import Config, desk_classifier_channels
from .data import iter_batches
from .losses import LossWeights, loss_JD, loss_JG, loss_JM, loss_total
from .nncore import Adam, Tensor, load_weights, save_weights, softmax_cross_entropy
from .nncore import binary_cross_entropy

log = logging.getLogger(__name__)

LOG_FIELDS = ["step", "phase", "J_D", "J_G", "J_M", "J_total"]

# per-phase seed offsets so every phase draws from its own stream
SEED_AUX_GENDER, SEED_AUX_MATCHER, SEED_PRETRAIN, SEED_TRAIN = 1, 2, 3, 4


class TrainLog:
    """Rows of ``step,phase,J_D,J_G,J_M,J_total``; blank cells for terms a phase lacks."""

    def __init__(self):
        self.rows = []

    def add(self, phase, J_D=None, J_G=None, J_M=None, J_total=None):
        self.rows.append({
            "step": len(self.rows),
            "phase": phase,
            "J_D": J_D,
            "J_G": J_G,
            "J_M": J_M,
            "J_total": J_total,
        })

    def phase_rows(self, phase):
        return [r for r in self.rows if r["phase"] == phase]

    @staticmethod
    def _fmt(v):
        if v is None:
            return ""
        if isinstance(v, float):
            return repr(v)
        return str(v)

    def write_csv(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(LOG_FIELDS)
            for r in self.rows:
                w.writerow([self._fmt(r[k]) for k in LOG_FIELDS])
        return path


def _check_finite(value, phase, step):
    if not math.isfinite(value):
        raise FloatingPointError(f"{phase}: loss became {value} at step {step}")


def _epoch_report(phase, epoch, losses, prev):
    mean = float(np.mean(losses))
    log.info("%s epoch %d: mean loss %.5f", phase, epoch + 1, mean)
    if prev is not None and mean >= prev:
        log.warning("%s epoch %d: loss did not decrease (%.5f >= %.5f)", phase, epoch + 1, mean, prev)
    return mean


def aux_classifier_channels(config):
    return desk_classifier_channels(config.classifier_channels, config.image_size)


# ---------------------------------------------------------------------------
# auxiliary / evaluation networks
# ---------------------------------------------------------------------------

def fit_gender_classifier(params, train, lr, epochs, batch_size, seed, phase, train_log=None):
    """Minimise cross-entropy on gender labels with dropout active."""
    genders = train.genders()
    if len(set(genders.tolist())) < 2:
        raise ValueError("gender classifier training needs both genders")
    images = train.images()
    rng = np.random.default_rng(seed)
    opt = Adam(params, lr=lr)
    prev = None
    step = 0
    for epoch in range(epochs):
        losses = []
        for idx in iter_batches(len(images), batch_size, rng):
            params.zero_grad()
            p = models.gender_forward(params, Tensor(images[idx]), training=True, rng=rng)
            loss = binary_cross_entropy(genders[idx].astype(np.float64), p) * (1.0 / len(idx))
            loss.backward()
            opt.step()
            val = float(loss.item())
            _check_finite(val, phase, step)
            losses.append(val)
            if train_log is not None:
                train_log.add(phase, J_total=val)
            step += 1
        prev = _epoch_report(phase, epoch, losses, prev)
    params.zero_grad()
    return params


def train_aux_gender(train, config=Config(), seed=None, train_log=None):
    """Auxiliary gender classifier (subnetwork II)."""
    seed = config.seed if seed is None else seed
    params = models.build_gender_classifier(
        seed * 100 + SEED_AUX_GENDER,
        config.image_size,
        aux_classifier_channels(config),
        hidden=config.classifier_hidden,
        dropout=config.dropout,
        leaky_slope=config.leaky_slope,
    )
    return fit_gender_classifier(
        params, train, config.lr_aux, config.epochs_aux, config.batch_size,
        seed * 100 + SEED_AUX_GENDER, "aux-gender", train_log,
    )


def box_blur(images):
    """3x3 mean filter with edge replication over ``[N, C, H, W]``."""
    h, w = images.shape[-2:]
    pad = np.pad(images, ((0, 0), (0, 0), (1, 1), (1, 1)), mode="edge")
    out = np.zeros_like(images)
    for dy in range(3):
        for dx in range(3):
            out += pad[..., dy:dy + h, dx:dx + w]
    return out / np.float32(9)


def fit_matcher(params, train, lr, epochs, batch_size, seed, phase, train_log=None, blur_prob=0.0):
    """Identity-classification training; returns the matcher with its head removed.

    With ``blur_prob`` > 0 that fraction of each batch is box-blurred, which
    strips most of the pixel noise. Without it the descriptor keys on the noise
    statistics and a denoised copy of a face no longer matches its original.
    """
    ids = train.identities()
    uniq, labels = np.unique(ids, return_inverse=True)
    counts = np.bincount(labels)
    if counts.min() < 2:
        raise ValueError("matcher training needs at least 2 images per identity")
    images = train.images()
    rng = np.random.default_rng(seed)
    opt = Adam(params, lr=lr)
    prev = None
    step = 0
    for epoch in range(epochs):
        losses = []
        for idx in iter_batches(len(images), batch_size, rng):
            params.zero_grad()
            x = images[idx]
            if blur_prob > 0:
                pick = rng.random(len(idx)) < blur_prob
                x = np.where(pick[:, None, None, None], box_blur(x), x)
            loss = softmax_cross_entropy(models.identity_logits(params, Tensor(x)), labels[idx])
            loss.backward()
            opt.step()
            val = float(loss.item())
            _check_finite(val, phase, step)
            losses.append(val)
            if train_log is not None:
                train_log.add(phase, J_total=val)
            step += 1
        prev = _epoch_report(phase, epoch, losses, prev)
    return models.drop_head(params)


def train_aux_matcher(train, config=Config(), seed=None, train_log=None):
    """Desk-scale auxiliary matcher (subnetwork III) trained on identity labels."""
    seed = config.seed if seed is None else seed
    params = models.build_matcher(
        seed * 100 + SEED_AUX_MATCHER,
        config.image_size,
        aux_classifier_channels(config),
        descriptor_dim=config.descriptor_dim,
        n_train_identities=train.n_identities,
        leaky_slope=config.leaky_slope,
    )
    return fit_matcher(
        params, train, config.lr_aux, config.epochs_matcher, config.batch_size,
        seed * 100 + SEED_AUX_MATCHER, "aux-matcher", train_log, config.matcher_blur_prob,
    )


# ---------------------------------------------------------------------------
# autoencoder
# ---------------------------------------------------------------------------

def new_autoencoder(config=Config(), seed=None):
    seed = config.seed if seed is None else seed
    return models.build_autoencoder(
        seed * 100 + SEED_PRETRAIN,
        encoder_channels=config.encoder_channels,
        decoder_channels=config.decoder_channels,
        leaky_slope=config.leaky_slope,
    )


def pretrain_autoencoder(train, ps, config=Config(), seed=None, train_log=None, params=None):
    """Reconstruction-only training on the same-gender output."""
    seed = config.seed if seed is None else seed
    params = new_autoencoder(config, seed) if params is None else params
    images = train.images()
    genders = train.genders()
    rng = np.random.default_rng(seed * 100 + SEED_PRETRAIN)
    opt = Adam(params, lr=config.lr_pretrain)
    prev = None
    step = 0
    for epoch in range(config.epochs_pretrain):
        losses = []
        for idx in iter_batches(len(images), config.batch_size, rng):
            params.zero_grad()
            x_sm = models.autoencode(params, images[idx], ps, genders[idx], "SM")
            jd = loss_JD(images[idx], x_sm)
            loss = jd * config.lambda_D
            loss.backward()
            opt.step()
            val = float(jd.item())
            _check_finite(val, "pretrain", step)
            losses.append(val)
            if train_log is not None:
                train_log.add("pretrain", J_D=val, J_total=float(loss.item()))
            step += 1
        prev = _epoch_report("pretrain", epoch, losses, prev)
    params.zero_grad()
    params.meta["phase"] = "pretrain"
    return params


def embed_all(matcher, images, batch_size=64):
    out = []
    for lo in range(0, len(images), batch_size):
        out.append(models.matcher_embed(matcher, Tensor(images[lo:lo + batch_size])).data)
    return np.concatenate(out) if out else np.zeros((0, matcher.meta["descriptor_dim"]), np.float32)


def train_semi_adversarial(ae, g, m, train, ps, weights=None, config=Config(), seed=None,
                           train_log=None, grad_probe=None):
    """Train the autoencoder against the frozen gender classifier and matcher.

    ``g`` and ``m`` are frozen in place; their parameter digests are checked
    before and after, and a mismatch raises ``RuntimeError``. Returns a new
    autoencoder store (``ae`` itself is left untouched). If ``grad_probe`` is
    a dict it is filled with the largest absolute gradient seen per
    autoencoder parameter.
    """
    seed = config.seed if seed is None else seed
    weights = weights or LossWeights(config.lambda_D, config.lambda_G, config.lambda_M)
    ae = ae.copy()
    ae.unfreeze()
    g.freeze()
    m.freeze()
    g_digest, m_digest = g.digest(), m.digest()

    images = train.images()
    genders = train.genders()
    e_x = embed_all(m, images)  # m is frozen, so the clean descriptors never change
    rng = np.random.default_rng(seed * 100 + SEED_TRAIN)
    opt = Adam(ae, lr=config.lr_train)
    prev = None
    step = 0
    for epoch in range(config.epochs_train):
        losses = []
        for idx in iter_batches(len(images), config.batch_size, rng):
            ae.zero_grad()
            xb, yb = images[idx], genders[idx]
            tri = models.perturb_triple(ae, xb, ps, yb, kinds=("SM", "OP"))
            p_sm = models.gender_forward(g, tri.x_sm, training=False)
            p_op = models.gender_forward(g, tri.x_op, training=False)
            e_sm = models.matcher_embed(m, tri.x_sm)
            jg = loss_JG(yb, p_sm, p_op)
            jm = loss_JM(e_x[idx], e_sm)
            jt = loss_total(jg, jm, weights)
            jt.backward()
            for store, tag in ((g, "gender classifier"), (m, "matcher")):
                if any(t.grad is not None for _, t in store.items()):
                    raise RuntimeError(f"frozen {tag} accumulated a gradient")
            if grad_probe is not None:
                for name, t in ae.items():
                    grad_probe[name] = max(grad_probe.get(name, 0.0), float(np.abs(t.grad).max()))
            opt.step()
            val = float(jt.item())
            _check_finite(val, "train", step)
            losses.append(val)
            if train_log is not None:
                jd = float(loss_JD(xb, tri.x_sm.detach()).item())
                train_log.add("train", J_D=jd, J_G=float(jg.item()), J_M=float(jm.item()), J_total=val)
            step += 1
        prev = _epoch_report("train", epoch, losses, prev)

    if g.digest() != g_digest or m.digest() != m_digest:
        raise RuntimeError("auxiliary parameters changed during semi-adversarial training")
    ae.zero_grad()
    ae.meta["phase"] = "train"
    return ae


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params, path, phase=None, seed=None, config_hash=None):
    if phase is not None:
        params.meta["phase"] = phase
    return save_weights(params, path, seed=seed, config_hash=config_hash)


def load_checkpoint(path, subnetwork=None):
    return load_weights(path, subnetwork=subnetwork)


def reconstruction_mae(ae, ds, ps, batch_size=64):
    """Mean absolute error between images and their SM reconstructions."""
    images, genders = ds.images(), ds.genders()
    total = 0.0
    for lo in range(0, len(images), batch_size):
        sl = slice(lo, lo + batch_size)
        out = models.autoencode(ae, images[sl], ps, genders[sl], "SM").data
        total += float(np.abs(out - images[sl]).sum())
    return total / images.size


def gender_accuracy(clf, ds, batch_size=64):
    images, genders = ds.images(), ds.genders()
    correct = 0
    for lo in range(0, len(images), batch_size):
        p = models.gender_forward(clf, Tensor(images[lo:lo + batch_size])).data
        correct += int(((p >= 0.5).astype(int) == genders[lo:lo + batch_size]).sum())
    return correct / len(images)


__all__ = [
    "LOG_FIELDS",
    "TrainLog",
    "embed_all",
    "fit_gender_classifier",
    "fit_matcher",
    "gender_accuracy",
    "load_checkpoint",
    "new_autoencoder",
    "pretrain_autoencoder",
    "reconstruction_mae",
    "save_checkpoint",
    "train_aux_gender",
    "train_aux_matcher",
    "train_semi_adversarial",
]
