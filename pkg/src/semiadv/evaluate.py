"""Before/after evaluation: gender error rates, gender and matching ROCs, TMR at a fixed FMR.

Evaluation uses its own gender classifier and matcher, trained with
different seeds and a different architecture (one fewer conv block,
different widths) from the auxiliaries used during training.

``report.csv`` columns::

    condition,gender_error_pct,gender_auc,tmr_at_fmr1_pct,match_auc,n_genuine,n_impostor

``roc_gender_<cond>.csv`` and ``roc_match_<cond>.csv`` columns::

    threshold,false_rate,true_rate

Conditions are ``before``, ``SM``, ``NT`` and ``OP``.
"""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import models
from .config import Config, desk_classifier_channels
from .nncore import Tensor
from .training import embed_all, fit_gender_classifier, fit_matcher

log = logging.getLogger(__name__)

CONDITIONS = ("before", "SM", "NT", "OP")
REPORT_FIELDS = [
    "condition", "gender_error_pct", "gender_auc", "tmr_at_fmr1_pct", "match_auc", "n_genuine", "n_impostor",
]
ROC_FIELDS = ["threshold", "false_rate", "true_rate"]
SEED_EVAL_GENDER, SEED_EVAL_MATCHER = 11, 12


@dataclass
class RocCurve:
    thresholds: np.ndarray
    false_rate: np.ndarray
    true_rate: np.ndarray
    auc: float
    n_positive: int = 0
    n_negative: int = 0

    @property
    def points(self):
        return list(zip(self.thresholds.tolist(), self.false_rate.tolist(), self.true_rate.tolist()))


@dataclass
class EvalReport:
    dataset: str
    gender_error: dict = field(default_factory=dict)   # condition -> percent
    gender_roc: dict = field(default_factory=dict)     # condition -> RocCurve
    tmr: dict = field(default_factory=dict)            # condition -> percent at FMR 1%
    match_roc: dict = field(default_factory=dict)      # condition -> RocCurve
    n_genuine: int = 0
    n_impostor: int = 0

    @property
    def gender_error_before(self):
        return self.gender_error["before"]

    def to_json(self):
        def roc(r):
            return {
                "thresholds": [_json_float(v) for v in r.thresholds.tolist()],
                "false_rate": r.false_rate.tolist(),
                "true_rate": r.true_rate.tolist(),
                "auc": r.auc,
                "n_positive": r.n_positive,
                "n_negative": r.n_negative,
            }

        return {
            "dataset": self.dataset,
            "gender_error": self.gender_error,
            "tmr": self.tmr,
            "n_genuine": self.n_genuine,
            "n_impostor": self.n_impostor,
            "gender_roc": {k: roc(v) for k, v in self.gender_roc.items()},
            "match_roc": {k: roc(v) for k, v in self.match_roc.items()},
        }

    @classmethod
    def from_json(cls, obj):
        def roc(d):
            return RocCurve(
                np.array([_from_json_float(v) for v in d["thresholds"]]),
                np.array(d["false_rate"], dtype=np.float64),
                np.array(d["true_rate"], dtype=np.float64),
                d["auc"], d.get("n_positive", 0), d.get("n_negative", 0),
            )

        return cls(
            obj["dataset"], dict(obj["gender_error"]),
            {k: roc(v) for k, v in obj["gender_roc"].items()},
            dict(obj["tmr"]),
            {k: roc(v) for k, v in obj["match_roc"].items()},
            obj["n_genuine"], obj["n_impostor"],
        )


def _json_float(v):
    return v if math.isfinite(v) else ("inf" if v > 0 else "-inf")


def _from_json_float(v):
    return float(v)


# ---------------------------------------------------------------------------
# perturbation
# ---------------------------------------------------------------------------

def perturb_dataset(ae, ds, ps, batch_size=64):
    """Condition -> aligned DatasetSplit; ``before`` is ``ds`` itself."""
    images, genders = ds.images(), ds.genders()
    outs = {k: [] for k in ("SM", "NT", "OP")}
    for lo in range(0, len(images), batch_size):
        sl = slice(lo, lo + batch_size)
        tri = models.perturb_triple(ae, images[sl], ps, genders[sl])
        outs["SM"].append(tri.x_sm.data)
        outs["NT"].append(tri.x_nt.data)
        outs["OP"].append(tri.x_op.data)
    result = {"before": ds}
    for k, chunks in outs.items():
        result[k] = ds.with_images(np.concatenate(chunks), name=f"{ds.name}-{k}")
    return result


# ---------------------------------------------------------------------------
# independent evaluation networks
# ---------------------------------------------------------------------------

def eval_classifier_channels(config):
    aux_blocks = len(desk_classifier_channels(config.classifier_channels, config.image_size))
    channels = tuple(config.eval_classifier_channels)
    if aux_blocks - 1 > len(channels):
        raise ValueError("not enough eval_classifier_channels for this image size")
    return channels[len(channels) - (aux_blocks - 1):]


def train_eval_gender_classifier(train, config=Config(), seed=None):
    seed = (config.seed + config.eval_seed_offset) if seed is None else seed
    params = models.build_gender_classifier(
        seed * 100 + SEED_EVAL_GENDER,
        config.image_size,
        eval_classifier_channels(config),
        hidden=config.eval_classifier_hidden,
        dropout=config.dropout,
        leaky_slope=config.leaky_slope,
    )
    params.meta["role"] = "evaluation"
    return fit_gender_classifier(
        params, train, config.lr_aux, config.epochs_eval, config.batch_size,
        seed * 100 + SEED_EVAL_GENDER, "eval-gender",
    )


def train_eval_matcher(train, config=Config(), seed=None):
    seed = (config.seed + config.eval_seed_offset) if seed is None else seed
    params = models.build_matcher(
        seed * 100 + SEED_EVAL_MATCHER,
        config.image_size,
        eval_classifier_channels(config),
        descriptor_dim=config.eval_descriptor_dim,
        n_train_identities=train.n_identities,
        leaky_slope=config.leaky_slope,
    )
    params.meta["role"] = "evaluation"
    return fit_matcher(
        params, train, config.lr_aux, config.epochs_matcher, config.batch_size,
        seed * 100 + SEED_EVAL_MATCHER, "eval-matcher", blur_prob=config.matcher_blur_prob,
    )


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def gender_scores(clf, ds, batch_size=64):
    images = ds.images()
    out = [models.gender_forward(clf, Tensor(images[lo:lo + batch_size])).data
           for lo in range(0, len(images), batch_size)]
    return np.concatenate(out).astype(np.float64)


def gender_error_rate(clf, ds, threshold=0.5):
    """Percentage of records whose predicted gender (p >= threshold -> male) is wrong."""
    if len(ds) == 0:
        raise ValueError("cannot compute an error rate on an empty split")
    pred = (gender_scores(clf, ds) >= threshold).astype(np.int64)
    return 100.0 * float(np.mean(pred != ds.genders()))


def roc_from_scores(positive, negative):
    """Threshold sweep over every observed score plus +/-inf.

    A score s is accepted at threshold t when s >= t. Points run from the
    +inf threshold (0, 0) down to -inf (1, 1); AUC is the trapezoid area.
    """
    pos = np.asarray(positive, dtype=np.float64).ravel()
    neg = np.asarray(negative, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise ValueError("roc_from_scores needs non-empty positive and negative score lists")
    thresholds = np.concatenate([[np.inf], np.unique(np.concatenate([pos, neg]))[::-1], [-np.inf]])
    pos_sorted, neg_sorted = np.sort(pos), np.sort(neg)
    # count of scores >= t  ==  n - (number strictly below t)
    tpr = (pos.size - np.searchsorted(pos_sorted, thresholds, side="left")) / pos.size
    fpr = (neg.size - np.searchsorted(neg_sorted, thresholds, side="left")) / neg.size
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2))
    return RocCurve(thresholds, fpr, tpr, auc, int(pos.size), int(neg.size))


def tmr_at_fmr(roc, fmr=0.01):
    """TMR (percent) at the largest threshold whose FMR does not exceed ``fmr``.

    No interpolation between operating points.
    """
    if roc.n_negative and roc.n_negative * fmr < 1:
        log.warning("only %d impostor scores: FMR %.4g cannot be resolved", roc.n_negative, fmr)
    ok = roc.false_rate <= fmr + 1e-12
    return 100.0 * float(roc.true_rate[ok].max())


def pair_indices(identities, max_impostor=50000, seed=0):
    """(genuine, impostor) index pairs (i, j), i != j, over aligned probe/gallery records.

    Impostor pairs beyond ``max_impostor`` are subsampled without replacement
    with a seeded generator.
    """
    ids = np.asarray(identities)
    n = ids.size
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    off = ii != jj
    same = (ids[:, None] == ids[None, :]) & off
    diff = (ids[:, None] != ids[None, :])
    genuine = np.stack([ii[same], jj[same]], axis=1)
    impostor = np.stack([ii[diff], jj[diff]], axis=1)
    if len(impostor) > max_impostor:
        keep = np.sort(np.random.default_rng(seed).choice(len(impostor), max_impostor, replace=False))
        impostor = impostor[keep]
    return genuine, impostor


def match_scores(m, ds_probe, ds_gallery, max_impostor=50000, seed=0):
    """Genuine and impostor scores, score = -||e_probe - e_gallery||^2."""
    if len(ds_probe) != len(ds_gallery):
        raise ValueError("probe and gallery splits must be aligned")
    ids = ds_gallery.identities()
    if not np.array_equal(ids, ds_probe.identities()):
        raise ValueError("probe and gallery identity labels are not aligned")
    genuine, impostor = pair_indices(ids, max_impostor, seed)
    if len(genuine) == 0:
        raise ValueError("no identity has two or more images; no genuine pairs")
    if len(impostor) == 0:
        raise ValueError("only one identity present; no impostor pairs")
    ep = embed_all(m, ds_probe.images()).astype(np.float64)
    eg = embed_all(m, ds_gallery.images()).astype(np.float64)

    def score(pairs):
        d = ep[pairs[:, 0]] - eg[pairs[:, 1]]
        return -np.einsum("ij,ij->i", d, d)

    return score(genuine), score(impostor)


def evaluate(conditions, eval_gender, eval_matcher, config=Config(), dataset_name=None):
    """Fill an EvalReport from ``perturb_dataset`` output."""
    before = conditions["before"]
    report = EvalReport(dataset_name or before.name)
    genders = before.genders()
    for cond in CONDITIONS:
        ds = conditions[cond]
        scores = gender_scores(eval_gender, ds)
        pred = (scores >= 0.5).astype(np.int64)
        report.gender_error[cond] = 100.0 * float(np.mean(pred != genders))
        report.gender_roc[cond] = roc_from_scores(scores[genders == 1], scores[genders == 0])
        gen, imp = match_scores(eval_matcher, ds, before, config.max_impostor_pairs, config.seed)
        roc = roc_from_scores(gen, imp)
        report.match_roc[cond] = roc
        report.tmr[cond] = tmr_at_fmr(roc, 0.01)
        report.n_genuine, report.n_impostor = len(gen), len(imp)
    return report


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------

def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _write_roc(path, roc):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROC_FIELDS)
        for t, f, tr in roc.points:
            w.writerow([_fmt(t), _fmt(f), _fmt(tr)])


def write_report_json(report, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report.to_json(), sort_keys=True) + "\n")
    return path


def read_report_json(path):
    return EvalReport.from_json(json.loads(Path(path).read_text()))


def emit_report(report, out_dir, plots=True):
    """Write report.csv, the per-condition ROC CSVs and (optionally) ROC plots."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from None
    files = []
    with open(out / "report.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_FIELDS)
        for cond in CONDITIONS:
            w.writerow([
                cond,
                _fmt(report.gender_error[cond]),
                _fmt(report.gender_roc[cond].auc),
                _fmt(report.tmr[cond]),
                _fmt(report.match_roc[cond].auc),
                report.n_genuine,
                report.n_impostor,
            ])
    files.append(out / "report.csv")
    for cond in CONDITIONS:
        for kind, rocs in (("gender", report.gender_roc), ("match", report.match_roc)):
            p = out / f"roc_{kind}_{cond}.csv"
            _write_roc(p, rocs[cond])
            files.append(p)
    if plots:
        files.extend(_plot_rocs(report, out))
    return files


def _plot_rocs(report, out):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    paths = []
    for kind, rocs, xlabel, ylabel in (
        ("gender", report.gender_roc, "false positive rate", "true positive rate"),
        ("match", report.match_roc, "FMR", "TMR"),
    ):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        for cond in CONDITIONS:
            r = rocs[cond]
            ax.plot(r.false_rate, r.true_rate, label=f"{cond} (AUC {r.auc:.3f})")
        ax.plot([0, 1], [0, 1], color="0.7", lw=0.8, ls="--")
        if kind == "match":
            ax.set_xscale("symlog", linthresh=1e-3)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.set_title(f"{report.dataset}: {kind} ROC")
        ax.legend(loc="lower right", fontsize=8)
        fig.tight_layout()
        p = out / f"roc_{kind}.png"
        fig.savefig(p, dpi=100, metadata={"Software": None})
        plt.close(fig)
        paths.append(p)
    return paths


__all__ = [
    "CONDITIONS",
    "EvalReport",
    "REPORT_FIELDS",
    "RocCurve",
    "emit_report",
    "evaluate",
    "gender_error_rate",
    "gender_scores",
    "match_scores",
    "pair_indices",
    "perturb_dataset",
    "read_report_json",
    "roc_from_scores",
    "tmr_at_fmr",
    "train_eval_gender_classifier",
    "train_eval_matcher",
    "write_report_json",
]
