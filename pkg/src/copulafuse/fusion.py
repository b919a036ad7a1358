"""Class-specific copula ensembling of per-pixel classifier beliefs.

Training: for each class, collect that class's belief-score columns from
every classifier over pixels whose ground truth is that class, fit one KDE
marginal per classifier, map the scores to pseudo-observations, and select
and fit a copula family.  Inference: each class's posterior is the copula
density at the marginal-CDF-transformed scores, times the product of
marginal densities, times the class prior; the label is the argmax.
Marginals fitted on training data are reused to transform test scores
(test labels are unknown, so per-class refitting is impossible).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, asdict

import numpy as np

from .baselines import lop_fuse
from .copulas import (
    SELECTABLE_FAMILIES,
    CopulaParams,
    Family,
    clamp_unit,
    copula_log_density,
    independence_params,
    params_from_dict,
    params_to_dict,
)
from .dataio import IGNORE_LABEL, canonical_json, fingerprint
from .errors import DataError, EstimationError, SelectionError
from .fitting import fit_copula_ifm, pseudo_observations, select_family
from .kde import KdeModel, kde_cdf, kde_from_dict, kde_log_pdf, kde_to_dict, kde_transform

MODEL_FILE_VERSION = 1


@dataclass(frozen=True)
class FitSettings:
    """Knobs for building class models; hashed into the model fingerprint."""

    criterion: str = "aic"
    force_family: str | None = None
    candidates: tuple = tuple(f.value for f in SELECTABLE_FAMILIES)
    max_pixels_per_class: int = 100_000
    min_pixels: int = 500
    bandwidth: float | None = None
    seed: int = 42

    def to_dict(self):
        d = asdict(self)
        d["candidates"] = list(d["candidates"])
        return d


@dataclass
class ClassModel:
    family: Family
    params: CopulaParams
    kdes: list | None
    prior: float
    flags: list = field(default_factory=list)
    fits: list | None = None  # per-family FitReports kept for variant building


@dataclass
class ClassModelSet:
    num_classes: int
    num_classifiers: int
    models: list
    settings_fingerprint: str
    seed: int

    @property
    def priors(self):
        return np.array([m.prior for m in self.models])


@dataclass
class FusedResult:
    labels: np.ndarray
    scores: np.ndarray | None
    fallback_pixels: int


def estimate_priors(gts, num_classes, alpha=1.0, ignore=frozenset({IGNORE_LABEL})):
    """Laplace-smoothed class frequencies over all non-ignored pixels."""
    counts = np.zeros(num_classes, dtype=np.int64)
    usable = 0
    for gt in gts:
        flat = np.asarray(gt).reshape(-1).astype(np.int64)
        keep = np.ones(flat.size, dtype=bool)
        for v in ignore:
            keep &= flat != v
        flat = flat[keep]
        if np.any((flat < 0) | (flat >= num_classes)):
            bad = flat[(flat < 0) | (flat >= num_classes)][0]
            raise DataError(f"ground-truth label {bad} is outside [0, {num_classes})")
        counts += np.bincount(flat, minlength=num_classes)
        usable += flat.size
    if usable == 0:
        raise ValueError("no usable (non-ignored) pixels for prior estimation")
    return (counts + alpha) / (usable + alpha * num_classes)


def _check_tensor(tensor, index):
    t = np.asarray(tensor, dtype=float)
    if t.ndim != 3:
        raise DataError(f"tensor {index} must be H x W x M, got shape {t.shape}")
    if t.min() < -1e-6 or t.max() > 1.0 + 1e-6:
        raise DataError(f"tensor {index} has values outside [0, 1]")
    sums = t.sum(axis=2)
    if np.any(np.abs(sums - 1.0) > 1e-3):
        raise DataError(f"tensor {index} has per-pixel sums outside [0.999, 1.001]")
    return t


def _collect_class_rows(images, gts, num_classes):
    """Per class: the (N_m, L) matrix of that class's scores across classifiers."""
    rows = [[] for _ in range(num_classes)]
    for tensors, gt in zip(images, gts):
        gt = np.asarray(gt)
        flat_gt = gt.reshape(-1)
        flats = [np.asarray(t, dtype=float).reshape(-1, num_classes) for t in tensors]
        for m in range(num_classes):
            mask = flat_gt == m
            if not mask.any():
                continue
            rows[m].append(np.column_stack([f[mask, m] for f in flats]))
    return [np.vstack(r) if r else np.empty((0, len(images[0]))) for r in rows]


def build_class_models(images, gts, settings=None):
    """Fit per-class marginals and copulas from training images.

    images : list over images of per-classifier belief tensors (H, W, M)
    gts    : aligned list of label maps (H, W)

    Classes with fewer than settings.min_pixels usable pixels fall back to
    the independence copula (flagged).  Deterministic given settings.seed.
    """
    if settings is None:
        settings = FitSettings()
    if not images:
        raise ValueError("need at least one training image")
    num_classifiers = len(images[0])
    if num_classifiers < 2:
        raise ValueError(f"need at least 2 classifiers, got {num_classifiers}")
    num_classes = np.asarray(images[0][0]).shape[-1]
    for tensors, gt in zip(images, gts):
        if len(tensors) != num_classifiers:
            raise DataError("every image must provide one tensor per classifier")
        for i, t in enumerate(tensors):
            _check_tensor(t, i)
            if np.asarray(t).shape[:2] != np.asarray(gt).shape:
                raise DataError(f"tensor {i} size does not match its label map")

    priors = estimate_priors(gts, num_classes)
    class_rows = _collect_class_rows(images, gts, num_classes)
    candidates = [Family(c) for c in settings.candidates]
    force = Family.parse(settings.force_family) if settings.force_family else None

    models = []
    for m in range(num_classes):
        rows = class_rows[m]
        rng = np.random.default_rng((settings.seed, m))
        flags = []
        if rows.shape[0] > settings.max_pixels_per_class:
            idx = rng.choice(rows.shape[0], settings.max_pixels_per_class, replace=False)
            rows = rows[np.sort(idx)]
        kdes = None
        if rows.shape[0] >= 2:
            kdes = [
                KdeModel.fit(rows[:, i], bandwidth=settings.bandwidth)
                for i in range(num_classifiers)
            ]
            for i, kde in enumerate(kdes):
                if kde.degenerate:
                    flags.append(f"degenerate-marginal-{i}")
        family = Family.INDEPENDENCE
        params = independence_params(num_classifiers)
        fits = None
        if kdes is None or rows.shape[0] < max(settings.min_pixels, 10):
            flags.append(f"too-few-pixels({rows.shape[0]})")
        else:
            u = pseudo_observations(rows, kdes)
            try:
                if force is not None:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        report = fit_copula_ifm(force, u)
                    family, params, fits = report.family, report.params, [report]
                else:
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        selection = select_family(u, candidates, settings.criterion)
                    chosen = selection.chosen_report()
                    family, params, fits = chosen.family, chosen.params, selection.per_family
            except (EstimationError, SelectionError) as exc:
                flags.append(f"fit-failed: {exc}")
        models.append(ClassModel(family, params, kdes, float(priors[m]), flags, fits))

    fp = fingerprint({"settings": settings.to_dict(), "m": int(num_classes), "l": num_classifiers})
    return ClassModelSet(
        num_classes=int(num_classes),
        num_classifiers=num_classifiers,
        models=models,
        settings_fingerprint=fp,
        seed=settings.seed,
    )


def force_family_variant(model_set, family):
    """Swap every class's copula for its stored fit of one family.

    Classes without a usable fit of that family keep independence and gain
    a flag.  Marginals and priors are shared with the source model set.
    """
    family = Family(family)
    models = []
    for cm in model_set.models:
        fit = None
        if cm.fits is not None:
            for rep in cm.fits:
                if rep.family is family:
                    fit = rep
                    break
        if fit is None:
            models.append(
                ClassModel(
                    Family.INDEPENDENCE,
                    independence_params(model_set.num_classifiers),
                    cm.kdes,
                    cm.prior,
                    cm.flags + [f"no-{family.value}-fit"],
                    cm.fits,
                )
            )
        else:
            models.append(ClassModel(fit.family, fit.params, cm.kdes, cm.prior, list(cm.flags), cm.fits))
    return ClassModelSet(
        num_classes=model_set.num_classes,
        num_classifiers=model_set.num_classifiers,
        models=models,
        settings_fingerprint=model_set.settings_fingerprint,
        seed=model_set.seed,
    )


# ---------------------------------------------------------------------------
# inference
# ---------------------------------------------------------------------------

def class_transforms(model_set, tensors):
    """Per class: pseudo-observations and summed marginal log densities.

    The expensive KDE evaluations happen once here; alternative copulas can
    then be compared cheaply on the same transforms.
    """
    flats = [np.asarray(t, dtype=float).reshape(-1, model_set.num_classes) for t in tensors]
    out = []
    for m, cm in enumerate(model_set.models):
        if cm.kdes is None:
            out.append(None)
            continue
        cols = []
        logf = np.zeros(flats[0].shape[0])
        for i in range(model_set.num_classifiers):
            cdf, logpdf = kde_transform(cm.kdes[i], flats[i][:, m])
            cols.append(clamp_unit(cdf))
            logf += logpdf
        out.append((np.column_stack(cols), logf))
    return out


def log_posteriors(model_set, transforms, copula_override=None):
    """(P, M) unnormalized log posteriors from cached transforms."""
    n = next(t[0].shape[0] for t in transforms if t is not None)
    lp = np.full((n, model_set.num_classes), -np.inf)
    for m, cm in enumerate(model_set.models):
        if transforms[m] is None:
            continue
        u, logf = transforms[m]
        family, params = (
            copula_override[m] if copula_override is not None else (cm.family, cm.params)
        )
        lp[:, m] = np.log(cm.prior) + logf + copula_log_density(family, params, u)
    return lp


def _labels_with_fallback(lp, fallback_labels):
    finite_any = np.isfinite(lp).any(axis=1)
    has_nan = np.isnan(lp).any(axis=1)
    bad = ~finite_any | has_nan
    labels = np.argmax(np.where(np.isnan(lp), -np.inf, lp), axis=1)
    labels[bad] = fallback_labels[bad]
    return labels, int(bad.sum()), bad


def _normalized_scores(lp, fallback_scores, bad):
    finite_lp = np.where(np.isnan(lp), -np.inf, lp)
    shift = finite_lp - finite_lp.max(axis=1, keepdims=True)
    with np.errstate(invalid="ignore"):
        expd = np.exp(shift)
    total = expd.sum(axis=1, keepdims=True)
    scores = expd / total
    scores[bad] = fallback_scores[bad]
    return scores


def fuse_dataset(model_set, tensors, want_scores=False):
    """Fuse aligned belief tensors into a label map.

    Pixels whose posterior is non-finite for every class (or NaN anywhere)
    fall back to the linear-opinion-pool argmax and are counted in
    fallback_pixels.
    """
    if len(tensors) != model_set.num_classifiers:
        raise DataError(
            f"model expects {model_set.num_classifiers} classifiers, got {len(tensors)}"
        )
    tensors = [_check_tensor(t, i) for i, t in enumerate(tensors)]
    shape = tensors[0].shape
    for i, t in enumerate(tensors):
        if t.shape != shape:
            raise DataError(f"tensor {i} has shape {t.shape}, expected {shape}")
    if shape[-1] != model_set.num_classes:
        raise DataError(f"model expects {model_set.num_classes} classes, tensors have {shape[-1]}")

    lop_scores = lop_fuse(tensors).reshape(-1, model_set.num_classes)
    lop_labels = lop_scores.argmax(axis=1)
    transforms = class_transforms(model_set, tensors)
    if all(t is None for t in transforms):
        labels = lop_labels
        scores = lop_scores / lop_scores.sum(axis=1, keepdims=True) if want_scores else None
        return FusedResult(
            labels.reshape(shape[:2]),
            scores.reshape(shape) if scores is not None else None,
            int(labels.size),
        )
    lp = log_posteriors(model_set, transforms)
    labels, n_fallback, bad = _labels_with_fallback(lp, lop_labels)
    scores = None
    if want_scores:
        fallback_scores = lop_scores / lop_scores.sum(axis=1, keepdims=True)
        scores = _normalized_scores(lp, fallback_scores, bad).reshape(shape)
    return FusedResult(labels.reshape(shape[:2]), scores, n_fallback)


def fuse_pixel(model_set, scores):
    """Fuse one pixel's (L, M) score matrix; returns (label, posteriors)."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (model_set.num_classifiers, model_set.num_classes):
        raise DataError(
            f"expected scores of shape ({model_set.num_classifiers}, {model_set.num_classes}),"
            f" got {scores.shape}"
        )
    tensors = [scores[i].reshape(1, 1, -1) for i in range(model_set.num_classifiers)]
    result = fuse_dataset(model_set, tensors, want_scores=True)
    return int(result.labels[0, 0]), result.scores[0, 0]


# ---------------------------------------------------------------------------
# model persistence
# ---------------------------------------------------------------------------

def model_to_dict(model_set, q16=False):
    return {
        "kind": "class-model-set",
        "version": MODEL_FILE_VERSION,
        "classes": model_set.num_classes,
        "classifiers": model_set.num_classifiers,
        "seed": int(model_set.seed),
        "fingerprint": model_set.settings_fingerprint,
        "models": [
            {
                "class": m,
                "prior": float(cm.prior),
                "copula": params_to_dict(cm.family, cm.params),
                "marginals": None
                if cm.kdes is None
                else [kde_to_dict(k, q16=q16) for k in cm.kdes],
                "flags": list(cm.flags),
            }
            for m, cm in enumerate(model_set.models)
        ],
    }


def model_from_dict(obj):
    if obj.get("kind") != "class-model-set":
        raise DataError(f"not a model file (kind={obj.get('kind')!r})")
    if obj.get("version") != MODEL_FILE_VERSION:
        raise DataError(f"unsupported model file version {obj.get('version')!r}")
    models = []
    for entry in obj["models"]:
        family, params = params_from_dict(entry["copula"])
        kdes = entry["marginals"]
        models.append(
            ClassModel(
                family=family,
                params=params,
                kdes=None if kdes is None else [kde_from_dict(k) for k in kdes],
                prior=float(entry["prior"]),
                flags=list(entry.get("flags", [])),
            )
        )
    return ClassModelSet(
        num_classes=int(obj["classes"]),
        num_classifiers=int(obj["classifiers"]),
        models=models,
        settings_fingerprint=str(obj["fingerprint"]),
        seed=int(obj["seed"]),
    )


def save_model(model_set, path, q16=False):
    with open(path, "w") as fh:
        fh.write(canonical_json(model_to_dict(model_set, q16=q16)))
        fh.write("\n")


def load_model(path):
    import json

    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(obj)
