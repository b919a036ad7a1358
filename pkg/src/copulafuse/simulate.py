"""Synthetic multi-classifier segmentation data with planted dependence.

Every pixel of true class m draws one uniform per classifier from that
class's copula; each uniform maps through a Beta quantile concentrated at
the classifier's quality level to a correct-class score, and the leftover
mass spreads over the other classes in fixed per-class proportions.  The
planted dependence and the known ground truth give every fusion claim a
desk-scale oracle.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import beta as beta_dist

from .baselines import logit_fuse, lop_fuse, majority_vote
from .copulas import (
    CopulaParams,
    Family,
    archimedean_params,
    elliptical_params,
    equicorrelation,
    independence_params,
    sample_copula_rng,
    validate_params,
)
from .errors import ConfigError
from .fusion import (
    FitSettings,
    build_class_models,
    class_transforms,
    force_family_variant,
    log_posteriors,
    _labels_with_fallback,
)
from .metrics import ConfusionMatrix, accumulate, summarize

_SPLIT_STREAM = 999983  # sub-stream key for the off-class mass proportions
_SPLIT_ALPHA = 2.0  # Dirichlet concentration of the off-class mass split


@dataclass(frozen=True)
class ClassDependence:
    """Planted inter-classifier dependence for one class.

    rho is either a scalar (equicorrelation) or the upper-triangle pairwise
    correlations in row-major order, e.g. (r01, r02, r12) for three
    classifiers.
    """

    family: str
    theta: float | None = None
    rho: float | tuple | None = None
    nu: float | None = None

    def params(self, num_classifiers):
        fam = Family.parse(self.family)
        if fam is Family.INDEPENDENCE:
            return fam, independence_params(num_classifiers)
        if fam in (Family.GAUSSIAN, Family.STUDENTT):
            if self.rho is None:
                raise ConfigError(f"{fam.value} dependence needs rho")
            if np.isscalar(self.rho):
                sigma = equicorrelation(self.rho, num_classifiers)
            else:
                entries = list(self.rho)
                expected = num_classifiers * (num_classifiers - 1) // 2
                if len(entries) != expected:
                    raise ConfigError(
                        f"rho needs {expected} pairwise entries for {num_classifiers} classifiers,"
                        f" got {len(entries)}"
                    )
                sigma = np.eye(num_classifiers)
                pos = 0
                for i in range(num_classifiers):
                    for j in range(i + 1, num_classifiers):
                        sigma[i, j] = sigma[j, i] = float(entries[pos])
                        pos += 1
            params = elliptical_params(sigma, nu=self.nu)
            try:
                validate_params(fam, params)
            except ValueError as exc:
                raise ConfigError(f"bad correlation structure: {exc}") from exc
            return fam, params
        if self.theta is None:
            raise ConfigError(f"{fam.value} dependence needs theta")
        return fam, archimedean_params(self.theta, dim=num_classifiers)


def _default_dependence():
    return (
        ClassDependence("clayton", theta=2.0),
        ClassDependence("gaussian", rho=0.7),
        ClassDependence("gumbel", theta=2.5),
        ClassDependence("frank", theta=6.0),
    )


def _benchmark_dependence():
    # heterogeneous planting: lower-tail, exchangeable elliptical, strong
    # lower-tail, and non-exchangeable mixed-sign elliptical dependence
    return (
        ClassDependence("clayton", theta=2.0),
        ClassDependence("gaussian", rho=0.7),
        ClassDependence("clayton", theta=6.0),
        ClassDependence("gaussian", rho=(0.8, -0.55, -0.55)),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Scenario knobs; quality is per classifier, optionally per class.

    quality may be a length-L tuple (shared by every class) or an M-tuple
    of length-L tuples (per class and classifier).
    """

    height: int = 64
    width: int = 64
    num_classes: int = 4
    num_classifiers: int = 3
    images: int = 20
    train_images: int = 10
    dependence: tuple = field(default_factory=_default_dependence)
    quality: tuple = (0.60, 0.68, 0.64)
    concentration: float = 10.0
    seed: int = 42

    def quality_matrix(self):
        q = self.quality
        if np.isscalar(q[0]):
            return np.tile(np.asarray(q, dtype=float), (self.num_classes, 1))
        return np.asarray([list(row) for row in q], dtype=float)

    def validate(self):
        if min(self.height, self.width, self.num_classes, self.images) < 1:
            raise ConfigError("height, width, classes, and images must be positive")
        if self.num_classifiers < 2:
            raise ConfigError("need at least 2 classifiers")
        if not 0 < self.train_images < self.images:
            raise ConfigError(
                f"train_images must be in (0, images); got {self.train_images} of {self.images}"
            )
        if len(self.dependence) != self.num_classes:
            raise ConfigError(
                f"need one dependence spec per class ({self.num_classes}), got {len(self.dependence)}"
            )
        try:
            qm = self.quality_matrix()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad quality spec: {exc}") from exc
        if qm.shape != (self.num_classes, self.num_classifiers):
            raise ConfigError(
                f"quality must be {self.num_classifiers} values or a "
                f"{self.num_classes} x {self.num_classifiers} table, got shape {qm.shape}"
            )
        if np.any(qm <= 0.0) or np.any(qm > 1.0):
            raise ConfigError("quality values must lie in (0, 1]")
        if self.concentration <= 0:
            raise ConfigError("concentration must be positive")
        for spec in self.dependence:
            spec.params(self.num_classifiers)  # raises ConfigError / ValueError

    def to_dict(self):
        quality = (
            list(self.quality)
            if np.isscalar(self.quality[0])
            else [list(row) for row in self.quality]
        )
        def spec_dict(spec):
            out = {}
            for k, v in vars(spec).items():
                if v is None:
                    continue
                out[k] = list(v) if isinstance(v, (tuple, list)) else v
            return out

        return {
            "height": self.height,
            "width": self.width,
            "classes": self.num_classes,
            "classifiers": self.num_classifiers,
            "images": self.images,
            "train_images": self.train_images,
            "dependence": [spec_dict(spec) for spec in self.dependence],
            "quality": quality,
            "concentration": self.concentration,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj):
        try:
            deps = []
            for d in obj["dependence"]:
                rho = d.get("rho")
                if rho is not None and not np.isscalar(rho):
                    rho = tuple(float(v) for v in rho)
                deps.append(
                    ClassDependence(family=d["family"], theta=d.get("theta"), rho=rho, nu=d.get("nu"))
                )
            quality_raw = obj["quality"]
            if np.isscalar(quality_raw[0]):
                quality = tuple(float(q) for q in quality_raw)
            else:
                quality = tuple(tuple(float(q) for q in row) for row in quality_raw)
            cfg = cls(
                height=int(obj["height"]),
                width=int(obj["width"]),
                num_classes=int(obj["classes"]),
                num_classifiers=int(obj["classifiers"]),
                images=int(obj["images"]),
                train_images=int(obj["train_images"]),
                dependence=tuple(deps),
                quality=quality,
                concentration=float(obj.get("concentration", 10.0)),
                seed=int(obj.get("seed", 42)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad scenario config: {exc}") from exc
        cfg.validate()
        return cfg


def default_scenario(seed=42):
    return ScenarioConfig(seed=seed)


def benchmark_scenario(seed=42):
    """Desk-scale default for method comparison.

    Classes differ in both dependence structure and difficulty; per-class
    quality keeps some classes easy and some heavily overlapping so the
    dependence model has room to matter.
    """
    return ScenarioConfig(
        height=48,
        width=48,
        images=12,
        train_images=6,
        dependence=_benchmark_dependence(),
        quality=(
            (0.66, 0.72, 0.68),
            (0.58, 0.64, 0.60),
            (0.48, 0.54, 0.50),
            (0.50, 0.56, 0.52),
        ),
        seed=seed,
    )


def _label_map(height, width, num_classes, rng):
    """Spatially coherent labels: a base class plus random rectangles."""
    labels = np.full((height, width), int(rng.integers(num_classes)), dtype=np.int64)
    for _ in range(3 * num_classes):
        ph = int(rng.integers(max(2, height // 8), max(3, height // 2 + 1)))
        pw = int(rng.integers(max(2, width // 8), max(3, width // 2 + 1)))
        y0 = int(rng.integers(0, height - ph + 1))
        x0 = int(rng.integers(0, width - pw + 1))
        labels[y0 : y0 + ph, x0 : x0 + pw] = int(rng.integers(num_classes))
    return labels


def _correct_scores(u, quality, concentration):
    if quality >= 1.0:
        return np.ones_like(u)
    a = quality * concentration
    b = (1.0 - quality) * concentration
    return beta_dist.ppf(u, a, b)


def generate(config):
    """Synthesize (images, label maps); deterministic per config.seed.

    images is a list over images of per-classifier (H, W, M) tensors whose
    rows are renormalized to sum exactly to 1.
    """
    config.validate()
    m_classes = config.num_classes
    l_classifiers = config.num_classifiers
    split_rng = np.random.default_rng((config.seed, _SPLIT_STREAM))
    off_split = np.empty((m_classes, l_classifiers, m_classes - 1))
    for m in range(m_classes):
        for i in range(l_classifiers):
            off_split[m, i] = split_rng.dirichlet(np.ones(m_classes - 1))

    planted = [spec.params(l_classifiers) for spec in config.dependence]
    quality = config.quality_matrix()
    images, gts = [], []
    for img_idx in range(config.images):
        rng = np.random.default_rng((config.seed, img_idx))
        gt = _label_map(config.height, config.width, m_classes, rng)
        flat_gt = gt.reshape(-1)
        tensors = [np.zeros((flat_gt.size, m_classes)) for _ in range(l_classifiers)]
        for m in range(m_classes):
            mask = flat_gt == m
            n = int(mask.sum())
            if n == 0:
                continue
            family, params = planted[m]
            u = sample_copula_rng(family, params, n, rng)
            others = [j for j in range(m_classes) if j != m]
            for i in range(l_classifiers):
                s = _correct_scores(u[:, i], quality[m, i], config.concentration)
                block = np.empty((n, m_classes))
                block[:, m] = s
                block[:, others] = (1.0 - s)[:, None] * off_split[m, i][None, :]
                tensors[i][mask] = block
        for i in range(l_classifiers):
            tensors[i] /= tensors[i].sum(axis=1, keepdims=True)
        images.append([t.reshape(config.height, config.width, m_classes) for t in tensors])
        gts.append(gt)
    return images, gts


# ---------------------------------------------------------------------------
# benchmark harness
# ---------------------------------------------------------------------------

BENCHMARK_METHODS = (
    "proposed",
    "gaussian",
    "studentt",
    "clayton",
    "frank",
    "gumbel",
    "lop",
    "mv",
    "logit",
    "per-classifier",
)

_FAMILY_METHODS = ("gaussian", "studentt", "clayton", "frank", "gumbel")


@dataclass
class BenchmarkReport:
    rows: list  # dicts: method, oa, mean_ca, miou
    seed: int

    def to_markdown(self):
        out = io.StringIO()
        out.write("| Method | Overall Accuracy | Mean Accuracy | Mean IOU |\n")
        out.write("|---|---|---|---|\n")
        for row in self.rows:
            out.write(
                f"| {row['method']} | {row['oa']:.6f} | {row['mean_ca']:.6f} | {row['miou']:.6f} |\n"
            )
        return out.getvalue()

    def to_csv(self):
        out = io.StringIO()
        out.write("method,overall_accuracy,mean_accuracy,mean_iou\n")
        for row in self.rows:
            out.write(f"{row['method']},{row['oa']:.6f},{row['mean_ca']:.6f},{row['miou']:.6f}\n")
        return out.getvalue()

    def row(self, method):
        for row in self.rows:
            if row["method"] == method:
                return row
        raise KeyError(method)


def _normalize_method(name):
    name = str(name).strip().lower()
    if name in ("student-t", "student_t"):
        return "studentt"
    return name


def benchmark(config=None, methods=None, settings=None):
    """Train on the scenario's train split, fuse the test split per method.

    The default settings subsample 5000 pixels per class so the whole run
    stays desk-scale; the per-class transforms are computed once and shared
    by the proposed and the forced-single-family variants.
    """
    if config is None:
        config = benchmark_scenario()
    config.validate()
    if methods is None:
        methods = BENCHMARK_METHODS
    methods = [_normalize_method(m) for m in methods]
    for m in methods:
        if m not in BENCHMARK_METHODS:
            raise ConfigError(f"unknown benchmark method {m!r}; choose from {BENCHMARK_METHODS}")
    if settings is None:
        settings = FitSettings(seed=config.seed, max_pixels_per_class=3000)

    images, gts = generate(config)
    n_train = config.train_images
    train_imgs, train_gts = images[:n_train], gts[:n_train]
    test_imgs, test_gts = images[n_train:], gts[n_train:]

    needs_model = any(m == "proposed" or m in _FAMILY_METHODS for m in methods)
    model_set = build_class_models(train_imgs, train_gts, settings) if needs_model else None
    overrides = {}
    if model_set is not None:
        for fam in _FAMILY_METHODS:
            if fam in methods:
                variant = force_family_variant(model_set, fam)
                overrides[fam] = [(cm.family, cm.params) for cm in variant.models]

    copula_methods = [m for m in methods if m == "proposed" or m in _FAMILY_METHODS]
    cms = {}
    for method in methods:
        if method == "per-classifier":
            for i in range(config.num_classifiers):
                cms[f"classifier-{i}"] = ConfusionMatrix.empty(config.num_classes)
        else:
            cms[method] = ConfusionMatrix.empty(config.num_classes)

    for tensors, gt in zip(test_imgs, test_gts):
        shape = gt.shape
        lop_scores = lop_fuse(tensors)
        lop_labels = lop_scores.reshape(-1, config.num_classes).argmax(axis=1)
        transforms = class_transforms(model_set, tensors) if copula_methods else None
        for method in methods:
            if method == "proposed" or method in _FAMILY_METHODS:
                override = overrides.get(method)
                lp = log_posteriors(model_set, transforms, copula_override=override)
                labels, _, _ = _labels_with_fallback(lp, lop_labels)
                pred = labels.reshape(shape)
            elif method == "lop":
                pred = lop_scores.argmax(axis=2)
            elif method == "mv":
                pred = majority_vote(tensors)
            elif method == "logit":
                pred = logit_fuse(tensors).argmax(axis=2)
            elif method == "per-classifier":
                for i, t in enumerate(tensors):
                    accumulate(cms[f"classifier-{i}"], np.asarray(t).argmax(axis=2), gt)
                continue
            accumulate(cms[method], pred, gt)

    rows = []
    for method in methods:
        if method == "per-classifier":
            for i in range(config.num_classifiers):
                rows.append({"method": f"classifier-{i}", **summarize(cms[f"classifier-{i}"])})
        else:
            rows.append({"method": method, **summarize(cms[method])})
    for row in rows:
        row.pop("ignored", None)
    return BenchmarkReport(rows=rows, seed=config.seed)


def scenario_to_json(config):
    return json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"


def scenario_from_json(text):
    try:
        return ScenarioConfig.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario config is not valid JSON: {exc}") from exc
