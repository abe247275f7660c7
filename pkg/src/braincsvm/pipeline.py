"""Two-stage classifier: neoplasm presence, then benign vs. malignant.

Each image goes through basic preprocessing (resize to 150x150, Gaussian
denoise, histogram equalization) and, unless disabled, the edge-differencing
step.  A convnet trained on presence labels turns images into feature
vectors; each stage then selects features with LASSO and classifies with a
cost-sensitive RBF SVM.  Selected features are z-scored with the LASSO
statistics and divided by sqrt(#selected) so the RBF parameter ``g`` has a
dimension-independent meaning.
"""
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import convnet, csvm, featsel, serial
from .edgeprep import DEFAULT_LEVELS, special_preprocess
from .errors import FormatError, InvalidArgumentError
from .evaltune import ConfusionMatrix, GridSpec, grid_search, metrics
from .imgcore import DEFAULT_SIGMA, WORKING_SIZE, basic_preprocess
from .imgio import list_images, read_image

log = logging.getLogger(__name__)

LABELS = ("normal", "benign", "malignant")
STAGE_NAMES = {1: "stage 1 (presence)", 2: "stage 2 (severity)"}

MAGIC = b"BNPL"
FORMAT_VERSION = 1


@dataclass
class Sample:
    image: np.ndarray
    label: str
    id: str

    def __post_init__(self):
        if self.label not in LABELS:
            raise InvalidArgumentError(f"label must be one of {LABELS}, got {self.label!r}")


@dataclass(frozen=True)
class StageParams:
    C: float
    g: float


@dataclass(frozen=True)
class PipelineConfig:
    sigma: float = DEFAULT_SIGMA
    contour_levels: int = DEFAULT_LEVELS
    special: bool = True
    features: str = "final"
    seed: int = 0
    epochs: int = 50
    lr: float = 0.01
    batch: int = 16
    lasso_fraction: float = featsel.DEFAULT_LAMBDA_FRACTION
    cost_ratio: float = csvm.DEFAULT_COST_RATIO
    presence: StageParams = StageParams(C=13.0, g=2.0)
    severity: StageParams = StageParams(C=9.0, g=3.0)
    svm_tol: float = csvm.DEFAULT_TOL

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["presence"] = StageParams(**d["presence"])
        d["severity"] = StageParams(**d["severity"])
        return cls(**d)


@dataclass
class Stage:
    mask: np.ndarray  # bool over convnet features
    means: np.ndarray  # over selected features
    scales: np.ndarray
    svm: csvm.SvmModel

    def transform(self, features):
        z = featsel.apply_mask(np.asarray(features, dtype=np.float64), self.mask)
        safe = np.where(self.scales > 0, self.scales, 1.0)
        z = np.where(self.scales > 0, (z - self.means) / safe, 0.0)
        return z / np.sqrt(max(1, int(self.mask.sum())))


@dataclass
class PipelineModel:
    net: convnet.ConvNet
    config: PipelineConfig
    presence: Stage
    severity: Stage
    curve: convnet.TrainingCurve = field(default_factory=convnet.TrainingCurve)


@dataclass(frozen=True)
class Prediction:
    label: str
    presence_score: float
    severity_score: float = None  # None when stage 2 was not reached


# ---------------------------------------------------------------- data

def ingest(root):
    """Load ``root/{normal,benign,malignant}/*.{pgm,png}`` in lexicographic order.

    Unreadable files are collected and reported together.
    """
    root = Path(root)
    samples, problems = [], []
    for label in LABELS:
        d = root / label
        if not d.is_dir():
            raise InvalidArgumentError(f"missing class directory {d}")
        files = list_images(d)
        if not files:
            stage = STAGE_NAMES[1] if label == "normal" else STAGE_NAMES[2]
            raise InvalidArgumentError(f"class directory {d} is empty; {stage} cannot be trained")
        for path in files:
            try:
                samples.append(Sample(read_image(path), label, f"{label}/{path.name}"))
            except FormatError as exc:
                problems.append(str(exc))
    if problems:
        raise FormatError(f"{len(problems)} unreadable file(s):\n  " + "\n  ".join(problems))
    return samples


def split(samples, ratio=0.8, seed=0):
    """Stratified train/test split; each class keeps ``floor(ratio * n)`` for training."""
    if not 0 < ratio < 1:
        raise InvalidArgumentError(f"ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    labels = np.array([s.label for s in samples])
    train_idx, test_idx = [], []
    for label in LABELS:
        idx = np.flatnonzero(labels == label)
        if idx.size == 0:
            continue
        if idx.size < 2:
            raise InvalidArgumentError(f"class {label!r} has fewer than 2 samples")
        idx = rng.permutation(idx)
        k = min(max(int(np.floor(ratio * idx.size)), 1), idx.size - 1)
        train_idx.extend(idx[:k])
        test_idx.extend(idx[k:])
    return [samples[i] for i in sorted(train_idx)], [samples[i] for i in sorted(test_idx)]


def preprocess(img, config):
    out = basic_preprocess(img, sigma=config.sigma, size=WORKING_SIZE)
    if config.special:
        out = special_preprocess(out, config.contour_levels)
    return out


# ---------------------------------------------------------------- training

def _select(features, y, config):
    """LASSO mask plus the standardization of the selected columns."""
    model = featsel.fit_lasso(features, y, lam=config.lasso_fraction * featsel.lambda_max(features, y))
    m = featsel.mask(model)
    if not m.any():
        raise InvalidArgumentError("LASSO selected no features (all features constant?)")
    return Stage(mask=m, means=model.feature_means[m], scales=model.feature_scales[m], svm=None)


def _fit_stage(features, y, params, config):
    stage = _select(features, y, config)
    stage.svm = csvm.train_svm(stage.transform(features), y, csvm.KernelSpec(params.g),
                               csvm.CostSpec(params.C, config.cost_ratio), tol=config.svm_tol)
    log.info("stage fitted: %d/%d features, %d support vectors",
             stage.mask.sum(), stage.mask.size, stage.svm.support_vectors.shape[0])
    return stage


def _stage_error(stage, exc):
    return type(exc)(f"{STAGE_NAMES[stage]}: {exc}")


def _stage_targets(labels):
    """Per-stage (row indices, +1/-1 targets); +1 is the class we must not miss."""
    presence = labels != "normal"
    tumour = np.flatnonzero(presence)
    return {
        1: (np.arange(labels.size), np.where(presence, 1, -1)),
        2: (tumour, np.where(labels[tumour] == "malignant", 1, -1)),
    }


def _check_labels(labels):
    if not np.any(labels == "normal") or not np.any(labels != "normal"):
        raise InvalidArgumentError(f"{STAGE_NAMES[1]}: needs both normal and neoplasm samples")
    for label in ("benign", "malignant"):
        if not np.any(labels == label):
            raise InvalidArgumentError(f"{STAGE_NAMES[2]}: no {label} samples")


def train_extractor(train, config):
    """Preprocess, train the convnet on presence labels and extract features."""
    if config.epochs < 0:
        raise InvalidArgumentError("epochs must be >= 0")
    labels = np.array([s.label for s in train])
    _check_labels(labels)
    images = [preprocess(s.image, config) for s in train]
    net = convnet.build(config.seed, feature_mode=config.features)
    curve = convnet.TrainingCurve()
    # epochs=0 keeps the randomly initialized extractor
    if config.epochs > 0:
        curve = convnet.train(net, images, (labels != "normal").astype(int), epochs=config.epochs,
                              lr=config.lr, batch=config.batch, seed=config.seed)
    return net, curve, convnet.extract(net, images), labels


def fit(train, config=PipelineConfig()):
    net, curve, feats, labels = train_extractor(train, config)
    stages = {}
    for k, (rows, y) in _stage_targets(labels).items():
        params = config.presence if k == 1 else config.severity
        try:
            stages[k] = _fit_stage(feats[rows], y, params, config)
        except (InvalidArgumentError, ArithmeticError, RuntimeError) as exc:
            raise _stage_error(k, exc) from exc
    return PipelineModel(net=net, config=config, presence=stages[1], severity=stages[2], curve=curve)


def tune(train, config=PipelineConfig(), grid=GridSpec()):
    """Grid-search (C, g) for both stages on the training samples.

    The LASSO mask is chosen once on all of ``train`` and then held fixed
    across the folds; only the SVM is refit per fold.
    """
    _, _, feats, labels = train_extractor(train, config)
    out = {}
    for k, (rows, y) in _stage_targets(labels).items():
        try:
            stage = _select(feats[rows], y, config)
            out[k] = grid_search(stage.transform(feats[rows]), y, grid, config.cost_ratio, seed=config.seed)
        except (InvalidArgumentError, ArithmeticError, RuntimeError) as exc:
            raise _stage_error(k, exc) from exc
    return out


# ---------------------------------------------------------------- inference

def features_of(model, images):
    pre = [preprocess(img, model.config) for img in images]
    return convnet.extract(model.net, pre)


def _route(model, feats):
    s1 = csvm.decision_function(model.presence.svm, model.presence.transform(feats))
    out = []
    for k in range(feats.shape[0]):
        if s1[k] < 0:
            out.append(Prediction("normal", float(s1[k])))
            continue
        s2 = float(csvm.decision_function(model.severity.svm, model.severity.transform(feats[k:k + 1]))[0])
        out.append(Prediction("malignant" if s2 >= 0 else "benign", float(s1[k]), s2))
    return out


def predict(model, img):
    return _route(model, features_of(model, [img]))[0]


def predict_many(model, images):
    images = list(images)
    if not images:
        return []
    return _route(model, features_of(model, images))


@dataclass
class EvaluationReport:
    presence: ConfusionMatrix
    severity: ConfusionMatrix  # None if the test set has no neoplasm samples
    predictions: list

    def as_dict(self):
        out = {"presence": {"confusion": self.presence.as_dict(),
                            "metrics": metrics(self.presence).as_dict()}}
        if self.severity is not None:
            out["severity"] = {"confusion": self.severity.as_dict(),
                               "metrics": metrics(self.severity).as_dict()}
        return out


def evaluate(model, test):
    """Per-stage confusion matrices on ``test``.

    Stage 2 is scored on every truly neoplastic sample regardless of what
    stage 1 said, so its numbers reflect the severity classifier alone.
    """
    if not test:
        raise InvalidArgumentError("test set is empty")
    feats = features_of(model, [s.image for s in test])
    labels = np.array([s.label for s in test])
    preds = _route(model, feats)
    s1 = csvm.decision_function(model.presence.svm, model.presence.transform(feats))
    presence = ConfusionMatrix.from_labels(np.where(labels != "normal", 1, -1), np.where(s1 >= 0, 1, -1))
    tumour = np.flatnonzero(labels != "normal")
    severity = None
    if tumour.size:
        s2 = csvm.decision_function(model.severity.svm, model.severity.transform(feats[tumour]))
        severity = ConfusionMatrix.from_labels(np.where(labels[tumour] == "malignant", 1, -1),
                                               np.where(s2 >= 0, 1, -1))
    return EvaluationReport(presence=presence, severity=severity, predictions=preds)


# ---------------------------------------------------------------- persistence

def _stage_arrays(prefix, stage):
    svm = stage.svm
    scalars = np.array([svm.kernel.g, svm.cost.C, svm.cost.r, svm.bias])
    return [
        (prefix + "/mask", np.packbits(stage.mask.astype(np.uint8))),
        (prefix + "/means", stage.means),
        (prefix + "/scales", stage.scales),
        (prefix + "/svm_scalars", scalars),
        (prefix + "/support_vectors", svm.support_vectors),
        (prefix + "/dual_coef", svm.dual_coef),
    ]


def _stage_from(prefix, arrays, dim):
    bits = np.unpackbits(arrays[prefix + "/mask"])
    if bits.size < dim:
        raise FormatError(f"{prefix} mask shorter than feature dimension {dim}")
    m = bits[:dim].astype(bool)
    g, C, r, bias = arrays[prefix + "/svm_scalars"]
    sv = arrays[prefix + "/support_vectors"]
    if sv.ndim != 2 or sv.shape[1] != int(m.sum()):
        raise FormatError(f"{prefix} support vectors do not match its mask")
    svm = csvm.SvmModel(support_vectors=sv, dual_coef=arrays[prefix + "/dual_coef"], bias=float(bias),
                        kernel=csvm.KernelSpec(float(g)), cost=csvm.CostSpec(float(C), float(r)))
    return Stage(mask=m, means=arrays[prefix + "/means"], scales=arrays[prefix + "/scales"], svm=svm)


def to_bytes(model):
    dim = int(model.presence.mask.size)
    meta = {"config": model.config.to_dict(), "feature_dim": dim}
    arrays = [("convnet", np.frombuffer(model.net.to_bytes(), dtype=np.uint8))]
    arrays += _stage_arrays("presence", model.presence)
    arrays += _stage_arrays("severity", model.severity)
    arrays += [("curve/loss", np.array(model.curve.loss)), ("curve/accuracy", np.array(model.curve.accuracy))]
    return serial.pack(MAGIC, FORMAT_VERSION, meta, arrays)


def from_bytes(blob):
    try:
        _, meta, arrays = serial.unpack(blob, MAGIC, FORMAT_VERSION)
        net = convnet.ConvNet.from_bytes(arrays["convnet"].tobytes())
        dim = int(meta["feature_dim"])
        if dim != net.plan.feature_length(net.feature_mode):
            raise FormatError("mask dimension does not match the convnet feature length")
        return PipelineModel(
            net=net,
            config=PipelineConfig.from_dict(meta["config"]),
            presence=_stage_from("presence", arrays, dim),
            severity=_stage_from("severity", arrays, dim),
            curve=convnet.TrainingCurve(list(arrays["curve/loss"]), list(arrays["curve/accuracy"])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"corrupt model file: {exc}") from exc


def save(model, path):
    Path(path).write_bytes(to_bytes(model))


def load(path):
    return from_bytes(Path(path).read_bytes())
