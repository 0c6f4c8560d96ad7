"""Reference stripe classifier: uniform LBP histograms + logistic regression.

Externally trained networks plug in through :func:`import_scores`, which
reads per-stripe attack probabilities from CSV.
"""

import json
from typing import Iterator, Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError
from scipy.special import expit

from data.models import (
    FEATURE_BINS,
    FORMAT_VERSION,
    Checkpoint,
    ClassifierModel,
    FeatureConfig,
    FeatureVector,
    MicroStripe,
    PadLabel,
    StripeScore,
    StripeSet,
    TrainConfig,
    TrainingMeta,
)
from tools.imaging import quantize
from utils.errors import (
    DuplicateScoreError,
    FeatureConfigError,
    FeatureMismatchError,
    ModelFileError,
    ScoreParseError,
    ScoreRangeError,
    SingleClassError,
    TrainingDivergedError,
)
from utils.progress import progress

# Neighbours in circular order; bit i is set when neighbour i >= center.
NEIGHBOUR_OFFSETS = ((-1, -1), (-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1))
NON_UNIFORM_BIN = FEATURE_BINS - 1


def _transitions(code: int) -> int:
    bits = [(code >> i) & 1 for i in range(8)]
    return sum(bits[i] != bits[(i + 1) % 8] for i in range(8))


def _uniform_lut() -> np.ndarray:
    lut = np.full(256, NON_UNIFORM_BIN, dtype=np.int64)
    next_bin = 0
    for code in range(256):
        if _transitions(code) <= 2:
            lut[code] = next_bin
            next_bin += 1
    return lut


UNIFORM_LUT = _uniform_lut()


def lbp_codes(pixels: np.ndarray) -> np.ndarray:
    """8-neighbour radius-1 LBP codes of the interior pixels of an 8-bit grid."""
    grid = np.asarray(pixels, dtype=np.int16)
    h, w = grid.shape
    center = grid[1 : h - 1, 1 : w - 1]
    codes = np.zeros(center.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(NEIGHBOUR_OFFSETS):
        neighbour = grid[1 + dy : h - 1 + dy, 1 + dx : w - 1 + dx]
        codes |= (neighbour >= center).astype(np.int64) << bit
    return codes


def _cell_index(length: int, cells: int) -> np.ndarray:
    sizes = [len(part) for part in np.array_split(np.arange(length), cells)]
    return np.repeat(np.arange(cells), sizes)


def lbp_histograms(values: np.ndarray, cells_x: int, cells_y: int) -> np.ndarray:
    """Per-cell 59-bin uniform LBP histograms, L1-normalized, row-major cell order."""
    h, w = values.shape
    if cells_x < 1 or cells_y < 1 or h < 3 * cells_y or w < 3 * cells_x:
        raise FeatureConfigError(f"a {h}x{w} stripe cannot hold a {cells_y}x{cells_x} grid of 3x3 cells")
    labels = UNIFORM_LUT[lbp_codes(quantize(values))]
    row_cell = _cell_index(h - 2, cells_y)
    col_cell = _cell_index(w - 2, cells_x)
    cell = row_cell[:, None] * cells_x + col_cell[None, :]
    n_cells = cells_x * cells_y
    hist = np.bincount((cell * FEATURE_BINS + labels).ravel(), minlength=n_cells * FEATURE_BINS)
    hist = hist.reshape(n_cells, FEATURE_BINS).astype(np.float64)
    hist /= hist.sum(axis=1, keepdims=True)
    return hist.ravel()


def lbp_features(stripe: MicroStripe, cells_x: int = 16, cells_y: int = 2) -> FeatureVector:
    config = FeatureConfig(cells_x=cells_x, cells_y=cells_y, stripe_height=stripe.height)
    return FeatureVector(values=lbp_histograms(stripe.values, cells_x, cells_y), config_hash=config.config_hash)


def stripe_feature_matrix(stripe_set: StripeSet, config: FeatureConfig) -> np.ndarray:
    """Feature rows for every stripe of a set, in stripe order."""
    if stripe_set.stripe_height != config.stripe_height:
        raise FeatureMismatchError(
            f"stripes are {stripe_set.stripe_height} rows, feature config expects {config.stripe_height}"
        )
    return np.stack([lbp_histograms(s.values, config.cells_x, config.cells_y) for s in stripe_set.stripes])


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


def _as_matrix(features: Sequence) -> np.ndarray:
    rows = [f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float64) for f in features]
    if not rows:
        raise SingleClassError("no training examples")
    lengths = {len(r) for r in rows}
    if len(lengths) != 1:
        raise FeatureMismatchError(f"inconsistent feature lengths {sorted(lengths)}")
    return np.vstack(rows)


def _as_targets(labels: Sequence[PadLabel]) -> np.ndarray:
    return np.array([1.0 if PadLabel(label) == PadLabel.ATTACK else 0.0 for label in labels])


def log_loss(X: np.ndarray, y: np.ndarray, w: np.ndarray, b: float) -> float:
    z = X @ w + b
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def _batches(n: int, batch_size: int, rng: np.random.Generator) -> Iterator[np.ndarray]:
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


class _RMSprop:
    def __init__(self, dim: int, cfg: TrainConfig):
        self.cfg = cfg
        self.s_w = np.zeros(dim)
        self.s_b = 0.0

    def step(self, w: np.ndarray, b: float, grad_w: np.ndarray, grad_b: float) -> tuple[np.ndarray, float]:
        rho, lr, eps = self.cfg.rho, self.cfg.learning_rate, self.cfg.epsilon
        self.s_w = rho * self.s_w + (1.0 - rho) * grad_w**2
        self.s_b = rho * self.s_b + (1.0 - rho) * grad_b**2
        w = w - lr * grad_w / (np.sqrt(self.s_w) + eps)
        b = b - lr * grad_b / (np.sqrt(self.s_b) + eps)
        return w, b


def train(
    features: Sequence,
    labels: Sequence[PadLabel],
    dev_features: Optional[Sequence] = None,
    dev_labels: Optional[Sequence[PadLabel]] = None,
    cfg: TrainConfig = TrainConfig(),
    feature_config: Optional[FeatureConfig] = None,
    name: str = "classifier",
) -> ClassifierModel:
    """Mini-batch RMSprop logistic regression with early stopping on dev loss.

    Weights start at zero and batches are shuffled from ``cfg.seed``, so equal
    inputs give bit-identical models. Without a dev split the training loss is
    monitored instead. The best-dev weights are restored at the end.
    """
    X = _as_matrix(features)
    y = _as_targets(labels)
    if len(y) != len(X):
        raise FeatureMismatchError(f"{len(X)} feature rows but {len(y)} labels")
    if y.min() == y.max():
        raise SingleClassError(f"training set holds only {PadLabel.ATTACK.value if y[0] else PadLabel.BONA_FIDE.value}")

    if dev_features is not None and len(dev_features) > 0:
        X_dev, y_dev = _as_matrix(dev_features), _as_targets(dev_labels)
        if X_dev.shape[1] != X.shape[1]:
            raise FeatureMismatchError("dev features differ in length from training features")
    else:
        X_dev, y_dev = X, y

    if feature_config is None:
        n_cells, rem = divmod(X.shape[1], FEATURE_BINS)
        if rem:
            raise FeatureMismatchError(f"feature length {X.shape[1]} is not a multiple of {FEATURE_BINS}")
        feature_config = FeatureConfig(cells_x=n_cells, cells_y=1)
    elif X.shape[1] != feature_config.feature_length:
        raise FeatureMismatchError(
            f"features have length {X.shape[1]}, feature config expects {feature_config.feature_length}"
        )

    rng = np.random.default_rng(cfg.seed)
    w, b = np.zeros(X.shape[1]), 0.0
    optimizer = _RMSprop(X.shape[1], cfg)

    best = (w.copy(), b)
    best_dev, best_epoch, best_train = np.inf, 0, log_loss(X, y, w, b)
    checkpoints: list[Checkpoint] = []
    wait = 0
    epochs_run = 0
    for epoch in range(1, cfg.max_epochs + 1):
        for idx in _batches(len(X), cfg.batch_size, rng):
            xb, yb = X[idx], y[idx]
            err = expit(xb @ w + b) - yb
            w, b = optimizer.step(w, b, xb.T @ err / len(idx), float(err.mean()))
        epochs_run = epoch

        train_loss = log_loss(X, y, w, b)
        dev_loss = log_loss(X_dev, y_dev, w, b)
        if not (np.isfinite(train_loss) and np.isfinite(dev_loss) and np.all(np.isfinite(w))):
            raise TrainingDivergedError(f"loss became non-finite at epoch {epoch}")
        progress.update_status(name, f"epoch {epoch}", f"loss {train_loss:.4f} dev {dev_loss:.4f}")

        if dev_loss < best_dev:
            best_dev, best_epoch, best_train = dev_loss, epoch, train_loss
            best = (w.copy(), b)
            checkpoints.append(Checkpoint(epoch=epoch, train_loss=train_loss, dev_loss=dev_loss))
            wait = 0
        else:
            wait += 1
            if wait >= cfg.early_stop_patience:
                break

    w, b = best
    meta = TrainingMeta(
        seed=cfg.seed,
        epochs_run=epochs_run,
        final_loss=best_train,
        best_epoch=best_epoch,
        best_dev_loss=float(best_dev),
        checkpoints=checkpoints,
    )
    progress.update_status(name, None, "Done")
    return ClassifierModel(weights=tuple(float(v) for v in w), bias=float(b), feature_config=feature_config, training_meta=meta)


# ---------------------------------------------------------------------------
# Scoring
# ---------------------------------------------------------------------------


def predict_proba(model: ClassifierModel, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if X.shape[1] != len(model.weights):
        raise FeatureMismatchError(f"features have length {X.shape[1]}, model expects {len(model.weights)}")
    return expit(X @ model.weight_array + model.bias)


def score_features(model: ClassifierModel, fv: FeatureVector, stripe_offset: int = 0) -> StripeScore:
    if len(fv) != len(model.weights):
        raise FeatureMismatchError(f"feature vector has length {len(fv)}, model expects {len(model.weights)}")
    p = float(predict_proba(model, fv.values)[0])
    return StripeScore(p_attack=p, stripe_offset=stripe_offset)


def score_stripe(model: ClassifierModel, stripe: MicroStripe) -> StripeScore:
    config = model.feature_config
    if stripe.height != config.stripe_height:
        raise FeatureMismatchError(f"stripe has {stripe.height} rows, model was trained on {config.stripe_height}")
    fv = lbp_features(stripe, config.cells_x, config.cells_y)
    return score_features(model, fv, stripe.row_offset)


def score_stripe_set(model: ClassifierModel, stripe_set: StripeSet) -> list[StripeScore]:
    probs = predict_proba(model, stripe_feature_matrix(stripe_set, model.feature_config))
    return [StripeScore(p_attack=float(p), stripe_offset=s.row_offset) for p, s in zip(probs, stripe_set.stripes)]


# ---------------------------------------------------------------------------
# Score files and model files
# ---------------------------------------------------------------------------

SCORE_COLUMNS = ["image_id", "stripe_offset", "p_attack"]


def import_scores(path: str) -> dict[tuple[str, int], StripeScore]:
    """Read ``image_id,stripe_offset,p_attack`` rows; duplicates are rejected."""
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise ScoreParseError(f"score file {path} does not exist")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise ScoreParseError(f"cannot parse score file {path}: {e}")
    if list(frame.columns) != SCORE_COLUMNS:
        raise ScoreParseError(f"score file header must be {','.join(SCORE_COLUMNS)}", line=1)

    scores: dict[tuple[str, int], StripeScore] = {}
    for idx, row in enumerate(frame.itertuples(index=False), start=2):
        image_id = row.image_id.strip()
        if not image_id:
            raise ScoreParseError("empty image_id", line=idx)
        try:
            offset = int(row.stripe_offset)
            p = float(row.p_attack)
        except ValueError:
            raise ScoreParseError(f"bad stripe_offset or p_attack in {tuple(row)}", line=idx)
        if offset < 0:
            raise ScoreParseError(f"negative stripe offset {offset}", line=idx)
        if not 0.0 <= p <= 1.0:
            raise ScoreRangeError(f"p_attack {p} outside [0, 1]", line=idx)
        key = (image_id, offset)
        if key in scores:
            raise DuplicateScoreError(f"duplicate score for {image_id} at offset {offset}", line=idx)
        scores[key] = StripeScore(p_attack=p, stripe_offset=offset)
    return scores


def group_scores(scores: dict[tuple[str, int], StripeScore]) -> dict[str, list[StripeScore]]:
    grouped: dict[str, list[StripeScore]] = {}
    for (image_id, _), score in sorted(scores.items()):
        grouped.setdefault(image_id, []).append(score)
    return grouped


def save_model(model: ClassifierModel, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(model.model_dump_json(indent=2))
        handle.write("\n")


def load_model(path: str) -> ClassifierModel:
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except OSError as e:
        raise ModelFileError(f"cannot read model file {path}: {e}")
    except json.JSONDecodeError as e:
        raise ModelFileError(f"model file {path} is not valid JSON: {e}", line=e.lineno)
    if not isinstance(data, dict):
        raise ModelFileError(f"model file {path} must hold a JSON object")
    if data.get("format_version") != FORMAT_VERSION:
        raise ModelFileError(f"unsupported model format_version {data.get('format_version')!r}")
    try:
        return ClassifierModel.model_validate(data)
    except ValidationError as e:
        raise ModelFileError(f"invalid model file {path}: {e.errors()[0]['msg']}")
