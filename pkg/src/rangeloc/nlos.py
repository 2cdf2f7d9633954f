"""Classical LOS/NLOS learning on per-observation features.

Features per (epoch, satellite): elevation, azimuth, C/N0, the
single-epoch least-squares pseudorange residual, and the root-sum-square
of that residual over a trailing 5-epoch window (current epoch excluded,
so the window cannot leak the target). Models are deliberately simple
trainable linear ones: a logistic classifier under full-batch gradient
descent and a closed-form ridge regressor; they stand in for heavier
classical models whose failure modes under class imbalance and whose
permutation-importance structure they share.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import geo
from .estimator import SingularGeometryError, single_epoch_fix
from .measurement import NLOS
from .simkit import EpochDataset

FEATURE_NAMES = ["elevation_deg", "azimuth_deg", "cn0_dbhz", "sigma_ls_m", "rss_m"]
RSS_WINDOW = 5  # trailing epochs, current excluded


class DegenerateTrainingError(ValueError):
    """Training set contains a single class."""


@dataclass
class LabeledSample:
    features: np.ndarray  # aligned with FEATURE_NAMES
    label: str  # LOS / NLOS
    pseudorange_error_m: float | None = None


def extract_features(ds: EpochDataset) -> list[dict]:
    """Per-(epoch, satellite) feature rows from a labeled dataset.

    Epochs with fewer than 4 satellites get sigma_ls/rss marked missing
    (NaN); such rows are excluded from training by default.
    """
    rows = []
    history: dict[str, list[tuple[int, float]]] = {}
    for ep in ds.epochs:
        sigma_ls = {}
        if len(ep.records) >= 4:
            try:
                fix, residuals = single_epoch_fix(ep.records)
                for (obs, _), res in zip(ep.records, residuals):
                    sigma_ls[obs.sat_id] = float(res)
            except SingularGeometryError:
                pass
        for obs, sat in ep.records:
            el, az = geo.elevation_azimuth(sat.position, ep.truth.position
                                           if ep.truth is not None else ds.reference_position())
            s_ls = sigma_ls.get(obs.sat_id, np.nan)
            hist = history.setdefault(obs.sat_id, [])
            window = [v for e, v in hist if ep.index - RSS_WINDOW <= e < ep.index]
            rss = float(np.sqrt(np.sum(np.square(window)))) if window else np.nan
            rows.append({
                "epoch": ep.index, "sat_id": obs.sat_id,
                "elevation_deg": el, "azimuth_deg": az, "cn0_dbhz": obs.cn0,
                "sigma_ls_m": s_ls, "rss_m": rss,
                "label": obs.label, "pseudorange_error_m": obs.true_error,
            })
            if np.isfinite(s_ls):
                hist.append((ep.index, s_ls))
    return rows


def rows_to_samples(rows: list[dict], drop_missing: bool = True) -> list[LabeledSample]:
    samples = []
    for row in rows:
        feats = np.array([row[name] for name in FEATURE_NAMES], dtype=float)
        if drop_missing and not np.all(np.isfinite(feats)):
            continue
        samples.append(LabeledSample(feats, row["label"], row.get("pseudorange_error_m")))
    return samples


def rebalance(samples: list[LabeledSample], strategy: str = "none", seed: int = 0):
    """Optionally undersample the majority class to the minority count."""
    if strategy == "none":
        return list(samples)
    if strategy != "undersample-majority":
        raise ValueError(f"unknown rebalance strategy {strategy!r}")
    by_label: dict[str, list[LabeledSample]] = {}
    for s in samples:
        by_label.setdefault(s.label, []).append(s)
    if len(by_label) < 2:
        return list(samples)
    minority = min(len(v) for v in by_label.values())
    rng = np.random.default_rng(seed)
    out = []
    for label in sorted(by_label):
        group = by_label[label]
        if len(group) > minority:
            idx = rng.choice(len(group), size=minority, replace=False)
            group = [group[i] for i in sorted(idx)]
        out.extend(group)
    return out


def _design(samples: list[LabeledSample]):
    X = np.vstack([s.features for s in samples])
    y = np.array([1.0 if s.label == NLOS else 0.0 for s in samples])
    return X, y


@dataclass
class ClassifierModel:
    weights: np.ndarray  # per standardized feature
    bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray
    threshold: float = 0.5

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.feature_mean) / self.feature_scale
        return expit(Z @ self.weights + self.bias)

    def predict(self, X: np.ndarray) -> np.ndarray:
        return (self.predict_proba(X) >= self.threshold).astype(int)

    def to_dict(self) -> dict:
        return {"weights": self.weights.tolist(), "bias": self.bias,
                "feature_mean": self.feature_mean.tolist(),
                "feature_scale": self.feature_scale.tolist(),
                "threshold": self.threshold, "features": FEATURE_NAMES}

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        return cls(np.asarray(d["weights"]), d["bias"], np.asarray(d["feature_mean"]),
                   np.asarray(d["feature_scale"]), d.get("threshold", 0.5))


def train_classifier(samples: list[LabeledSample], l2: float = 1e-3,
                     learning_rate: float = 0.5, max_iter: int = 2000,
                     grad_tol: float = 1e-6, threshold: float = 0.5) -> ClassifierModel:
    """Regularized logistic regression by deterministic full-batch descent."""
    X, y = _design(samples)
    if len(np.unique(y)) < 2:
        raise DegenerateTrainingError("training set contains a single class")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    n = len(y)
    w = np.zeros(Z.shape[1])
    b = 0.0
    for _ in range(max_iter):
        p = expit(Z @ w + b)
        gw = Z.T @ (p - y) / n + l2 * w
        gb = float(np.mean(p - y))
        if max(np.max(np.abs(gw)), abs(gb)) < grad_tol:
            break
        w -= learning_rate * gw
        b -= learning_rate * gb
    return ClassifierModel(w, b, mean, scale, threshold)


@dataclass
class MetricsReport:
    confusion: np.ndarray  # rows: true (LOS, NLOS); cols: predicted
    per_class: dict
    accuracy: float

    def to_dict(self) -> dict:
        return {"confusion": self.confusion.tolist(),
                "per_class": self.per_class, "accuracy": self.accuracy}


def _prf(tp, fp, fn):
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def evaluate(model: ClassifierModel, samples: list[LabeledSample]) -> MetricsReport:
    if not samples:
        raise ValueError("empty evaluation set")
    X, y = _design(samples)
    pred = model.predict(X)
    cm = np.zeros((2, 2), dtype=int)  # [true][pred], index 1 = NLOS
    for t, p in zip(y.astype(int), pred):
        cm[t, p] += 1
    per_class = {}
    for idx, name in ((0, "LOS"), (1, "NLOS")):
        tp = cm[idx, idx]
        fp = cm[1 - idx, idx]
        fn = cm[idx, 1 - idx]
        precision, recall, f1 = _prf(tp, fp, fn)
        per_class[name] = {"precision": precision, "recall": recall, "f1": f1}
    return MetricsReport(cm, per_class, float(np.trace(cm)) / cm.sum())


@dataclass
class RegressorModel:
    weights: np.ndarray
    bias: float
    feature_mean: np.ndarray
    feature_scale: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        Z = (X - self.feature_mean) / self.feature_scale
        return Z @ self.weights + self.bias


def train_regressor(samples: list[LabeledSample], l2: float = 1e-6) -> RegressorModel:
    """Closed-form ridge regression of pseudorange error on standardized features."""
    use = [s for s in samples if s.pseudorange_error_m is not None]
    if not use:
        raise ValueError("no regression targets present")
    X = np.vstack([s.features for s in use])
    y = np.array([s.pseudorange_error_m for s in use])
    if l2 <= 0:
        raise ValueError("regularization must be positive")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    yc = y - y.mean()
    w = np.linalg.solve(Z.T @ Z + l2 * len(y) * np.eye(Z.shape[1]), Z.T @ yc)
    return RegressorModel(w, float(y.mean()), mean, scale)


def regression_rmse(model: RegressorModel, samples: list[LabeledSample]) -> float:
    use = [s for s in samples if s.pseudorange_error_m is not None]
    X = np.vstack([s.features for s in use])
    y = np.array([s.pseudorange_error_m for s in use])
    return float(np.sqrt(np.mean((model.predict(X) - y) ** 2)))


def permutation_importance(model: ClassifierModel, samples: list[LabeledSample],
                           repeats: int = 5, seed: int = 0) -> dict[str, float]:
    """Mean accuracy drop when each feature column is shuffled."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X, y = _design(samples)
    base = float(np.mean(model.predict(X) == y))
    rng = np.random.default_rng(seed)
    drops = {}
    for j, name in enumerate(FEATURE_NAMES):
        acc = []
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = Xp[rng.permutation(len(Xp)), j]
            acc.append(float(np.mean(model.predict(Xp) == y)))
        drops[name] = base - float(np.mean(acc))
    return drops
