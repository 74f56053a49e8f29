"""Multi-region score fusion and affine keypoint alignment.

Raw per-region cosine scores are calibrated with a 1-d logistic regression,
merged as a weighted mean, and each probe takes the label of its best
reference. Missing region observations are NaN and drop out of the mean,
with the remaining weights renormalized.
"""
from dataclasses import dataclass, field
import csv
import itertools
import json

import numpy as np

from .data import fmt
from .errors import AllRegionsMissing, DegenerateGeometry, DegenerateLabels, DimMismatch, \
    ValidationError

BETA_CAP = 50.0
GAMMA_STEP = 0.05


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class Calibration:
    beta0: float
    beta1: float
    separable: bool = False
    converged: bool = True
    iterations: int = 0

    def to_dict(self):
        return {"beta0": self.beta0, "beta1": self.beta1, "separable": self.separable,
                "converged": self.converged, "iterations": self.iterations}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["beta0"]), float(d["beta1"]), bool(d.get("separable", False)),
                   bool(d.get("converged", True)), int(d.get("iterations", 0)))


def log_likelihood(beta, scores, labels):
    z = beta[0] + beta[1] * scores
    # log sigmoid(z) = -log1p(exp(-z)), computed stably via logaddexp
    return float(np.sum(labels * -np.logaddexp(0.0, -z) + (1 - labels) * -np.logaddexp(0.0, z)))


def _is_separable(scores, labels):
    pos, neg = scores[labels == 1], scores[labels == 0]
    return pos.min() >= neg.max() or neg.min() >= pos.max()


def fit_logistic(scores, same_identity, max_iters=100, tol=1e-8):
    """Maximum-likelihood ``(beta0, beta1)`` by damped Newton iterations.

    Converged when the infinity norm of the mean log-likelihood gradient is
    below ``tol``. Steps are halved until the likelihood does not decrease.
    Perfectly (or quasi-) separable data has no finite optimum; iterations
    then stop once a coefficient reaches ``BETA_CAP`` and the result is
    flagged ``separable`` with the decision point preserved.
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(same_identity, dtype=np.float64).reshape(-1)
    if s.shape != y.shape:
        raise DimMismatch("one label per score required")
    if y.size == 0 or y.min() == y.max():
        raise DegenerateLabels("logistic fit needs both same and different pairs")
    separable = bool(_is_separable(s, y))
    n = s.size
    X = np.column_stack([np.ones(n), s])
    beta = np.zeros(2)
    ll = log_likelihood(beta, s, y)
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        p = sigmoid(X @ beta)
        grad = X.T @ (y - p) / n
        if np.max(np.abs(grad)) < tol:
            converged = True
            break
        w = p * (1 - p)
        hess = (X * w[:, None]).T @ X / n
        try:
            step = np.linalg.solve(hess + 1e-12 * np.eye(2), grad)
        except np.linalg.LinAlgError:
            step = grad
        t = 1.0
        while t > 1e-10:
            cand = beta + t * step
            cand_ll = log_likelihood(cand, s, y)
            if cand_ll >= ll:
                break
            t *= 0.5
        else:
            break
        beta, ll = cand, cand_ll
        if np.max(np.abs(beta)) >= BETA_CAP:
            beta = beta * (BETA_CAP / np.max(np.abs(beta)))
            break
    return Calibration(float(beta[0]), float(beta[1]), separable, converged, it)


def calibrate(s, cal):
    """Logistic map of raw scores into (0, 1); NaN stays NaN."""
    s = np.asarray(s, dtype=np.float64)
    out = np.full(s.shape, np.nan)
    ok = ~np.isnan(s)
    out[ok] = sigmoid(cal.beta0 + cal.beta1 * s[ok])
    return out if out.ndim else float(out)


@dataclass
class RegionScores:
    regions: list
    scores: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.regions = list(self.regions)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 3 or self.scores.shape[0] != len(self.regions):
            raise DimMismatch("scores must be (regions, probes, references)")
        if self.weights is None:
            self.weights = np.full(len(self.regions), 1.0 / len(self.regions))
        self.weights = check_weights(self.weights, len(self.regions))


def check_weights(weights, n_regions):
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.size != n_regions:
        raise DimMismatch(f"{w.size} weights for {n_regions} regions")
    if np.any(w < 0) or not np.isfinite(w).all():
        raise ValidationError("region weights must be finite and non-negative")
    total = w.sum()
    if total <= 0:
        raise ValidationError("region weights must not all be zero")
    if abs(total - 1.0) > 1e-9:
        raise ValidationError(f"region weights must sum to 1, got {total}")
    return w


def calibrated_stack(rs, cals):
    if len(cals) != len(rs.regions):
        raise DimMismatch(f"{len(cals)} calibrations for {len(rs.regions)} regions")
    return np.stack([calibrate(rs.scores[r], cals[r]) for r in range(len(rs.regions))])


def merge_calibrated(cal_scores, weights):
    present = ~np.isnan(cal_scores)
    w = weights[:, None, None] * present
    den = w.sum(axis=0)
    if np.any(den <= 0):
        i, j = np.argwhere(den <= 0)[0]
        raise AllRegionsMissing(f"pair ({i}, {j}) has no weighted region observation")
    num = np.sum(np.where(present, cal_scores, 0.0) * weights[:, None, None], axis=0)
    complete = present.all(axis=0)
    return np.where(complete, num, num / den)


def merge_scores(rs, cals):
    """``S_ij = sum_r gamma_r * calibrate(s_r_ij)``, renormalized over present regions."""
    return merge_calibrated(calibrated_stack(rs, cals), rs.weights)


def assign_identity(merged, reference_labels):
    """Label of the highest-scoring reference per probe; ties go to the lowest index."""
    S = np.atleast_2d(np.asarray(merged, dtype=np.float64))
    labels = np.asarray(reference_labels)
    if S.shape[1] != labels.size:
        raise DimMismatch(f"{S.shape[1]} reference columns but {labels.size} labels")
    S = np.where(np.isfinite(S), S, -np.inf)
    return labels[np.argmax(S, axis=1)]


def simplex_grid(n_regions, step=GAMMA_STEP):
    units = int(round(1.0 / step))
    if not np.isclose(units * step, 1.0):
        raise ValidationError(f"step {step} must divide 1")
    for cuts in itertools.combinations(range(units + n_regions - 1), n_regions - 1):
        parts = np.diff((-1,) + cuts + (units + n_regions - 1,)) - 1
        yield parts / units


def fit_weights(cal_scores, probe_labels, reference_labels, step=GAMMA_STEP):
    """Grid search over the weight simplex maximizing top-1 accuracy.

    Returns ``(weights, accuracy)``; the first grid point in enumeration
    order wins ties.
    """
    probe_labels = np.asarray(probe_labels)
    best_w, best_acc = None, -1.0
    for w in simplex_grid(cal_scores.shape[0], step):
        try:
            merged = merge_calibrated(cal_scores, w)
        except AllRegionsMissing:
            continue
        acc = float(np.mean(assign_identity(merged, reference_labels) == probe_labels))
        if acc > best_acc:
            best_w, best_acc = w, acc
    if best_w is None:
        raise AllRegionsMissing("no weighting covers every pair")
    return best_w, best_acc


@dataclass
class ScoreTable:
    """Per-region raw scores between probes (rows) and references (columns)."""
    regions: list
    scores: np.ndarray
    reference_labels: np.ndarray
    probe_labels: np.ndarray | None = None

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.reference_labels = np.asarray(self.reference_labels)
        if self.probe_labels is not None:
            self.probe_labels = np.asarray(self.probe_labels)
        if self.scores.shape[0] != len(self.regions) or \
                self.scores.shape[2] != self.reference_labels.size:
            raise DimMismatch("score table shape does not match regions/references")
        if self.probe_labels is not None and self.probe_labels.size != self.scores.shape[1]:
            raise DimMismatch("one probe label per score row required")

    def pair_labels(self):
        if self.probe_labels is None:
            raise ValidationError("this score table carries no probe labels")
        return self.probe_labels[:, None] == self.reference_labels[None, :]

    def to_json(self):
        doc = {"regions": list(self.regions),
               "reference_labels": self.reference_labels.tolist(),
               "scores": {r: [[None if np.isnan(v) else float(v) for v in row]
                              for row in self.scores[i]]
                          for i, r in enumerate(self.regions)}}
        if self.probe_labels is not None:
            doc["probe_labels"] = self.probe_labels.tolist()
        return doc

    @classmethod
    def from_json(cls, doc):
        regions = list(doc["regions"])
        missing = [r for r in regions if r not in doc["scores"]]
        if missing:
            raise ValidationError(f"score table lacks regions {missing}")
        scores = np.array([[[np.nan if v is None else v for v in row]
                            for row in doc["scores"][r]] for r in regions], dtype=np.float64)
        return cls(regions, scores, doc["reference_labels"], doc.get("probe_labels"))


def fit_fusion(validation, step=GAMMA_STEP, max_iters=100, tol=1e-8):
    """Fit per-region calibrations and region weights on a labelled table."""
    same = validation.pair_labels()
    cals = []
    for r in range(len(validation.regions)):
        s = validation.scores[r]
        ok = ~np.isnan(s)
        cals.append(fit_logistic(s[ok], same[ok], max_iters, tol))
    stack = np.stack([calibrate(validation.scores[r], cals[r])
                      for r in range(len(validation.regions))])
    weights, acc = fit_weights(stack, validation.probe_labels, validation.reference_labels, step)
    return cals, weights, acc


def apply_fusion(table, cals, weights):
    rs = RegionScores(table.regions, table.scores, weights)
    merged = merge_scores(rs, cals)
    return merged, assign_identity(merged, table.reference_labels)


def fusion_document(regions, cals, weights, extra=None):
    doc = {"regions": list(regions),
           "calibrations": {r: c.to_dict() for r, c in zip(regions, cals)},
           "weights": {r: float(w) for r, w in zip(regions, weights)}}
    doc.update(extra or {})
    return doc


def read_fusion_document(doc):
    regions = list(doc["regions"])
    cals = [Calibration.from_dict(doc["calibrations"][r]) for r in regions]
    weights = np.array([doc["weights"][r] for r in regions], dtype=np.float64)
    return regions, cals, weights


def load_json(path):
    with open(path) as f:
        return json.load(f)


# -- affine alignment -------------------------------------------------------

@dataclass
class AffineMap:
    A: np.ndarray
    b: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.A.ndim != 2 or self.A.shape[0] != self.A.shape[1] or \
                self.b.size != self.A.shape[0]:
            raise DimMismatch("affine map needs square A and matching b")
        if not (np.isfinite(self.A).all() and np.isfinite(self.b).all()):
            raise ValidationError("affine map must be finite")

    @classmethod
    def identity(cls, dim=2):
        return cls(np.eye(dim), np.zeros(dim))

    def inverse(self):
        inv = np.linalg.inv(self.A)
        return AffineMap(inv, -inv @ self.b)

    def to_dict(self):
        return {"A": self.A.tolist(), "b": self.b.tolist()}


def apply_affine(amap, points):
    p = np.asarray(points, dtype=np.float64)
    return p @ amap.A.T + amap.b


def compose(outer, inner):
    """The map ``p -> outer(inner(p))``."""
    return AffineMap(outer.A @ inner.A, outer.A @ inner.b + outer.b)


def fit_affine(p, q, rel_tol=1e-10):
    """Least-squares ``A, b`` minimizing ``sum ||A p_k + b - q_k||^2``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape or p.ndim != 2:
        raise DimMismatch("source and target point sets must share shape (z, dim)")
    z, dim = p.shape
    if z < dim + 1:
        raise DegenerateGeometry(f"need at least {dim + 1} points, got {z}")
    sv = np.linalg.svd(p - p.mean(axis=0), compute_uv=False)
    if sv[0] == 0 or sv[-1] <= rel_tol * sv[0]:
        raise DegenerateGeometry("source points are collinear or coincident")
    design = np.column_stack([p, np.ones(z)])
    sol, *_ = np.linalg.lstsq(design, q, rcond=None)
    return AffineMap(sol[:dim].T, sol[dim])


def affine_residual(amap, p, q):
    return float(np.max(np.abs(apply_affine(amap, p) - np.asarray(q, dtype=np.float64)),
                        initial=0.0))


def read_keypoints(path):
    """Keypoint CSV ``point_id,x,y`` -> ``(ids, points)``."""
    with open(path, newline="") as f:
        rows = [r for r in csv.reader(line for line in f if not line.startswith("#")) if r]
    if not rows or [c.strip() for c in rows[0]] != ["point_id", "x", "y"]:
        raise ValidationError(f"{path}: expected header 'point_id,x,y'")
    ids = [r[0] for r in rows[1:]]
    pts = np.array([[float(r[1]), float(r[2])] for r in rows[1:]], dtype=np.float64)
    return ids, pts.reshape(-1, 2)


def write_keypoints(path, ids, points):
    with open(path, "w") as f:
        f.write("point_id,x,y\n")
        for i, (x, y) in zip(ids, np.asarray(points, dtype=np.float64)):
            f.write(f"{i},{fmt(x)},{fmt(y)}\n")
