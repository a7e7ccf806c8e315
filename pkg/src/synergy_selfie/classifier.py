"""Linear soft-margin SVM (SMO dual solver or stochastic subgradient), plus evaluation metrics."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SvmModel:
    w: np.ndarray
    b: float
    C: float = 1.0


def svm_objective(w, b, X, y, C) -> float:
    margins = y * (X @ w + b)
    return 0.5 * float(w @ w) + C * float(np.maximum(0.0, 1.0 - margins).sum())


def _check_labels(y):
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    return y


def svm_train(X, y, C: float = 1.0, epochs: int = 200, seed: int = 0, solver: str = "smo",
              tol: float = 1e-3, trace=None) -> SvmModel:
    """Fit ``min 0.5 |w|^2 + C sum(max(0, 1 - y (w.x + b)))``.

    ``solver="smo"`` (default) solves the dual exactly up to a KKT-gap of
    ``tol`` with second-order working-set selection; ``solver="pegasos"`` runs
    seeded stochastic subgradient descent for ``epochs`` passes. ``trace``,
    if given, is a list that collects the best-so-far primal objective as training proceeds.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    n = X.shape[0]
    if n < 2 or len(np.unique(y)) < 2:
        raise ValueError("SVM training needs at least two samples from both classes")
    if C <= 0:
        raise ValueError("C must be positive")
    if solver == "smo":
        w, b = _smo(X, y, C, tol, trace)
    elif solver == "pegasos":
        w, b = _pegasos(X, y, C, epochs, seed, trace)
    else:
        raise ValueError(f"unknown solver {solver!r}")
    return SvmModel(w=w, b=float(b), C=float(C))


def _smo(X, y, C, tol, trace, max_iter=None):
    n = len(y)
    K = X @ X.T
    diag = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of the dual objective
    max_iter = max_iter or max(10_000_000, 100 * n)
    for it in range(max_iter):
        yG = -y * G
        up = ((alpha < C) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < C) & (y < 0)) | ((alpha > 0) & (y > 0))
        i = int(np.argmax(np.where(up, yG, -np.inf)))
        m_up = yG[i]
        m_low = np.min(np.where(low, yG, np.inf))
        if m_up - m_low < tol:
            break
        bgap = m_up - yG
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, 1e-12)
        score = np.where(low & (bgap > 0), -(bgap * bgap) / a, np.inf)
        j = int(np.argmin(score))
        delta = bgap[j] / a[j]
        delta = min(delta, C - alpha[i] if y[i] > 0 else alpha[i])
        delta = min(delta, alpha[j] if y[j] > 0 else C - alpha[j])
        alpha[i] = min(max(alpha[i] + y[i] * delta, 0.0), C)
        alpha[j] = min(max(alpha[j] - y[j] * delta, 0.0), C)
        G += y * delta * (K[:, i] - K[:, j])
        if trace is not None and it % 100 == 0:
            w = (alpha * y) @ X
            trace.append(_best(trace, svm_objective(w, _smo_bias(alpha, y, G, C), X, y, C)))
    w = (alpha * y) @ X
    b = _smo_bias(alpha, y, G, C)
    if trace is not None:
        trace.append(_best(trace, svm_objective(w, b, X, y, C)))
    return w, b


def _best(trace, value):
    return min(trace[-1], value) if trace else value


def _smo_bias(alpha, y, G, C):
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yG[free].mean()
    else:
        at_upper = alpha >= C
        ub_mask = (at_upper & (y < 0)) | (~at_upper & (y > 0))
        lb_mask = ~ub_mask
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2
    return -rho


def _pegasos(X, y, C, epochs, seed, trace):
    n, m = X.shape
    lam = 1.0 / (n * C)
    radius = 1.0 / np.sqrt(lam)
    rng = np.random.default_rng(seed)
    w = np.zeros(m)
    b = 0.0
    w_avg, b_avg = np.zeros(m), 0.0
    best = (svm_objective(w, b, X, y, C), w.copy(), b)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            margin = y[i] * (X[i] @ w + b)
            w *= 1.0 - eta * lam
            if margin < 1.0:
                w += (eta * y[i]) * X[i]
                b += eta * y[i]
            norm = np.linalg.norm(w)
            if norm > radius:
                w *= radius / norm
            w_avg += (w - w_avg) / t
            b_avg += (b - b_avg) / t
        for cw, cb in ((w, b), (w_avg, b_avg)):
            obj = svm_objective(cw, cb, X, y, C)
            if obj < best[0]:
                best = (obj, cw.copy(), cb)
        if trace is not None:
            trace.append(best[0])
    return best[1], best[2]


def decision_value(model: SvmModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.w.shape[0]:
        raise ValueError(f"expected {model.w.shape[0]} features, got {x.shape[-1]}")
    return x @ model.w + model.b


def predict(model: SvmModel, x):
    """Sign of the decision value; points on the hyperplane are labelled +1."""
    d = decision_value(model, x)
    return np.where(d >= 0, 1, -1)


def average_precision(decisions, labels) -> float:
    """Mean precision at the rank of each positive (descending, stable ties)."""
    d = np.asarray(decisions, dtype=np.float64)
    lab = np.asarray(labels) > 0
    if not lab.any():
        return 0.0
    order = np.argsort(-d, kind="stable")
    hits = lab[order]
    ranks = np.flatnonzero(hits) + 1
    precision = np.arange(1, len(ranks) + 1) / ranks
    return float(precision.mean())


def tune_threshold(decisions, labels) -> float:
    """Threshold maximising accuracy of ``decision >= t`` (smallest on ties)."""
    d = np.asarray(decisions, dtype=np.float64)
    lab = np.asarray(labels) > 0
    cand = np.unique(d)
    cuts = np.concatenate([[cand[0] - 1.0], (cand[:-1] + cand[1:]) / 2, [cand[-1] + 1.0]])
    accs = [np.mean((d >= c) == lab) for c in cuts]
    return float(cuts[int(np.argmax(accs))])


@dataclass
class EvalReport:
    accuracy: float
    average_precision: float
    tp: int
    fp: int
    tn: int
    fn: int
    decisions: list = field(default_factory=list)  # (id, label, decision, predicted)
    val_threshold: float | None = None
    accuracy_at_val_threshold: float | None = None
    title: str = "evaluation"

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def summary(self) -> str:
        lines = [
            f"# {self.title}",
            f"samples: {self.total}",
            f"accuracy: {self.accuracy:.6f}",
            f"average_precision: {self.average_precision:.6f}",
            f"confusion: tp={self.tp} fp={self.fp} tn={self.tn} fn={self.fn}",
        ]
        if self.val_threshold is not None:
            lines.append(
                f"accuracy_at_val_threshold: {self.accuracy_at_val_threshold:.6f} "
                f"(threshold {self.val_threshold:.6f})"
            )
        return "\n".join(lines) + "\n"

    def to_csv(self) -> str:
        rows = ["id,label,decision,predicted"]
        rows += [f"{i},{lab},{d!r},{p}" for i, lab, d, p in self.decisions]
        return "\n".join(rows) + "\n"


def evaluate(model: SvmModel, X, y, ids=None, val=None, title="evaluation") -> EvalReport:
    """Accuracy (threshold 0) and average precision on ``(X, y)``.

    ``val`` is an optional ``(X_val, y_val)`` pair used to tune a threshold
    that is reported as a supplementary accuracy.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    if len(y) == 0:
        raise ValueError("cannot evaluate on an empty set")
    d = decision_value(model, X)
    pred = np.where(d >= 0, 1, -1)
    pos, neg = y > 0, y < 0
    report = EvalReport(
        accuracy=float(np.mean(pred == y)),
        average_precision=average_precision(d, y),
        tp=int(np.sum(pos & (pred > 0))),
        fp=int(np.sum(neg & (pred > 0))),
        tn=int(np.sum(neg & (pred < 0))),
        fn=int(np.sum(pos & (pred < 0))),
        decisions=[(ids[i] if ids is not None else str(i), int(y[i]), float(d[i]), int(pred[i]))
                   for i in range(len(y))],
        title=title,
    )
    if val is not None and len(val[1]):
        t = tune_threshold(decision_value(model, val[0]), val[1])
        report.val_threshold = t
        report.accuracy_at_val_threshold = float(np.mean(np.where(d >= t, 1, -1) == y))
    return report
