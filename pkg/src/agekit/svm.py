"""RBF support-vector classification (one-vs-one) and epsilon-SVR trained with SMO.

Both problems are cast as the dual

    min_a  1/2 a^T Q a + p^T a    s.t.  y^T a = 0,  0 <= a_i <= C

and solved by sequential minimal optimisation with second-order working-set
selection (Fan, Chen & Lin, 2005).
"""

from __future__ import annotations

import io
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from itertools import combinations, product
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.spatial.distance import cdist

from .core import DEFAULT_VDD, QuantizerSpec, dequantize, quantize

log = logging.getLogger(__name__)

TAU = 1e-12


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * cdist(np.atleast_2d(A), np.atleast_2d(B), "sqeuclidean"))


@dataclass
class DualSolution:
    alpha: np.ndarray
    rho: float
    iterations: int
    converged: bool
    gap: float


def smo_solve(Q: np.ndarray, p: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3,
              max_iter: int | None = None) -> DualSolution:
    n = len(p)
    y = np.asarray(y, dtype=float)
    if max_iter is None:
        max_iter = min(10 * n * n, 10_000_000)
    alpha = np.zeros(n)
    G = np.array(p, dtype=float)
    QD = np.diag(Q).copy()
    it = 0
    gap = np.inf
    converged = False
    while it < max_iter:
        yG = -y * G
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            converged = True
            gap = 0.0
            break
        i = int(np.argmax(np.where(up, yG, -np.inf)))
        gmax = yG[i]
        gmin = np.min(np.where(low, yG, np.inf))
        gap = gmax - gmin
        if gap < tol:
            converged = True
            break
        # second-order choice of j among violating low candidates
        b = gmax - yG
        cand = low & (b > 0)
        a = QD[i] + QD - 2.0 * y[i] * y * Q[i]
        a = np.where(a > 0, a, TAU)
        score = np.where(cand, -(b * b) / a, np.inf)
        j = int(np.argmin(score))
        _update_pair(Q, G, alpha, y, QD, C, i, j)
        it += 1
    if not converged:
        log.warning("SMO hit the iteration cap (%d) with gap %.3g", max_iter, gap)
    rho = _rho(G, alpha, y, C)
    return DualSolution(alpha, rho, it, converged, float(gap))


def _update_pair(Q, G, alpha, y, QD, C, i, j):
    Qi, Qj = Q[i], Q[j]
    ai_old, aj_old = alpha[i], alpha[j]
    if y[i] != y[j]:
        quad = QD[i] + QD[j] + 2.0 * Qi[j]
        quad = quad if quad > 0 else TAU
        delta = (-G[i] - G[j]) / quad
        diff = alpha[i] - alpha[j]
        alpha[i] += delta
        alpha[j] += delta
        if diff > 0:
            if alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = diff
        elif alpha[i] < 0:
            alpha[i] = 0.0
            alpha[j] = -diff
        if diff > 0:
            if alpha[i] > C:
                alpha[i] = C
                alpha[j] = C - diff
        elif alpha[j] > C:
            alpha[j] = C
            alpha[i] = C + diff
    else:
        quad = QD[i] + QD[j] - 2.0 * Qi[j]
        quad = quad if quad > 0 else TAU
        delta = (G[i] - G[j]) / quad
        total = alpha[i] + alpha[j]
        alpha[i] -= delta
        alpha[j] += delta
        if total > C:
            if alpha[i] > C:
                alpha[i] = C
                alpha[j] = total - C
        elif alpha[j] < 0:
            alpha[j] = 0.0
            alpha[i] = total
        if total > C:
            if alpha[j] > C:
                alpha[j] = C
                alpha[i] = total - C
        elif alpha[i] < 0:
            alpha[i] = 0.0
            alpha[j] = total
    G += Qi * (alpha[i] - ai_old) + Qj * (alpha[j] - aj_old)


def _rho(G, alpha, y, C):
    yG = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(np.mean(yG[free]))
    ub, lb = np.inf, -np.inf
    for t in range(len(alpha)):
        at_upper = alpha[t] >= C
        at_lower = alpha[t] <= 0
        if (at_upper and y[t] < 0) or (at_lower and y[t] > 0):
            ub = min(ub, yG[t])
        elif (at_upper and y[t] > 0) or (at_lower and y[t] < 0):
            lb = max(lb, yG[t])
    return float((ub + lb) / 2)


def kkt_report(Q, p, y, C, sol: DualSolution) -> dict:
    """Dual feasibility and optimality residuals of a solution."""
    a = sol.alpha
    G = Q @ a + p
    yG = -y * G
    up = ((y > 0) & (a < C)) | ((y < 0) & (a > 0))
    low = ((y > 0) & (a > 0)) | ((y < 0) & (a < C))
    gap = (yG[up].max() - yG[low].min()) if up.any() and low.any() else 0.0
    return {
        "equality": float(abs(np.dot(y, a))),
        "box": float(max(0.0, -a.min(), a.max() - C)),
        "gap": float(gap),
    }


# ----------------------------------------------------------- classification

@dataclass(frozen=True)
class SvmParams:
    C: float = 100.0
    gamma: float = 0.001
    tol: float = 1e-3


@dataclass
class BinarySvm:
    pos: int
    neg: int
    support: np.ndarray   # indices into the model's support-vector table
    coef: np.ndarray      # y_i * alpha_i
    rho: float


@dataclass
class SvmModel:
    """One-vs-one RBF classifier; class ties in the vote go to the lowest class."""

    params: SvmParams
    classes: np.ndarray
    sv: np.ndarray
    machines: list[BinarySvm]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        rows, cols, vals = [], [], []
        for m, bm in enumerate(self.machines):
            rows.extend([m] * len(bm.support))
            cols.extend(bm.support.tolist())
            vals.extend(bm.coef.tolist())
        self._coef = sparse.csr_matrix((vals, (rows, cols)), shape=(len(self.machines), len(self.sv)))
        self._rho = np.array([bm.rho for bm in self.machines])

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        """(n, n_pairs) pairwise decision values, positive favouring ``pos``."""
        if len(self.sv) == 0:
            return np.zeros((len(np.atleast_2d(X)), len(self.machines)))
        K = rbf_kernel(X, self.sv, self.params.gamma)
        return np.asarray(self._coef.dot(K.T)).T - self._rho

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if len(self.classes) == 1:
            return np.full(len(X), self.classes[0])
        dec = self.decision_function(X)
        votes = np.zeros((len(X), len(self.classes)), dtype=np.int64)
        index = {c: k for k, c in enumerate(self.classes.tolist())}
        for m, bm in enumerate(self.machines):
            win = dec[:, m] > 0
            votes[win, index[bm.pos]] += 1
            votes[~win, index[bm.neg]] += 1
        return self.classes[np.argmax(votes, axis=1)]


def _check_finite(X, y):
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite features or targets")


def train_svm(X: np.ndarray, y: np.ndarray, params: SvmParams = SvmParams(), meta: dict | None = None) -> SvmModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y)
    _check_finite(X, y)
    classes = np.unique(y)
    used: dict[int, int] = {}
    sv_rows: list[int] = []
    machines = []
    for a, b in combinations(classes.tolist(), 2):
        idx = np.nonzero((y == a) | (y == b))[0]
        yy = np.where(y[idx] == a, 1.0, -1.0)
        K = rbf_kernel(X[idx], X[idx], params.gamma)
        Q = (yy[:, None] * yy[None, :]) * K
        sol = smo_solve(Q, -np.ones(len(idx)), yy, params.C, params.tol)
        nz = np.nonzero(sol.alpha > 0)[0]
        support = []
        for t in nz:
            g = int(idx[t])
            if g not in used:
                used[g] = len(sv_rows)
                sv_rows.append(g)
            support.append(used[g])
        machines.append(BinarySvm(a, b, np.array(support, dtype=np.int64), yy[nz] * sol.alpha[nz], sol.rho))
    sv = X[sv_rows] if sv_rows else np.empty((0, X.shape[1]))
    return SvmModel(params, classes, sv, machines, meta or {})


# --------------------------------------------------------------- regression

@dataclass(frozen=True)
class SvrParams:
    C: float = 100.0
    gamma: float = 0.001
    epsilon: float = 0.1
    tol: float = 1e-3


@dataclass
class SvrModel:
    params: SvrParams
    sv: np.ndarray
    coef: np.ndarray   # alpha_i - alpha_i*
    rho: float
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if len(self.sv) == 0:
            return np.full(len(X), -self.rho)
        return rbf_kernel(X, self.sv, self.params.gamma) @ self.coef - self.rho


def svr_dual(X: np.ndarray, z: np.ndarray, params: SvrParams):
    """(Q, p, y) of the doubled epsilon-SVR dual over (alpha, alpha*)."""
    n = len(z)
    K = rbf_kernel(X, X, params.gamma)
    y = np.concatenate([np.ones(n), -np.ones(n)])
    Q = np.block([[K, -K], [-K, K]])
    p = np.concatenate([params.epsilon - z, params.epsilon + z])
    return Q, p, y


def train_svr(X: np.ndarray, z: np.ndarray, params: SvrParams = SvrParams(), meta: dict | None = None) -> SvrModel:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    z = np.asarray(z, dtype=float)
    _check_finite(X, z)
    n = len(z)
    Q, p, y = svr_dual(X, z, params)
    sol = smo_solve(Q, p, y, params.C, params.tol)
    coef = sol.alpha[:n] - sol.alpha[n:]
    nz = np.nonzero(coef != 0)[0]
    return SvrModel(params, X[nz], coef[nz], sol.rho, meta or {})


# -------------------------------------------------------------- grid search

def r2(pred, truth) -> float:
    truth = np.asarray(truth, dtype=float)
    ss_tot = np.sum((truth - truth.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("r2 undefined for zero-variance targets")
    return float(1.0 - np.sum((truth - np.asarray(pred)) ** 2) / ss_tot)


def grid_search(X_train, y_train, X_val, y_val, task: str = "regression",
                Cs: Sequence[float] = (1.0, 10.0, 100.0), gammas: Sequence[float] = (1e-3, 1e-2, 1e-1),
                epsilon: float = 0.1) -> tuple[dict, list[dict]]:
    """Evaluate every (C, gamma) cell on held-out data; returns (best cell, full grid)."""
    grid = []
    for C, gamma in product(Cs, gammas):
        if task == "regression":
            model = train_svr(X_train, y_train, SvrParams(C, gamma, epsilon))
            score = r2(model.predict(X_val), y_val)
        else:
            model = train_svm(X_train, y_train, SvmParams(C, gamma))
            score = float(np.mean(model.predict(X_val) == np.asarray(y_val)))
        cell = {"C": C, "gamma": gamma, "score": score}
        log.info("grid C=%g gamma=%g score=%.4f", C, gamma, score)
        grid.append(cell)
    best = max(grid, key=lambda c: c["score"])
    return best, grid


# --------------------------------------------------------------- model file
#
# Little-endian layout:
#   8s   magic b"AGKSVM01"
#   u32  n = length of the JSON block
#   n    UTF-8 JSON: kind ("svc" | "svr"), params, meta, array table
#        [{name, shape, dtype}], sorted keys
#   ...  arrays concatenated in table order (float64 "<f8" / int64 "<i8")

_MAGIC = b"AGKSVM01"


def _pack(kind: str, params, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    table = []
    body = io.BytesIO()
    for name, arr in arrays:
        dt = "<i8" if arr.dtype.kind in "iu" else "<f8"
        table.append({"name": name, "shape": list(arr.shape), "dtype": dt})
        body.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    info = {"kind": kind, "params": asdict(params), "meta": meta, "arrays": table}
    blob = json.dumps(info, sort_keys=True, separators=(",", ":")).encode()
    return _MAGIC + struct.pack("<I", len(blob)) + blob + body.getvalue()


def _unpack(data: bytes):
    if data[:8] != _MAGIC:
        raise ValueError("not an SVM model file")
    (n,) = struct.unpack_from("<I", data, 8)
    info = json.loads(data[12:12 + n])
    off = 12 + n
    arrays = {}
    for entry in info["arrays"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype=entry["dtype"], count=count, offset=off).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(np.int64 if entry["dtype"] == "<i8" else np.float64)
        off += count * 8
    return info, arrays


def dumps_svm(model: SvmModel | SvrModel) -> bytes:
    if isinstance(model, SvrModel):
        return _pack("svr", model.params, model.meta,
                     [("sv", model.sv), ("coef", model.coef), ("rho", np.array([model.rho]))])
    arrays = [("classes", model.classes.astype(np.int64)), ("sv", model.sv),
              ("pairs", np.array([[m.pos, m.neg] for m in model.machines], dtype=np.int64).reshape(-1, 2)),
              ("rho", np.array([m.rho for m in model.machines])),
              ("n_support", np.array([len(m.support) for m in model.machines], dtype=np.int64))]
    if model.machines:
        arrays.append(("support", np.concatenate([m.support for m in model.machines]).astype(np.int64)))
        arrays.append(("coef", np.concatenate([m.coef for m in model.machines])))
    return _pack("svc", model.params, model.meta, arrays)


def loads_svm(data: bytes) -> SvmModel | SvrModel:
    info, arr = _unpack(data)
    if info["kind"] == "svr":
        return SvrModel(SvrParams(**info["params"]), arr["sv"], arr["coef"], float(arr["rho"][0]), info["meta"])
    machines = []
    off = 0
    for (pos, neg), rho, ns in zip(arr["pairs"], arr["rho"], arr["n_support"]):
        machines.append(BinarySvm(int(pos), int(neg), arr["support"][off:off + ns], arr["coef"][off:off + ns],
                                  float(rho)))
        off += ns
    return SvmModel(SvmParams(**info["params"]), arr["classes"], arr["sv"], machines, info["meta"])


def save_svm(path: str | Path, model) -> None:
    Path(path).write_bytes(dumps_svm(model))


def load_svm(path: str | Path):
    return loads_svm(Path(path).read_bytes())


# ----------------------------------------------------- ΔVth history adapter

@dataclass
class SvmHistoryRegressor:
    """Per-segment ΔVth classifier over quantized labels.

    Features are scaled to roughly [0, 1]: voltages by Vdd, ΔVth history by the
    quantizer's upper edge.
    """

    model: SvmModel
    h: int
    quantizer: QuantizerSpec
    vdd: float = DEFAULT_VDD

    def features(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != 2 * self.h + 1:
            raise ValueError(f"expected {2 * self.h + 1} features for h={self.h}, got {X.shape[1]}")
        out = X.copy()
        out[:, :self.h + 1] /= self.vdd
        out[:, self.h + 1:] /= self.quantizer.max_mv
        return out

    def predict_class(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict(self.features(X))

    def predict_mv(self, X: np.ndarray) -> np.ndarray:
        return dequantize(self.quantizer, self.predict_class(X))


def train_history_svm(X: np.ndarray, y_mv: np.ndarray, h: int, q: QuantizerSpec,
                      params: SvmParams = SvmParams(), vdd: float = DEFAULT_VDD) -> SvmHistoryRegressor:
    reg = SvmHistoryRegressor(None, h, q, vdd)  # type: ignore[arg-type]
    meta = {"task": "history", "h": h, "vdd": vdd, "quantizer": [q.min_mv, q.max_mv, q.n_bins]}
    reg.model = train_svm(reg.features(X), quantize(q, y_mv), params, meta)
    return reg


def svm_regressor_from_model(model: SvmModel) -> SvmHistoryRegressor:
    m = model.meta
    q = QuantizerSpec(m["quantizer"][0], m["quantizer"][1], int(m["quantizer"][2]))
    return SvmHistoryRegressor(model, int(m["h"]), q, m["vdd"])
