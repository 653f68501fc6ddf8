"""Behavior metrics per dog and class, two-way ANOVA, Firth logistic regression, Spearman correlation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg, special

from .attribution import AttributionRecord
from .scene import N_CLASSES, ClassTaxonomy, FrameSegmentation, SegmentationCorpus
from .special import chi2_sf


def _usable(records: Sequence[AttributionRecord]) -> list[AttributionRecord]:
    return [r for r in records if r.error is None and not r.null]


def _frames_of(frames) -> Mapping[int, FrameSegmentation]:
    return frames.by_index() if isinstance(frames, SegmentationCorpus) else frames


def _mean_sd(values) -> tuple[float | None, float | None]:
    if len(values) == 0:
        return None, None
    v = np.asarray(values, dtype=float)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else None


# --- behavior table ----------------------------------------------------------------


@dataclass
class BehaviorCell:
    n_frames: int = 0
    n_in_view: int = 0
    fixated_mass: float = 0.0
    sizes: list = field(default_factory=list)
    occupancies: list = field(default_factory=list)

    @property
    def time_in_view(self) -> float | None:
        return self.n_in_view / self.n_frames if self.n_frames else None

    @property
    def time_fixated_in_view(self) -> float | None:
        return self.fixated_mass / self.n_in_view if self.n_in_view else None


@dataclass
class BehaviorTable:
    taxonomy: ClassTaxonomy
    dogs: list[str]
    cells: dict[tuple[str, int], BehaviorCell]

    def cell(self, dog: str, class_id: int) -> BehaviorCell:
        return self.cells[(dog, class_id)]

    def class_summary(self, class_id: int) -> dict:
        """Across-dog mean/sd for the time columns, pooled mean/sd for size and occupancy."""
        cells = [self.cells[(d, class_id)] for d in self.dogs]
        tiv = [c.time_in_view for c in cells if c.time_in_view is not None]
        tfv = [c.time_fixated_in_view for c in cells if c.time_fixated_in_view is not None]
        sizes = [s for c in cells for s in c.sizes]
        occ = [o for c in cells for o in c.occupancies]
        return {
            "time_in_view": _mean_sd(tiv),
            "time_fixated_in_view": _mean_sd(tfv),
            "size_in_view": _mean_sd(sizes),
            "region_occupancy": _mean_sd(occ),
        }

    def grid(self, column: str = "time_in_view") -> np.ndarray:
        """dogs x classes matrix of a per-cell rate; NaN where absent."""
        out = np.full((len(self.dogs), self.taxonomy.n_classes), np.nan)
        for i, d in enumerate(self.dogs):
            for c in range(1, self.taxonomy.n_classes + 1):
                v = getattr(self.cells[(d, c)], column)
                if v is not None:
                    out[i, c - 1] = v
        return out

    def to_json(self) -> dict:
        names = self.taxonomy.names
        per_class = {}
        for c in range(1, self.taxonomy.n_classes + 1):
            s = self.class_summary(c)
            per_class[names[c]] = {k: {"mean": v[0], "sd": v[1]} for k, v in s.items()}
        per_dog = {
            d: {
                names[c]: {
                    "time_in_view": self.cells[(d, c)].time_in_view,
                    "time_fixated_in_view": self.cells[(d, c)].time_fixated_in_view,
                }
                for c in range(1, self.taxonomy.n_classes + 1)
            }
            for d in self.dogs
        }
        return {"time_in_view_denominator": "fixation frames", "per_class": per_class, "per_dog": per_dog}

    def to_text(self) -> str:
        def ms(pair, scale=1.0, digits=3):
            m, s = pair
            if m is None:
                return "NA"
            sd = "NA" if s is None else f"{s * scale:.{digits}f}"
            return f"{m * scale:.{digits}f} ({sd})"

        names = self.taxonomy.names
        header = ["Class Object", "Time in View", "Time Fixated in View", "Size in View", "% Fixation Region Occupied"]
        rows = []
        for c in range(1, self.taxonomy.n_classes + 1):
            s = self.class_summary(c)
            rows.append([
                names[c],
                ms(s["time_in_view"]),
                ms(s["time_fixated_in_view"]),
                ms(s["size_in_view"], 100.0, 1),
                ms(s["region_occupancy"], 100.0, 1),
            ])
        widths = [max(len(r[i]) for r in rows + [header]) for i in range(len(header))]
        lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
        lines += ["  ".join(v.ljust(w) for v, w in zip(r, widths)) for r in rows]
        return "\n".join(lines) + "\n"


def behavior_table(records: Sequence[AttributionRecord], frames, taxonomy: ClassTaxonomy | None = None) -> BehaviorTable:
    taxonomy = taxonomy or ClassTaxonomy()
    k = taxonomy.n_classes
    frames = _frames_of(frames)
    usable = _usable(records)
    dogs = sorted({r.dog_id for r in usable})
    cells = {(d, c): BehaviorCell() for d in dogs for c in range(1, k + 1)}
    for r in usable:
        frame = frames[r.frame_index]
        present = {}
        for m in frame.masks:
            present.setdefault(m.class_id, []).append(m.area / frame.n_pixels)
        probs = r.distribution.probs
        for c in range(1, k + 1):
            cell = cells[(r.dog_id, c)]
            cell.n_frames += 1
            if c in present:
                cell.n_in_view += 1
                cell.fixated_mass += float(probs[c])
                cell.sizes.extend(present[c])
            if probs[c] > 0:
                cell.occupancies.append(float(r.occupancy[c]))
    return BehaviorTable(taxonomy, dogs, cells)


# --- two-way ANOVA -------------------------------------------------------------------


@dataclass(frozen=True)
class AnovaResult:
    ss_class: float
    ss_dog: float
    ss_error: float
    ss_total: float
    df_class: int
    df_dog: int
    df_error: int
    f_class: float
    f_dog: float
    p_class: float
    p_dog: float
    eta2_class: float
    eta2_dog: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _f_ratio(ss, df, ms_error):
    if ms_error > 0:
        return (ss / df) / ms_error
    return math.inf if ss > 0 else math.nan


def two_way_anova(grid) -> AnovaResult:
    """Additive two-way ANOVA on a dogs x classes grid with one observation per cell."""
    x = np.asarray(grid, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2 or x.shape[1] < 2:
        raise ValueError(f"need at least a 2x2 grid, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise ValueError("grid has missing cells")
    d, k = x.shape
    grand = x.mean()
    dog_means = x.mean(axis=1)
    class_means = x.mean(axis=0)
    ss_total = float(((x - grand) ** 2).sum())
    ss_dog = float(k * ((dog_means - grand) ** 2).sum())
    ss_class = float(d * ((class_means - grand) ** 2).sum())
    resid = x - dog_means[:, None] - class_means[None, :] + grand
    ss_error = float((resid**2).sum())
    df_class, df_dog, df_error = k - 1, d - 1, (k - 1) * (d - 1)
    ms_error = ss_error / df_error
    f_class = _f_ratio(ss_class, df_class, ms_error)
    f_dog = _f_ratio(ss_dog, df_dog, ms_error)

    def p(f, df):
        return float(special.fdtrc(df, df_error, f)) if np.isfinite(f) else (0.0 if f == math.inf else math.nan)

    def eta(ss):
        s = ss + ss_error
        return ss / s if s > 0 else math.nan

    return AnovaResult(
        ss_class, ss_dog, ss_error, ss_total, df_class, df_dog, df_error,
        f_class, f_dog, p(f_class, df_class), p(f_dog, df_dog), eta(ss_class), eta(ss_dog),
    )


# --- Firth logistic regression -------------------------------------------------------


@dataclass
class FirthFit:
    coef: np.ndarray
    se: np.ndarray
    loglik: float
    n_params: int
    converged: bool
    iterations: int
    history: list[float] = field(default_factory=list)
    names: list[str] | None = None


def _penalized_loglik(X, y, w, beta):
    eta = X @ beta
    ll = float((w * (y * -np.logaddexp(0.0, -eta) + (1.0 - y) * -np.logaddexp(0.0, eta))).sum())
    p = special.expit(eta)
    info = X.T @ (X * (w * p * (1.0 - p))[:, None])
    sign, logdet = np.linalg.slogdet(info)
    return ll + 0.5 * logdet if sign > 0 else -math.inf


def fit_firth_logistic(
    X,
    y,
    weights=None,
    tol: float = 1e-8,
    max_iter: int = 100,
    max_step: float = 5.0,
    names: list[str] | None = None,
) -> FirthFit:
    """Logistic regression with Jeffreys-prior (Firth) penalty.

    Newton iterations on the modified score
    X^T [w (y - p) + h (1/2 - p)], where h is the hat diagonal of the
    weighted information; steps are halved until the penalized
    log-likelihood does not decrease. Finite on separated data.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(y, dtype=float)
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("outcomes must be 0 or 1")
    w = np.ones(len(y)) if weights is None else np.asarray(weights, dtype=float)
    if (w < 0).any():
        raise ValueError("case weights must be non-negative")
    n, k = X.shape
    beta = np.zeros(k)
    current = _penalized_loglik(X, y, w, beta)
    history = [current]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = special.expit(X @ beta)
        wv = w * p * (1.0 - p)
        info = X.T @ (X * wv[:, None])
        info_inv = np.linalg.pinv(info, hermitian=True)
        h = wv * np.einsum("ij,jk,ik->i", X, info_inv, X)
        score = X.T @ (w * (y - p) + h * (0.5 - p))
        if np.max(np.abs(score)) < tol:
            converged = True
            it -= 1
            break
        delta = info_inv @ score
        biggest = np.max(np.abs(delta))
        if biggest > max_step:
            delta *= max_step / biggest
        for _ in range(40):
            trial = _penalized_loglik(X, y, w, beta + delta)
            if trial >= current:
                break
            delta /= 2.0
        else:
            # no ascent direction left at machine precision
            converged = np.max(np.abs(score)) < 1e-5
            break
        beta = beta + delta
        current = trial
        history.append(current)
    p = special.expit(X @ beta)
    info = X.T @ (X * (w * p * (1.0 - p))[:, None])
    se = np.sqrt(np.clip(np.diag(np.linalg.pinv(info, hermitian=True)), 0.0, None))
    return FirthFit(beta, se, current, k, converged, it, history, names)


@dataclass(frozen=True)
class LrResult:
    chi2: float
    dof: int
    p: float

    def to_json(self) -> dict:
        return {"chi2": self.chi2, "dof": self.dof, "p": self.p}


def lr_test(full: FirthFit, reduced: FirthFit) -> LrResult:
    """Likelihood-ratio test on penalized log-likelihoods of nested fits."""
    dof = full.n_params - reduced.n_params
    if dof == 0 and full.loglik == reduced.loglik:
        return LrResult(0.0, 0, 1.0)
    if dof <= 0:
        raise ValueError(f"reduced model ({reduced.n_params} params) is not nested in full ({full.n_params})")
    stat = max(0.0, 2.0 * (full.loglik - reduced.loglik))
    return LrResult(stat, dof, chi2_sf(stat, dof))


# --- regression design over fixations ---------------------------------------------


@dataclass
class RegressionData:
    class_ids: np.ndarray
    dog_idx: np.ndarray
    y: np.ndarray
    weight: np.ndarray
    dogs: list[str]


def regression_rows(records: Sequence[AttributionRecord], frames, weighted: bool = True) -> RegressionData:
    """One row per (fixation, in-view class), collapsed over identical covariates.

    Unweighted: outcome 1 iff the class received probability. Weighted:
    the row splits into an outcome-1 part of weight P(class) and an
    outcome-0 part of weight 1 - P(class).
    """
    frames = _frames_of(frames)
    usable = _usable(records)
    dogs = sorted({r.dog_id for r in usable})
    dog_pos = {d: i for i, d in enumerate(dogs)}
    acc: dict[tuple[int, int, int], float] = {}
    for r in usable:
        probs = r.distribution.probs
        for c in sorted({m.class_id for m in frames[r.frame_index].masks}):
            key = (c, dog_pos[r.dog_id])
            if weighted:
                pc = float(probs[c])
                acc[key + (1,)] = acc.get(key + (1,), 0.0) + pc
                acc[key + (0,)] = acc.get(key + (0,), 0.0) + (1.0 - pc)
            else:
                yk = key + (int(probs[c] > 0),)
                acc[yk] = acc.get(yk, 0.0) + 1.0
    keys = sorted(k for k, v in acc.items() if v > 0)
    arr = np.array(keys, dtype=np.int64).reshape(-1, 3)
    return RegressionData(arr[:, 0], arr[:, 1], arr[:, 2].astype(float), np.array([acc[k] for k in keys]), dogs)


def _independent_columns(base: np.ndarray, extra: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    # indices of `extra` columns adding rank beyond `base`
    if extra.shape[1] == 0:
        return np.arange(0)
    q, _ = np.linalg.qr(base)
    resid = extra - q @ (q.T @ extra)
    _, r, piv = linalg.qr(resid, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    if len(diag) == 0 or diag[0] == 0:
        return np.arange(0)
    rank = int((diag > tol * max(diag[0], 1.0)).sum())
    return np.sort(piv[:rank])


def design_matrices(data: RegressionData, n_classes: int = N_CLASSES) -> dict[str, tuple[np.ndarray, list[str]]]:
    """Treatment-coded designs for the nested models: dog, class, class+dog, class*dog."""
    classes = sorted(set(data.class_ids.tolist()))
    n = len(data.y)
    intercept = np.ones((n, 1))
    cls_cols = np.stack([(data.class_ids == c).astype(float) for c in classes[1:]], axis=1) if len(classes) > 1 else np.zeros((n, 0))
    dog_levels = sorted(set(data.dog_idx.tolist()))
    dog_cols = np.stack([(data.dog_idx == d).astype(float) for d in dog_levels[1:]], axis=1) if len(dog_levels) > 1 else np.zeros((n, 0))
    names = ClassTaxonomy().names if n_classes == N_CLASSES else [str(c) for c in range(n_classes + 1)]
    cls_names = [f"class[{names[c]}]" for c in classes[1:]]
    dog_names = [f"dog[{data.dogs[d]}]" for d in dog_levels[1:]]
    inter, inter_names = [], []
    for i, cn in enumerate(cls_names):
        for j, dn in enumerate(dog_names):
            col = cls_cols[:, i] * dog_cols[:, j]
            if col.any():
                inter.append(col)
                inter_names.append(f"{cn}:{dn}")
    inter = np.stack(inter, axis=1) if inter else np.zeros((n, 0))
    main = np.hstack([intercept, cls_cols, dog_cols])
    keep = _independent_columns(main, inter)
    inter, inter_names = inter[:, keep], [inter_names[i] for i in keep]
    return {
        "dog": (np.hstack([intercept, dog_cols]), ["intercept"] + dog_names),
        "class": (np.hstack([intercept, cls_cols]), ["intercept"] + cls_names),
        "class+dog": (main, ["intercept"] + cls_names + dog_names),
        "class*dog": (np.hstack([main, inter]), ["intercept"] + cls_names + dog_names + inter_names),
    }


def fixation_regressions(records, frames, weighted: bool = True) -> dict:
    """LR tests for the class effect, dog effect and class-by-dog interaction."""
    data = regression_rows(records, frames, weighted)
    if len(data.y) == 0:
        return {}
    designs = design_matrices(data)
    fits = {name: fit_firth_logistic(X, data.y, data.weight, names=cols) for name, (X, cols) in designs.items()}
    out = {"weighted": weighted, "converged": {k: f.converged for k, f in fits.items()}}
    for label, full, reduced in (
        ("class", "class+dog", "dog"),
        ("dog", "class+dog", "class"),
        ("class:dog", "class*dog", "class+dog"),
    ):
        try:
            out[label] = lr_test(fits[full], fits[reduced]).to_json()
        except ValueError:
            out[label] = None
    # unadjusted contrasts of each class coefficient against the reference class
    fit = fits["class+dog"]
    out["class_contrasts_uncorrected"] = {
        name: {"coef": float(b), "z": float(b / s) if s > 0 else None, "p": float(2.0 * special.ndtr(-abs(b / s))) if s > 0 else None}
        for name, b, s in zip(fit.names, fit.coef, fit.se)
        if name.startswith("class[")
    }
    return out


# --- Spearman ----------------------------------------------------------------------


def midranks(x) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    x = np.asarray(x, dtype=float)
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.concatenate(([True], xs[1:] != xs[:-1]))
    group = np.cumsum(starts) - 1
    first = np.flatnonzero(starts)
    last = np.concatenate((first[1:], [len(x)])) - 1
    avg = (first + last) / 2.0 + 1.0
    ranks = np.empty(len(x))
    ranks[order] = avg[group]
    return ranks


@dataclass(frozen=True)
class SpearmanResult:
    rho: float
    p: float
    n: int
    degenerate: bool = False

    def to_json(self) -> dict:
        return {"rho": self.rho, "p": self.p, "n": self.n, "degenerate": self.degenerate}


def spearman(x, y) -> SpearmanResult:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if len(x) != len(y):
        raise ValueError("paired sequences differ in length")
    n = len(x)
    if n < 3:
        raise ValueError("need at least 3 pairs")
    rx, ry = midranks(x), midranks(y)
    dx, dy = rx - rx.mean(), ry - ry.mean()
    denom = math.sqrt(float((dx * dx).sum()) * float((dy * dy).sum()))
    if denom == 0:
        return SpearmanResult(math.nan, math.nan, n, True)
    rho = float((dx * dy).sum() / denom)
    if abs(rho) >= 1.0:
        return SpearmanResult(rho, 0.0, n)
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = float(2.0 * special.stdtr(n - 2, -abs(t)))
    return SpearmanResult(rho, p, n)


# --- largest object ----------------------------------------------------------------


@dataclass(frozen=True)
class LargestObjectStats:
    fraction_included: float | None
    size_mean: float | None
    size_sd: float | None
    n: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def largest_object_stats(records: Sequence[AttributionRecord], frames) -> LargestObjectStats:
    """How often the frame's largest instance is among the fixated objects, and its size when it is."""
    frames = _frames_of(frames)
    hits, sizes, n = 0, [], 0
    for r in _usable(records):
        frame = frames[r.frame_index]
        if not frame.masks:
            continue
        n += 1
        largest = min(frame.masks, key=lambda m: (-m.area, m.instance_id))
        # P > 0 already implies an instance of that class meets the region
        if r.distribution.probs[largest.class_id] > 0:
            hits += 1
            sizes.append(largest.area / frame.n_pixels)
    if n == 0:
        return LargestObjectStats(None, None, None, 0)
    m, s = _mean_sd(sizes)
    return LargestObjectStats(hits / n, m, s, n)


def size_correlations(table: BehaviorTable) -> dict:
    """Spearman of mean class size against time fixated in view and against region occupancy."""
    size, tfv, occ = [], [], []
    for c in range(1, table.taxonomy.n_classes + 1):
        s = table.class_summary(c)
        size.append(s["size_in_view"][0])
        tfv.append(s["time_fixated_in_view"][0])
        occ.append(s["region_occupancy"][0])
    out = {}
    for label, other in (("size_vs_time_fixated", tfv), ("size_vs_region_occupancy", occ)):
        pairs = [(a, b) for a, b in zip(size, other) if a is not None and b is not None]
        out[label] = spearman(*zip(*pairs)).to_json() if len(pairs) >= 3 else None
    return out
