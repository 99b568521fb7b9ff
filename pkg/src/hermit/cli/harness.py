"""Validation tuning, imputation benchmark and the replication protocols."""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .. import datagen as dg
from ..expfamily import Kind
from ..metrics import aauc, feature_auc, nmi, nmse
from ..model import Dataset, MixtureModel, impute, log_likelihood, responsibilities
from ..moe import fit_moe, gating_probs, moe_log_likelihood, predict_moe
from ..penalty import PenaltyConfig, PenaltyKind
from ..robust import RobustConfig, two_stage
from ..solver import FitConfig, NumericalError, fit
from ..taskdiag import (cluster_tasks, concordant_scores, kernel_pca, single_task_posteriors,
                        task_similarity)

log = logging.getLogger(__name__)

DEFAULT_LAMBDAS = tuple(np.logspace(-6, 3, 30))
DEFAULT_KS = tuple(range(1, 11))


def cell_seed(root: int, *counter) -> int:
    """Independent, reproducible seed for one grid cell or replication."""
    return int(np.random.SeedSequence([int(root), *map(int, counter)]).generate_state(1)[0])


@dataclass
class Grid:
    lambdas: Sequence[float] = DEFAULT_LAMBDAS
    ks: Sequence[int] = DEFAULT_KS
    kinds: Sequence[str] = ("entrywise",)
    moe: bool = False
    lambda2s: Sequence[float] = (1e-2,)
    gamma: float = 1.0

    def cells(self):
        out = []
        for kind in self.kinds:
            for k in self.ks:
                for lam in self.lambdas:
                    for lam2 in (self.lambda2s if self.moe else (None,)):
                        out.append((PenaltyKind.parse(kind) if isinstance(kind, str) else kind,
                                    int(k), float(lam), lam2))
        return out


@dataclass
class TuneResult:
    model: MixtureModel
    cell: dict
    table: list
    rho: np.ndarray
    report: object
    gate: Optional[np.ndarray] = None

    @property
    def valid_loglik(self) -> float:
        return self.cell["valid_loglik"]


def _fit_cell(train, valid, cell, cfg: FitConfig, seed, gamma=1.0):
    kind, k, lam, lam2 = cell
    pen = PenaltyConfig(kind, lam, gamma)
    fcfg = FitConfig.from_dict({**cfg.to_dict(), "k": k, "seed": seed})
    if lam2 is None:
        model, rho, rep = fit(train, pen, fcfg)
        return model, rho, rep, None, log_likelihood(model, valid)
    model, gate, rep = fit_moe(train, pen, lam2, fcfg)
    return model, rep.rho, rep, gate.alpha, moe_log_likelihood(model, gate, valid)


def tune(train: Dataset, valid: Dataset, grid: Grid, cfg: Optional[FitConfig] = None,
         seed: int = 0, jobs: int = 1) -> TuneResult:
    """Fit every grid cell and keep the one with the largest validation log-likelihood.

    Ties (relative difference below 1e-9) go to the smaller ``k``, then the larger lambda.
    """
    if tuple(train.tasks) != tuple(valid.tasks):
        raise ValueError("train and validation data must share the task list")
    cfg = FitConfig() if cfg is None else cfg
    cells = grid.cells()

    def run(idx_cell):
        idx, cell = idx_cell
        try:
            return _fit_cell(train, valid, cell, cfg, cell_seed(seed, idx), grid.gamma)
        except (NumericalError, FloatingPointError, ValueError) as exc:
            return exc

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, enumerate(cells)))
    else:
        results = [run(c) for c in enumerate(cells)]

    table, best, best_key = [], None, None
    for (kind, k, lam, lam2), res in zip(cells, results):
        row = {"kind": kind.value, "k": k, "lambda": lam, "lambda2": lam2}
        if isinstance(res, Exception):
            row.update(valid_loglik=float("nan"), error=str(res))
            table.append(row)
            continue
        model, rho, rep, alpha, ll = res
        row.update(valid_loglik=float(ll), objective=rep.objective, converged=rep.converged,
                   n_outer=rep.n_outer)
        table.append(row)
        if not np.isfinite(ll):
            continue
        if best is None or _better(ll, k, lam, best_key):
            best, best_key = (model, row, rho, rep, alpha), (ll, k, lam)
    if best is None:
        raise RuntimeError("every grid cell failed: " + "; ".join(str(r.get("error")) for r in table))
    model, row, rho, rep, alpha = best
    return TuneResult(model, row, table, rho, rep, alpha)


def _better(ll, k, lam, best_key) -> bool:
    bll, bk, blam = best_key
    if abs(ll - bll) > 1e-9 * max(abs(ll), abs(bll), 1.0):
        return ll > bll
    if k != bk:
        return k < bk
    return lam > blam


# ---------------------------------------------------------------------------
# imputation benchmark

def hide_targets(data: Dataset, fraction: float, seed: int = 0) -> np.ndarray:
    """Mask of observed entries to hide; every row keeps at least one visible target."""
    if not 0 <= fraction <= 1:
        raise ValueError("hide fraction must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    obs = np.array(data.observed)
    flat = np.flatnonzero(obs.ravel())
    hide = np.zeros(obs.size, bool)
    hide[rng.choice(flat, size=int(round(fraction * flat.size)), replace=False)] = True
    hide = hide.reshape(obs.shape)
    for i in np.flatnonzero(~(obs & ~hide).any(axis=1)):
        hide[i, rng.choice(np.flatnonzero(obs[i]))] = False
    return hide


def score_predictions(pred, truth: Dataset, mask) -> dict:
    if not np.any(mask):
        return {}
    out = {"n_hidden": int(np.sum(mask))}
    for name, kinds in (("nmse", {Kind.GAUSSIAN}), ("nmse_poisson", {Kind.POISSON}), ("nmse_all", None)):
        v = nmse(pred, truth.Y, mask, truth.tasks, kinds=kinds)
        if np.isfinite(v):
            out[name] = v
    a = aauc(pred, truth.Y, mask, truth.tasks)
    if np.isfinite(a):
        out["aauc"] = a
    return out


def impute_benchmark(model: MixtureModel, test: Dataset, hide_fraction: float = 0.5, seed: int = 0,
                     gate=None) -> dict:
    """Hide a fraction of the observed test targets, impute them from the rest and score."""
    hide = hide_targets(test, hide_fraction, seed)
    if not hide.any():
        return {}
    part = test.with_observed(test.observed & ~hide)
    log_prior = None
    if gate is not None:
        G = gating_probs(gate, test.X)
        log_prior = np.log(np.clip(G, 1e-300, None))
    pred = impute(model, part, log_prior=log_prior)
    return score_predictions(pred, test, hide)


# ---------------------------------------------------------------------------
# replication protocols

def n_keep(R: int, keep_fraction: float) -> int:
    return max(1, math.ceil(keep_fraction * R - 1e-9))


def aggregate(runs: list, keep_fraction: float) -> dict:
    """Per method: average metrics over the runs with the best validation score."""
    methods = sorted({m for r in runs for m in r["methods"]})
    out = {}
    for meth in methods:
        recs = [r["methods"][meth] for r in runs if meth in r["methods"]]
        order = sorted(range(len(recs)), key=lambda i: (-recs[i]["valid"], i))
        kept = [recs[i] for i in order[:n_keep(len(recs), keep_fraction)]]
        names = sorted({k for rec in kept for k, v in rec.items()
                        if k != "valid" and isinstance(v, (int, float, bool, np.number))})
        stats = {}
        for name in names:
            vals = np.array([float(rec[name]) for rec in kept if name in rec])
            stats[name] = {"mean": float(vals.mean()), "std": float(vals.std()), "values": vals.tolist()}
        out[meth] = {"kept": len(kept), "metrics": stats}
    return out


def _small_grid(lambdas, kinds=("entrywise",), ks=(1,)):
    return Grid(lambdas=lambdas, ks=ks, kinds=kinds)


def proto_table1(seed: int, opts: dict) -> dict:
    spec = dg.diff_k(opts.get("k_true", 3), seed=seed, poisson=False, n=opts.get("n", 1000))
    (tr, _), (va, _), (te, _) = dg.generate_splits(spec, [spec.n] * 3)
    lams = opts.get("lambdas", (1e-3, 1e-2, 3e-2))
    out = {}
    for name, ks in (("mix", (spec.k_true,)), ("lasso", (1,))):
        res = tune(tr, va, _small_grid(lams, ks=ks), seed=seed)
        out[name] = {"valid": res.valid_loglik, "lambda": res.cell["lambda"],
                     **impute_benchmark(res.model, te, 0.5, seed)}
    return out


def _group_posterior(model, data: Dataset, idx) -> np.ndarray:
    sub = data.columns(idx)
    rows = data.observed[:, idx].any(axis=1)
    rho = np.tile(model.pi, (data.n, 1))
    rho[rows] = responsibilities(model, sub)
    return rho


def proto_fig1(seed: int, opts: dict) -> dict:
    mr = opts.get("missing_rate", 0.0)
    spec = dg.high_dim(mr, seed) if opts.get("dim") == "high" else dg.low_dim(mr, seed)
    (tr, truth), (va, _) = dg.generate_splits(spec, [spec.n, spec.n])
    lams = opts.get("lambdas", (1e-3, 1e-2, 3e-2, 1e-1))
    k = spec.k_true
    Y = truth.onehot()
    grid = _small_grid(lams, ks=(k,))
    out = {}
    for name, kind in (("mix", "entrywise"), ("mix_gs", "rowgroup")):
        res = tune(tr, va, Grid(lambdas=lams, ks=(k,), kinds=(kind,)), seed=seed)
        out[name] = {"valid": res.valid_loglik, "nmi": nmi(res.rho, Y),
                     "feature_auc": feature_auc(res.model.beta, truth.beta, tr.has_intercept)}
    # task-wise and type-wise fits: each task is scored with the fit it belonged to
    for name, blocks in (("sep", [tr.table.groups[kd] for kd in tr.table.groups]),
                         ("single", [np.array([j]) for j in range(tr.m)])):
        valid, vals = 0.0, []
        for bi, idx in enumerate(blocks):
            res = tune(tr.columns(idx), va.columns(idx), grid, seed=cell_seed(seed, bi))
            valid += res.valid_loglik
            vals += [nmi(_group_posterior(res.model, tr, idx), Y)] * len(idx)
        out[name] = {"valid": valid, "nmi": float(np.mean(vals))}
    return out


def proto_table4(seed: int, opts: dict) -> dict:
    p = opts.get("p_outlier", 0.05)
    spec = dg.diff_k(2, seed=seed, n=opts.get("n", 1000))
    (tr, _), (va, _), (te, _) = dg.generate_splits(spec, [spec.n] * 3)
    tr, idx = dg.contaminate(tr, p, seed=cell_seed(seed, 1))
    va, _ = dg.contaminate(va, p, seed=cell_seed(seed, 2))
    kind = opts.get("kind", "entrywise")
    lams = opts.get("lambdas", (1e-3, 1e-2, 3e-2))
    res = tune(tr, va, Grid(lambdas=lams, ks=(2,), kinds=(kind,)), seed=seed)
    out = {"nonrobust": {"valid": res.valid_loglik, **impute_benchmark(res.model, te, 0.5, seed)}}
    lam2 = opts.get("lambda2", 20.0 / spec.n)
    pen = PenaltyConfig(kind, res.cell["lambda"])
    rcfg = RobustConfig(lambda2=lam2, base=FitConfig(k=2, seed=seed), p_clean=p)
    model, kept, rep = two_stage(tr, pen, rcfg)
    removed = set(rep.removed.tolist())
    out["robust"] = {"valid": log_likelihood(model, va), **impute_benchmark(model, te, 0.5, seed),
                     "outliers_found": len(removed & set(idx.tolist())) / max(len(idx), 1)}
    return out


def proto_table2_scores(seed: int, opts: dict) -> dict:
    (tr, truth), = dg.generate_grouped(dg.ANOMALY_GROUPS, dg.grouped_base(seed, opts.get("n", 2000)),
                                      [opts.get("n", 2000)])
    kind = opts.get("kind", "entrywise")
    model, _, rep = fit(tr, PenaltyConfig(kind, opts.get("lambda", 1e-2)),
                        FitConfig(k=opts.get("k", 4), seed=seed))
    scores = concordant_scores(model, tr)
    n_conc = int(np.sum(truth.groups == 0))
    margin = float(np.nanmin(scores[:n_conc]) - np.nanmax(scores[n_conc:]))
    return {"mix": {"valid": -rep.objective, "separated": margin > 0, "margin": margin,
                    "scores": scores.tolist()}}


def recovered_groups(labels, groups, targets=(1, 2, 3)) -> list:
    """For each target group: do its tasks share one label that no other target group uses?"""
    labels, groups = np.asarray(labels), np.asarray(groups)
    out = []
    for g in targets:
        lab = np.unique(labels[groups == g])
        others = labels[(groups != g) & np.isin(groups, targets)]
        out.append(lab.size == 1 and lab[0] not in others)
    return out


def block_nmi(S, groups):
    """Within-group mean (off-diagonal) and between-group mean similarity per group."""
    S, groups = np.asarray(S), np.asarray(groups)
    within, between = [], []
    for g in np.unique(groups):
        a = groups == g
        blk = S[np.ix_(a, a)]
        nw = a.sum()
        within.append((blk.sum() - np.trace(blk)) / max(nw * (nw - 1), 1))
        between.append(S[np.ix_(a, ~a)].mean())
    return np.array(within), np.array(between)


def proto_table3_clusters(seed: int, opts: dict) -> dict:
    n = opts.get("n", 2000)
    (tr, truth), (va, _) = dg.generate_grouped(dg.CLUSTER_GROUPS, dg.grouped_base(seed, n), [n, n])
    cfg = FitConfig(seed=seed, t_out=opts.get("t_out", 50))
    lambdas = tuple(opts.get("lambdas", (1e-2, 1e-1, 1.0)))
    sim = task_similarity(tr, opts.get("per_task_k", 20), PenaltyConfig("entrywise", lambdas[0]), cfg,
                          valid=va if len(lambdas) > 1 else None, lambdas=lambdas if len(lambdas) > 1 else ())
    emb = kernel_pca(sim, 2)
    labels = cluster_tasks(emb, len(dg.CLUSTER_GROUPS), seed=seed)
    within, between = block_nmi(sim.matrix, truth.groups)
    rec = recovered_groups(labels, truth.groups)
    return {"single": {"valid": 0.0, "within_gt_between": bool(np.all(within[1:] > between[1:])),
                       "recovered": bool(all(rec)), "within": within.tolist(), "between": between.tolist(),
                       "labels": labels.tolist()}}


def proto_table5_moe(seed: int, opts: dict) -> dict:
    spec = dg.diff_k(3, seed=seed, n=opts.get("n", 1000))
    (tr, t), (va, _), (te, tt) = dg.generate_splits(spec, [spec.n] * 3, moe_rows=opts.get("gate_rows", 4))
    out = {}
    for name, kind in (("mix_moe", "entrywise"), ("mix_moe_gs", "rowgroup")):
        res = tune(tr, va, Grid(lambdas=opts.get("lambdas", (1e-2,)), ks=(3,), kinds=(kind,), moe=True,
                                lambda2s=opts.get("lambda2s", (1e-2,))), seed=seed)
        G = gating_probs(res.gate, tr.X)
        pred = predict_moe(res.model, res.gate, te.X)
        out[name] = {"valid": res.valid_loglik, "nmi_true_gate": nmi(G, t.gate),
                     "nmi_posterior": nmi(G, res.rho),
                     "test_nmi_true_gate": nmi(gating_probs(res.gate, te.X), tt.gate),
                     **score_predictions(pred, te, te.observed)}
    return out


def proto_scaling(seed: int, opts: dict) -> dict:
    """Fit time per selected feature; lambda picked per cell by validation log-likelihood."""
    out = {}
    n = opts.get("n", 1000)
    for d in opts.get("ds", (32, 256)):
        for scale in opts.get("m_scales", (1, 4)):
            spec = dg.diff_k(4, seed=seed, n=n, d=d, s=4, m_scale=scale)
            (tr, _), (va, _) = dg.generate_splits(spec, [n, n])
            best = None
            for lam in opts.get("lambdas", (0.3, 1.0, 3.0)):
                t0 = time.perf_counter()
                model, _, rep = fit(tr, PenaltyConfig("rowgroup", lam), FitConfig(k=4, seed=seed))
                elapsed = time.perf_counter() - t0
                ll = log_likelihood(model, va)
                if best is None or ll > best[0]:
                    best = (ll, lam, model, elapsed)
            ll, lam, model, elapsed = best
            rows = model.beta[1:] if tr.has_intercept else model.beta
            feats = int(np.any(rows != 0, axis=(1, 2)).sum())
            out[f"d{d}_m{spec.m}"] = {"valid": ll, "lambda": lam, "seconds": elapsed, "nonzero_features": feats,
                                      "seconds_per_feature": elapsed / max(feats, 1)}
    return out


PROTOCOLS: dict[str, Callable] = {
    "table1": proto_table1,
    "fig1": proto_fig1,
    "table4": proto_table4,
    "table2-scores": proto_table2_scores,
    "table3-clusters": proto_table3_clusters,
    "table5-moe": proto_table5_moe,
    "scaling": proto_scaling,
}


def replicate(protocol: str, R: int = 20, keep_fraction: float = 0.2, seed: int = 0,
              jobs: int = 1, min_replications: int = 5, **opts) -> dict:
    """Run ``R`` seeded replications of a protocol and aggregate the best ``keep_fraction``."""
    if protocol not in PROTOCOLS:
        raise KeyError(f"unknown protocol {protocol!r}; choose from {sorted(PROTOCOLS)}")
    if R < min_replications:
        raise ValueError(f"need at least {min_replications} replications")
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    fn = PROTOCOLS[protocol]

    def one(r):
        s = cell_seed(seed, r)
        return {"replication": r, "seed": s, "methods": fn(s, opts)}

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            runs = list(pool.map(one, range(R)))
    else:
        runs = [one(r) for r in range(R)]
    return {"protocol": protocol, "R": R, "keep_fraction": keep_fraction, "options": opts,
            "summary": aggregate(runs, keep_fraction), "runs": runs}
