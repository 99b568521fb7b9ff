"""Command-line interface: ``hermit <subcommand> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import datagen as dg
from .. import io
from ..model import component_means, impute
from ..moe import fit_moe, gating_probs, predict_moe
from ..penalty import PenaltyConfig
from ..robust import RobustConfig, fit_robust, outlier_scores, two_stage
from ..solver import FitConfig, fit
from ..taskdiag import cluster_tasks, concordant_scores, kernel_pca, task_similarity, two_means_split
from .harness import (DEFAULT_KS, DEFAULT_LAMBDAS, PROTOCOLS, Grid, impute_benchmark, replicate,
                      score_predictions, tune)

log = logging.getLogger("hermit")


def _floats(s):
    return [float(v) for v in s.split(",") if v.strip()]


def _ints(s):
    return [int(v) for v in s.split(",") if v.strip()]


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(path, args):
    if path is None:
        raise SystemExit("missing dataset path")
    return io.load_dataset(path, args.tasks)


def _fitcfg(args, k=None) -> FitConfig:
    return FitConfig(k=k if k is not None else args.k, seed=args.seed, t_out=args.t_out, t_in=args.t_in)


def _pen(args) -> PenaltyConfig:
    return PenaltyConfig(args.penalty, args.lam, args.gamma)


def _write_report(out: Path, report, name="report.json"):
    io.write_json(report.to_dict(), out / name)
    io.write_csv(out / "objective_trace.csv", ["iteration", "objective"],
                 list(enumerate(report.objective_trace)))


def cmd_simulate(args):
    with open(args.spec) as fh:
        spec = dg.SynthSpec.from_dict(json.load(fh))
    out = _out(args)
    sizes = _ints(args.sizes) if args.sizes else [spec.n]
    names = ["train", "valid", "test"][:len(sizes)] if len(sizes) <= 3 else [f"split{i}" for i in range(len(sizes))]
    splits = dg.generate_splits(spec, sizes, moe_rows=args.moe_rows)
    for name, (data, truth) in zip(names, splits):
        io.save_dataset(data, out / f"{name}.csv", out / "tasks.json")
        io.write_json({"beta": truth.beta, "labels": truth.labels, "alpha": truth.alpha, "gate": truth.gate},
                      out / f"{name}_truth.json")
    io.write_json(spec.to_dict(), out / "spec.json")


def cmd_fit(args):
    data = _load(args.train, args)
    out = _out(args)
    pen = _pen(args)
    cfg = _fitcfg(args)
    gate = None
    if args.moe:
        model, gate, rep = fit_moe(data, pen, args.lambda2, cfg)
        rho = rep.rho
    elif args.robust:
        model, rho, rep = fit_robust(data, pen, RobustConfig(args.lambda2, cfg))
        io.write_csv(out / "outlier_scores.csv", ["sample", "score"], list(enumerate(outlier_scores(model.zeta))))
        model = model.without_zeta()
    else:
        model, rho, rep = fit(data, pen, cfg)
    io.save_model(model, out / "model.json", gate)
    _write_report(out, rep)
    io.write_csv(out / "responsibilities.csv", [f"r{r}" for r in range(rho.shape[1])], rho.tolist())


def cmd_tune(args):
    train, valid = _load(args.train, args), _load(args.valid, args)
    grid = Grid(lambdas=_floats(args.lambdas) if args.lambdas else DEFAULT_LAMBDAS,
                ks=_ints(args.ks) if args.ks else DEFAULT_KS,
                kinds=args.penalty.split(","), moe=args.moe,
                lambda2s=_floats(args.lambda2s) if args.lambda2s else (args.lambda2,), gamma=args.gamma)
    res = tune(train, valid, grid, FitConfig(t_out=args.t_out, t_in=args.t_in), seed=args.seed, jobs=args.jobs)
    out = _out(args)
    io.save_model(res.model, out / "model.json", res.gate)
    io.write_json({"best": res.cell, "grid": res.table}, out / "tune.json")
    _write_report(out, res.report)
    if args.test:
        test = _load(args.test, args)
        io.write_json(impute_benchmark(res.model, test, args.hide, args.seed, res.gate), out / "metrics.json")


def _gate_log_prior(alpha, X):
    if alpha is None:
        return None
    return np.log(np.clip(gating_probs(alpha, X), 1e-300, None))


def cmd_impute(args):
    data = _load(args.data, args)
    model, alpha = io.load_model(args.model)
    filled = impute(model, data, log_prior=_gate_log_prior(alpha, data.X))
    out = _out(args)
    io.write_csv(out / "imputed.csv", [f"y{j}" for j in range(data.m)], filled.tolist())


def cmd_predict(args):
    data = _load(args.data, args)
    model, alpha = io.load_model(args.model)
    if alpha is None:
        # plain mixture: weight the component means by the mixture proportions
        pred = np.einsum("ijr,r->ij", component_means(model, data.X), model.pi)
    else:
        pred = predict_moe(model, alpha, data.X)
    out = _out(args)
    io.write_csv(out / "predictions.csv", [f"y{j}" for j in range(data.m)], pred.tolist())
    io.write_json(score_predictions(pred, data, data.observed), out / "metrics.json")


def cmd_score_tasks(args):
    data = _load(args.data, args)
    model, _ = io.load_model(args.model)
    scores = concordant_scores(model, data)
    order = np.argsort(-scores, kind="stable")
    rank = np.empty(data.m, int)
    rank[order] = np.arange(1, data.m + 1)
    cut = two_means_split(scores)
    out = _out(args)
    io.write_csv(out / "task_scores.csv", ["task", "score", "rank", "below_split"],
                 [(j, scores[j], rank[j], int(scores[j] < cut)) for j in range(data.m)])
    io.write_json({"two_means_threshold": cut}, out / "task_scores.json")


def cmd_cluster_tasks(args):
    data = _load(args.train, args)
    valid = _load(args.valid, args) if args.valid else None
    sim = task_similarity(data, args.per_task_k, _pen(args), FitConfig(seed=args.seed, t_out=args.t_out),
                          valid=valid, lambdas=_floats(args.lambdas) if args.lambdas else ())
    emb = kernel_pca(sim, args.dims)
    labels = cluster_tasks(emb, args.groups, seed=args.seed)
    out = _out(args)
    io.write_csv(out / "similarity.csv", [f"t{j}" for j in range(data.m)], sim.matrix.tolist())
    io.write_csv(out / "task_clusters.csv", ["task", "label"] + [f"pc{c + 1}" for c in range(args.dims)],
                 [[j, int(labels[j])] + emb[j].tolist() for j in range(data.m)])


def cmd_detect_outliers(args):
    data = _load(args.train, args)
    rcfg = RobustConfig(args.lambda2, _fitcfg(args), args.p_clean)
    model, kept, rep = two_stage(data, _pen(args), rcfg)
    out = _out(args)
    io.write_csv(out / "kept.csv", ["sample"], [[int(i)] for i in kept])
    io.write_csv(out / "removed.csv", ["sample"], [[int(i)] for i in rep.removed])
    io.save_model(model, out / "model.json")
    _write_report(out, rep)


def cmd_evaluate(args):
    pred = io.read_matrix_csv(args.pred)
    truth = io.load_dataset(args.truth, args.tasks)
    mask = truth.observed if args.mask is None else io.read_matrix_csv(args.mask).astype(bool) & truth.observed
    out = _out(args)
    io.write_json(score_predictions(pred, truth, mask), out / "metrics.json")


def cmd_replicate(args):
    opts = json.loads(args.options) if args.options else {}
    res = replicate(args.protocol, R=args.R, keep_fraction=args.keep, seed=args.seed, jobs=args.jobs, **opts)
    out = _out(args)
    io.write_json(res, out / f"{args.protocol}.json")
    for meth, s in res["summary"].items():
        print(meth, {k: round(v["mean"], 4) for k, v in s["metrics"].items()})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hermit", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=True):
        sp.add_argument("--tasks", help="JSON sidecar with target families")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", default=".")
        sp.add_argument("--jobs", type=int, default=1)
        sp.add_argument("--t-out", dest="t_out", type=int, default=50)
        sp.add_argument("--t-in", dest="t_in", type=int, default=200)

    def model_flags(sp):
        sp.add_argument("--penalty", default="lasso", help="lasso or group (comma list for tune)")
        sp.add_argument("--lambda", dest="lam", type=float, default=1e-2)
        sp.add_argument("--lambda2", type=float, default=1e-2)
        sp.add_argument("--k", type=int, default=2)
        sp.add_argument("--gamma", type=float, default=1.0)

    sp = sub.add_parser("simulate", help="generate synthetic data from a spec JSON")
    sp.add_argument("--spec", required=True)
    sp.add_argument("--sizes", help="comma-separated split sizes, e.g. 1000,1000,1000")
    sp.add_argument("--moe-rows", dest="moe_rows", type=int, default=None)
    sp.add_argument("--out", default=".")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("fit", help="fit a mixture model")
    common(sp)
    model_flags(sp)
    sp.add_argument("--train", required=True)
    sp.add_argument("--moe", action="store_true")
    sp.add_argument("--robust", action="store_true")
    sp.set_defaults(fn=cmd_fit)

    sp = sub.add_parser("tune", help="grid search on validation log-likelihood")
    common(sp)
    model_flags(sp)
    sp.add_argument("--train", required=True)
    sp.add_argument("--valid", required=True)
    sp.add_argument("--test")
    sp.add_argument("--hide", type=float, default=0.5)
    sp.add_argument("--lambdas")
    sp.add_argument("--lambda2s")
    sp.add_argument("--ks")
    sp.add_argument("--moe", action="store_true")
    sp.set_defaults(fn=cmd_tune)

    for name, fn, help_ in (("impute", cmd_impute, "fill missing targets"),
                            ("predict", cmd_predict, "feature-only prediction"),
                            ("score-tasks", cmd_score_tasks, "concordant scores per task")):
        sp = sub.add_parser(name, help=help_)
        common(sp)
        sp.add_argument("--model", required=True)
        sp.add_argument("--data", required=True)
        sp.set_defaults(fn=fn)

    sp = sub.add_parser("cluster-tasks", help="NMI task similarity, kernel PCA and k-means")
    common(sp)
    model_flags(sp)
    sp.add_argument("--train", required=True)
    sp.add_argument("--valid")
    sp.add_argument("--lambdas")
    sp.add_argument("--per-task-k", dest="per_task_k", type=int, default=20)
    sp.add_argument("--groups", type=int, required=True)
    sp.add_argument("--dims", type=int, default=2)
    sp.set_defaults(fn=cmd_cluster_tasks)

    sp = sub.add_parser("detect-outliers", help="robust fit, remove top-scoring samples, refit")
    common(sp)
    model_flags(sp)
    sp.add_argument("--train", required=True)
    sp.add_argument("--p-clean", dest="p_clean", type=float, required=True)
    sp.set_defaults(fn=cmd_detect_outliers)

    sp = sub.add_parser("evaluate", help="score predictions against truth")
    common(sp)
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--mask", help="CSV of 0/1 marking the entries to score")
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("replicate", help="run a replication protocol")
    common(sp)
    sp.add_argument("--protocol", required=True, choices=sorted(PROTOCOLS))
    sp.add_argument("--R", type=int, default=20)
    sp.add_argument("--keep", type=float, default=0.2)
    sp.add_argument("--options", help="JSON object of protocol options")
    sp.set_defaults(fn=cmd_replicate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.fn(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
