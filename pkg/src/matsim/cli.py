"""Command-line entry point.

One subcommand per pipeline stage; every command reads/writes only the
documented file formats and exits 0 on success, 1 on validation errors,
2 on runtime errors.  Report-style commands render a matplotlib figure
next to their delimited output.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis, data, metrics, report
from .data import DataError
from .encoder import (EncoderModel, LossConfig, TrainConfig, TrainError,
                      load_checkpoint, save_checkpoint, train)
from .gamut import GamutError, gamut_solve, load_problem
from .sampling import SamplingError, append_convergence_log, select_next_pairs
from .tste import TsteConfig, TsteError, tste_distance_matrix, tste_fit


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="matsim",
        description="Perceptual material-appearance similarity toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("--seed", type=int, default=0, help="random seed")
        p.add_argument("--out", type=Path, default=Path("."),
                       help="output directory")
        return p

    p = add("gen-synth", "generate a synthetic planted-metric dataset")
    p.add_argument("--materials", type=int, default=20, help="number of materials")
    p.add_argument("--views", type=int, default=4, help="views per material")
    p.add_argument("--latent-dim", type=int, default=2, help="latent dimensionality")
    p.add_argument("--descriptor-dim", type=int, default=8,
                   help="descriptor dimensionality")
    p.add_argument("--noise-sigma", type=float, default=0.0,
                   help="per-view Gaussian noise sigma")
    p.add_argument("--answers", type=int, default=0,
                   help="number of simulated triplet answers to also emit")
    p.add_argument("--votes-per-triplet", type=int, default=1,
                   help="votes per simulated triplet")
    p.add_argument("--decision-noise", type=float, default=0.0,
                   help="0 = deterministic argmin annotator")

    p = add("split", "split a dataset into train/held-out bundles by shape")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--holdout", default="", help="comma-separated shape tags")

    p = add("train", "train the feature encoder from answers")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--answers", type=Path, required=True, help="answers JSONL file")
    p.add_argument("--epochs", type=int, default=80, help="training epochs")
    p.add_argument("--lr", type=float, default=1e-3, help="initial learning rate")
    p.add_argument("--lr-step", type=int, default=20,
                   help="epochs between learning-rate drops")
    p.add_argument("--lr-decay", type=float, default=10.0,
                   help="learning-rate division factor")
    p.add_argument("--margin", type=float, default=0.3, help="triplet margin mu")
    p.add_argument("--batch-materials", type=int, default=8,
                   help="materials per batch (P)")
    p.add_argument("--views-per-material", type=int, default=4,
                   help="views per batch material (K)")
    p.add_argument("--hidden", default="64", help="comma-separated hidden layer dims")
    p.add_argument("--feature-dim", type=int, default=128,
                   help="output feature dimensionality")
    p.add_argument("--weight-tl", type=float, default=1.0, help="triplet loss weight")
    p.add_argument("--weight-p", type=float, default=1.0,
                   help="similarity term weight")
    p.add_argument("--weight-ce", type=float, default=0.0,
                   help="cross-entropy term weight")
    p.add_argument("--weight-btl", type=float, default=0.0,
                   help="batch-mining triplet loss weight")
    p.add_argument("--parallel", action="store_true",
                   help="evaluate per-triplet losses on a thread pool")

    p = add("eval", "evaluate a checkpoint against answers")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--answers", type=Path, required=True, help="answers JSONL file")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="model checkpoint (omit for the oracle predictor)")

    p = add("embed", "dump per-view feature vectors")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")

    p = add("tste", "fit a stochastic triplet embedding from answers")
    p.add_argument("--answers", type=Path, required=True, help="answers JSONL file")
    p.add_argument("--alpha", type=float, default=5.0,
                   help="Student-t degrees of freedom")
    p.add_argument("--dim", type=int, default=2, help="embedding dimensionality")
    p.add_argument("--lr", type=float, default=0.1, help="initial step size")
    p.add_argument("--max-iters", type=int, default=1000, help="ascent iterations")

    p = add("sample-next", "select the next triplet queries by information gain")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--answers", type=Path, default=None,
                   help="answers JSONL file (omit for a bootstrap iteration)")
    p.add_argument("--pairs-per-reference", type=int, default=10,
                   help="pairs selected per reference material")
    p.add_argument("--candidate-pool", type=int, default=200,
                   help="random unasked pairs scored per reference")
    p.add_argument("--exhaustive", action="store_true",
                   help="score every unasked pair instead of a random pool")
    p.add_argument("--iteration", type=int, default=0, help="plan iteration index")

    p = add("suggest", "suggest materials from a distance band")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.add_argument("--reference", required=True, help="reference material id")
    p.add_argument("--band", default="near", help="near | mid | far | lo:hi")
    p.add_argument("--count", type=int, default=3, help="suggestions to return")

    p = add("project", "2D principal-components projection of materials")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")

    p = add("cluster", "k-means clustering of material features")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.add_argument("--k", type=int, required=True, help="number of clusters")
    p.add_argument("--restarts", type=int, default=10, help="k-means++ restarts")

    p = add("elbow", "smallest k explaining the variance threshold")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.add_argument("--threshold", type=float, default=0.95,
                   help="explained-variance threshold")
    p.add_argument("--k-max", type=int, default=0,
                   help="largest k to try (0 = number of materials)")

    p = add("hopkins", "clustering-tendency statistic of the feature space")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.add_argument("--sample-fraction", type=float, default=0.1,
                   help="fraction of materials sampled per repetition")
    p.add_argument("--repetitions", type=int, default=100,
                   help="repetitions to average")

    p = add("summarize", "representative material per cluster")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--checkpoint", type=Path, required=True, help="model checkpoint")
    p.add_argument("--k", type=int, default=0, help="clusters (0 = elbow selection)")

    p = add("gamut", "solve a gamut-mapping problem over basis descriptors")
    p.add_argument("--problem", type=Path, required=True, help="problem JSON file")
    p.add_argument("--checkpoint", type=Path, default=None,
                   help="model checkpoint (omit for the identity encoder)")
    p.add_argument("--data-dir", type=Path, default=None,
                   help="dataset directory for view references")
    p.add_argument("--max-iters", type=int, default=500, help="descent iterations")
    p.add_argument("--step", type=float, default=0.05, help="initial step size")
    p.add_argument("--tol", type=float, default=1e-8, help="convergence tolerance")
    p.add_argument("--no-simplex", action="store_true",
                   help="box constraints [0,1] without the sum-to-one constraint")

    p = add("serve", "run the annotation HTTP service")
    p.add_argument("--data-dir", type=Path, required=True, help="dataset directory")
    p.add_argument("--answers", type=Path, default=None,
                   help="answers JSONL file to preload")
    p.add_argument("--host", default="127.0.0.1", help="listen address")
    p.add_argument("--port", type=int, default=8000, help="listen port")
    p.add_argument("--hit-size", type=int, default=110, help="trials per HIT")
    p.add_argument("--n-training", type=int, default=5,
                   help="training trials per HIT")
    p.add_argument("--n-control", type=int, default=10,
                   help="control repeats per HIT")
    p.add_argument("--asymmetric", action="store_true",
                   help="randomize (shape, illumination) per triplet item")
    p.add_argument("--static-dir", type=Path, default=None,
                   help="directory of UI static files to serve at /")
    return parser


def _load_bundle(args) -> data.DatasetBundle:
    return data.load_dataset(Path(args.data_dir) / "manifest.json")


def _load_model(path: Path) -> EncoderModel:
    model, _ = load_checkpoint(path)
    return model


def _index_for(args) -> analysis.FeatureIndex:
    bundle = _load_bundle(args)
    model = _load_model(args.checkpoint)
    return analysis.FeatureIndex.from_model(model, bundle)


def cmd_gen_synth(args) -> None:
    bundle, truth = data.generate_synthetic(
        args.materials, args.views, args.latent_dim, args.descriptor_dim,
        args.noise_sigma, args.seed)
    out = Path(args.out)
    data.save_dataset(bundle, out)
    with open(out / "truth.json", "w") as fh:
        json.dump({
            "material_ids": list(truth.material_ids),
            "latents": truth.latents.tolist(),
            "true_distances": truth.true_distances.tolist(),
        }, fh)
        fh.write("\n")
    if args.answers > 0:
        rng = np.random.default_rng(args.seed + 1)
        ids = list(truth.material_ids)
        triplets = []
        seen = set()
        while len(triplets) < args.answers:
            r, a, b = rng.choice(len(ids), size=3, replace=False)
            key = (r, frozenset((a, b)))
            if key in seen:
                continue
            seen.add(key)
            triplets.append((ids[r], ids[a], ids[b]))
            if len(seen) >= len(ids) * (len(ids) - 1) * (len(ids) - 2) // 2:
                break
        store = data.simulate_answers(truth, triplets, args.votes_per_triplet,
                                      args.decision_noise, args.seed + 2)
        data.save_answers(out / "answers.jsonl", store)
    print(f"wrote dataset with {args.materials} materials to {out}")


def cmd_split(args) -> None:
    bundle = _load_bundle(args)
    holdout = [s for s in args.holdout.split(",") if s]
    train_b, held_b = data.split_views(bundle, holdout)
    out = Path(args.out)
    data.save_dataset(train_b, out / "train")
    data.save_dataset(held_b, out / "held")
    print(f"train: {len(train_b.views)} views; held: {len(held_b.views)} views")


def cmd_train(args) -> None:
    bundle = _load_bundle(args)
    answers = data.load_answers(args.answers)
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    loss_cfg = LossConfig(margin_mu=args.margin, weight_tl=args.weight_tl,
                          weight_p=args.weight_p, weight_ce=args.weight_ce,
                          weight_btl=args.weight_btl)
    cfg = TrainConfig(learning_rate_initial=args.lr, epochs=args.epochs,
                      lr_step_epochs=args.lr_step, lr_decay_factor=args.lr_decay,
                      batch_materials=args.batch_materials,
                      views_per_batch_material=args.views_per_material,
                      hidden_dims=hidden, feature_dim=args.feature_dim,
                      seed=args.seed, loss=loss_cfg, parallel=args.parallel)
    model, trace = train(bundle, answers, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "model.ckpt", model, args.epochs, loss_cfg)
    with open(out / "loss_trace.csv", "w") as fh:
        fh.write("epoch,loss\n")
        for i, v in enumerate(trace):
            fh.write(f"{i},{v!r}\n")
    if trace:
        report.plot_loss_trace(trace, out / "loss_trace.png")
    print(f"trained {args.epochs} epochs; checkpoint at {out / 'model.ckpt'}")


def cmd_eval(args) -> None:
    bundle = _load_bundle(args)
    answers = data.load_answers(args.answers)
    ids = bundle.material_ids
    if args.checkpoint is not None:
        model = _load_model(args.checkpoint)
        dist = metrics.distance_matrix_from_model(model, bundle)
        predict = metrics.distance_predictor(dist, ids)
        prob = metrics.distance_probability(dist, ids)
    else:
        predict = metrics.oracle_predictor(answers)

        def prob(r, a, b):
            return 1.0 - 1e-12 if predict(r, a, b) == a else 1e-12
    rep = metrics.evaluate(answers, predict, prob, bundle)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rep.save(out / "report.json")
    print(json.dumps(rep.to_dict(), indent=2, sort_keys=True))


def cmd_embed(args) -> None:
    bundle = _load_bundle(args)
    model = _load_model(args.checkpoint)
    feats = model.forward(bundle.descriptors)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "features.csv"
    with open(path, "w") as fh:
        fh.write("view_id," + ",".join(f"f{i}" for i in range(feats.shape[1])) + "\n")
        for v in sorted(bundle.views, key=lambda v: v.descriptor_row):
            row = feats[v.descriptor_row]
            fh.write(v.view_id + "," + ",".join(repr(float(x)) for x in row) + "\n")
    print(f"wrote {feats.shape[0]} feature rows to {path}")


def cmd_tste(args) -> None:
    answers = data.load_answers(args.answers)
    cfg = TsteConfig(alpha=args.alpha, dim=args.dim, learning_rate=args.lr,
                     max_iters=args.max_iters, seed=args.seed)
    emb = tste_fit(answers, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    emb.save(out / "embedding.csv")
    if args.dim == 2:
        report.plot_projection(emb.material_ids, emb.points, out / "embedding.png")
    print(f"satisfied fraction {emb.satisfied_fraction:.4f}, "
          f"log-likelihood {emb.log_likelihood:.3f}")


def cmd_sample_next(args) -> None:
    bundle = _load_bundle(args)
    if args.answers is None:
        answers = data.AnswerStore()
    else:
        answers = data.load_answers(args.answers)
    plan = select_next_pairs(
        answers, bundle.material_ids,
        pairs_per_reference=args.pairs_per_reference,
        candidate_pool=args.candidate_pool,
        rng=np.random.default_rng(args.seed),
        bootstrap=len(answers) == 0,
        iteration=args.iteration,
        exhaustive=args.exhaustive)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    plan.save(out / f"plan_{plan.iteration:03d}.json")
    append_convergence_log(out / "convergence.csv", plan.iteration,
                           plan.mean_information_gain)
    rows = [line.split(",") for line in
            (out / "convergence.csv").read_text().splitlines()[1:]]
    report.plot_convergence([int(r[0]) for r in rows],
                            [float(r[1]) for r in rows],
                            out / "convergence.png")
    print(f"iteration {plan.iteration}: {len(plan.pairs)} pairs, "
          f"mean IG {plan.mean_information_gain:.6g} bits")


def cmd_suggest(args) -> None:
    index = _index_for(args)
    band = args.band
    if ":" in band:
        lo, hi = band.split(":", 1)
        band = (float(lo), float(hi))
    picks = analysis.suggest(index, args.reference, band, args.count, args.seed)
    print("\n".join(picks))


def cmd_project(args) -> None:
    index = _index_for(args)
    coords = analysis.project_2d(index)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.save_projection(out / "projection.csv", index, coords)
    report.plot_projection(index.material_ids, coords, out / "projection.png")
    print(f"wrote projection for {len(index.material_ids)} materials to {out}")


def cmd_cluster(args) -> None:
    index = _index_for(args)
    result = analysis.kmeans(index, args.k, restarts=args.restarts, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.save_clusters(out / "clusters.csv", index, result)
    coords = analysis.project_2d(index)
    report.plot_projection(index.material_ids, coords, out / "clusters.png",
                           clusters=result.assignments)
    print(f"k={result.k}, explained variance {result.explained_variance:.4f}")


def cmd_elbow(args) -> None:
    index = _index_for(args)
    k, results, reached = analysis.elbow_k(
        index, args.threshold, args.k_max or None, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "elbow.json", "w") as fh:
        json.dump({"k": k, "threshold": args.threshold, "reached": reached,
                   "explained_variance": [r.explained_variance for r in results]},
                  fh, indent=2)
        fh.write("\n")
    report.plot_elbow(results, args.threshold, out / "elbow.png")
    note = "" if reached else " (threshold not reached)"
    print(f"elbow k = {k}{note}")


def cmd_hopkins(args) -> None:
    index = _index_for(args)
    value = analysis.hopkins(index, args.sample_fraction, args.repetitions,
                             args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    analysis.save_hopkins(out / "hopkins.json", value, args.sample_fraction,
                          args.repetitions, args.seed)
    print(f"hopkins = {value:.4f}")


def cmd_summarize(args) -> None:
    index = _index_for(args)
    k = args.k
    if k <= 0:
        k, _, _ = analysis.elbow_k(index, seed=args.seed)
    picks = analysis.summarize(index, k, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "summary.csv", "w") as fh:
        fh.write("material_id\n")
        for mid in picks:
            fh.write(mid + "\n")
    print("\n".join(picks))


def cmd_gamut(args) -> None:
    bundle = _load_bundle(args) if args.data_dir else None
    problem = load_problem(args.problem, bundle)
    if args.checkpoint is not None:
        model = _load_model(args.checkpoint)
    else:
        from .encoder import identity_model
        model = identity_model(problem.basis_descriptors.shape[1])
    solution = gamut_solve(problem, model, max_iters=args.max_iters,
                           step=args.step, tol=args.tol, seed=args.seed,
                           simplex=not args.no_simplex)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    solution.save(out / "gamut_solution.json")
    report.plot_gamut_trace(solution.trace, out / "gamut_trace.png")
    print(f"objective {solution.objective:.3e} after {solution.iterations} iterations")


def cmd_serve(args) -> None:
    import uvicorn

    from .service import bootstrap_state, create_app
    bundle = _load_bundle(args)
    store = data.load_answers(args.answers) if args.answers else data.AnswerStore()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    state = bootstrap_state(bundle, store, seed=args.seed,
                            hit_size=args.hit_size, n_training=args.n_training,
                            n_control=args.n_control,
                            asymmetric=args.asymmetric, persist_dir=out)
    app = create_app(state, static_dir=args.static_dir)
    uvicorn.run(app, host=args.host, port=args.port)


COMMANDS = {
    "gen-synth": cmd_gen_synth,
    "split": cmd_split,
    "train": cmd_train,
    "eval": cmd_eval,
    "embed": cmd_embed,
    "tste": cmd_tste,
    "sample-next": cmd_sample_next,
    "suggest": cmd_suggest,
    "project": cmd_project,
    "cluster": cmd_cluster,
    "elbow": cmd_elbow,
    "hopkins": cmd_hopkins,
    "summarize": cmd_summarize,
    "gamut": cmd_gamut,
    "serve": cmd_serve,
}

_VALIDATION_ERRORS = (DataError, GamutError, SamplingError, TsteError,
                      ValueError, FileNotFoundError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        COMMANDS[args.command](args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainError, RuntimeError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
