"""Command-line surface: train / fit-gmm / score / eval / synth /
oracle-check / sweep-sigma.

Every artifact is written atomically; failures leave nothing behind and
exit with a category-specific code and a single machine-parseable stderr
line. ``--threads`` caps the BLAS pools for the whole process.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys

from .errors import FormatError, MuldeError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mulde", description="Multiscale log-density anomaly detection")
    sub = parser.add_subparsers(dest="verb", required=True)

    def add(verb, help_text):
        p = sub.add_parser(verb, help=help_text)
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS threads for this process")
        return p

    p = add("train", "fit the energy network on normal features")
    p.add_argument("--features", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True, help="model JSON path; loss CSV lands beside it")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = add("fit-gmm", "fit the multiscale mixture on training features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=5, help="number of mixture components")
    p.add_argument("--seed", type=int, default=0)

    p = add("score", "score features and write per-frame CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--gmm", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--smooth-sigma", type=float, default=5.0,
                   help="temporal Gaussian kernel std in frames (0 disables)")
    p.add_argument("--mode", choices=("gmm", "max", "avg", "median"), default="gmm",
                   help="aggregation across noise scales")

    p = add("eval", "compute micro/macro AUC from a scores CSV")
    p.add_argument("scores", help="per-frame scores CSV produced by `mulde score`")
    p.add_argument("--index", required=True, help="index CSV carrying frame labels")
    p.add_argument("--out", required=True)

    p = add("synth", "sample a synthetic Gaussian-mixture feature set")
    p.add_argument("--spec", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--index", default=None, help="index CSV output (default: <out>.index.csv)")
    p.add_argument("--seed", type=int, default=0)

    p = add("oracle-check", "compare learned energies against the mixture oracle")
    p.add_argument("--spec", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=2000, help="probe count")
    p.add_argument("--seed", type=int, default=0)

    p = add("sweep-sigma", "micro AUC at each single noise scale")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--out", required=True)
    return parser


def _float_repr(x) -> str:
    return repr(float(x))


def _load_model(path):
    from .energy_net import EnergyNet, load_net_document
    from .pipeline import Standardizer
    from .trainer import TrainConfig

    doc = load_net_document(path)
    net = EnergyNet.from_json_dict(doc)
    if "standardizer" not in doc or "config" not in doc:
        raise FormatError(f"model {path} lacks embedded standardizer/config")
    standardizer = Standardizer.from_json_dict(doc["standardizer"])
    config = TrainConfig.from_json_dict(doc["config"])
    return net, standardizer, config


def _cmd_train(args) -> int:
    from .datasets import read_features
    from .energy_net import EnergyNet
    from .errors import NumericError
    from .ioutil import write_text_atomic
    from .pipeline import Standardizer
    from .trainer import TrainConfig, train

    config = TrainConfig.load(args.config)
    if args.seed is not None:
        config = config.with_seed(args.seed)
    fs = read_features(args.features, args.index)
    standardizer = Standardizer().fit(fs.X)
    Z = standardizer.transform(fs.X)
    net0 = EnergyNet.initialize(
        feature_dim=fs.dim, hidden_widths=config.hidden_widths,
        sigma_low=config.sigma_low, sigma_high=config.sigma_high, seed=config.seed)

    def write_loss_csv(history):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["epoch", "mean_loss"])
        for epoch, loss in enumerate(history, start=1):
            writer.writerow([epoch, _float_repr(loss)])
        write_text_atomic(os.path.splitext(args.out)[0] + ".loss.csv", out.getvalue())

    extra = {"config": config.to_json_dict(), "standardizer": standardizer.to_json_dict()}
    try:
        net, history = train(Z, net0, config)
    except NumericError as exc:
        if exc.last_net is not None:
            checkpoint = os.path.splitext(args.out)[0] + ".lastgood.json"
            exc.last_net.save(checkpoint, extra=extra)
            write_loss_csv(exc.history or [])
            raise NumericError(f"{exc}; last good checkpoint written to {checkpoint}",
                               layer=exc.layer) from exc
        raise
    net.save(args.out, extra=extra)
    write_loss_csv(history)
    return 0


def _cmd_fit_gmm(args) -> int:
    from .datasets import read_features
    from .gmm import NoiseSchedule, build_multiscale_vectors, fit_em
    from .pipeline import multiscale_stats

    net, standardizer, config = _load_model(args.model)
    fs = read_features(args.features, args.index)
    Z = standardizer.transform(fs.X)
    schedule = NoiseSchedule.for_net(net, config.n_scales)
    vectors = build_multiscale_vectors(net, Z, schedule)
    gmm, trace = fit_em(vectors, args.k, seed=args.seed)
    mean, std = multiscale_stats(vectors)
    gmm.save(args.out, extra={
        "fit": {"k": int(args.k), "seed": int(args.seed), "n_vectors": int(vectors.shape[0]),
                "em_iterations": len(trace)},
        "scale_stats": {"mean": mean.tolist(), "std": std.tolist()},
        "scales": schedule.scales.tolist(),
    })
    return 0


def _infer_frame_counts(fs):
    counts: dict[str, int] = {}
    for video_id, frame in zip(fs.video_ids, fs.frame_indices):
        counts[video_id] = max(counts.get(video_id, 0), int(frame) + 1)
    return counts


def _cmd_score(args) -> int:
    from .datasets import read_features
    from .gmm import NoiseSchedule, build_multiscale_vectors, load_gmm_document, GaussianMixtureModel
    from .ioutil import write_text_atomic
    from .pipeline import pool_multiscale, pool_objects_to_frames, smooth_series

    net, standardizer, config = _load_model(args.model)
    doc = load_gmm_document(args.gmm)
    gmm = GaussianMixtureModel.from_json_dict(doc)
    fs = read_features(args.features, args.index)
    schedule = NoiseSchedule.for_net(net, config.n_scales)
    if schedule.n_scales != gmm.dim:
        raise UsageError(f"model schedule has {schedule.n_scales} scales, mixture expects {gmm.dim}")

    Z = standardizer.transform(fs.X)
    vectors = build_multiscale_vectors(net, Z, schedule)
    if args.mode == "gmm":
        row_scores = gmm.nll_batch(vectors)
    else:
        stats_doc = doc.get("scale_stats")
        if not stats_doc:
            raise UsageError(f"{args.gmm} carries no scale_stats; refit with `mulde fit-gmm`")
        stats = (stats_doc["mean"], stats_doc["std"])
        row_scores = pool_multiscale(vectors, stats, args.mode)

    counts = _infer_frame_counts(fs)
    series = pool_objects_to_frames(row_scores, list(zip(fs.video_ids, fs.frame_indices)), counts)
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["video_id", "frame_index", "score_raw", "score_smoothed"])
    for video_id in sorted(series):
        raw = series[video_id]
        smoothed = smooth_series(raw, args.smooth_sigma)
        for frame in range(raw.scores.shape[0]):
            writer.writerow([video_id, frame,
                             _float_repr(raw.scores[frame]),
                             _float_repr(smoothed.scores[frame])])
    write_text_atomic(args.out, out.getvalue())
    return 0


def _read_scores_csv(path):
    per_video: dict[str, dict[int, float]] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["video_id", "frame_index", "score_raw", "score_smoothed"]:
            raise FormatError(f"unexpected scores header {header!r} in {path}")
        for pos, rec in enumerate(reader):
            if len(rec) != 4:
                raise FormatError(f"scores row {pos} has {len(rec)} fields")
            try:
                per_video.setdefault(rec[0], {})[int(rec[1])] = float(rec[3])
            except ValueError as exc:
                raise FormatError(f"scores row {pos}: {exc}") from exc
    return per_video


def _cmd_eval(args) -> int:
    import numpy as np

    from .datasets import read_index
    from .evaluation import LabeledSeries, evaluate
    from .ioutil import write_json_atomic

    per_video = _read_scores_csv(args.scores)

    # frame labels: any anomalous row marks its frame; uncovered frames are normal
    video_ids, frames_col, _, labels = read_index(args.index)
    if not any(l is not None for l in labels):
        raise UsageError(f"{args.index} carries no labels; nothing to evaluate")
    frame_labels: dict[str, dict[int, int]] = {}
    for video_id, frame, label in zip(video_ids, frames_col, labels):
        frames = frame_labels.setdefault(video_id, {})
        frames[int(frame)] = max(frames.get(int(frame), 0), int(label or 0))

    videos = []
    for video_id in sorted(per_video):
        frames = per_video[video_id]
        n = max(frames) + 1
        scores = np.empty(n)
        lab = np.zeros(n, dtype=np.int64)
        for frame in range(n):
            if frame not in frames:
                raise FormatError(f"scores for video {video_id!r} skip frame {frame}")
            scores[frame] = frames[frame]
            lab[frame] = frame_labels.get(video_id, {}).get(frame, 0)
        videos.append(LabeledSeries(video_id, scores, lab))

    report = evaluate(videos)
    doc = report.to_json_dict()
    doc["options"] = {"scores": str(args.scores), "index": str(args.index)}
    write_json_atomic(args.out, doc)
    return 0


def _cmd_synth(args) -> int:
    from .datasets import MixtureSpec, synth_mixture, write_features

    spec = MixtureSpec.load(args.spec)
    if args.n < 0:
        raise UsageError("--n must be nonnegative")
    fs = synth_mixture(spec, args.n, seed=args.seed)
    index_path = args.index if args.index else os.path.splitext(args.out)[0] + ".index.csv"
    write_features(fs, args.out, index_path)
    return 0


def _cmd_oracle_check(args) -> int:
    import numpy as np
    from scipy.stats import pearsonr, spearmanr

    from .datasets import MixtureSpec, oracle_neg_log_density, synth_mixture
    from .gmm import NoiseSchedule, build_multiscale_vectors
    from .ioutil import write_json_atomic

    if args.n < 2:
        raise UsageError("--n must be at least 2")
    spec = MixtureSpec.load(args.spec)
    net, standardizer, config = _load_model(args.model)
    if spec.dim != net.feature_dim:
        raise UsageError(f"spec dimension {spec.dim} does not match model ({net.feature_dim})")

    half = args.n // 2
    probes = synth_mixture(spec, args.n - half, seed=args.seed).X
    # spread the remaining probes uniformly over an inflated bounding box
    from .rng import Rng
    rng = Rng(args.seed + 1)
    span = np.sqrt(np.max([np.diag(c) for c in spec.covariances], axis=0))
    lo = spec.means.min(axis=0) - 4.0 * span
    hi = spec.means.max(axis=0) + 4.0 * span
    box_probes = lo + rng.uniform((half, spec.dim)) * (hi - lo)
    probes = np.vstack([probes, box_probes])

    Z = standardizer.transform(probes)
    std_spec = spec.standardized(standardizer.mean, standardizer.std)
    schedule = NoiseSchedule.for_net(net, config.n_scales)
    energies = build_multiscale_vectors(net, Z, schedule)
    per_sigma = []
    for j, sigma in enumerate(schedule.scales):
        target = oracle_neg_log_density(std_spec, float(sigma), Z)
        rho = float(spearmanr(energies[:, j], target).statistic)
        r = float(pearsonr(energies[:, j], target).statistic)
        per_sigma.append({"sigma": float(sigma), "spearman": rho, "pearson": r})
    doc = {
        "n_probes": int(args.n),
        "seed": int(args.seed),
        "per_sigma": per_sigma,
        "median_spearman": float(np.median([e["spearman"] for e in per_sigma])),
        "options": {"spec": str(args.spec), "model": str(args.model)},
    }
    write_json_atomic(args.out, doc)
    return 0


def _cmd_sweep_sigma(args) -> int:
    from .datasets import read_features
    from .evaluation import sweep_single_sigma
    from .gmm import NoiseSchedule
    from .ioutil import write_text_atomic

    net, standardizer, config = _load_model(args.model)
    fs = read_features(args.features, args.index)
    if not fs.has_labels():
        raise UsageError(f"{args.index} carries no labels; nothing to sweep")
    schedule = NoiseSchedule.for_net(net, config.n_scales)
    pairs = sweep_single_sigma(net, schedule, standardizer, fs.X, fs.label_array())
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sigma", "micro_auc"])
    for sigma, auc in pairs:
        writer.writerow([_float_repr(sigma), _float_repr(auc)])
    write_text_atomic(args.out, out.getvalue())
    return 0


_HANDLERS = {
    "train": _cmd_train,
    "fit-gmm": _cmd_fit_gmm,
    "score": _cmd_score,
    "eval": _cmd_eval,
    "synth": _cmd_synth,
    "oracle-check": _cmd_oracle_check,
    "sweep-sigma": _cmd_sweep_sigma,
}


def run(argv) -> int:
    """Parse argv (without the program name) and execute one command."""
    try:
        args = _build_parser().parse_args(argv)
        if getattr(args, "threads", None) is not None:
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            from threadpoolctl import ThreadpoolController
            ThreadpoolController().limit(limits=args.threads)
        return _HANDLERS[args.verb](args)
    except MuldeError as exc:
        print(f"{exc.category}: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 6
    except OSError as exc:
        print(f"io-error: {exc}", file=sys.stderr)
        return 6


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
