"""Command-line pipeline: prepare, train, predict, llm tiers, evaluate, bench.

Each subcommand reads and validates all inputs before writing any output, so
usage errors never leave partial artifacts. A json config file can supply
defaults for any flag (flags win) and holds the named endpoint profiles used
by the llm subcommands.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from pathlib import Path

from . import dataset, evaluate as ev, features, kernels, llm, ridge
from .dataset import SCORED_NUTRIENTS
from .util import dump_jsonl

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError(f"{path}: config must be a json object")
    return config


def _setting(flag_value, config: dict, section: str, key: str, default):
    """Flag > config-file value > built-in default."""
    if flag_value is not None:
        return flag_value
    section_values = config.get(section, {})
    if isinstance(section_values, dict) and key in section_values:
        return section_values[key]
    return default


def _endpoint_from_config(config: dict, profile: str) -> llm.EndpointConfig:
    profiles = config.get("endpoints", {})
    if profile not in profiles:
        known = ", ".join(sorted(profiles)) or "none defined"
        raise ValueError(f"endpoint profile {profile!r} not found in config (profiles: {known})")
    return llm.EndpointConfig(**profiles[profile])


def _parse_nutrients(text: str) -> list[str]:
    names = [part.strip() for part in text.split(",") if part.strip()]
    if not names:
        raise ValueError("empty nutrient list")
    for name in names:
        if name not in dataset.NUTRIENT_NAMES:
            raise ValueError(f"unknown nutrient {name!r}; expected one of {dataset.NUTRIENT_NAMES}")
    return names


def _labeled_samples(samples: list[dataset.RecipeSample], path) -> dict[str, dataset.NutrientVector]:
    labels = {}
    for sample in samples:
        if sample.labels is None:
            raise ValueError(f"{path}: sample {sample.id!r} has no labels")
        labels[sample.id] = sample.labels
    return labels


_worker_vectorizer: features.CombinedVectorizer | None = None


def _init_transform_worker(cv: features.CombinedVectorizer) -> None:
    global _worker_vectorizer
    _worker_vectorizer = cv


def _transform_chunk(texts: list[str]) -> list[features.SparseVector]:
    return [features.transform_combined(t, _worker_vectorizer) for t in texts]


def _transform_matrix(texts: list[str], cv: features.CombinedVectorizer,
                      workers: int = 1) -> kernels.CsrMatrix:
    if workers <= 1 or len(texts) < 2 * workers:
        vectors = [features.transform_combined(t, cv) for t in texts]
    else:
        chunk = (len(texts) + workers - 1) // workers
        parts = [texts[i:i + chunk] for i in range(0, len(texts), chunk)]
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_transform_worker,
                                 initargs=(cv,)) as pool:
            vectors = [vec for part in pool.map(_transform_chunk, parts) for vec in part]
    return kernels.stack_rows(vectors, cv.dim)


# --- subcommands -------------------------------------------------------------

def cmd_prepare(args, config: dict) -> int:
    ratio = float(_setting(args.ratio, config, "prepare", "ratio", 0.8))
    seed = int(_setting(args.seed, config, "prepare", "seed", 42))
    fmt = _setting(args.format, config, "prepare", "format", "jsonl")

    raw = dataset.load_raw(args.infile, format=fmt)
    samples = []
    quality_flags = 0
    for row in raw:
        labels = dataset.parse_answer(row.answer) if row.answer else None
        if labels is not None and labels.saturates_exceeds_fat:
            quality_flags += 1
        samples.append(dataset.RecipeSample(
            id=row.id, ingredient_text=dataset.extract_ingredients(row.prompt), labels=labels))

    unique = dataset.deduplicate(samples)
    split = dataset.split(unique, ratio=ratio, seed=seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    dataset.save_samples(out_dir / "train.jsonl", split.train)
    dataset.save_samples(out_dir / "val.jsonl", split.validation)

    print(f"raw records:      {len(raw)}")
    print(f"after dedup:      {len(unique)}")
    print(f"train:            {len(split.train)}")
    print(f"validation:       {len(split.validation)}")
    print(f"ratio/seed:       {ratio}/{seed}")
    if quality_flags:
        print(f"quality flags:    {quality_flags} samples with saturates > fat (kept)")
    return EXIT_OK


def _vectorizer_configs(args, config: dict) -> tuple[features.VectorizerConfig, features.VectorizerConfig]:
    word_features = int(_setting(args.word_features, config, "train", "word_features", 8000))
    char_features = int(_setting(args.char_features, config, "train", "char_features", 12000))
    return (features.word_config(max_features=word_features),
            features.char_config(max_features=char_features))


def cmd_train(args, config: dict) -> int:
    targets = _parse_nutrients(_setting(args.targets, config, "train", "targets",
                                        ",".join(SCORED_NUTRIENTS)))
    tol = float(_setting(args.tol, config, "train", "tol", 1e-8))
    max_iter = int(_setting(args.max_iter, config, "train", "max_iter", 1000))
    workers = int(_setting(args.workers, config, "train", "workers", 1))

    train_samples = dataset.load_samples(args.train)
    train_labels = _labeled_samples(train_samples, args.train)
    texts = [s.ingredient_text for s in train_samples]

    word_cfg, char_cfg = _vectorizer_configs(args, config)
    print(f"fitting vectorizers on {len(texts)} documents "
          f"(word {word_cfg.max_features}, char {char_cfg.max_features}) ...")
    cv = features.fit_combined(texts, word_cfg, char_cfg)
    print(f"combined dim: {cv.dim} (word {len(cv.word)} + char {len(cv.char)})")
    matrix = _transform_matrix(texts, cv, workers)
    labels = [train_labels[s.id] for s in train_samples]

    if args.alpha_grid:
        if not args.val:
            raise ValueError("--alpha-grid requires --val for scoring")
        missing = [n for n in SCORED_NUTRIENTS if n not in targets]
        if missing:
            raise ValueError(f"--alpha-grid scoring needs the scored nutrients in --targets "
                             f"(missing: {', '.join(missing)})")
        alphas = [float(a) for a in args.alpha_grid.split(",") if a.strip()]
        val_samples = dataset.load_samples(args.val)
        val_labels = _labeled_samples(val_samples, args.val)
        val_matrix = _transform_matrix([s.ingredient_text for s in val_samples], cv, workers)
        rules = ev.load_rules(args.rules)
        scored = list(SCORED_NUTRIENTS)

        best = None
        for alpha in alphas:
            cfg = ridge.RidgeConfig(alpha=alpha, solver_tol=tol, max_iterations=max_iter)
            model = ridge.train(matrix, labels, targets, cfg)
            batch = ridge.predict_batch(model, val_matrix)
            preds = {
                s.id: ridge.NutrientPrediction(
                    **{n: batch[i][model.target_index(n)] for n in SCORED_NUTRIENTS})
                for i, s in enumerate(val_samples)
            }
            report = ev.evaluate(preds, val_labels, rules, nutrients=scored)
            mean_acc = sum(sc.accuracy_percent for sc in report.per_nutrient.values()) / len(scored)
            print(f"alpha={alpha:g}: mean accuracy {mean_acc:.2f} "
                  f"({', '.join(f'{n} {sc.accuracy_percent:.2f}' for n, sc in report.per_nutrient.items())})")
            if best is None or mean_acc > best[0]:
                best = (mean_acc, alpha, model)
        _, alpha, model = best
        print(f"selected alpha={alpha:g}")
    else:
        alpha = float(_setting(args.alpha, config, "train", "alpha", 1.0))
        cfg = ridge.RidgeConfig(alpha=alpha, solver_tol=tol, max_iterations=max_iter)
        model = ridge.train(matrix, labels, targets, cfg)

    for warning in model.warnings:
        print(f"warning: {warning}", file=sys.stderr)

    model.vectorizer_fingerprint = cv.fingerprint()
    vocab_path = args.vectorizer_out or f"{args.out}.vocab.json"
    cv.save(vocab_path)
    ridge.save_model(model, args.out)
    print(f"model written to {args.out} (vectorizer: {vocab_path})")
    return EXIT_OK


def _load_model_and_vectorizer(model_path: str, vectorizer_path: str | None):
    model = ridge.load_model(model_path)
    vocab_path = vectorizer_path or f"{model_path}.vocab.json"
    cv = features.CombinedVectorizer.load(vocab_path)
    if model.vectorizer_fingerprint and model.vectorizer_fingerprint != cv.fingerprint():
        raise ValueError(
            f"vectorizer fingerprint mismatch: model expects {model.vectorizer_fingerprint}, "
            f"{vocab_path} has {cv.fingerprint()}")
    return model, cv


def cmd_predict(args, config: dict) -> int:
    model, cv = _load_model_and_vectorizer(args.model, args.vectorizer)
    samples = dataset.load_samples(args.infile)
    workers = int(_setting(args.workers, config, "predict", "workers", 1))
    matrix = _transform_matrix([s.ingredient_text for s in samples], cv, workers)
    batch = ridge.predict_batch(model, matrix)
    rows = []
    for i, sample in enumerate(samples):
        row = {"id": sample.id}
        row.update({target: float(batch[i][t]) for t, target in enumerate(model.targets)})
        rows.append(row)
    dump_jsonl(args.out, rows)
    print(f"wrote {len(rows)} predictions to {args.out}")
    return EXIT_OK


def cmd_llm_predict(args, config: dict) -> int:
    ep = _endpoint_from_config(config, args.endpoint)
    samples = dataset.load_samples(args.infile)
    bank = llm.FewShotBank.from_file(args.shots) if args.shots else llm.FewShotBank.default()
    cache = llm.TranscriptCache(args.cache) if args.cache else None

    items = [(s.id, llm.render_direct_prompt(s.ingredient_text, bank)) for s in samples]
    responses = llm.complete_many(items, ep, cache=cache)

    preds: dict[str, ridge.NutrientPrediction] = {}
    failed: list[str] = []
    for sample in samples:
        response = responses.get(sample.id)
        if response is None:
            failed.append(sample.id)
            continue
        try:
            preds[sample.id] = llm.parse_llm_nutrients(response)
        except llm.ParseError as exc:
            print(f"sample {sample.id}: {exc}", file=sys.stderr)
            failed.append(sample.id)
    ev.save_predictions(args.out, preds)
    print(f"wrote {len(preds)} predictions to {args.out} "
          f"({len(failed)} failed{': ' + ', '.join(failed[:5]) if failed else ''})")
    return EXIT_OK


def cmd_refine(args, config: dict) -> int:
    ep = _endpoint_from_config(config, args.endpoint)
    preds = ev.load_predictions(args.pred)
    samples = {s.id: s for s in dataset.load_samples(args.infile)}
    missing = set(preds) - set(samples)
    if missing:
        some = ", ".join(sorted(missing)[:5])
        raise ValueError(f"{len(missing)} prediction ids have no sample text (e.g. {some})")

    ordered = list(preds.items())

    def run_one(item):
        sample_id, pred = item
        return sample_id, llm.refine(samples[sample_id].ingredient_text, pred, ep)

    refined: dict[str, ridge.NutrientPrediction] = {}
    with ThreadPoolExecutor(max_workers=ep.max_concurrency) as pool:
        for sample_id, pred in pool.map(run_one, ordered):
            refined[sample_id] = pred

    changed = sum(1 for sample_id in refined if refined[sample_id] != preds[sample_id])
    ev.save_predictions(args.out, refined)
    print(f"wrote {len(refined)} predictions to {args.out} ({changed} changed)")
    return EXIT_OK


def cmd_merge(args, config: dict) -> int:
    base = ev.load_predictions(args.base)
    override = ev.load_predictions(args.override)
    with open(args.ids, "r", encoding="utf-8") as fh:
        ids = {line.strip() for line in fh if line.strip()}
    merged = llm.merge_predictions(base, override, ids)
    ev.save_predictions(args.out, merged)
    print(f"wrote {len(merged)} predictions to {args.out} ({len(ids)} overridden)")
    return EXIT_OK


def cmd_evaluate(args, config: dict) -> int:
    preds = ev.load_predictions(args.pred)
    samples = dataset.load_samples(args.labels)
    labels = _labeled_samples(samples, args.labels)
    rules = ev.load_rules(args.rules)
    nutrients = _parse_nutrients(args.nutrients) if args.nutrients else list(SCORED_NUTRIENTS)

    report = ev.evaluate(preds, labels, rules, nutrients=nutrients)
    print(report.format_table())
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            json.dump(report.to_dict(), fh, indent=2)
        print(f"machine report written to {args.json_out}")
    return EXIT_OK


def cmd_bench(args, config: dict) -> int:
    model, cv = _load_model_and_vectorizer(args.model, args.vectorizer)
    samples = dataset.load_samples(args.infile)
    texts = [s.ingredient_text for s in samples]

    def predict_one(text: str) -> ridge.NutrientPrediction:
        return ridge.predict(model, features.transform_combined(text, cv))

    stats = ev.bench_latency(predict_one, texts, warmup=args.warmup)
    print(f"kernel backend: {kernels.BACKEND}")
    print(stats.format_line())
    return EXIT_OK


# --- argument parsing ---------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="recipe-nutrients",
        description="Estimate per-100 g nutrients from recipe ingredient text.")
    parser.add_argument("--config", help="json config file (flag values win)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse raw prompt/answer rows, dedup, split")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--format", choices=["jsonl", "csv"])
    p.add_argument("--out", required=True, help="output directory for train.jsonl/val.jsonl")
    p.add_argument("--ratio", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="fit vectorizers and ridge model")
    p.add_argument("--train", required=True, help="canonical train.jsonl")
    p.add_argument("--out", required=True, help="model output path")
    p.add_argument("--vectorizer-out", help="vectorizer output path (default: <out>.vocab.json)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha-grid", help="comma list, e.g. 0.1,1,10,100 (requires --val)")
    p.add_argument("--val", help="validation set for --alpha-grid scoring")
    p.add_argument("--rules", help="tolerance rules for grid scoring (default: packaged)")
    p.add_argument("--targets", help="comma list of nutrients to train (default: scored four)")
    p.add_argument("--word-features", type=int)
    p.add_argument("--char-features", type=int)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--workers", type=int, help="process-pool size for batch transforms")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict nutrients with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--vectorizer", help="default: <model>.vocab.json")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, help="process-pool size for batch transforms")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("llm-predict", help="direct few-shot inference via a chat endpoint")
    p.add_argument("--endpoint", required=True, help="profile name from the config file")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--shots", help="few-shot bank jsonl (default: packaged two exemplars)")
    p.add_argument("--out", required=True)
    p.add_argument("--cache", help="append-only transcript jsonl for offline replay")
    p.set_defaults(func=cmd_llm_predict)

    p = sub.add_parser("refine", help="refine predictions via a chat endpoint")
    p.add_argument("--endpoint", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("merge", help="override a subset of predictions by id")
    p.add_argument("--base", required=True)
    p.add_argument("--override", required=True)
    p.add_argument("--ids", required=True, help="text file, one id per line")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("evaluate", help="tolerance-band accuracy of predictions")
    p.add_argument("--pred", required=True)
    p.add_argument("--labels", required=True, help="canonical samples jsonl with labels")
    p.add_argument("--rules", help="tolerance rules json (default: packaged)")
    p.add_argument("--nutrients", help="comma list (default: fat,protein,saturates,sugars)")
    p.add_argument("--json-out", help="also write the machine-readable report here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="per-sample prediction latency")
    p.add_argument("--model", required=True)
    p.add_argument("--vectorizer")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--warmup", type=int, default=100)
    p.set_defaults(func=cmd_bench)

    return parser


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    try:
        config = _load_config(args.config)
        return args.func(args, config)
    except (OSError, TypeError, ValueError, KeyError, LookupError,
            llm.TransportError, llm.EndpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
