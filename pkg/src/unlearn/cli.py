"""Command-line pipeline: generate -> preprocess -> bench -> tidy -> plot, plus selftest.

Settings resolve as command-line flag, then ``--config`` file, then built-in
default. The config file is flat ``key = value`` text; keys are the long option
names with dashes or underscores, ``#`` starts a comment. The default seed may
also come from the ``UNLEARN_SEED`` environment variable.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import bench, dataset, report
from .dare import ForestParams
from .errors import UnlearnError
from .sisa import SisaConfig

log = logging.getLogger("unlearn")

SYNTHETIC_CLASS_SEP = 4.0


class UsageError(Exception):
    pass


def _csv_list(kind):
    def parse(text):
        try:
            return tuple(kind(t) for t in str(text).split(",") if t.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(f"bad list {text!r}: {exc}") from exc

    parse.__name__ = f"{kind.__name__}_list"
    return parse


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


# dest -> (type, default) for every setting that a config file may supply
_SETTINGS = {}


def _opt(p, flag, kind, default, help, **kw):
    dest = flag.lstrip("-").replace("-", "_")
    _SETTINGS.setdefault(p.prog, {})[dest] = (kind, default)
    if kind is bool:
        p.add_argument(flag, dest=dest, action="store_const", const=True, default=None, help=help, **kw)
    else:
        p.add_argument(flag, dest=dest, type=kind, default=None, help=f"{help} (default: {default})", **kw)


def read_config(path):
    """Parse a flat ``key = value`` file into a dict of strings."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def _default_seed():
    env = os.environ.get("UNLEARN_SEED")
    if env is None:
        return 0
    try:
        seed = int(env)
    except ValueError:
        raise UsageError(f"UNLEARN_SEED must be an integer, got {env!r}") from None
    if seed < 0:
        raise UsageError("UNLEARN_SEED must be non-negative")
    return seed


def resolve(args, prog):
    """Fill unset options from the config file, then from defaults."""
    settings = _SETTINGS.get(prog, {})
    config = read_config(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(config) - set(settings))
    if unknown:
        raise UsageError(f"unknown config key(s) for {prog.split()[-1]}: {', '.join(unknown)}")
    for dest, (kind, default) in settings.items():
        if getattr(args, dest) is not None:
            continue
        if dest in config:
            try:
                value = (_bool if kind is bool else kind)(config[dest])
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise UsageError(f"config key {dest}: {exc}") from None
        elif dest == "seed":
            value = _default_seed()
        else:
            value = default
        setattr(args, dest, value)
    return args


def _need_file(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    if not Path(path).is_file():
        raise UsageError(f"{what} {path} does not exist")


def _need_parent(path, what):
    if path is None:
        raise UsageError(f"{what} is required")
    parent = Path(path).resolve().parent
    if not parent.is_dir():
        raise UsageError(f"directory for {what} {path} does not exist")


def _parse_schema(text):
    schema = {}
    for part in filter(None, (t.strip() for t in text.split(","))):
        key, sep, col = part.partition("=")
        if not sep or key not in ("user_id", "label", "text"):
            raise UsageError(f"bad --schema entry {part!r}; use user_id=COL,label=COL,text=COL")
        schema[key] = col
    return schema


def cmd_generate(args):
    if bool(args.synthetic) == bool(args.csv):
        raise UsageError("give exactly one of --synthetic or --csv")
    _need_parent(args.output, "--output")
    if args.synthetic:
        ds = dataset.generate_synthetic(args.rows, args.d, args.class_sep, args.seed)
    else:
        _need_file(args.csv, "--csv")
        ingested = dataset.ingest_csv(args.csv, _parse_schema(args.schema))
        if ingested.skipped:
            log.warning("skipped %d rows with a bad label or blank text", ingested.skipped)
        if not ingested.records:
            raise UsageError(f"{args.csv}: no usable records")
        cfg = dataset.EncodingConfig(args.num_hash_features, args.seed, not args.no_binarize)
        ds = dataset.encode(ingested.records, cfg)
    dataset.save(ds, args.output)
    print(f"wrote {args.output}: {ds.rows} rows x {ds.n_features} columns, {int(ds.labels.sum())} positive")
    return 0


def cmd_preprocess(args):
    _need_file(args.input, "--input")
    _need_parent(args.train_out, "--train-out")
    _need_parent(args.test_out, "--test-out")
    ds = dataset.load(args.input)
    if np.unique(ds.labels).size < 2:
        log.warning("%s holds a single class; consistency will be trivial", args.input)
    train, test = dataset.train_test_split(ds, args.test_fraction, args.seed)
    dataset.save(train, args.train_out)
    dataset.save(test, args.test_out)
    for name, part in (("train", train), ("test", test)):
        pos = int(part.labels.sum())
        print(f"{name}: {part.rows} rows, {pos} positive / {part.rows - pos} negative")
    return 0


def cmd_bench(args):
    _need_file(args.train, "--train")
    _need_file(args.test, "--test")
    _need_parent(args.log, "--log")
    _need_parent(args.csv, "--csv")
    unknown = [s for s in args.strategies if s not in bench.STRATEGIES]
    if unknown or not args.strategies:
        raise UsageError(f"--strategies must be drawn from {','.join(bench.STRATEGIES)}")
    if args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    train = dataset.load(args.train)
    test = dataset.load(args.test)
    params = ForestParams(
        n_trees=args.n_trees,
        max_depth=args.max_depth,
        max_features_per_tree=args.max_features or None,
        thresholds_per_feature=args.thresholds_per_feature,
        min_samples_leaf=args.min_samples_leaf,
    )
    sisa = SisaConfig(n_shards=args.n_shards, n_slices=args.n_slices, aggregation=args.aggregation)
    grid = bench.default_grid(args.seed, args.repeats, args.strategies, args.sizes, args.percentages, params, sisa)
    if args.workers > 1:
        log.warning("running %d trials in parallel: costs are not comparable", len(grid))
    print(f"bench: {len(grid)} trials, train {train.rows} rows, test {test.rows} rows, seed {args.seed}")
    print(f"forest: {params.as_dict()}")
    print(f"sisa: shards={sisa.n_shards} slices={sisa.n_slices} aggregation={sisa.aggregation}")
    run = bench.run_grid(grid, train, test, log_path=args.log, verify=args.verify, workers=args.workers, echo=print)
    bench.write_csv(run.results, args.csv)
    for strategy, cost in sorted(bench.strategy_cost_summary(run.results).items()):
        print(f"mean cost {strategy}: {cost:.6f} s")
    print(f"wrote {len(run.results)} rows to {args.csv}; log appended to {args.log}")
    for cfg, exc in run.failures:
        print(f"FAILED {cfg.strategy} n={cfg.target_size} pct={cfg.delete_percentage}: {exc}", file=sys.stderr)
    for cfg, problem in run.violations:
        print(f"INVARIANT {cfg.strategy} n={cfg.target_size} pct={cfg.delete_percentage}: {problem}", file=sys.stderr)
    return 0 if run.ok else 1


def cmd_tidy(args):
    _need_file(args.log, "log")
    _need_parent(args.output, "--output")
    text = report.tidy_file(args.log, args.output)
    print(f"wrote {args.output}: {max(0, text.count(chr(10)) - 1)} rows")
    return 0


def cmd_plot(args):
    _need_file(args.csv, "csv")
    _need_parent(args.output, "--output")
    report.plot(args.csv, args.output)
    print(f"wrote {args.output}")
    return 0


def cmd_selftest(args):
    from .selftest import run_selftest

    passed, failed, seconds = run_selftest(args.instances, args.seed, args.corrupt_counts)
    for name in failed:
        print(f"FAIL {name}")
    print(f"selftest: {passed} passed, {len(failed)} failed in {seconds:.1f} s")
    return 0 if not failed else 1


def build_parser():
    parser = argparse.ArgumentParser(prog="unlearn", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, fn, help):
        p = sub.add_parser(name, help=help, description=help)
        p.set_defaults(func=fn)
        p.add_argument("--config", help="flat key = value settings file")
        _opt(p, "--seed", int, 0, "master seed; UNLEARN_SEED overrides the built-in default")
        return p

    p = command("generate", cmd_generate, "build a dataset container")
    src = p.add_mutually_exclusive_group()
    src.add_argument("--synthetic", action="store_true", help="Gaussian synthetic data")
    src.add_argument("--csv", help="CSV of user_id,label,text records")
    p.add_argument("-o", "--output", required=True, help="dataset container to write")
    _opt(p, "--rows", int, 2000, "synthetic rows")
    _opt(p, "--d", int, 64, "synthetic feature count")
    _opt(p, "--class-sep", float, SYNTHETIC_CLASS_SEP, "distance between synthetic class means")
    _opt(p, "--schema", str, "", "column mapping, e.g. label=is_spam,text=tweet")
    _opt(p, "--num-hash-features", int, 64, "hashed token buckets for CSV text")
    _opt(p, "--no-binarize", bool, False, "keep token counts instead of presence bits")

    p = command("preprocess", cmd_preprocess, "split a dataset container into train and test")
    p.add_argument("-i", "--input", required=True, help="dataset container")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    _opt(p, "--test-fraction", float, 0.3, "share of rows held out")

    p = command("bench", cmd_bench, "run the naive vs SISA/DaRE deletion grid")
    p.add_argument("--train", required=True, help="training container")
    p.add_argument("--test", required=True, help="test container")
    p.add_argument("--log", required=True, help="results text log (appended)")
    p.add_argument("--csv", required=True, help="results CSV (overwritten)")
    _opt(p, "--repeats", int, 1, "repeats of the whole grid")
    _opt(p, "--strategies", _csv_list(str), bench.STRATEGIES, "comma-separated strategies")
    _opt(p, "--sizes", _csv_list(int), bench.DEFAULT_SIZES, "comma-separated target sizes")
    _opt(p, "--percentages", _csv_list(float), bench.DEFAULT_PERCENTAGES, "comma-separated deletion fractions")
    _opt(p, "--n-trees", int, 10, "trees per forest")
    _opt(p, "--max-depth", int, 10, "maximum tree depth")
    _opt(p, "--max-features", int, 0, "features per tree, 0 for ceil(sqrt(d))")
    _opt(p, "--thresholds-per-feature", int, 8, "candidate thresholds per feature")
    _opt(p, "--min-samples-leaf", int, 1, "minimum rows per leaf")
    _opt(p, "--n-shards", int, 1, "SISA shards")
    _opt(p, "--n-slices", int, 1, "SISA slices per shard")
    _opt(p, "--aggregation", str, "mean_proba", "mean_proba or majority_vote")
    _opt(p, "--workers", int, 1, "parallel trial processes; >1 invalidates cost comparisons")
    _opt(p, "--verify", bool, False, "check each SISA trial against a scratch-trained ensemble")

    p = command("tidy", cmd_tidy, "convert a results log into CSV")
    p.add_argument("log", help="results text log")
    p.add_argument("-o", "--output", required=True, help="CSV to write")

    p = command("plot", cmd_plot, "draw an SVG chart from a results CSV")
    p.add_argument("csv", help="results CSV")
    p.add_argument("-o", "--output", required=True, help="SVG to write")

    p = command("selftest", cmd_selftest, "run exactness, formula and round-trip checks")
    _opt(p, "--instances", int, 40, "random exactness instances")
    _opt(p, "--corrupt-counts", bool, False, argparse.SUPPRESS)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s: %(message)s")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    try:
        resolve(args, sub.prog)
        return args.func(args)
    except UsageError as exc:
        sub.print_usage(sys.stderr)
        print(f"{sub.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (UnlearnError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
