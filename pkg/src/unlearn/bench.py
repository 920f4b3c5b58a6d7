"""Trial harness comparing naive retraining with exact unlearning through a SISA/DaRE ensemble.

A trial takes the shared train/test split, reduces the training set to
``target_size`` rows, trains a model, scores it, then times the unlearning of
``int(target_size * delete_percentage)`` randomly chosen rows followed by a fresh
prediction on the same test set.
"""

import csv
import io
import logging
import math
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from decimal import Decimal
from pathlib import Path

import numpy as np

from . import _kernels
from ._seeding import mix_seed
from .dare import ForestParams, NaiveForest
from .dataset import delete_n_elements, reduce_to_target_size
from .errors import ArgumentError, InvariantError
from .sisa import SisaConfig, sisa_fit

log = logging.getLogger(__name__)

STRATEGIES = ("naive", "sisa_dare")
DEFAULT_SIZES = (10, 100, 1000)
DEFAULT_PERCENTAGES = (0.25, 0.50, 0.75)

CSV_COLUMNS = (
    "strategy",
    "target_size",
    "delete_percentage",
    "repeat",
    "n_deleted",
    "consistency_before",
    "consistency_after",
    "percent_change",
    "agreement_after",
    "computational_cost_seconds",
    "test_set_hash",
)
UNDEFINED = "undefined"


class Stopwatch:
    """Monotonic interval timer (``time.perf_counter``)."""

    def __init__(self):
        self._start = None
        self.elapsed = 0.0

    def start(self):
        self._start = time.perf_counter()
        return self

    def stop(self):
        if self._start is None:
            raise RuntimeError("stopwatch was never started")
        self.elapsed = max(0.0, time.perf_counter() - self._start)
        self._start = None
        return self.elapsed

    def measure(self, fn):
        """Run ``fn()`` inside the timed window; returns its result."""
        self.start()
        try:
            return fn()
        finally:
            self.stop()


def consistency(predictions, labels):
    """Fraction of positions where the prediction equals the label."""
    p = np.asarray(predictions)
    y = np.asarray(labels)
    if p.shape != y.shape or p.ndim != 1 or p.size == 0:
        raise ArgumentError(f"need equal-length non-empty vectors, got {p.shape} and {y.shape}")
    return float(np.count_nonzero(p == y)) / p.size


def agreement(pred_a, pred_b):
    """Fraction of positions where two prediction vectors match."""
    return consistency(pred_a, pred_b)


def percent_change(c_before, c_after):
    """``(c_after - c_before) / c_before * 100``; NaN (logged as "undefined") when ``c_before`` is 0.

    Evaluated in decimal arithmetic on the shortest repr of each input, so values
    written as short decimals give the textbook answer (0.80 -> 0.84 is exactly 5.0)
    instead of binary rounding residue.
    """
    if c_before == 0:
        return math.nan
    before = Decimal(repr(float(c_before)))
    after = Decimal(repr(float(c_after)))
    return float((after - before) / before * 100)


@dataclass(frozen=True)
class TrialConfig:
    strategy: str
    target_size: int
    delete_percentage: float
    seed: int = 0
    repeat: int = 0
    forest_params: ForestParams = field(default_factory=ForestParams)
    sisa: SisaConfig = field(default_factory=SisaConfig)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ArgumentError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.target_size < 1:
            raise ArgumentError("target_size must be >= 1")
        if not 0.0 < self.delete_percentage < 1.0:
            raise ArgumentError("delete_percentage must lie in (0, 1)")

    @property
    def n_to_delete(self):
        return int(self.target_size * self.delete_percentage)

    @property
    def degenerate(self):
        return self.n_to_delete < 1

    @property
    def reduce_seed(self):
        # shared by every trial of one (size, repeat) so each deletion fraction starts from the same rows
        return mix_seed(self.seed, 1, self.target_size, self.repeat)

    @property
    def delete_seed(self):
        # shared by both strategies so they unlearn the same rows
        return mix_seed(self.seed, 2, self.target_size, round(self.delete_percentage * 1e6), self.repeat)

    @property
    def model_seed(self):
        return mix_seed(self.seed, 3, self.target_size, self.repeat)


@dataclass(frozen=True)
class TrialResult:
    config: TrialConfig
    consistency_before: float
    consistency_after: float
    percent_change: float
    computational_cost_seconds: float
    n_deleted: int
    agreement_after: float
    test_set_hash: str
    deleted_ids: tuple = ()
    degenerate: bool = False

    def row(self):
        """CSV/log field values as strings, in :data:`CSV_COLUMNS` order."""
        c = self.config
        return {
            "strategy": c.strategy,
            "target_size": str(c.target_size),
            "delete_percentage": repr(float(c.delete_percentage)),
            "repeat": str(c.repeat),
            "n_deleted": str(self.n_deleted),
            "consistency_before": repr(self.consistency_before),
            "consistency_after": repr(self.consistency_after),
            "percent_change": UNDEFINED if math.isnan(self.percent_change) else repr(self.percent_change),
            "agreement_after": repr(self.agreement_after),
            "computational_cost_seconds": repr(self.computational_cost_seconds),
            "test_set_hash": self.test_set_hash,
        }


def _reduced_train(cfg, train, test):
    return reduce_to_target_size(train, test, cfg.target_size, cfg.reduce_seed)


def _result(cfg, before, after, preds_before, preds_after, seconds, ids, test):
    return TrialResult(
        config=cfg,
        consistency_before=before,
        consistency_after=after,
        percent_change=percent_change(before, after),
        computational_cost_seconds=seconds,
        n_deleted=len(ids),
        agreement_after=agreement(preds_before, preds_after),
        test_set_hash=test.digest(),
        deleted_ids=tuple(ids),
        degenerate=cfg.degenerate,
    )


def run_naive_trial(cfg, train, test):
    """Fit, score, then time: delete rows, retrain from scratch, predict, score."""
    train, test = _reduced_train(cfg, train, test)
    n = min(cfg.n_to_delete, train.rows - 1) if train.rows > 1 else 0
    model = NaiveForest(cfg.forest_params, cfg.model_seed).fit(train)
    preds_before = model.predict(test)
    before = consistency(preds_before, test.labels)

    def unlearn():
        reduced, ids = delete_n_elements(train, n, cfg.delete_seed)
        retrained = NaiveForest(cfg.forest_params, cfg.model_seed).fit(reduced)
        preds = retrained.predict(test)
        return ids, preds, consistency(preds, test.labels)

    watch = Stopwatch()
    ids, preds_after, after = watch.measure(unlearn)
    return _result(cfg, before, after, preds_before, preds_after, watch.elapsed, ids, test)


def _sisa_config(cfg):
    return replace(cfg.sisa, constituent="dare", constituent_params=cfg.forest_params, seed=cfg.model_seed)


def run_sisa_trial(cfg, train, test):
    """Fit a SISA ensemble of DaRE forests, score, then time: delete rows one by one, predict, score."""
    train, test = _reduced_train(cfg, train, test)
    n = min(cfg.n_to_delete, train.rows - 1) if train.rows > 1 else 0
    ens = sisa_fit(train, _sisa_config(cfg))
    preds_before = ens.predict(test)
    before = consistency(preds_before, test.labels)

    def unlearn():
        _, ids = delete_n_elements(train, n, cfg.delete_seed)
        for rid in ids:
            ens.delete(rid)
        preds = ens.predict(test)
        return ids, preds, consistency(preds, test.labels)

    watch = Stopwatch()
    ids, preds_after, after = watch.measure(unlearn)
    return _result(cfg, before, after, preds_before, preds_after, watch.elapsed, ids, test)


def run_trial(cfg, train, test):
    if cfg.degenerate:
        log.warning("trial %s n=%d pct=%s deletes no rows", cfg.strategy, cfg.target_size, cfg.delete_percentage)
    runner = run_naive_trial if cfg.strategy == "naive" else run_sisa_trial
    return runner(cfg, train, test)


def scratch_consistency(result, train, test):
    """Consistency of a SISA ensemble fitted from scratch on the trial's reduced training set."""
    cfg = result.config
    reduced, _ = _reduced_train(cfg, train, test)
    reduced = reduced.without_ids(result.deleted_ids)
    ens = sisa_fit(reduced, _sisa_config(cfg))
    return consistency(ens.predict(test), test.labels)


def check_result(result, train=None, test=None):
    """Invariant checks for one result; returns a list of violation messages."""
    problems = []
    for name in ("consistency_before", "consistency_after", "agreement_after"):
        v = getattr(result, name)
        if not 0.0 <= v <= 1.0:
            problems.append(f"{name}={v} outside [0, 1]")
    if result.computational_cost_seconds < 0:
        problems.append("negative computational cost")
    recomputed = percent_change(result.consistency_before, result.consistency_after)
    same = (math.isnan(recomputed) and math.isnan(result.percent_change)) or recomputed == result.percent_change
    if not same:
        problems.append(f"percent_change {result.percent_change} != recomputed {recomputed}")
    if result.n_deleted != result.config.n_to_delete:
        problems.append(f"n_deleted {result.n_deleted} != int(n*pct) {result.config.n_to_delete}")
    if result.config.strategy == "sisa_dare" and train is not None:
        oracle = scratch_consistency(result, train, test)
        if oracle != result.consistency_after:
            problems.append(f"consistency_after {result.consistency_after} != scratch-trained {oracle}")
    return problems


def default_grid(
    seed=0,
    repeats=1,
    strategies=STRATEGIES,
    sizes=DEFAULT_SIZES,
    percentages=DEFAULT_PERCENTAGES,
    forest_params=None,
    sisa=None,
):
    """Trial configs ordered repeat -> size -> percentage -> strategy."""
    forest_params = forest_params or ForestParams()
    sisa = sisa or SisaConfig()
    return [
        TrialConfig(s, n, p, seed, r, forest_params, sisa)
        for r in range(repeats)
        for n in sizes
        for p in percentages
        for s in strategies
    ]


@dataclass
class GridRun:
    results: list = field(default_factory=list)
    failures: list = field(default_factory=list)
    violations: list = field(default_factory=list)

    @property
    def ok(self):
        return not self.failures and not self.violations


def _format_block(index, result):
    lines = [f"=== trial {index} ==="]
    lines += [f"{k}: {v}" for k, v in result.row().items()]
    lines.append("=== end ===")
    return "\n".join(lines) + "\n"


def _format_failure(index, cfg, exc):
    return (
        f"=== failed trial {index} ===\n"
        f"strategy: {cfg.strategy}\n"
        f"target_size: {cfg.target_size}\n"
        f"delete_percentage: {cfg.delete_percentage!r}\n"
        f"repeat: {cfg.repeat}\n"
        f"error: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}\n"
        "=== end ===\n"
    )


def _trial_worker(args):
    cfg, train, test = args
    return run_trial(cfg, train, test)


def run_grid(grid, train, test, log_path=None, verify=False, workers=1, echo=None):
    """Run ``grid`` in order, appending each outcome to ``log_path`` as it completes.

    A failing trial is recorded and the grid continues. ``workers > 1`` runs trials
    in separate processes: outcomes stay correct but costs are no longer comparable.
    ``verify`` additionally re-derives the scratch-trained consistency of SISA trials.
    """
    _kernels.warmup()
    run = GridRun()
    fh = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        if workers > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                outcomes = list(pool.map(_safe_trial, [(c, train, test) for c in grid]))
        else:
            outcomes = (_safe_trial((c, train, test)) for c in grid)
        for index, (cfg, outcome) in enumerate(zip(grid, outcomes), start=1):
            if echo:
                echo(f"[{index}/{len(grid)}] {cfg.strategy} target_size={cfg.target_size} "
                     f"delete_percentage={cfg.delete_percentage}")
            if isinstance(outcome, Exception):
                log.error("trial %d failed: %s", index, outcome)
                run.failures.append((cfg, outcome))
                text = _format_failure(index, cfg, outcome)
            else:
                run.results.append(outcome)
                for problem in check_result(outcome, *((train, test) if verify else ())):
                    run.violations.append((cfg, problem))
                    log.error("trial %d invariant violation: %s", index, problem)
                text = _format_block(index, outcome)
            if fh:
                fh.write(text)
                fh.flush()
    finally:
        if fh:
            fh.close()
    return run


def _safe_trial(args):
    try:
        return _trial_worker(args)
    except Exception as exc:  # recorded per trial; the grid keeps going
        return exc


def results_csv(results):
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in results:
        w.writerow(r if isinstance(r, dict) else r.row())
    return buf.getvalue()


def write_csv(results, path):
    Path(path).write_text(results_csv(results), encoding="utf-8")


def parse_log(text):
    """Rows (dicts of strings) of every completed trial block in a results log.

    Failed-trial blocks are skipped. Raises ``ValueError`` naming the line of any
    malformed or truncated block.
    """
    rows = []
    current = None
    failed = False
    start = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith("=== ") and line.endswith(" ===") and line != "=== end ===":
            if current is not None:
                raise ValueError(f"line {lineno}: new block starts before block at line {start} ended")
            current, failed, start = {}, line.startswith("=== failed"), lineno
            continue
        if line == "=== end ===":
            if current is None:
                raise ValueError(f"line {lineno}: block end without a block start")
            if not failed:
                missing = [c for c in CSV_COLUMNS if c not in current]
                if missing:
                    raise ValueError(f"line {lineno}: block starting at line {start} lacks {', '.join(missing)}")
                rows.append({c: current[c] for c in CSV_COLUMNS})
            current = None
            continue
        if current is None:
            raise ValueError(f"line {lineno}: text outside a trial block: {line!r}")
        key, sep, value = line.partition(": ")
        if not sep:
            raise ValueError(f"line {lineno}: expected 'key: value', got {line!r}")
        current[key.strip()] = value.strip()
    if current is not None:
        raise ValueError(f"line {start}: block is truncated (no end marker)")
    return rows


def tidy(log_text):
    """Results log text to CSV text with the bench CSV schema."""
    return results_csv(parse_log(log_text))


def monotone_within(values, tolerance=0.10, max_inversions=1):
    """Nondecreasing, except for at most ``max_inversions`` drops each within ``tolerance`` (relative)."""
    inversions = 0
    for prev, cur in zip(values, values[1:]):
        if cur >= prev:
            continue
        if prev - cur > tolerance * prev:
            return False
        inversions += 1
    return inversions <= max_inversions


def median_costs(results, strategy="sisa_dare"):
    """``{(target_size, delete_percentage): median cost}`` over repeats."""
    groups = {}
    for r in results:
        if r.config.strategy == strategy:
            groups.setdefault((r.config.target_size, r.config.delete_percentage), []).append(
                r.computational_cost_seconds
            )
    return {k: statistics.median(v) for k, v in groups.items()}


def cost_trends(results, strategy="sisa_dare", tolerance=0.10):
    """Check cost monotonicity in deletion count (fixed size) and in size (fixed fraction).

    Returns ``{description: (ok, medians)}``.
    """
    med = median_costs(results, strategy)
    sizes = sorted({k[0] for k in med})
    pcts = sorted({k[1] for k in med})
    out = {}
    for n in sizes:
        seq = [med[(n, p)] for p in pcts if (n, p) in med]
        out[f"{strategy} target_size={n}: cost vs deletions"] = (monotone_within(seq, tolerance), seq)
    for p in pcts:
        seq = [med[(n, p)] for n in sizes if (n, p) in med]
        out[f"{strategy} delete_percentage={p}: cost vs target_size"] = (monotone_within(seq, tolerance), seq)
    return out


def strategy_cost_summary(results):
    """Mean computational cost per strategy."""
    by = {}
    for r in results:
        by.setdefault(r.config.strategy, []).append(r.computational_cost_seconds)
    return {k: statistics.fmean(v) for k, v in by.items()}


def assert_ok(run):
    if not run.ok:
        raise InvariantError(f"{len(run.failures)} failed trials, {len(run.violations)} invariant violations")
