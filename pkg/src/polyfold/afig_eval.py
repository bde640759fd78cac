"""Multi-state evaluation of externally predicted structures.

Predictions live in one directory per model, named
``{protein}_{seqidx}_{state}.pdb`` with state in {A, B, decoyA, decoyB}
and per-residue confidence (pLDDT) in the B-factor column. ``protein`` is
the manifest pair id.
"""

from __future__ import annotations

import csv
import io
import itertools
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import geometry
from .alignment import align_pair, residue_map
from .errors import (AlignmentTooSparse, IncompleteGrid, IoFailure, MalformedRecord, NoValidDecoy,
                     PolyfoldError, ZeroDenominator)
from .parallel import parallel_map
from .stats import shapiro_wilk, wilcoxon_signed_rank
from .struct_io import BackboneChain, load_chains, read_confidence

logger = logging.getLogger(__name__)

STATE_LABELS = ("A", "B")
DECOY_PREFIX = "decoy"
N_SEQUENCES = 16
DECOY_LENGTH_TOLERANCE = 0.2
# RMSDs below this are superposition roundoff, not a real deviation
MIN_DENOMINATOR = 1e-6


@dataclass(frozen=True)
class PredictionRecord:
    protein_id: str
    sequence_index: int
    state_label: str
    predicted: BackboneChain
    target: BackboneChain
    decoy_id: Optional[str] = None

    @property
    def is_decoy(self) -> bool:
        return self.state_label.startswith(DECOY_PREFIX)


@dataclass(frozen=True)
class EvalRecord:
    protein_id: str
    sequence_index: int
    state_label: str
    afig_rmsd: float
    mean_plddt: float
    struct_norm: float = float("nan")
    decoy_norm: float = float("nan")

    def __post_init__(self):
        if self.afig_rmsd < 0 or not (0.0 <= self.mean_plddt <= 100.0):
            raise ValueError(f"record out of range: rmsd {self.afig_rmsd}, plddt {self.mean_plddt}")


@dataclass(frozen=True)
class AggregateRow:
    protein_id: str
    best_paired_rmsd: float
    best_paired_struct_norm: float
    best_paired_decoy_norm: float
    best_single_rmsd: float
    all_avg_rmsd: float
    best_paired_plddt: float
    best_single_plddt: float
    all_avg_plddt: float
    all_avg_decoy_norm: float = float("nan")

    def __post_init__(self):
        tol = 1e-9
        if self.best_single_rmsd > self.best_paired_rmsd + tol:
            raise AssertionError("best single RMSD exceeds best paired")
        if self.best_paired_rmsd > self.all_avg_rmsd + tol:
            raise AssertionError("best paired RMSD exceeds the all-sequence mean")
        if self.best_single_plddt + tol < self.best_paired_plddt:
            raise AssertionError("best single pLDDT below best paired")


REPORT_COLUMNS = tuple(f.name for f in fields(AggregateRow))


def afig_rmsd(pred: BackboneChain, target: BackboneChain, superposed: bool = True) -> float:
    """CA RMSD between prediction and target over sequence-aligned residues."""
    rm = residue_map(align_pair(pred.sequence, target.sequence))
    if len(rm) < 3:
        raise AlignmentTooSparse(f"only {len(rm)} residues map between prediction and target")
    return geometry.rmsd(pred.ca[rm.index_a], target.ca[rm.index_b], superposed=superposed)


def max_target_rmsd(targets: Sequence[BackboneChain]) -> float:
    if len(targets) < 2:
        raise ValueError("need at least two target conformations")
    return max(afig_rmsd(a, b) for a, b in itertools.combinations(targets, 2))


def struct_norm(afig: float, targets_or_denominator) -> float:
    """``afig`` over the largest RMSD between target conformations.

    Accepts the target chains or a precomputed denominator.
    """
    if isinstance(targets_or_denominator, (int, float, np.floating)):
        denom = float(targets_or_denominator)
    else:
        denom = max_target_rmsd(targets_or_denominator)
    if denom < MIN_DENOMINATOR:
        raise ZeroDenominator("target conformations are identical; struct norm undefined")
    return float(afig) / denom


def decoy_norm(afig_target: float, afig_decoy: float) -> float:
    if afig_decoy < MIN_DENOMINATOR:
        raise ZeroDenominator("decoy AFIG RMSD is zero; decoy norm undefined")
    return float(afig_target) / float(afig_decoy)


def default_tm_fn(target: BackboneChain, candidate: BackboneChain) -> float:
    rm = residue_map(align_pair(target.sequence, candidate.sequence))
    if len(rm) < 5:
        return 0.0
    return geometry.tm_score(target.ca, candidate.ca, rm.pairs, target_length=len(target))


def select_decoy(target: BackboneChain, pool: Dict[str, BackboneChain], tm_max: float = 0.4,
                 tm_fn: Optional[Callable] = None) -> str:
    """Pick the pool member with TM-score to ``target`` closest to but below ``tm_max``.

    Candidates must be within 20% of the target length. Ties go to the
    lexicographically smallest id. Returns the pool key.
    """
    tm_fn = tm_fn or default_tm_fn
    n = len(target)
    best = None
    for key in sorted(pool):
        cand = pool[key]
        if abs(len(cand) - n) > DECOY_LENGTH_TOLERANCE * n:
            continue
        tm = float(tm_fn(target, cand))
        if tm >= tm_max:
            continue
        if best is None or tm > best[0]:
            best = (tm, key)
    if best is None:
        raise NoValidDecoy(f"no pool member has TM < {tm_max} and length within 20% of {n}")
    return best[1]


def _grid(records, label_filter, n_seq, states):
    cells = {(r.sequence_index, r.state_label): r for r in records if label_filter(r.state_label)}
    missing = [(i, s) for i in range(n_seq) for s in states if (i, s) not in cells]
    if missing:
        raise IncompleteGrid(f"missing {len(missing)} cells, first {missing[0]}")
    return cells


def aggregate(records: Sequence[EvalRecord], n_sequences: int = N_SEQUENCES,
              states: Sequence[str] = STATE_LABELS, inter_state_rmsd: Optional[float] = None) -> AggregateRow:
    """Reduce one protein's (sequence, state) grid to a report row.

    Best Paired averages each sequence over states, then takes the best of
    those averages (RMSD and pLDDT chosen independently). Best Single takes
    the extremum over every cell. Normalizations apply to the sequence that
    gives the Best Paired RMSD. Decoy records use labels ``decoy<state>``.
    """
    if not records:
        raise IncompleteGrid("no records")
    pid = records[0].protein_id
    cells = _grid(records, lambda s: s in states, n_sequences, states)
    rmsd = np.array([[cells[i, s].afig_rmsd for s in states] for i in range(n_sequences)])
    plddt = np.array([[cells[i, s].mean_plddt for s in states] for i in range(n_sequences)])
    paired = rmsd.mean(axis=1)
    paired_plddt = plddt.mean(axis=1)
    # first index on ties keeps the choice independent of float summation order
    best_i = int(np.flatnonzero(paired == paired.min())[0])

    if inter_state_rmsd is not None:
        sn = struct_norm(paired[best_i], inter_state_rmsd)
    else:
        sn = float(np.mean([cells[best_i, s].struct_norm for s in states]))

    decoy_states = [DECOY_PREFIX + s for s in states]
    has_decoys = any(r.state_label in decoy_states for r in records)
    if has_decoys:
        dcells = _grid(records, lambda s: s in decoy_states, n_sequences, decoy_states)
        ratios = np.array([[decoy_norm(cells[i, s].afig_rmsd, dcells[i, DECOY_PREFIX + s].afig_rmsd)
                            for s in states] for i in range(n_sequences)])
        dn = float(ratios[best_i].mean())
        dn_avg = float(ratios.mean())
    else:
        dn = dn_avg = float("nan")

    return AggregateRow(
        protein_id=pid,
        best_paired_rmsd=float(paired[best_i]),
        best_paired_struct_norm=float(sn),
        best_paired_decoy_norm=dn,
        best_single_rmsd=float(rmsd.min()),
        all_avg_rmsd=float(rmsd.mean()),
        best_paired_plddt=float(paired_plddt.max()),
        best_single_plddt=float(plddt.max()),
        all_avg_plddt=float(plddt.mean()),
        all_avg_decoy_norm=dn_avg,
    )


def parse_prediction_name(name: str) -> tuple:
    """``{protein}_{seqidx}_{state}.pdb`` -> (protein, seqidx, state)."""
    stem = name[:-4] if name.endswith(".pdb") else name
    parts = stem.rsplit("_", 2)
    if len(parts) != 3 or not parts[1].isdigit():
        raise MalformedRecord(f"prediction file name {name!r} does not match protein_seqidx_state.pdb")
    protein, idx, state = parts
    if state not in STATE_LABELS and not (state.startswith(DECOY_PREFIX) and state[len(DECOY_PREFIX):] in STATE_LABELS):
        raise MalformedRecord(f"unknown state label {state!r} in {name!r}")
    return protein, int(idx), state


def load_predictions(pred_dir, proteins: Optional[Sequence[str]] = None) -> dict:
    """Map (protein, seqidx, state) -> predicted chain (first protein chain in the file)."""
    pred_dir = Path(pred_dir)
    if not pred_dir.is_dir():
        raise IoFailure(f"prediction directory {pred_dir} not found")
    out = {}
    wanted = set(proteins) if proteins is not None else None
    for path in sorted(pred_dir.glob("*.pdb")):
        key = parse_prediction_name(path.name)
        if wanted is not None and key[0] not in wanted:
            continue
        out[key] = load_chains(path)[0]
    return out


def load_decoy_pool(decoy_dir) -> dict:
    """Every protein chain under ``decoy_dir`` keyed ``structure:chain``."""
    decoy_dir = Path(decoy_dir)
    if not decoy_dir.is_dir():
        raise IoFailure(f"decoy directory {decoy_dir} not found")
    pool = {}
    for path in sorted(list(decoy_dir.glob("*.pdb")) + list(decoy_dir.glob("*.ent"))):
        for ch in load_chains(path):
            pool[f"{path.stem}:{ch.chain_id}"] = ch
    return pool


@dataclass
class ProteinTargets:
    protein_id: str
    states: Dict[str, BackboneChain]
    decoys: Dict[str, str] = field(default_factory=dict)
    decoy_chains: Dict[str, BackboneChain] = field(default_factory=dict)

    @property
    def inter_state_rmsd(self) -> float:
        return max_target_rmsd([self.states[s] for s in sorted(self.states)])


def _eval_one(item):
    key, pred, target = item
    protein, idx, state = key
    val = afig_rmsd(pred, target)
    return protein, idx, state, val, read_confidence(pred)


def evaluate_model(predictions: dict, targets: Dict[str, ProteinTargets], n_sequences: int = N_SEQUENCES,
                   threads: int = 1) -> tuple:
    """Per-record metrics and per-protein rows for one model's predictions.

    Returns ``(records, rows)``, both sorted by protein id. Metric
    computation runs in parallel; results are reduced in input order.
    """
    work = []
    for key in sorted(predictions):
        protein, idx, state = key
        if protein not in targets or idx >= n_sequences:
            continue
        t = targets[protein]
        if state.startswith(DECOY_PREFIX):
            ref = t.decoy_chains.get(state[len(DECOY_PREFIX):])
            if ref is None:
                continue
        else:
            ref = t.states[state]
        work.append((key, predictions[key], ref))
    results = parallel_map(_eval_one, work, threads)

    denoms = {pid: targets[pid].inter_state_rmsd for pid in sorted(targets)}
    by_protein: Dict[str, List[EvalRecord]] = {}
    raw = {(p, i, s): (v, c) for p, i, s, v, c in results}
    for (p, i, s), (v, c) in sorted(raw.items()):
        sn = dn = float("nan")
        if not s.startswith(DECOY_PREFIX):
            sn = struct_norm(v, denoms[p])
            dkey = (p, i, DECOY_PREFIX + s)
            if dkey in raw:
                dn = decoy_norm(v, raw[dkey][0])
        by_protein.setdefault(p, []).append(EvalRecord(p, i, s, v, c, sn, dn))
    missing = sorted(set(targets) - set(by_protein))
    if missing:
        raise IncompleteGrid(f"no predictions for protein {missing[0]}")
    records = [r for p in sorted(by_protein) for r in by_protein[p]]
    rows = [aggregate(by_protein[p], n_sequences, inter_state_rmsd=denoms[p]) for p in sorted(by_protein)]
    return records, rows


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if np.isnan(x) else repr(round(x, 10))


def _write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    try:
        path.write_text(buf.getvalue())
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def mean_row(rows: Sequence[AggregateRow]) -> list:
    out = ["mean"]
    for col in REPORT_COLUMNS[1:]:
        vals = np.array([getattr(r, col) for r in rows], dtype=np.float64)
        ok = ~np.isnan(vals)
        out.append(float(vals[ok].mean()) if ok.any() else float("nan"))
    return out


PAIRED_METRICS = ("best_paired_rmsd", "best_paired_struct_norm", "best_paired_decoy_norm",
                  "best_single_rmsd", "all_avg_rmsd", "best_paired_plddt", "all_avg_decoy_norm")


def compare_models(rows_a: Sequence[AggregateRow], rows_b: Sequence[AggregateRow],
                   metrics: Sequence[str] = PAIRED_METRICS) -> list:
    """Shapiro-Wilk on the paired differences and a two-sided Wilcoxon test, per metric.

    Proteins present in both sets are paired by id. Tests that cannot run
    (too few pairs, all differences zero, constant differences) are
    reported with NaN statistic and p.
    """
    a = {r.protein_id: r for r in rows_a}
    b = {r.protein_id: r for r in rows_b}
    common = sorted(set(a) & set(b))
    out = []
    for m in metrics:
        x = np.array([getattr(a[p], m) for p in common], dtype=np.float64)
        y = np.array([getattr(b[p], m) for p in common], dtype=np.float64)
        ok = ~(np.isnan(x) | np.isnan(y))
        x, y = x[ok], y[ok]
        for name, fn in (("shapiro_wilk", lambda: shapiro_wilk(x - y)),
                         ("wilcoxon_signed_rank", lambda: wilcoxon_signed_rank(x, y))):
            try:
                res = fn()
                out.append((f"{name}:{m}", res.statistic, res.pvalue, res.n))
            except PolyfoldError as e:
                logger.info("%s on %s skipped: %s", name, m, e)
                out.append((f"{name}:{m}", float("nan"), float("nan"), int(len(x))))
    return out


def emit_report(model_rows: Dict[str, Sequence[AggregateRow]], stats: Sequence[tuple], out_dir,
                model_records: Optional[Dict[str, Sequence[EvalRecord]]] = None) -> list:
    """Write report tables, long-format plot data and the stats summary.

    ``model_rows`` maps model name to its rows; one ``report_{model}.csv``
    per model (rows sorted by protein, then a mean row). Plot data is one
    file per metric with columns protein, model, metric, value. Returns
    the written paths in order.
    """
    if not model_rows or not any(model_rows.values()):
        raise ValueError("nothing to report")
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(f"cannot create {out_dir}: {e}") from e
    written = []
    for model in sorted(model_rows):
        rows = sorted(model_rows[model], key=lambda r: r.protein_id)
        body = [[getattr(r, c) for c in REPORT_COLUMNS] for r in rows] + [mean_row(rows)]
        path = out_dir / f"report_{model}.csv"
        _write_csv(path, REPORT_COLUMNS, body)
        written.append(path)
    for metric in PAIRED_METRICS + ("best_single_plddt", "all_avg_plddt"):
        body = []
        for model in sorted(model_rows):
            for r in sorted(model_rows[model], key=lambda r: r.protein_id):
                body.append((r.protein_id, model, metric, getattr(r, metric)))
        path = out_dir / f"plot_{metric}.csv"
        _write_csv(path, ("protein", "model", "metric", "value"), body)
        written.append(path)
    if model_records:
        body = []
        for model in sorted(model_records):
            for rec in model_records[model]:
                d = asdict(rec)
                body.append((model,) + tuple(d.values()))
        path = out_dir / "records.csv"
        _write_csv(path, ("model",) + tuple(f.name for f in fields(EvalRecord)), body)
        written.append(path)
    path = out_dir / "stats.csv"
    _write_csv(path, ("test", "statistic", "p", "n"), stats)
    written.append(path)
    return written


def read_report(path) -> list:
    """Rows of a ``report_*.csv`` file, without the mean row."""
    rows = []
    try:
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                if rec["protein_id"] == "mean":
                    continue
                vals = {k: (rec[k] if k == "protein_id" else float(rec[k])) for k in REPORT_COLUMNS}
                rows.append(AggregateRow(**vals))
    except (OSError, KeyError) as e:
        raise IoFailure(f"cannot read report {path}: {e}") from e
    return rows


def build_targets(manifest, split: str = "test", decoy_pool: Optional[dict] = None, tm_max: float = 0.4,
                  threads: int = 1) -> Dict[str, ProteinTargets]:
    """Resolve target states (and one decoy per state) for every pair in ``split``."""
    resolver = manifest.resolver()
    pairs = manifest.split(split)
    out = {}
    for p in pairs:
        out[p.pair_id] = ProteinTargets(p.pair_id, {"A": resolver.backbone(p.state_a),
                                                    "B": resolver.backbone(p.state_b)})
    if decoy_pool:
        jobs = [(pid, s) for pid in sorted(out) for s in STATE_LABELS]

        def pick(job):
            pid, s = job
            return select_decoy(out[pid].states[s], decoy_pool, tm_max)
        for (pid, s), key in zip(jobs, parallel_map(pick, jobs, threads)):
            out[pid].decoys[s] = key
            out[pid].decoy_chains[s] = decoy_pool[key]
    return out


def model_name_for(path) -> str:
    return Path(os.path.normpath(str(path))).name
