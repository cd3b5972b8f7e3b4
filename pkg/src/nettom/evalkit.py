"""Agent tournaments and prediction scoring.

Tournaments roll every (defender, attacker, topology) cell for a fixed
number of episodes and aggregate defender reward, win rate, and episode
duration. Predictions are always consumed from files (never in-process),
so externally trained models can be scored against a dataset manifest:
high-value-node predictions get support-weighted F1 and raw confusion
counts, and occupancy predictions get transport-distance statistics
stratified by topology, discount, and remoteness weighting, plus a
k-means pass that surfaces hedged (multi-path) predictions.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .agents import make_blue, make_red
from .cyberenv import BLUE_WIN, EnvConfig, rollout
from .dataset import DatasetManifest, ToMSample, gamma_key, topology
from .errors import ConfigError, DataError
from .seeding import derive_seed
from .transport import WeightingConfig, check_distribution, ntd_weighted

DEFAULT_COEFFICIENTS = (-1.0, 0.0, 1.0)
DEFAULT_FLOOR = 0.1


# ---------------------------------------------------------------------------
# Tournaments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CellStats:
    blue: str
    red: str
    network: str
    episodes: int
    mean_reward: float
    win_rate: float
    mean_duration: float


@dataclass
class TournamentTable:
    cells: list[CellStats]

    def lookup(self, blue: str, red: str, network: str) -> CellStats:
        for c in self.cells:
            if (c.blue, c.red, c.network) == (blue, red, network):
                return c
        raise KeyError((blue, red, network))

    def averaged(self) -> list[CellStats]:
        """Per (blue, red) cells averaged across networks."""
        keys = sorted({(c.blue, c.red) for c in self.cells})
        out = []
        for blue, red in keys:
            group = [c for c in self.cells if (c.blue, c.red) == (blue, red)]
            out.append(CellStats(
                blue=blue,
                red=red,
                network="all",
                episodes=sum(c.episodes for c in group),
                mean_reward=float(np.mean([c.mean_reward for c in group])),
                win_rate=float(np.mean([c.win_rate for c in group])),
                mean_duration=float(np.mean([c.mean_duration for c in group])),
            ))
        return out


def _tournament_episode(args) -> tuple[int, float, bool, int]:
    index, network, blue_id, red_spec, seed, entry_count = args
    net, cm = topology(network)
    config = EnvConfig(entry_count=entry_count)
    traj = rollout(net, make_blue(blue_id), make_red(red_spec), seed,
                   cm=cm, config=config)
    return index, traj.total_blue_reward, traj.outcome == BLUE_WIN, traj.final_step


def run_tournament(blues, reds, networks, episodes_per_cell: int, seed: int,
                   entry_count: int = 1, jobs: int = 1) -> TournamentTable:
    """Evaluate every joint policy profile over seeded episodes.

    Attacker specs naming only a species draw a fresh member per episode,
    so a cell's numbers describe the species, not one lucky draw.
    """
    blues = list(blues)
    reds = list(reds)
    networks = list(networks)
    if not blues or not reds or not networks:
        raise ConfigError("tournament needs non-empty blue, red and network sets")
    if episodes_per_cell < 1:
        raise ConfigError("episodes_per_cell must be >= 1")

    tasks = []
    cell_keys = []
    for blue in blues:
        for red in reds:
            for network in networks:
                cell_keys.append((blue, red.policy_id, network))
                cell_index = len(cell_keys) - 1
                for e in range(episodes_per_cell):
                    tasks.append((
                        cell_index, network, blue, red,
                        derive_seed(seed, "tournament", blue, red.policy_id,
                                    network, e),
                        entry_count,
                    ))

    results: list[tuple[float, bool, int]] = [None] * len(tasks)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for pos, (idx, reward, won, dur) in zip(
                range(len(tasks)),
                pool.map(_tournament_episode, tasks, chunksize=4),
            ):
                results[pos] = (reward, won, dur)
    else:
        for pos, task in enumerate(tasks):
            _, reward, won, dur = _tournament_episode(task)
            results[pos] = (reward, won, dur)

    cells = []
    per_cell: dict[int, list] = {i: [] for i in range(len(cell_keys))}
    for task, res in zip(tasks, results):
        per_cell[task[0]].append(res)
    for idx, (blue, red_id, network) in enumerate(cell_keys):
        rows = per_cell[idx]
        cells.append(CellStats(
            blue=blue,
            red=red_id,
            network=network,
            episodes=len(rows),
            mean_reward=float(np.mean([r[0] for r in rows])),
            win_rate=float(np.mean([1.0 if r[1] else 0.0 for r in rows])),
            mean_duration=float(np.mean([r[2] for r in rows])),
        ))
    return TournamentTable(cells=cells)


def write_tournament_reports(table: TournamentTable, out_dir: str | Path) -> list[Path]:
    """One CSV per metric per network, plus cross-network averages."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    networks = sorted({c.network for c in table.cells})
    groups = [(net, [c for c in table.cells if c.network == net])
              for net in networks]
    groups.append(("all", table.averaged()))
    for metric in ("mean_reward", "win_rate", "mean_duration"):
        for network, cells in groups:
            blues = sorted({c.blue for c in cells})
            reds = sorted({c.red for c in cells})
            path = out / f"tournament_{metric}_{network}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(["blue\\red"] + reds)
                lut = {(c.blue, c.red): getattr(c, metric) for c in cells}
                for blue in blues:
                    writer.writerow(
                        [blue] + [format(lut[(blue, red)], ".6g") for red in reds]
                    )
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# Prediction scoring
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PredictionRecord:
    sample_id: str
    pred_hvn: tuple[float, ...]
    pred_sr: dict[str, tuple[float, ...]]


def read_predictions(path: str | Path) -> dict[str, PredictionRecord]:
    """Parse a predictions file: one JSON object per line with keys
    sample_id, pred_hvn, and pred_sr (a map from discount to vector)."""
    records = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                rec = PredictionRecord(
                    sample_id=obj["sample_id"],
                    pred_hvn=tuple(float(x) for x in obj["pred_hvn"]),
                    pred_sr={k: tuple(float(x) for x in v)
                             for k, v in obj["pred_sr"].items()},
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise DataError(f"{path}:{lineno}: malformed prediction: {exc}")
            for label, vec in [("pred_hvn", rec.pred_hvn)] + [
                (f"pred_sr[{k}]", v) for k, v in rec.pred_sr.items()
            ]:
                arr = np.asarray(vec, dtype=float)
                if (arr < 0).any() or abs(arr.sum() - 1.0) > 1e-6:
                    raise DataError(
                        f"{path}:{lineno}: {label} is not normalized within 1e-6"
                    )
            records[rec.sample_id] = rec
    return records


def _match(preds: dict[str, PredictionRecord], manifest: DatasetManifest,
           sample_filter=None) -> list[tuple[ToMSample, PredictionRecord]]:
    samples = [s for s in manifest.samples
               if sample_filter is None or sample_filter(s)]
    missing = [s.sample_id for s in samples if s.sample_id not in preds]
    if missing:
        shown = ", ".join(missing[:10])
        raise DataError(
            f"{len(missing)} sample ids missing from predictions: {shown}"
        )
    return [(s, preds[s.sample_id]) for s in samples]


@dataclass
class HvtScore:
    weighted_f1: float
    confusion: dict[tuple[int, int], int]  # (true node, predicted node) -> count
    classes: list[int]

    def normalized_rows(self) -> dict[int, dict[int, float]]:
        """Row-normalized proportions, computed at emission time only."""
        out = {}
        for true in self.classes:
            row = {p: self.confusion.get((true, p), 0) for p in self.classes}
            total = sum(row.values())
            out[true] = {p: (c / total if total else 0.0) for p, c in row.items()}
        return out


def predicted_hvn(sample: ToMSample, record: PredictionRecord) -> int:
    """Argmax over the sample's candidate nodes; ties go to the lowest id."""
    if len(record.pred_hvn) != len(sample.hvns):
        raise DataError(
            f"sample {sample.sample_id}: pred_hvn has {len(record.pred_hvn)} "
            f"entries, expected {len(sample.hvns)}"
        )
    best = max(record.pred_hvn)
    return min(h for h, p in zip(sample.hvns, record.pred_hvn) if p == best)


def weighted_f1(y_true, y_pred) -> float:
    """Support-weighted one-vs-rest F1 over the classes present in y_true."""
    y_true = list(y_true)
    y_pred = list(y_pred)
    total = 0.0
    for c in sorted(set(y_true)):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        precision = tp / (tp + fp) if (tp + fp) else 0.0
        recall = tp / (tp + fn) if (tp + fn) else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if (precision + recall) else 0.0)
        support = sum(1 for t in y_true if t == c)
        total += support / len(y_true) * f1
    return total


def score_hvt(preds: dict[str, PredictionRecord],
              manifest: DatasetManifest, sample_filter=None) -> HvtScore:
    pairs = _match(preds, manifest, sample_filter)
    if not pairs:
        raise DataError("no samples to score")
    y_true = [s.truth_hvn for s, _ in pairs]
    y_pred = [predicted_hvn(s, r) for s, r in pairs]
    confusion: dict[tuple[int, int], int] = {}
    for t, p in zip(y_true, y_pred):
        confusion[(t, p)] = confusion.get((t, p), 0) + 1
    classes = sorted(set(y_true) | set(y_pred))
    return HvtScore(
        weighted_f1=weighted_f1(y_true, y_pred),
        confusion=confusion,
        classes=classes,
    )


@dataclass(frozen=True)
class SrScoreRow:
    sample_id: str
    network: str
    gamma: str
    coefficient: float
    value: float


@dataclass
class SrScores:
    rows: list[SrScoreRow]

    def stats(self) -> list[dict]:
        """Mean/median/quartile summaries per (network, gamma, coefficient)."""
        keys = sorted({(r.network, r.gamma, r.coefficient) for r in self.rows})
        out = []
        for network, gamma, coef in keys:
            vals = np.array([r.value for r in self.rows
                             if (r.network, r.gamma, r.coefficient)
                             == (network, gamma, coef)])
            out.append({
                "network": network,
                "gamma": gamma,
                "coefficient": coef,
                "count": int(vals.size),
                "mean": float(vals.mean()),
                "median": float(np.median(vals)),
                "q25": float(np.quantile(vals, 0.25)),
                "q75": float(np.quantile(vals, 0.75)),
            })
        return out


def _sample_remoteness(sample: ToMSample) -> np.ndarray:
    net, cm = topology(sample.network)
    placement_dist = np.minimum(
        cm.dist[sample.entry], cm.dist[sample.truth_hvn]
    ).astype(float)
    return placement_dist


def score_sr(preds: dict[str, PredictionRecord], manifest: DatasetManifest,
             coefficients=DEFAULT_COEFFICIENTS, floor: float = DEFAULT_FLOOR,
             gammas=None, sample_filter=None) -> SrScores:
    """Transport-distance scores per sample, discount, and weighting.

    The weighting feature is node remoteness (hop distance to the nearer of
    the entry and the true target); a zero coefficient makes the feature
    vector constant, which the weight combiner maps to all-ones, so the
    neutral column equals the unweighted metric exactly.
    """
    pairs = _match(preds, manifest, sample_filter)
    gamma_keys = ([gamma_key(g) for g in gammas] if gammas is not None
                  else [gamma_key(g) for g in manifest.gammas])
    known = {gamma_key(g) for g in manifest.gammas}
    rows = []
    for sample, record in pairs:
        for key in record.pred_sr:
            if key not in known:
                raise DataError(
                    f"sample {sample.sample_id}: prediction provides gamma "
                    f"{key} absent from the manifest"
                )
        net, cm = topology(sample.network)
        remoteness = _sample_remoteness(sample)
        for key in gamma_keys:
            if key not in record.pred_sr:
                raise DataError(
                    f"sample {sample.sample_id}: prediction missing gamma {key}"
                )
            truth = np.asarray(sample.truth_sr[key], dtype=float)
            pred = np.asarray(record.pred_sr[key], dtype=float)
            # Predictions are validated to 1e-6 on read; bring stragglers up
            # to the metric's tighter tolerance without disturbing vectors
            # that already meet it (an exact match must score exactly zero).
            total = pred.sum()
            if abs(total - 1.0) > 1e-9:
                pred = pred / total
            pred = check_distribution(pred, net.node_count, "pred_sr")
            for coef in coefficients:
                config = WeightingConfig(
                    features=(remoteness,), coefficients=(float(coef),),
                    floor=floor,
                )
                value = ntd_weighted(pred, truth, cm, config)
                rows.append(SrScoreRow(
                    sample_id=sample.sample_id,
                    network=sample.network,
                    gamma=key,
                    coefficient=float(coef),
                    value=float(value),
                ))
    return SrScores(rows=rows)


@dataclass(frozen=True)
class WeightingGap:
    sample_id: str
    gap: float
    value_positive: float
    value_negative: float
    pred_sr: tuple[float, ...]
    truth_sr: tuple[float, ...]


def max_weighting_gap(preds: dict[str, PredictionRecord],
                      manifest: DatasetManifest, gamma: float | str,
                      floor: float = DEFAULT_FLOOR,
                      sample_filter=None) -> WeightingGap:
    """The sample whose score moves most when the remoteness coefficient
    flips from -1 to +1; ships both vectors for plotting."""
    key = gamma if isinstance(gamma, str) else gamma_key(gamma)
    scores = score_sr(preds, manifest, coefficients=(-1.0, 1.0), floor=floor,
                      gammas=None, sample_filter=sample_filter)
    by_sample: dict[str, dict[float, float]] = {}
    for row in scores.rows:
        if row.gamma == key:
            by_sample.setdefault(row.sample_id, {})[row.coefficient] = row.value
    if not by_sample:
        raise DataError(f"no samples in the stratum for gamma {key}")
    best_id, best_gap = None, -1.0
    for sid, vals in sorted(by_sample.items()):
        gap = abs(vals[1.0] - vals[-1.0])
        if gap > best_gap:
            best_id, best_gap = sid, gap
    sample = next(s for s in manifest.samples if s.sample_id == best_id)
    record = preds[best_id]
    return WeightingGap(
        sample_id=best_id,
        gap=best_gap,
        value_positive=by_sample[best_id][1.0],
        value_negative=by_sample[best_id][-1.0],
        pred_sr=record.pred_sr[key],
        truth_sr=sample.truth_sr[key],
    )


# ---------------------------------------------------------------------------
# Hedging analysis
# ---------------------------------------------------------------------------


@dataclass
class HedgingResult:
    assignments: np.ndarray
    centroids: np.ndarray
    histogram: list[int]
    labels: list[int]  # dominant branch per cluster, -1 for core-heavy


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    centers = [X[int(rng.integers(len(X)))]]
    for _ in range(1, k):
        d2 = np.min(
            [np.square(X - c).sum(axis=1) for c in centers], axis=0
        )
        total = d2.sum()
        if total <= 0.0:
            centers.append(X[int(rng.integers(len(X)))])
            continue
        centers.append(X[int(rng.choice(len(X), p=d2 / total))])
    return np.stack(centers)


def hedging_clusters(vectors: np.ndarray, k: int, seed: int,
                     branch_of=None, max_iters: int = 300) -> HedgingResult:
    """Single seeded Lloyd run over raw occupancy vectors.

    Plus-plus style seeding, Euclidean distance, ties to the lowest cluster
    index; empty clusters are allowed and simply keep their centroid.
    Clusters are labelled by the network branch holding most of their
    centroid mass when a branch map is supplied.
    """
    X = np.asarray(vectors, dtype=float)
    if X.ndim != 2:
        raise ValueError("vectors must be a 2-d array of row vectors")
    if len(X) < k:
        raise ValueError(f"need at least k={k} samples, got {len(X)}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_init(X, k, rng)
    assignments = np.zeros(len(X), dtype=int)
    for _ in range(max_iters):
        dists = np.stack([np.square(X - c).sum(axis=1) for c in centers])
        new_assignments = dists.argmin(axis=0)
        for j in range(k):
            members = X[new_assignments == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
    histogram = [int((assignments == j).sum()) for j in range(k)]
    labels = []
    for j in range(k):
        if branch_of is None:
            labels.append(-1)
            continue
        mass: dict[int, float] = {}
        for node, branch in enumerate(branch_of):
            mass[branch] = mass.get(branch, 0.0) + centers[j][node]
        best = max(mass.values())
        labels.append(min(b for b, m in mass.items() if m == best))
    return HedgingResult(
        assignments=assignments,
        centroids=centers,
        histogram=histogram,
        labels=labels,
    )


# ---------------------------------------------------------------------------
# Report files
# ---------------------------------------------------------------------------


def write_score_reports(out_dir: str | Path, hvt: HvtScore | None = None,
                        sr: SrScores | None = None,
                        hedging: HedgingResult | None = None) -> list[Path]:
    """JSON and CSV artifacts mirroring the score tables; plot data only."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if hvt is not None:
        payload = {
            "weighted_f1": hvt.weighted_f1,
            "classes": hvt.classes,
            "confusion_counts": [
                {"true": t, "pred": p, "count": c}
                for (t, p), c in sorted(hvt.confusion.items())
            ],
            "confusion_row_normalized": {
                str(t): {str(p): v for p, v in row.items()}
                for t, row in hvt.normalized_rows().items()
            },
        }
        path = out / "hvt_score.json"
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n",
                        encoding="utf-8")
        written.append(path)
    if sr is not None:
        path = out / "sr_scores.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "network", "gamma", "coefficient", "ntd"])
            for row in sr.rows:
                writer.writerow([row.sample_id, row.network, row.gamma,
                                 row.coefficient, format(row.value, ".9g")])
        written.append(path)
        path = out / "sr_stats.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["network", "gamma", "coefficient", "count",
                             "mean", "median", "q25", "q75"])
            for st in sr.stats():
                writer.writerow([st["network"], st["gamma"], st["coefficient"],
                                 st["count"], format(st["mean"], ".9g"),
                                 format(st["median"], ".9g"),
                                 format(st["q25"], ".9g"),
                                 format(st["q75"], ".9g")])
        written.append(path)
    if hedging is not None:
        path = out / "hedging_histogram.csv"
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["cluster", "size", "dominant_branch"])
            for j, (size, label) in enumerate(zip(hedging.histogram,
                                                  hedging.labels)):
                writer.writerow([j, size, label])
        written.append(path)
    return written
