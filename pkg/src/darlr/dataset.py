"""Offline recommendation datasets: loading, synthesis, behavior statistics.

A dataset is an interaction log plus user/item catalogs and, for the
evaluation environment only, a dense ground-truth feedback matrix. The
CSV layout is fixed: interactions.csv, users.csv, items.csv, optional
truth.csv, and manifest.json declaring the feedback range.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .nncore import rng_stream


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class InteractionRecord:
    user_id: int
    item_id: int
    feedback: float
    step: int


@dataclass
class ItemCatalog:
    count: int
    primary_category: np.ndarray  # (|I|,) int
    features: np.ndarray  # (|I|, n_feat) int

    @property
    def n_categories(self):
        return int(self.primary_category.max()) + 1


@dataclass
class UserCatalog:
    count: int
    features: np.ndarray  # (|U|, n_feat) int


@dataclass
class Dataset:
    train_log: list
    users: UserCatalog
    items: ItemCatalog
    truth_matrix: np.ndarray | None
    r_min: float
    r_max: float
    name: str = ""
    seed: int | None = None

    @property
    def n_users(self):
        return self.users.count

    @property
    def n_items(self):
        return self.items.count


@dataclass
class SyntheticSpec:
    users: int
    items: int
    categories: int = 5
    latent_dim: int = 4
    noise_sd: float = 0.05
    log_density: float = 0.05
    popularity_skew: float = 1.0
    seed: int = 0

    def validate(self):
        if self.users < 2:
            raise DatasetError("need >=2 users")
        if self.items < 2:
            raise DatasetError("need >=2 items")
        if not (0.0 < self.log_density <= 1.0):
            raise DatasetError("log_density must be in (0, 1]")
        if self.noise_sd < 0:
            raise DatasetError("noise_sd must be >= 0")
        if self.latent_dim < 1:
            raise DatasetError("latent_dim must be >= 1")
        if not (1 <= self.categories <= self.items):
            raise DatasetError("categories must be in [1, items]")
        if self.popularity_skew < 0:
            raise DatasetError("popularity_skew must be >= 0")


def _dense_labels(rng, n, n_labels):
    """Random label per position, with every label in [0, n_labels) present."""
    n_labels = min(n_labels, n)
    labels = np.concatenate(
        [np.arange(n_labels), rng.integers(0, n_labels, size=n - n_labels)]
    )
    return labels[rng.permutation(n)]


def generate_synthetic(spec: SyntheticSpec) -> Dataset:
    """Low-rank truth matrix plus a popularity-skewed sparse log.

    truth[u, i] = clip(sigmoid(x_u . y_i) + noise, 0, 1) with seeded latent
    factors; the log observes a density-sized subset of cells, item choice
    skewed by a Zipf-like popularity weight, with fresh observation noise.
    Fully deterministic in spec.seed.
    """
    spec.validate()
    rng = rng_stream(spec.seed, "synthetic")
    nu, ni, nl = spec.users, spec.items, spec.latent_dim

    x = rng.normal(size=(nu, nl))
    y = rng.normal(size=(ni, nl))
    logits = x @ y.T / math.sqrt(nl)
    truth = 1.0 / (1.0 + np.exp(-logits))
    truth = np.clip(truth + rng.normal(0.0, 1.0, size=truth.shape) * spec.noise_sd, 0.0, 1.0)

    categories = _dense_labels(rng, ni, spec.categories)
    user_groups = _dense_labels(rng, nu, min(4, nu))

    pop_rank = rng.permutation(ni)
    weights = np.empty(ni)
    weights[pop_rank] = 1.0 / (np.arange(ni) + 1.0) ** spec.popularity_skew
    weights /= weights.sum()
    n_tiers = min(4, ni)
    tiers = np.empty(ni, dtype=np.int64)
    tiers[pop_rank] = (np.arange(ni) * n_tiers) // ni
    item_features = tiers.reshape(-1, 1)
    user_features = user_groups.reshape(-1, 1)

    # weighted sampling of cells without replacement (exponential-key trick)
    n_records = int(round(spec.log_density * nu * ni))
    n_records = max(1, min(n_records, nu * ni))
    cell_w = np.tile(weights, nu)  # uniform over users, skewed over items
    keys = np.log(rng.random(nu * ni)) / cell_w
    order = np.lexsort((np.arange(nu * ni), -keys))
    chosen = order[:n_records]
    chosen = chosen[rng.permutation(n_records)]  # per-user interaction order
    users_c = chosen // ni
    items_c = chosen % ni

    fb = truth[users_c, items_c]
    if spec.noise_sd > 0:
        fb = np.clip(fb + rng.normal(0.0, spec.noise_sd, size=n_records), 0.0, 1.0)

    next_step = np.zeros(nu, dtype=np.int64)
    log = []
    for u, i, r in zip(users_c, items_c, fb):
        log.append(InteractionRecord(int(u), int(i), float(r), int(next_step[u])))
        next_step[u] += 1
    log.sort(key=lambda rec: (rec.user_id, rec.step))

    return Dataset(
        train_log=log,
        users=UserCatalog(count=nu, features=user_features),
        items=ItemCatalog(count=ni, primary_category=categories, features=item_features),
        truth_matrix=truth,
        r_min=0.0,
        r_max=1.0,
        name=f"synthetic-{spec.seed}",
        seed=spec.seed,
    )


def save_dataset(d: Dataset, dir_path):
    """Write the CSV + manifest layout under dir_path."""
    out = Path(dir_path)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "interactions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id", "item_id", "feedback", "step"])
        for rec in d.train_log:
            w.writerow([rec.user_id, rec.item_id, repr(rec.feedback), rec.step])

    n_uf = d.users.features.shape[1]
    with open(out / "users.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["user_id"] + [f"feat_{j}" for j in range(n_uf)])
        for u in range(d.users.count):
            w.writerow([u] + [int(v) for v in d.users.features[u]])

    n_if = d.items.features.shape[1]
    with open(out / "items.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["item_id", "category"] + [f"feat_{j}" for j in range(n_if)])
        for i in range(d.items.count):
            w.writerow(
                [i, int(d.items.primary_category[i])]
                + [int(v) for v in d.items.features[i]]
            )

    if d.truth_matrix is not None:
        with open(out / "truth.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["user_id", "item_id", "feedback"])
            for u in range(d.users.count):
                for i in range(d.items.count):
                    w.writerow([u, i, repr(float(d.truth_matrix[u, i]))])

    manifest = {"r_min": d.r_min, "r_max": d.r_max, "name": d.name, "seed": d.seed}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_csv(path, expect_prefix):
    if not path.exists():
        raise DatasetError(f"missing file: {path.name}")
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path.name}: missing header row")
    header = rows[0]
    if header[: len(expect_prefix)] != expect_prefix:
        raise DatasetError(f"{path.name}: header must start with {expect_prefix}")
    return header, rows[1:]


def _dense_remap(values):
    uniq = sorted(set(values))
    remap = {v: i for i, v in enumerate(uniq)}
    return [remap[v] for v in values]


def load_dataset(dir_path) -> Dataset:
    """Load and validate the CSV layout; ids re-indexed densely."""
    root = Path(dir_path)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DatasetError("missing file: manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    for key in ("r_min", "r_max"):
        if key not in manifest:
            raise DatasetError(f"manifest.json: missing '{key}'")
    r_min, r_max = float(manifest["r_min"]), float(manifest["r_max"])

    _, user_rows = _read_csv(root / "users.csv", ["user_id"])
    if not user_rows:
        raise DatasetError("users.csv: no users")
    raw_uid = [int(r[0]) for r in user_rows]
    if len(set(raw_uid)) != len(raw_uid):
        raise DatasetError("users.csv: duplicate user_id")
    uid_order = np.argsort(raw_uid, kind="stable")
    user_remap = {raw_uid[j]: i for i, j in enumerate(uid_order)}
    n_uf = len(user_rows[0]) - 1
    user_features = np.zeros((len(user_rows), max(n_uf, 1)), dtype=np.int64)
    for j in uid_order:
        row = user_rows[j]
        feats = [int(v) for v in row[1:]] if n_uf else [0]
        user_features[user_remap[raw_uid[j]]] = feats
    for col in range(user_features.shape[1]):
        dense = _dense_remap(user_features[:, col].tolist())
        user_features[:, col] = dense

    header, item_rows = _read_csv(root / "items.csv", ["item_id", "category"])
    if not item_rows:
        raise DatasetError("items.csv: no items")
    raw_iid = [int(r[0]) for r in item_rows]
    if len(set(raw_iid)) != len(raw_iid):
        raise DatasetError("items.csv: duplicate item_id")
    iid_order = np.argsort(raw_iid, kind="stable")
    item_remap = {raw_iid[j]: i for i, j in enumerate(iid_order)}
    n_if = len(item_rows[0]) - 2
    categories = np.zeros(len(item_rows), dtype=np.int64)
    item_features = np.zeros((len(item_rows), max(n_if, 1)), dtype=np.int64)
    for j in iid_order:
        row = item_rows[j]
        idx = item_remap[raw_iid[j]]
        categories[idx] = int(row[1])
        item_features[idx] = [int(v) for v in row[2:]] if n_if else [0]
    dense_cat = _dense_remap(categories.tolist())
    categories = np.asarray(dense_cat, dtype=np.int64)
    for col in range(item_features.shape[1]):
        dense = _dense_remap(item_features[:, col].tolist())
        item_features[:, col] = dense

    _, inter_rows = _read_csv(root / "interactions.csv", ["user_id", "item_id", "feedback", "step"])
    if not inter_rows:
        raise DatasetError("empty log")
    log = []
    seen = set()
    for row in inter_rows:
        ru, ri = int(row[0]), int(row[1])
        if ru not in user_remap or ri not in item_remap:
            raise DatasetError(f"interactions.csv: id out of range ({ru},{ri})")
        fb = float(row[2])
        if not (r_min - 1e-12 <= fb <= r_max + 1e-12):
            raise DatasetError(f"interactions.csv: feedback {fb} outside [{r_min},{r_max}]")
        step = int(row[3])
        key = (ru, ri, step)
        if key in seen:
            raise DatasetError(f"interactions.csv: duplicate (user,item,step) {key}")
        seen.add(key)
        log.append(InteractionRecord(user_remap[ru], item_remap[ri], fb, step))
    log.sort(key=lambda rec: (rec.user_id, rec.step))

    truth = None
    truth_path = root / "truth.csv"
    if truth_path.exists():
        _, truth_rows = _read_csv(truth_path, ["user_id", "item_id", "feedback"])
        truth = np.full((len(user_rows), len(item_rows)), np.nan)
        for row in truth_rows:
            ru, ri = int(row[0]), int(row[1])
            if ru not in user_remap or ri not in item_remap:
                raise DatasetError(f"truth.csv: id out of range ({ru},{ri})")
            truth[user_remap[ru], item_remap[ri]] = float(row[2])
        if np.isnan(truth).any():
            raise DatasetError("truth.csv: matrix is not dense")

    return Dataset(
        train_log=log,
        users=UserCatalog(count=len(user_rows), features=user_features),
        items=ItemCatalog(count=len(item_rows), primary_category=categories, features=item_features),
        truth_matrix=truth,
        r_min=r_min,
        r_max=r_max,
        name=str(manifest.get("name", "")),
        seed=manifest.get("seed"),
    )


def content_hash(d: Dataset) -> str:
    """Stable hash of the dataset contents (used by checkpoint manifests)."""
    h = hashlib.sha256()
    h.update(f"{d.n_users},{d.n_items},{d.r_min!r},{d.r_max!r}".encode())
    h.update(d.users.features.astype("<i8").tobytes())
    h.update(d.items.primary_category.astype("<i8").tobytes())
    h.update(d.items.features.astype("<i8").tobytes())
    for rec in d.train_log:
        h.update(f"{rec.user_id},{rec.item_id},{rec.feedback!r},{rec.step}".encode())
    if d.truth_matrix is not None:
        h.update(d.truth_matrix.astype("<f8").tobytes())
    return h.hexdigest()


# --- behavior-policy statistics ---------------------------------------------

@dataclass
class BehaviorStats:
    """Category k-gram counts of the logged behavior policy.

    pattern_counts maps category tuples of length 1..order to next-item
    count vectors; item_totals is the unconditional count vector. Queries
    back off to shorter suffixes, ending at the unconditional counts.
    """

    order: int
    alpha: float
    n_items: int
    pattern_counts: dict = field(default_factory=dict)
    item_totals: np.ndarray = None

    def counts_for(self, pattern):
        """Longest-suffix backoff lookup; returns the matched count vector."""
        pattern = tuple(int(c) for c in pattern)[-self.order :] if self.order else ()
        while pattern:
            if pattern in self.pattern_counts:
                return self.pattern_counts[pattern]
            pattern = pattern[1:]
        return self.item_totals

    def probs(self, pattern):
        """Laplace-smoothed conditional next-item distribution."""
        counts = self.counts_for(pattern)
        total = counts.sum()
        return (counts + self.alpha) / (total + self.alpha * self.n_items)


def behavior_stats(d: Dataset, k: int, alpha: float = 1.0) -> BehaviorStats:
    """Count category k-grams (all orders 0..k) over each user's ordered log."""
    if k < 0:
        raise ValueError("k must be >= 0")
    if alpha <= 0:
        raise ValueError("alpha must be > 0")
    stats = BehaviorStats(order=k, alpha=alpha, n_items=d.n_items)
    stats.item_totals = np.zeros(d.n_items)
    cat = d.items.primary_category

    by_user = {}
    for rec in d.train_log:
        by_user.setdefault(rec.user_id, []).append(rec)
    for recs in by_user.values():
        recs.sort(key=lambda r: r.step)
        items = [r.item_id for r in recs]
        for j, item in enumerate(items):
            stats.item_totals[item] += 1
            for m in range(1, k + 1):
                if j < m:
                    break
                pattern = tuple(int(cat[items[j - p]]) for p in range(m, 0, -1))
                vec = stats.pattern_counts.get(pattern)
                if vec is None:
                    vec = np.zeros(d.n_items)
                    stats.pattern_counts[pattern] = vec
                vec[item] += 1
    return stats
