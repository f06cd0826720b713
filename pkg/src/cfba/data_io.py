"""Reading and writing datasets, run configurations, reports and worlds.

Ingestion errors raise :class:`DataError` and configuration problems
raise :class:`ConfigError`; both carry the file (and line, where there
is one) that caused them.  No loader ever returns a partial dataset.
"""
from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .evaluation import REPORT_COLUMNS, MetricReport, UserLog
from .simulation import SyntheticWorld
from .types import Attributes, Demographics, FeedbackMatrix, build_feedback

ML_GENRES = ("unknown", "Action", "Adventure", "Animation", "Children's", "Comedy", "Crime",
             "Documentary", "Drama", "Fantasy", "Film-Noir", "Horror", "Musical", "Mystery",
             "Romance", "Sci-Fi", "Thriller", "War", "Western")
N_OCCUPATION_COLUMNS = 16
POOLED_OCCUPATIONS = ("other", "none")


class DataError(ValueError):
    pass


class ConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feedback plus side information, with the raw event stream kept for replay.

    ``events`` holds dense ``(user, item, value, timestamp)`` columns in
    source order; ``feedback`` keeps the last value of repeated pairs.
    """

    feedback: FeedbackMatrix
    demographics: Optional[Demographics]
    attributes: Optional[Attributes]
    id_maps: dict
    events: dict
    feature_names: dict = field(default_factory=dict)

    @property
    def timestamps(self) -> np.ndarray:
        return self.events["timestamp"]

    def record_counts(self) -> np.ndarray:
        return np.bincount(self.events["user"], minlength=self.feedback.n_users)

    def user_logs(self, users: Optional[Sequence[int]] = None) -> list[UserLog]:
        """Per-user event sequences ordered by timestamp, ties by item index."""
        ev = self.events
        order = np.lexsort((ev["item"], ev["timestamp"], ev["user"]))
        u, j, r = ev["user"][order], ev["item"][order], ev["value"][order]
        bounds = np.searchsorted(u, np.arange(self.feedback.n_users + 1))
        users = range(self.feedback.n_users) if users is None else users
        d = None if self.demographics is None else self.demographics.matrix
        out = []
        for i in users:
            lo, hi = bounds[i], bounds[i + 1]
            out.append(UserLog(int(i), j[lo:hi], r[lo:hi], None if d is None else d[i]))
        return out


def _split(path: Path, sep: str, width: Optional[int], min_width: Optional[int] = None):
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with open(path, encoding="latin-1") as f:
        for n, line in enumerate(f, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            fields = line.split(sep)
            if (width is not None and len(fields) != width) or \
                    (min_width is not None and len(fields) < min_width):
                expected = width if width is not None else f">= {min_width}"
                raise DataError(f"{path}, line {n}: expected {expected} fields, got {len(fields)}")
            yield n, fields


def _int(text: str, path: Path, line: int, what: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise DataError(f"{path}, line {line}: {what} {text!r} is not an integer") from None


def occupation_columns(occupations: Sequence[str]) -> tuple[str, ...]:
    """The named occupation columns: most frequent first, ties by name.

    All remaining occupations, including the catch-all ones, share the
    final pooled column.
    """
    counts = Counter(o for o in occupations if o not in POOLED_OCCUPATIONS)
    ranked = sorted(counts, key=lambda o: (-counts[o], o))
    return tuple(ranked[:N_OCCUPATION_COLUMNS - 1])


def load_movielens(directory, standardize_age: bool = False) -> Dataset:
    """Read a MovieLens 100k directory (``u.data``, ``u.user``, ``u.item``).

    User columns: 16 occupation indicators, age in years, and a female
    flag.  Item columns: the 18 named genre flags.  Dense indices follow
    the sorted numeric IDs of the files.
    """
    root = Path(directory)
    for name in ("u.data", "u.user", "u.item"):
        if not (root / name).is_file():
            raise DataError(f"{root / name}: file not found")

    users = {}
    for n, (uid, age, gender, occupation, zipcode) in _split(root / "u.user", "|", 5):
        users[_int(uid, root / "u.user", n, "user id")] = (
            _int(age, root / "u.user", n, "age"), gender.strip().upper(), occupation.strip())
    items = {}
    for n, fields in _split(root / "u.item", "|", None, 5 + len(ML_GENRES)):
        flags = fields[-len(ML_GENRES):]
        try:
            vec = [int(x) for x in flags]
        except ValueError:
            raise DataError(f"{root / 'u.item'}, line {n}: genre flags must be 0/1") from None
        items[_int(fields[0], root / "u.item", n, "item id")] = vec[1:]

    raw = []
    for n, (uid, iid, rating, ts) in _split(root / "u.data", "\t", 4):
        path = root / "u.data"
        raw.append((_int(uid, path, n, "user id"), _int(iid, path, n, "item id"),
                    _int(rating, path, n, "rating"), _int(ts, path, n, "timestamp"), n))

    user_ids = sorted(users)
    item_ids = sorted(items)
    umap = {e: k for k, e in enumerate(user_ids)}
    imap = {e: k for k, e in enumerate(item_ids)}
    for uid, iid, _, _, n in raw:
        if uid not in umap:
            raise DataError(f"{root / 'u.data'}, line {n}: user {uid} missing from u.user")
        if iid not in imap:
            raise DataError(f"{root / 'u.data'}, line {n}: item {iid} missing from u.item")

    occ_cols = occupation_columns([users[u][2] for u in user_ids])
    demo = np.zeros((len(user_ids), N_OCCUPATION_COLUMNS + 2))
    for k, uid in enumerate(user_ids):
        age, gender, occupation = users[uid]
        slot = occ_cols.index(occupation) if occupation in occ_cols else N_OCCUPATION_COLUMNS - 1
        demo[k, slot] = 1.0
        demo[k, -2] = age
        demo[k, -1] = 1.0 if gender == "F" else 0.0
    if standardize_age:
        col = demo[:, -2]
        demo[:, -2] = (col - col.mean()) / col.std()
    attrs = np.array([items[i] for i in item_ids], dtype=np.float64)

    events = {
        "user": np.array([umap[r[0]] for r in raw], dtype=np.int64),
        "item": np.array([imap[r[1]] for r in raw], dtype=np.int64),
        "value": np.array([r[2] for r in raw], dtype=np.float64),
        "timestamp": np.array([r[3] for r in raw], dtype=np.int64),
    }
    feedback = build_feedback(zip(events["user"], events["item"], events["value"]),
                              len(user_ids), len(item_ids))
    # small files may name fewer occupations than there are slots
    spare = [f"unused-occupation-{n}" for n in range(len(occ_cols), N_OCCUPATION_COLUMNS - 1)]
    names = {"demographics": [*occ_cols, *spare, "pooled-occupation", "age", "female"],
             "attributes": list(ML_GENRES[1:])}
    return Dataset(feedback, Demographics(demo), Attributes(attrs),
                   {"user": umap, "item": imap}, events, names)


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    if not path.is_file():
        raise DataError(f"{path}: file not found")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: missing header row") from None
        rows = [r for r in reader if r]
    dupes = sorted(c for c, n in Counter(header).items() if n > 1)
    if dupes:
        raise DataError(f"{path}: duplicate header columns {dupes}")
    return header, rows


def _sidecar(path: Optional[str], id_column: str, mapping: dict, what: str) -> Optional[np.ndarray]:
    if path is None:
        return None
    path = Path(path)
    header, rows = _read_csv(path)
    if id_column not in header:
        raise DataError(f"{path}: id column {id_column!r} not in header")
    key = header.index(id_column)
    out = np.full((len(mapping), len(header) - 1), np.nan)
    for n, row in enumerate(rows, start=2):
        ext = row[key]
        if ext not in mapping:
            continue
        try:
            out[mapping[ext]] = [float(x) for c, x in enumerate(row) if c != key]
        except ValueError:
            raise DataError(f"{path}, line {n}: non-numeric {what} value") from None
    missing = np.isnan(out).any(axis=1)
    if missing.any():
        first = next(e for e, k in mapping.items() if missing[k])
        raise DataError(f"{path}: no {what} row for id {first!r}")
    return out


def load_log_csv(path, schema: dict) -> Dataset:
    """Generic interaction log with a header row.

    ``schema`` maps ``user``, ``item`` and ``value`` (required) and
    ``timestamp`` (optional) to column names.  Optional keys
    ``demographics`` / ``attributes`` name sidecar CSVs keyed by the
    external id in their first column (or the column named by
    ``user_id_column`` / ``item_id_column``).  IDs are remapped to dense
    indices in order of first appearance.
    """
    path = Path(path)
    header, rows = _read_csv(path)
    required = ("user", "item", "value")
    unknown = set(schema) - {*required, "timestamp", "demographics", "attributes",
                             "user_id_column", "item_id_column"}
    if unknown:
        raise DataError(f"unknown schema keys {sorted(unknown)}")
    cols = {}
    for role in (*required, "timestamp"):
        if role not in schema:
            if role == "timestamp":
                continue
            raise DataError(f"schema does not map the {role!r} column")
        if schema[role] not in header:
            raise DataError(f"{path}: column {schema[role]!r} for {role} not in header {header}")
        cols[role] = header.index(schema[role])

    umap, imap = {}, {}
    us, js, vs, ts = [], [], [], []
    for n, row in enumerate(rows, start=2):
        if len(row) != len(header):
            raise DataError(f"{path}, line {n}: expected {len(header)} fields, got {len(row)}")
        try:
            value = float(row[cols["value"]])
        except ValueError:
            raise DataError(f"{path}, line {n}: value {row[cols['value']]!r} is not numeric") from None
        stamp = n
        if "timestamp" in cols:
            try:
                stamp = int(float(row[cols["timestamp"]]))
            except ValueError:
                raise DataError(f"{path}, line {n}: timestamp is not numeric") from None
        us.append(umap.setdefault(row[cols["user"]], len(umap)))
        js.append(imap.setdefault(row[cols["item"]], len(imap)))
        vs.append(value)
        ts.append(stamp)
    if not us:
        raise DataError(f"{path}: no interaction rows")
    events = {"user": np.array(us, dtype=np.int64), "item": np.array(js, dtype=np.int64),
              "value": np.array(vs), "timestamp": np.array(ts, dtype=np.int64)}
    feedback = build_feedback(zip(us, js, vs), len(umap), len(imap))
    d = _sidecar(schema.get("demographics"), schema.get("user_id_column", None) or
                 _first_column(schema.get("demographics")), umap, "demographic")
    a = _sidecar(schema.get("attributes"), schema.get("item_id_column", None) or
                 _first_column(schema.get("attributes")), imap, "attribute")
    return Dataset(feedback, None if d is None else Demographics(d),
                   None if a is None else Attributes(a), {"user": umap, "item": imap}, events)


def _first_column(path: Optional[str]) -> str:
    if path is None:
        return ""
    header, _ = _read_csv(Path(path))
    return header[0]


# ---------------------------------------------------------------------------
# reports


def save_report(reports: Sequence[MetricReport] | MetricReport, path) -> None:
    if isinstance(reports, MetricReport):
        reports = [reports]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for rep in reports:
            for row in rep.rows():
                writer.writerow(row[:4] + (repr(row[4]),) + row[5:])


def read_report_rows(path) -> list[dict]:
    path = Path(path)
    header, rows = _read_csv(path)
    if tuple(header) != REPORT_COLUMNS:
        raise DataError(f"{path}: expected columns {list(REPORT_COLUMNS)}, got {header}")
    out = []
    for n, row in enumerate(rows, start=2):
        try:
            out.append({"method": row[0], "T": int(row[1]), "period": int(row[2]),
                        "metric": row[3], "value": float(row[4]), "seed": row[5]})
        except (ValueError, IndexError):
            raise DataError(f"{path}, line {n}: malformed report row") from None
    return out


def load_report(path) -> list[MetricReport]:
    """Rebuild the reports written by :func:`save_report`, one per (method, T, seed)."""
    groups: dict[tuple, dict] = {}
    for r in read_report_rows(path):
        g = groups.setdefault((r["method"], r["T"], r["seed"]), {"car": {}, "retained": 0.0})
        if r["metric"] == "car":
            g["car"][r["period"]] = r["value"]
        elif r["metric"] == "retained":
            g["retained"] = r["value"]
    out = []
    for (method, t, seed), g in groups.items():
        curve = np.array([g["car"][p] for p in sorted(g["car"])])
        seed_val = int(seed) if seed.lstrip("-").isdigit() else seed
        out.append(MetricReport(float(curve[-1]) if curve.size else math.nan, curve,
                                np.array([g["retained"]]),
                                {"method": method, "T": t, "seed": seed_val}))
    return out


# ---------------------------------------------------------------------------
# configuration

CONFIG_DEFAULTS = {
    "seed": 0,
    "seeds": None,
    "methods": ["random", "popularity", "active-learning", "ts", "ucb", "ts-pca", "ucb-pca",
                "cfb", "cfba"],
    # synthetic worlds
    "setting": "nonlinear",
    "n_users": 1000,
    "n_items": 1000,
    "p": 50,
    "q": 300,
    "k_true": 5,
    "new_users": 200,
    # horizon and slates
    "T": 15,
    "slate_size": None,
    "phases": None,
    # model and policy
    "k": 5,
    "sigma2": 1.0,
    "sigma_d2": 1.0,
    "sigma_a2": 1.0,
    "lambda_u": 1.0,
    "lambda_v": 1.0,
    "lambda_w": 1.0,
    "lambda_psi": 1.0,
    "alpha": 1.0,
    "schedule": "log-t",
    "empirical_priors": False,
    "fit_mode": "map",
    "sweeps": 30,
    "center": False,
    "update": "consistent",
    "selector": "ucb",
    "fix_loadings": False,
    "pca_components": None,
    "popularity_prior": 0.0,
    "overrides": {},
    # data
    "data_dir": None,
    "log_path": None,
    "log_schema": None,
    "standardize_age": False,
    "test_users": 200,
    # tuning
    "tune_method": "cfba",
    "split_fraction": 0.8,
    "grid_k": None,
    "grid_alpha": None,
    "grid_sigma2": None,
    "metric": "car",
}


def resolve_config(doc: dict, source: str = "<config>") -> dict:
    """Defaults overlaid with ``doc``; unknown keys raise :class:`ConfigError`."""
    if not isinstance(doc, dict):
        raise ConfigError(f"{source}: configuration must be a JSON object")
    unknown = sorted(set(doc) - set(CONFIG_DEFAULTS))
    if unknown:
        raise ConfigError(f"{source}: unknown configuration keys: {', '.join(unknown)}")
    cfg = json.loads(json.dumps(CONFIG_DEFAULTS))
    cfg.update(doc)
    if not isinstance(cfg["methods"], list):
        raise ConfigError(f"{source}: methods must be a list")
    if not isinstance(cfg["overrides"], dict):
        raise ConfigError(f"{source}: overrides must map method names to parameter objects")
    return cfg


def load_config(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}, line {exc.lineno}: {exc.msg}") from None
    return resolve_config(doc, str(path))


def save_config(cfg: dict, path) -> None:
    Path(path).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# synthetic worlds


def _write_matrix(path: Path, mat: np.ndarray, prefix: str) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow([f"{prefix}{c}" for c in range(mat.shape[1])])
        for row in mat:
            writer.writerow([repr(float(x)) for x in row])


def _read_matrix(path: Path) -> np.ndarray:
    _, rows = _read_csv(path)
    return np.array([[float(x) for x in r] for r in rows])


def save_world(world: SyntheticWorld, directory) -> None:
    """Write a world as CSV matrices plus ``world.json``.

    ``utility.csv`` is users x items (header ``item0..``), while
    ``demographics.csv`` and ``attributes.csv`` carry one row per user
    or item.  Every generator parameter is written to ``truth_<name>.csv``.
    Values use shortest round-trip formatting, so reading back is exact.
    """
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    _write_matrix(root / "utility.csv", world.utility, "item")
    _write_matrix(root / "demographics.csv", world.d.matrix, "d")
    _write_matrix(root / "attributes.csv", world.a.matrix, "a")
    scalars = {}
    for name, value in world.truth.items():
        if np.ndim(value) == 2:
            _write_matrix(root / f"truth_{name}.csv", np.asarray(value), "c")
        else:
            scalars[name] = value
    meta = {"setting": world.setting, "seed": world.seed, "scalars": scalars,
            "matrices": sorted(n for n, v in world.truth.items() if np.ndim(v) == 2)}
    (root / "world.json").write_text(json.dumps(meta, indent=2) + "\n")


def load_world(directory) -> SyntheticWorld:
    root = Path(directory)
    meta = json.loads((root / "world.json").read_text())
    truth = dict(meta["scalars"])
    for name in meta["matrices"]:
        truth[name] = _read_matrix(root / f"truth_{name}.csv")
    return SyntheticWorld(_read_matrix(root / "utility.csv"),
                          Demographics(_read_matrix(root / "demographics.csv")),
                          Attributes(_read_matrix(root / "attributes.csv")),
                          truth, meta["setting"], meta["seed"])
