"""End-to-end runs with a content-addressed artifact cache.

Stages run in order: load -> train -> cluster -> augment -> estimate ->
plan -> evaluate. Every stage's output lives under
``<cache>/<stage>/<key>`` where ``key`` hashes the upstream key and the
config subset the stage reads, so sweeps share whatever a swept parameter
does not touch.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import shutil
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from . import backend, causal, data, evaluation, planner
from .backend import ModelState, TrainConfig
from .causal import HyperParams
from .data import CategoryMap, InteractionRecord

_log = logging.getLogger(__name__)

POLICIES = ("random", "backend", "mtef", "adrf")
STAGES = ("load", "train", "cluster", "augment", "estimate", "plan", "evaluate")

# config-file spelling of each HyperParams field
HP_NAMES = {"lambda": "lam"}


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


class StaleArtifactError(RuntimeError):
    pass


@dataclass(frozen=True)
class RunConfig:
    train_path: str = ""
    unbiased_path: str = ""
    categories_path: str | None = None
    # "cluster" plans over k-means item groups; "labels" plans over the category file
    treatment_categories: str = "cluster"
    data_format: str = "tsv"  # or "coat": train_path is the Coat directory
    has_position: bool = False
    valid_ratio: float = 0.5
    hp: HyperParams = field(default_factory=HyperParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: str = "mtef"
    budget: str = "per_category"
    cutoffs: tuple[int, ...] = (10, 20)
    seed: int = 0
    output_dir: str = "runs/default"
    cache_dir: str | None = None
    override: bool = False
    workers: int = 1

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}")
        if self.budget not in ("per_category", "aggregate"):
            raise ConfigError("budget must be per_category or aggregate")
        if self.treatment_categories not in ("cluster", "labels"):
            raise ConfigError("treatment_categories must be cluster or labels")
        if self.data_format not in ("tsv", "coat"):
            raise ConfigError("data_format must be tsv or coat")
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ConfigError("cutoffs must be positive")

    def validate(self) -> None:
        if self.override:
            return
        problems = self.hp.range_violations()
        if self.train.neg_ratio not in (4, 24):
            problems.append(f"neg_ratio={self.train.neg_ratio} not in (4, 24)")
        if problems:
            raise ConfigError("hyperparameters outside the tuning ranges (set override: true): " + "; ".join(problems))

    @property
    def list_length(self) -> int:
        return max(self.hp.N, max(self.cutoffs))

    @property
    def cache_root(self) -> Path:
        return Path(self.cache_dir) if self.cache_dir else Path(self.output_dir) / "cache"

    def replace(self, **changes) -> RunConfig:
        """Copy with changes; hyperparameter and training names are routed to their groups."""
        hp_fields = {f.name for f in dataclasses.fields(HyperParams)}
        tr_fields = {f.name for f in dataclasses.fields(TrainConfig)}
        top, hp, tr = {}, {}, {}
        for k, v in changes.items():
            k = HP_NAMES.get(k, k)
            if k in hp_fields:
                hp[k] = v
            elif k in tr_fields and k != "seed":
                tr[k] = v
            else:
                top[k] = v
        out = self
        if hp:
            out = dataclasses.replace(out, hp=dataclasses.replace(out.hp, **hp))
        if tr:
            out = dataclasses.replace(out, train=dataclasses.replace(out.train, **tr))
        if top:
            out = dataclasses.replace(out, **top)
        return out

    def to_dict(self) -> dict[str, Any]:
        hp = {}
        for k, v in self.hp.asdict().items():
            name = {v_: k_ for k_, v_ in HP_NAMES.items()}.get(k, k)
            hp[name] = "all" if v is None and k in ("K_p", "K_s") else v
        return {
            "data": {
                "train": self.train_path,
                "unbiased": self.unbiased_path,
                "categories": self.categories_path,
                "treatment_categories": self.treatment_categories,
                "format": self.data_format,
                "has_position": self.has_position,
                "valid_ratio": self.valid_ratio,
            },
            "hyperparams": hp,
            "train": {k: v for k, v in dataclasses.asdict(self.train).items() if k != "seed"},
            "policy": self.policy,
            "budget": self.budget,
            "cutoffs": list(self.cutoffs),
            "seed": self.seed,
            "output_dir": self.output_dir,
            "cache_dir": self.cache_dir,
            "override": self.override,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> RunConfig:
        d = dict(d)
        dat = d.pop("data", {}) or {}
        extra = set(dat) - {"train", "unbiased", "categories", "treatment_categories", "format", "has_position", "valid_ratio"}
        if extra:
            raise ConfigError(f"unknown data keys: {sorted(extra)}")
        hp_in = dict(d.pop("hyperparams", {}) or {})
        tr_in = dict(d.pop("train", {}) or {})
        hp_kw = {}
        known = {f.name for f in dataclasses.fields(HyperParams)}
        for k, v in hp_in.items():
            name = HP_NAMES.get(k, k)
            if name not in known:
                raise ConfigError(f"unknown hyperparameter {k!r}")
            if name in ("K_p", "K_s") and v in ("all", None):
                v = None
            hp_kw[name] = v
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "cutoffs" in d:
            d["cutoffs"] = tuple(int(x) for x in d["cutoffs"])
        try:
            return cls(
                train_path=dat.get("train", ""),
                unbiased_path=dat.get("unbiased", ""),
                categories_path=dat.get("categories"),
                treatment_categories=dat.get("treatment_categories", "cluster"),
                data_format=dat.get("format", "tsv"),
                has_position=bool(dat.get("has_position", False)),
                valid_ratio=float(dat.get("valid_ratio", 0.5)),
                hp=HyperParams(**hp_kw),
                train=TrainConfig(**tr_in),
                **d,
            )
        except TypeError as e:
            raise ConfigError(str(e)) from None


def load_config(path: str | Path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return RunConfig.from_dict(yaml.safe_load(fh) or {})


def save_config(path: str | Path, config: RunConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=False)


def _digest(obj: Any) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _file_digest(path: str | Path) -> str:
    p = Path(path)
    h = hashlib.sha256()
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
    for q in files:
        h.update(str(q.relative_to(p) if p.is_dir() else q.name).encode())
        h.update(q.read_bytes())
    return h.hexdigest()


class ArtifactStore:
    """Stage outputs keyed by content hash; writes are atomic renames."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def path(self, stage: str, key: str) -> Path:
        return self.root / stage / key[:16]

    def lookup(self, stage: str, key: str) -> Path | None:
        p = self.path(stage, key)
        meta = p / "meta.json"
        if not meta.exists():
            return None
        stored = json.loads(meta.read_text())
        if stored.get("key") != key:
            raise StaleArtifactError(f"{p} was built for key {stored.get('key')}, expected {key}")
        return p

    def build(self, stage: str, key: str, inputs: dict, writer: Callable[[Path], None]) -> Path:
        final = self.path(stage, key)
        tmp = final.with_name(final.name + ".tmp")
        if tmp.exists():
            shutil.rmtree(tmp)
        tmp.mkdir(parents=True)
        writer(tmp)
        (tmp / "meta.json").write_text(json.dumps({"stage": stage, "key": key, "inputs": inputs}, sort_keys=True, indent=1, default=str))
        if final.exists():
            shutil.rmtree(final)
        tmp.rename(final)
        return final


@dataclass
class Loaded:
    train: list[InteractionRecord]
    valid: list[InteractionRecord]
    test: list[InteractionRecord]
    n_users: int
    n_items: int
    categories: CategoryMap | None
    ids: data.IdMap | None = None


@dataclass
class RunResult:
    config: RunConfig
    valid: evaluation.MetricReport
    test: evaluation.MetricReport
    recommendations: dict[int, list[tuple[int, float]]]  # dense ids
    keys: dict[str, str]
    timings: dict[str, float]
    built: list[str]


class _Runner:
    def __init__(self, config: RunConfig, fresh: bool):
        self.cfg = config
        self.hp = config.hp
        self.store = ArtifactStore(config.cache_root)
        self.fresh = fresh
        self.keys: dict[str, str] = {}
        self.timings: dict[str, float] = {}
        self.built: list[str] = []

    def stage(self, name: str, upstream: Sequence[str], inputs: dict, writer: Callable[[Path], None]) -> Path:
        key = _digest({"stage": name, "up": [self.keys[u] for u in upstream], "inputs": inputs})
        self.keys[name] = key
        t = time.perf_counter()
        try:
            path = None if self.fresh else self.store.lookup(name, key)
            if path is None:
                _log.info("building stage %s", name)
                path = self.store.build(name, key, inputs, writer)
                self.built.append(name)
            else:
                _log.info("reusing stage %s from %s", name, path)
        except StaleArtifactError:
            raise
        except Exception as e:  # noqa: BLE001 - re-raised with the stage name
            raise StageError(name, e) from e
        self.timings[name] = time.perf_counter() - t
        return path

    # -- load -------------------------------------------------------------
    def load(self) -> Loaded:
        cfg = self.cfg
        src = {
            "train": _file_digest(cfg.train_path),
            "unbiased": _file_digest(cfg.unbiased_path) if cfg.data_format == "tsv" else None,
            "categories": _file_digest(cfg.categories_path) if cfg.categories_path else None,
        }
        inputs = {"src": src, "format": cfg.data_format, "has_position": cfg.has_position, "valid_ratio": cfg.valid_ratio, "seed": cfg.seed}

        def write(out: Path):
            cats = None
            if cfg.data_format == "coat":
                train, unbiased, cats = data.load_coat(cfg.train_path)
            else:
                train = data.parse_interactions(cfg.train_path, cfg.has_position)
                unbiased = data.parse_interactions(cfg.unbiased_path, cfg.has_position)
            if cfg.categories_path:
                cats = data.load_categories(cfg.categories_path)
            ids = data.IdMap()
            train = ids.remap(train)
            unbiased = ids.remap(unbiased)
            if cats is not None:
                cats.require(ids.items)
                for raw in sorted(cats.assignment):
                    ids.item(raw)
                dense = CategoryMap({ids.items[i]: c for i, c in cats.assignment.items()}, cats.C)
                data.write_categories(out / "categories.tsv", dense)
                (out / "category_labels.txt").write_text("".join(f"{x}\n" for x in cats.labels))
            valid, test = data.split_unbiased(unbiased, cfg.valid_ratio, cfg.seed)
            data.write_interactions(out / "train.tsv", train, True)
            data.write_interactions(out / "valid.tsv", valid, True)
            data.write_interactions(out / "test.tsv", test, True)
            ids.write(out / "id_map.tsv")
            (out / "sizes.json").write_text(json.dumps({"users": len(ids.users), "items": len(ids.items), "C": cats.C if cats else 0}))

        p = self.stage("load", [], inputs, write)
        sizes = json.loads((p / "sizes.json").read_text())
        cats = None
        if (p / "categories.tsv").exists():
            cats = _read_indexed(p / "categories.tsv", int(json.loads((p / "sizes.json").read_text())["C"]))
        return Loaded(
            data.parse_interactions(p / "train.tsv", True),
            data.parse_interactions(p / "valid.tsv", True),
            data.parse_interactions(p / "test.tsv", True),
            sizes["users"],
            sizes["items"],
            cats,
            data.IdMap.read(p / "id_map.tsv"),
        )

    # -- train ------------------------------------------------------------
    def train(self, ld: Loaded) -> tuple[ModelState, dict[int, int]]:
        """MF over real users plus one pseudo-user per augmentable trail."""
        hp, cfg = self.hp, self.cfg
        # the run seed drives training so one number fixes the whole run
        tcfg = dataclasses.replace(cfg.train, seed=cfg.seed)
        inputs = {"lambda": hp.lam, "train": dataclasses.asdict(tcfg)}

        def write(out: Path):
            trails = data.trails_by_user(ld.train)
            pseudo = _pseudo_histories(trails, hp.lam, ld.n_users)
            positives = [(r.user_id, r.item_id) for r in ld.train if r.label]
            for pid, (_, history) in pseudo.items():
                positives.extend((pid, r.item_id) for r in history if r.label)
            users = list(range(ld.n_users)) + list(pseudo)
            model = backend.train_mf(positives, users, list(range(ld.n_items)), tcfg)
            backend.save_model(out / "model.npz", model)
            backend.export_embeddings(out / "items.tsv", model.item_ids, model.item_matrix)
            with open(out / "pseudo_users.tsv", "w") as fh:
                for pid, (src, _) in pseudo.items():
                    fh.write(f"{pid}\t{src}\n")

        p = self.stage("train", ["load"], inputs, write)
        pseudo_map = {}
        with open(p / "pseudo_users.tsv") as fh:
            for line in fh:
                pid, src = line.split("\t")
                pseudo_map[int(src)] = int(pid)
        return backend.load_model(p / "model.npz"), pseudo_map

    # -- cluster ----------------------------------------------------------
    def cluster(self, ld: Loaded, model: ModelState) -> CategoryMap:
        C = self.hp.C
        inputs = {"C": C, "seed": self.cfg.seed}

        def write(out: Path):
            data.write_categories(out / "categories.tsv", backend.cluster_items(model, C, self.cfg.seed))

        p = self.stage("cluster", ["train"], inputs, write)
        return _read_indexed(p / "categories.tsv", C)

    # -- augment ----------------------------------------------------------
    def augment(self, ld: Loaded, cmap: CategoryMap) -> list[causal.AugmentedSample]:
        inputs = {"lambda": self.hp.lam, "C": cmap.C}
        up = ["load", "cluster"] if "cluster" in self.keys else ["load"]
        trails = data.trails_by_user(ld.train)

        def write(out: Path):
            causal.write_augmented(out / "augmented.tsv", causal.build_augmented_dataset(trails, self.hp.lam, cmap))

        p = self.stage("augment", up, inputs, write)
        return causal.read_augmented(p / "augmented.tsv", trails)

    # -- estimate ---------------------------------------------------------
    def estimate(self, users: list[int], model: ModelState, pseudo: dict[int, int], samples) -> dict[str, np.ndarray]:
        hp = self.hp
        inputs = {k: getattr(hp, k) for k in ("C", "K", "K_p", "K_s", "gamma", "v_p", "v_a")}
        inputs["users"] = _digest(users)

        def write(out: Path):
            table = causal.SampleTable.from_samples(samples)
            vectors = model.user_matrix[model.user_rows(pseudo[s.source_user_id] for s in samples)]

            def one(u):
                exclude = table.source_users == u
                P, A = causal.estimate_for_user(model.user_vector(u), vectors, table, hp, exclude)
                return P.P, A.A, A.filled

            with ThreadPoolExecutor(max_workers=self.cfg.workers) as ex:
                res = list(ex.map(one, users)) if self.cfg.workers > 1 else [one(u) for u in users]
            np.savez(
                out / "matrices.npz",
                users=np.asarray(users, dtype=np.int64),
                P=np.array([r[0] for r in res]).reshape(len(users), hp.C, hp.K + 1),
                A=np.array([r[1] for r in res]).reshape(len(users), hp.C, hp.K + 1),
                filled=np.array([r[2] for r in res]).reshape(len(users), hp.C, hp.K + 1),
            )

        p = self.stage("estimate", ["train", "augment"], inputs, write)
        with np.load(p / "matrices.npz") as z:
            return {k: z[k].copy() for k in z.files}

    # -- plan -------------------------------------------------------------
    def plan(self, ld: Loaded, users: list[int], model: ModelState, cmap: CategoryMap | None, est) -> dict[int, list[tuple[int, float]]]:
        cfg, hp = self.cfg, self.hp
        inputs = {"policy": cfg.policy, "N": hp.N, "length": cfg.list_length, "users": _digest(users)}
        if cfg.policy in ("mtef", "adrf"):
            inputs.update(K=hp.K)
        if cfg.policy == "mtef":
            inputs.update(alpha=hp.alpha, v_m=hp.v_m, delta_t=hp.delta_t)
        if cfg.policy == "adrf":
            inputs.update(epsilon=hp.epsilon, budget=cfg.budget)
        if cfg.policy == "random":
            inputs.update(seed=cfg.seed)
        up = ["train"] + (["estimate"] if cfg.policy in ("mtef", "adrf") else [])
        history = data.items_by_user(ld.train)
        catalog = range(ld.n_items)

        def write(out: Path):
            recs = {}
            row_of = {int(u): k for k, u in enumerate(est["users"])} if est is not None else {}
            for u in users:
                cands = np.asarray(backend.candidate_pool(catalog, history.get(u, ())), dtype=np.int64)
                recs[u] = _plan_user(cfg, u, cands, model, cmap, est, row_of.get(u))
            planner.write_recommendations(out / "recommendations.tsv", recs)

        p = self.stage("plan", up, inputs, write)
        return planner.read_recommendations(p / "recommendations.tsv")


def _read_indexed(path: Path, C: int) -> CategoryMap:
    # category files written by the pipeline carry the index as the label
    cmap = data.load_categories(path)
    return CategoryMap({i: int(cmap.labels[c]) for i, c in cmap.assignment.items()}, C)


def _pseudo_histories(trails, lam, first_id):
    out = {}
    for user in sorted(trails):
        cut = causal.split_trail(trails[user], lam)
        if cut is not None:
            out[first_id + len(out)] = (user, cut[0])
    return out


def _plan_user(cfg: RunConfig, user: int, cands: np.ndarray, model: ModelState, cmap, est, row) -> list[tuple[int, float]]:
    hp = cfg.hp
    L = cfg.list_length
    if len(cands) < L:
        raise ValueError(f"user {user} has only {len(cands)} candidates for a list of {L}")
    scores = backend.score_items(model, user, cands)
    if cfg.policy == "random":
        rng = np.random.default_rng([cfg.seed, user])
        pick = rng.permutation(len(cands))[:L]
        return [(int(cands[k]), 0.0) for k in pick]
    order = backend.rank_by_score(cands, scores)
    if cfg.policy == "backend":
        return [(int(cands[k]), float(scores[k])) for k in order[:L]]
    cats = cmap.categories_of(cands)
    top = order[: hp.N]
    t0 = causal.discretize(np.bincount(cats[top], minlength=hp.C) / hp.N, hp.K)
    A = causal.AdrfMatrix(est["A"][row], est["filled"][row], hp.v_a)
    if cfg.policy == "mtef":
        m = causal.compute_mtef(A, t0, hp.delta_t, hp.v_m)
        adjusted = planner.mtef_scores(scores, cats, m, hp.alpha)
        ranked = backend.rank_by_score(cands, adjusted)[:L]
        return [(int(cands[k]), float(adjusted[k])) for k in ranked]
    if cfg.budget == "aggregate":
        slots, _ = planner.best_treatment_aggregate(A, t0, hp.epsilon, hp.K)
    else:
        slots, _ = planner.best_treatment(A, t0, hp.epsilon, hp.K)
    head = planner.allocate_list(cands, scores, cmap, slots, hp.N, hp.K)
    chosen = set(head)
    tail = [int(cands[k]) for k in order if int(cands[k]) not in chosen][: L - len(head)]
    score_of = dict(zip(cands.tolist(), scores.tolist()))
    return [(i, score_of[i]) for i in head + tail]


def _positives(records) -> dict[int, set[int]]:
    return data.items_by_user(records, positives_only=True)


def run_pipeline(config: RunConfig, fresh: bool = False, until: str | None = None) -> RunResult | None:
    """Run (or resume) every stage up to ``until`` and write the run outputs.

    Cached stages are reused unless ``fresh``. If ``output_dir`` already
    holds a run made with a different configuration, resuming is refused.
    """
    config.validate()
    if until is not None and until not in STAGES:
        raise ConfigError(f"unknown stage {until!r}")
    out = Path(config.output_dir)
    manifest = out / "manifest.json"
    cfg_hash = _digest(config.to_dict())
    if manifest.exists() and not fresh:
        prev = json.loads(manifest.read_text())
        if prev.get("config_hash") != cfg_hash:
            raise StaleArtifactError(f"{out} holds a run with a different configuration; pass fresh=True or use another output_dir")
    out.mkdir(parents=True, exist_ok=True)

    def done(stage):
        return until is not None and STAGES.index(stage) >= STAGES.index(until)

    r = _Runner(config, fresh)
    hp = config.hp
    ld = r.load()
    if done("load"):
        return None
    model, pseudo = r.train(ld)
    if done("train"):
        return None
    users = sorted({x.user_id for x in ld.valid} | {x.user_id for x in ld.test})
    unknown = [u for u in users if u >= ld.n_users or u not in model._uidx]
    users = [u for u in users if u not in set(unknown)]
    needs_causal = config.policy in ("mtef", "adrf")
    cmap = None
    est = None
    if needs_causal or until in ("cluster", "augment", "estimate"):
        if config.treatment_categories == "cluster":
            cmap = r.cluster(ld, model)
        elif ld.categories is None:
            raise ConfigError("treatment_categories is labels but the data has no category labels")
        elif ld.categories.C != hp.C:
            raise ConfigError(f"category file has C={ld.categories.C} but hyperparams say C={hp.C}")
        else:
            cmap = ld.categories
        if done("cluster"):
            return None
        samples = r.augment(ld, cmap)
        if done("augment"):
            return None
        est = r.estimate(users, model, pseudo, samples)
        if done("estimate"):
            return None
    recs = r.plan(ld, users, model, cmap, est)
    if done("plan"):
        return None

    pop = data.build_popularity(ld.train, range(ld.n_items))
    hist = _positives(ld.train)
    lists = planner.lists_only(recs)
    # unexpectedness needs real labels; clusters would make it circular
    eval_cmap = ld.categories
    t = time.perf_counter()
    valid = evaluation.evaluate_run(lists, _positives(ld.valid), hist, eval_cmap, pop, config.cutoffs)
    test = evaluation.evaluate_run(lists, _positives(ld.test), hist, eval_cmap, pop, config.cutoffs)
    r.timings["evaluate"] = time.perf_counter() - t

    # the file speaks the dataset's ids; RunResult keeps the dense ones
    planner.write_recommendations(out / "recommendations.tsv", ld.ids.to_original(recs))
    (out / "report.txt").write_text(format_report(valid, test))
    (out / "report.kv").write_text("".join(f"valid.{ln}\n" for ln in valid.as_kv().splitlines()) + "".join(f"test.{ln}\n" for ln in test.as_kv().splitlines()))
    save_config(out / "config.yaml", config)
    manifest.write_text(json.dumps({"config_hash": cfg_hash, "stages": r.keys, "unknown_users": len(unknown)}, indent=1, sort_keys=True))
    return RunResult(config, valid, test, recs, dict(r.keys), r.timings, r.built)


def format_report(valid: evaluation.MetricReport, test: evaluation.MetricReport) -> str:
    return "# valid\n" + valid.as_table() + "# test\n" + test.as_table()


@dataclass
class SweepRow:
    value: Any
    result: RunResult
    seconds: float


def sweep(config: RunConfig, param: str, values: Sequence[Any], fresh: bool = False) -> list[SweepRow]:
    """One run per grid value of a single hyperparameter, sharing the cache.

    Each point writes to ``<output_dir>/<param>=<value>``; the cache stays at
    the base run's cache root so unaffected stages are reused.
    """
    rows = []
    base = config.replace(cache_dir=str(config.cache_root))
    for v in values:
        point = base.replace(**{param: v}).replace(output_dir=str(Path(config.output_dir) / f"{param}={v}"))
        t = time.perf_counter()
        res = run_pipeline(point, fresh=fresh)
        rows.append(SweepRow(v, res, time.perf_counter() - t))
    return rows


def sweep_table(rows: Sequence[SweepRow], param: str, metrics: Sequence[str] = ("recall@10", "ndcg@10", "rue@10", "rup@10")) -> str:
    head = f"{param:>10} {'split':>6} " + " ".join(f"{m:>10}" for m in metrics)
    lines = [head]
    for row in rows:
        for split in ("valid", "test"):
            rep = getattr(row.result, split)
            cells = " ".join(f"{rep.values[m]:>10.4f}" if m in rep.values else f"{'-':>10}" for m in metrics)
            lines.append(f"{str(row.value):>10} {split:>6} {cells}")
    return "\n".join(lines) + "\n"


def best_row(rows: Sequence[SweepRow], metric: str = "recall@10") -> SweepRow:
    """Grid point with the highest validation ``metric`` (first wins ties)."""
    return max(rows, key=lambda r: r.result.valid.values.get(metric, float("-inf")))
