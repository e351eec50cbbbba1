"""Logged-feedback datasets: parsing, splits, categories and popularity.

Dataset files are UTF-8, tab separated, one exposure per line::

    user_id <TAB> item_id <TAB> label [<TAB> position]

``label`` is 1 for a click/positive and 0 for an exposed-but-negative
record. Without a position column, trail order is file order.
"""

from __future__ import annotations

import io
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence, TextIO

import numpy as np

_log = logging.getLogger(__name__)


class ParseError(ValueError):
    """A dataset line could not be parsed."""

    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


class DomainError(ValueError):
    """A parsed value lies outside its allowed domain."""


class UnknownItemError(KeyError):
    pass


@dataclass(frozen=True, slots=True)
class InteractionRecord:
    user_id: int
    item_id: int
    label: int
    position: int = 0


@dataclass(frozen=True)
class DatasetSplit:
    train: tuple[InteractionRecord, ...]
    valid: tuple[InteractionRecord, ...]
    test: tuple[InteractionRecord, ...]


@dataclass(frozen=True)
class CategoryMap:
    """Total assignment of catalog items to dense category indices."""

    assignment: Mapping[int, int]
    C: int
    labels: tuple[str, ...] = ()

    def __post_init__(self):
        bad = [c for c in self.assignment.values() if not 0 <= c < self.C]
        if bad:
            raise DomainError(f"category index out of range [0, {self.C}): {bad[0]}")

    def __getitem__(self, item_id: int) -> int:
        try:
            return self.assignment[item_id]
        except KeyError:
            raise UnknownItemError(f"item {item_id} has no category") from None

    def __contains__(self, item_id: int) -> bool:
        return item_id in self.assignment

    def __len__(self) -> int:
        return len(self.assignment)

    def categories_of(self, items: Iterable[int]) -> np.ndarray:
        return np.fromiter((self[i] for i in items), dtype=np.int64)

    def require(self, items: Iterable[int]) -> None:
        """Raise if any of ``items`` is uncategorized."""
        missing = sorted({i for i in items if i not in self.assignment})
        if missing:
            head = ", ".join(map(str, missing[:5]))
            raise UnknownItemError(f"{len(missing)} items missing from category map: {head}")


@dataclass(frozen=True)
class PopularityTable:
    count: Mapping[int, int]
    unpopular: Mapping[int, bool]
    threshold: int = 0

    def is_unpopular(self, item_id: int) -> bool:
        # items never seen in training have count 0 and sit in the bottom bucket
        return self.unpopular.get(item_id, True)


@dataclass
class IdMap:
    """Original id <-> dense id mapping for users and items."""

    users: dict[int, int] = field(default_factory=dict)
    items: dict[int, int] = field(default_factory=dict)

    def user(self, raw: int) -> int:
        return self.users.setdefault(raw, len(self.users))

    def item(self, raw: int) -> int:
        return self.items.setdefault(raw, len(self.items))

    def remap(self, records: Iterable[InteractionRecord]) -> list[InteractionRecord]:
        return [
            InteractionRecord(self.user(r.user_id), self.item(r.item_id), r.label, r.position)
            for r in records
        ]

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("kind\toriginal\tdense\n")
            for raw, dense in self.users.items():
                fh.write(f"user\t{raw}\t{dense}\n")
            for raw, dense in self.items.items():
                fh.write(f"item\t{raw}\t{dense}\n")

    @classmethod
    def read(cls, path: str | Path) -> IdMap:
        out = cls()
        with open(path, encoding="utf-8") as fh:
            next(fh)
            for line in fh:
                kind, raw, dense = line.rstrip("\n").split("\t")
                getattr(out, kind + "s")[int(raw)] = int(dense)
        return out

    def to_original(self, recs: Mapping[int, Sequence[tuple[int, float]]]) -> dict[int, list[tuple[int, float]]]:
        """Translate dense-id recommendation lists back to the dataset's ids."""
        users = {d: r for r, d in self.users.items()}
        items = {d: r for r, d in self.items.items()}
        return {users[u]: [(items[i], s) for i, s in rows] for u, rows in recs.items()}


def _lines(stream: TextIO | str | Path) -> Iterator[str]:
    if isinstance(stream, (str, Path)):
        with open(stream, encoding="utf-8") as fh:
            yield from fh
    else:
        yield from stream


def parse_interactions(stream: TextIO | str | Path, has_position: bool = False) -> list[InteractionRecord]:
    """Parse a dataset stream (or path) into records in file order.

    When ``has_position`` is false, each record's position is its index
    among the records of the same user seen so far.
    """
    width = 4 if has_position else 3
    records: list[InteractionRecord] = []
    next_pos: dict[int, int] = defaultdict(int)
    seen_pos: dict[int, set[int]] = defaultdict(set)
    for lineno, line in enumerate(_lines(stream), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != width:
            raise ParseError(lineno, f"expected {width} tab-separated fields, got {len(parts)}")
        try:
            values = [int(p) for p in parts]
        except ValueError:
            raise ParseError(lineno, f"non-integer field in {line!r}") from None
        user, item, label = values[:3]
        if label not in (0, 1):
            raise DomainError(f"line {lineno}: label must be 0 or 1, got {label}")
        if user < 0 or item < 0:
            raise DomainError(f"line {lineno}: ids must be non-negative")
        if has_position:
            pos = values[3]
            if pos < 0:
                raise DomainError(f"line {lineno}: negative position")
            if pos in seen_pos[user]:
                raise DomainError(f"line {lineno}: duplicate position {pos} for user {user}")
            seen_pos[user].add(pos)
        else:
            pos = next_pos[user]
            next_pos[user] += 1
        records.append(InteractionRecord(user, item, label, pos))
    return records


def format_interactions(records: Iterable[InteractionRecord], has_position: bool = False) -> str:
    buf = io.StringIO()
    for r in records:
        if has_position:
            buf.write(f"{r.user_id}\t{r.item_id}\t{r.label}\t{r.position}\n")
        else:
            buf.write(f"{r.user_id}\t{r.item_id}\t{r.label}\n")
    return buf.getvalue()


def write_interactions(path: str | Path, records: Iterable[InteractionRecord], has_position: bool = False) -> None:
    Path(path).write_text(format_interactions(records, has_position), encoding="utf-8")


def split_unbiased(
    records: Sequence[InteractionRecord], ratio: float = 0.5, seed: int = 0
) -> tuple[list[InteractionRecord], list[InteractionRecord]]:
    """Split unbiased records into (valid, test), stratified by user.

    Each user's records are shuffled with a generator derived from
    ``seed`` and the first ``round(ratio * n)`` go to validation. Both
    parts keep the input order.
    """
    if not records:
        raise ValueError("cannot split an empty record list")
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    by_user: dict[int, list[int]] = defaultdict(list)
    for idx, r in enumerate(records):
        by_user[r.user_id].append(idx)
    in_valid = np.zeros(len(records), dtype=bool)
    for user in sorted(by_user):
        idx = np.asarray(by_user[user])
        n_valid = int(np.floor(ratio * len(idx) + 0.5))
        in_valid[rng.permutation(idx)[:n_valid]] = True
    valid = [r for r, v in zip(records, in_valid) if v]
    test = [r for r, v in zip(records, in_valid) if not v]
    if not valid:
        raise ValueError("split produced an empty validation set")
    return valid, test


def build_popularity(train: Iterable[InteractionRecord], catalog: Iterable[int] | None = None) -> PopularityTable:
    """Count training exposures per item and flag the bottom 90%.

    Counts include negative records. The threshold is the count at rank
    ceil(0.9 n) in ascending order over the whole catalog; every item at
    or below it is unpopular, so ties at the threshold are included.
    """
    counts = Counter(r.item_id for r in train)
    items = sorted(set(catalog) | set(counts)) if catalog is not None else sorted(counts)
    full = {i: counts.get(i, 0) for i in items}
    if not full:
        return PopularityTable({}, {}, 0)
    ordered = sorted(full.values())
    cut = (9 * len(ordered) + 9) // 10 - 1
    threshold = ordered[cut]
    unpopular = {i: c <= threshold for i, c in full.items()}
    return PopularityTable(full, unpopular, threshold)


def load_categories(stream: TextIO | str | Path) -> CategoryMap:
    """Read ``item_id <TAB> category`` pairs; categories are densified in first-seen order."""
    dense: dict[str, int] = {}
    assignment: dict[int, int] = {}
    for lineno, line in enumerate(_lines(stream), start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ParseError(lineno, "expected item_id<TAB>category")
        try:
            item = int(parts[0])
        except ValueError:
            raise ParseError(lineno, f"bad item id {parts[0]!r}") from None
        cat = dense.setdefault(parts[1], len(dense))
        if assignment.get(item, cat) != cat:
            raise DomainError(f"line {lineno}: item {item} assigned to conflicting categories")
        assignment[item] = cat
    if not assignment:
        raise ValueError("empty category file")
    return CategoryMap(assignment, len(dense), tuple(dense))


def write_categories(path: str | Path, cmap: CategoryMap) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in sorted(cmap.assignment):
            c = cmap.assignment[item]
            label = cmap.labels[c] if cmap.labels else str(c)
            fh.write(f"{item}\t{label}\n")


def trails_by_user(records: Iterable[InteractionRecord]) -> dict[int, list[InteractionRecord]]:
    """Group records per user, each trail sorted by position."""
    out: dict[int, list[InteractionRecord]] = defaultdict(list)
    for r in records:
        out[r.user_id].append(r)
    return {u: sorted(t, key=lambda r: r.position) for u, t in out.items()}


def items_by_user(records: Iterable[InteractionRecord], positives_only: bool = False) -> dict[int, set[int]]:
    out: dict[int, set[int]] = defaultdict(set)
    for r in records:
        if r.label or not positives_only:
            out[r.user_id].add(r.item_id)
    return dict(out)


def load_coat(directory: str | Path, threshold: int = 4) -> tuple[list[InteractionRecord], list[InteractionRecord], CategoryMap | None]:
    """Read the Coat ``train.ascii`` / ``test.ascii`` rating matrices.

    Ratings >= ``threshold`` become positives, other non-zero ratings
    negatives. Returns (biased train, unbiased records, jacket-type
    categories or None). Categories are read from ``item_features.ascii``
    when ``item_features_map.txt`` names the jacket-type columns.
    """
    directory = Path(directory)

    def read(name: str) -> list[InteractionRecord]:
        mat = np.loadtxt(directory / name, dtype=np.int64)
        out = []
        for u, row in enumerate(mat):
            pos = 0
            for i, rating in enumerate(row):
                if rating > 0:
                    out.append(InteractionRecord(u, i, int(rating >= threshold), pos))
                    pos += 1
        return out

    train = read("train.ascii")
    unbiased = read("test.ascii")
    cmap = None
    fmap = directory / "user_item_features" / "item_features_map.txt"
    feats = directory / "user_item_features" / "item_features.ascii"
    if fmap.exists() and feats.exists():
        names = [ln.strip() for ln in fmap.read_text().splitlines() if ln.strip()]
        cols = [k for k, n in enumerate(names) if "jacket" in n.lower()]
        if cols:
            X = np.loadtxt(feats, dtype=np.int64)[:, cols]
            labels = tuple(names[k] for k in cols)
            cmap = CategoryMap({i: int(np.argmax(row)) for i, row in enumerate(X)}, len(cols), labels)
    return train, unbiased, cmap
