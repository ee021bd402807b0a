"""Triple datasets: loading, vocabularies, filter indices, negative sampling and noise.

Datasets live in a directory holding ``train.txt``, ``valid.txt`` and
``test.txt``; each line is ``head<TAB>relation<TAB>tail``.  Entities and
relations are mapped to dense 0-based indices in order of first appearance.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .errors import (
    CorruptionError,
    DataError,
    GenerationError,
    ParseError,
    SamplingError,
    VocabularyError,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


def as_generator(rng) -> np.random.Generator:
    """Accept a Generator, an int seed or None."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


class Triple(NamedTuple):
    head: int
    rel: int
    tail: int


@dataclass(frozen=True)
class Vocab:
    entity_names: tuple[str, ...] = ()
    relation_names: tuple[str, ...] = ()
    entity_index: dict[str, int] = field(init=False, repr=False, compare=False)
    relation_index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "entity_names", tuple(self.entity_names))
        object.__setattr__(self, "relation_names", tuple(self.relation_names))
        ent = {name: i for i, name in enumerate(self.entity_names)}
        rel = {name: i for i, name in enumerate(self.relation_names)}
        if len(ent) != len(self.entity_names) or len(rel) != len(self.relation_names):
            raise DataError("vocabulary names must be unique")
        object.__setattr__(self, "entity_index", ent)
        object.__setattr__(self, "relation_index", rel)

    @property
    def n_entities(self) -> int:
        return len(self.entity_names)

    @property
    def n_relations(self) -> int:
        return len(self.relation_names)

    def entity_id(self, name: str) -> int:
        try:
            return self.entity_index[name]
        except KeyError:
            raise VocabularyError(name, "entity") from None

    def relation_id(self, name: str) -> int:
        try:
            return self.relation_index[name]
        except KeyError:
            raise VocabularyError(name, "relation") from None

    @classmethod
    def synthetic(cls, n_entities: int, n_relations: int) -> "Vocab":
        w = len(str(max(n_entities - 1, 0)))
        return cls(
            tuple(f"e{i:0{w}d}" for i in range(n_entities)),
            tuple(f"r{i}" for i in range(n_relations)),
        )

    def to_dict(self) -> dict:
        return {"entities": list(self.entity_names), "relations": list(self.relation_names)}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(tuple(d["entities"]), tuple(d["relations"]))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64).reshape(-1, 3)
    a.setflags(write=False)
    return a


class TripleSet:
    """An ordered, duplicate-free set of integer triples belonging to one split.

    The triples are held as a read-only ``(N, 3)`` int64 array of
    ``(head, relation, tail)`` rows.
    """

    __slots__ = ("array", "split")

    def __init__(self, triples: Iterable[Sequence[int]] | np.ndarray = (), split: str = "train"):
        if split not in SPLITS:
            raise DataError(f"unknown split {split!r}")
        arr = np.asarray(list(triples) if not isinstance(triples, np.ndarray) else triples)
        if arr.size == 0:
            arr = np.empty((0, 3), dtype=np.int64)
        arr = _readonly(arr)
        if len(np.unique(arr, axis=0)) != len(arr):
            raise DataError(f"duplicate triples in {split} split")
        self.array = arr
        self.split = split

    def __len__(self) -> int:
        return len(self.array)

    def __iter__(self) -> Iterator[Triple]:
        for h, r, t in self.array.tolist():
            yield Triple(h, r, t)

    def __getitem__(self, i: int) -> Triple:
        h, r, t = self.array[i].tolist()
        return Triple(h, r, t)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TripleSet):
            return NotImplemented
        return self.split == other.split and np.array_equal(self.array, other.array)

    def __repr__(self) -> str:
        return f"TripleSet(split={self.split!r}, n={len(self)})"

    def as_set(self) -> set[tuple[int, int, int]]:
        return set(map(tuple, self.array.tolist()))

    def with_split(self, split: str) -> "TripleSet":
        return TripleSet(self.array, split)


@dataclass(frozen=True)
class Dataset:
    vocab: Vocab
    train: TripleSet
    valid: TripleSet
    test: TripleSet

    def split(self, name: str) -> TripleSet:
        if name not in SPLITS:
            raise DataError(f"unknown split {name!r}")
        return getattr(self, name)

    def all_triples(self) -> set[tuple[int, int, int]]:
        return self.train.as_set() | self.valid.as_set() | self.test.as_set()


def load_triples(
    path: str | Path,
    vocab: Vocab | None = None,
    mode: str = "build",
    split: str | None = None,
) -> tuple[TripleSet, Vocab]:
    """Read a TAB-separated triple file.

    In ``build`` mode unseen names are appended to (a copy of) ``vocab`` in
    first-appearance order; in ``frozen`` mode an unseen name raises
    :class:`VocabularyError`.  Repeated lines are dropped and counted in the log.
    """
    if mode not in ("build", "frozen"):
        raise ValueError(f"mode must be 'build' or 'frozen', got {mode!r}")
    path = Path(path)
    if split is None:
        split = path.stem if path.stem in SPLITS else "train"
    vocab = vocab or Vocab()
    ents = list(vocab.entity_names)
    rels = list(vocab.relation_names)
    ent_idx = dict(vocab.entity_index)
    rel_idx = dict(vocab.relation_index)

    def lookup(name, table, names, kind):
        i = table.get(name)
        if i is None:
            if mode == "frozen":
                raise VocabularyError(name, kind)
            i = table[name] = len(names)
            names.append(name)
        return i

    rows: list[tuple[int, int, int]] = []
    seen: set[tuple[int, int, int]] = set()
    n_dup = 0
    with open(path, encoding="utf-8", newline="") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, line_no, f"expected 3 TAB-separated fields, got {len(parts)}")
            h = lookup(parts[0], ent_idx, ents, "entity")
            r = lookup(parts[1], rel_idx, rels, "relation")
            t = lookup(parts[2], ent_idx, ents, "entity")
            key = (h, r, t)
            if key in seen:
                n_dup += 1
                continue
            seen.add(key)
            rows.append(key)
    if n_dup:
        logger.info("%s: dropped %d duplicate triple(s)", path, n_dup)
    return TripleSet(rows, split), Vocab(tuple(ents), tuple(rels))


def write_triples(path: str | Path, triples: TripleSet, vocab: Vocab) -> None:
    ents, rels = vocab.entity_names, vocab.relation_names
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in triples.array.tolist():
            fh.write(f"{ents[h]}\t{rels[r]}\t{ents[t]}\n")


def load_dataset(directory: str | Path, vocab: Vocab | None = None) -> Dataset:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` against one shared vocabulary.

    With ``vocab`` given, names are looked up in it (frozen mode) instead of
    building a new vocabulary.
    """
    directory = Path(directory)
    for name in SPLITS:
        if not (directory / f"{name}.txt").is_file():
            raise DataError(f"missing split file {directory / f'{name}.txt'}")
    mode = "build" if vocab is None else "frozen"
    vocab = vocab or Vocab()
    splits = {}
    for name in SPLITS:
        splits[name], vocab = load_triples(directory / f"{name}.txt", vocab, mode, split=name)
    return Dataset(vocab, splits["train"], splits["valid"], splits["test"])


def save_dataset(directory: str | Path, dataset: Dataset) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in SPLITS:
        write_triples(directory / f"{name}.txt", dataset.split(name), dataset.vocab)


@dataclass(frozen=True)
class FilterIndex:
    """All known true completions of ``(h, r, ?)`` and ``(?, r, t)`` queries."""

    tails_of: dict[tuple[int, int], frozenset[int]]
    heads_of: dict[tuple[int, int], frozenset[int]]

    def true_tails(self, head: int, rel: int) -> frozenset[int]:
        return self.tails_of.get((head, rel), frozenset())

    def true_heads(self, rel: int, tail: int) -> frozenset[int]:
        return self.heads_of.get((rel, tail), frozenset())

    def __contains__(self, triple) -> bool:
        h, r, t = triple
        return t in self.true_tails(h, r)

    def __len__(self) -> int:
        return sum(len(v) for v in self.tails_of.values())


def build_filter_index(*splits: TripleSet) -> FilterIndex:
    tails: dict[tuple[int, int], set[int]] = {}
    heads: dict[tuple[int, int], set[int]] = {}
    for ts in splits:
        for h, r, t in ts.array.tolist():
            tails.setdefault((h, r), set()).add(t)
            heads.setdefault((r, t), set()).add(h)
    return FilterIndex(
        {k: frozenset(v) for k, v in tails.items()},
        {k: frozenset(v) for k, v in heads.items()},
    )


@dataclass(frozen=True)
class NegativeBatch:
    """K corruptions of one positive triple; ``head_corrupted[i]`` marks the replaced slot."""

    positive: Triple
    triples: np.ndarray
    head_corrupted: np.ndarray

    def __len__(self) -> int:
        return len(self.triples)


def sample_negatives(pos: np.ndarray, k: int, n_entities: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised corruption of a ``(B, 3)`` batch into ``(B, k, 3)`` negatives.

    Each negative replaces the head or the tail (probability 1/2 each) by an
    entity drawn uniformly from all entities except the one it replaces.
    Negatives are not filtered against known true triples.

    Returns the negatives and the ``(B, k)`` boolean head-corruption mask.
    """
    if n_entities < 2:
        raise SamplingError("negative sampling needs at least 2 entities")
    if k < 1:
        raise SamplingError(f"number of negatives must be >= 1, got {k}")
    rng = as_generator(rng)
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    b = len(pos)
    head_mask = rng.random((b, k)) < 0.5
    draw = rng.integers(0, n_entities - 1, size=(b, k))
    neg = np.repeat(pos[:, None, :], k, axis=1)
    orig = np.where(head_mask, pos[:, None, 0], pos[:, None, 2])
    # shift past the original to sample uniformly from E \ {orig}
    repl = draw + (draw >= orig)
    neg[..., 0] = np.where(head_mask, repl, neg[..., 0])
    neg[..., 2] = np.where(head_mask, neg[..., 2], repl)
    return neg, head_mask


def negative_sample(pos: Sequence[int], k: int, vocab: Vocab | int, rng) -> NegativeBatch:
    n = vocab if isinstance(vocab, int) else vocab.n_entities
    neg, mask = sample_negatives(np.asarray(pos)[None, :], k, n, rng)
    return NegativeBatch(Triple(*map(int, pos)), neg[0], mask[0])


def noisy_count(lam: float, n: int) -> int:
    """``ceil(lam * n)`` robust to binary representation error (0.07 * 100 -> 7)."""
    return int(math.ceil(round(lam * n, 9)))


def corrupt_dataset(
    train: TripleSet,
    lam: float,
    rng,
    n_entities: int,
    known: Iterable[TripleSet] = (),
    mode: str = "replace",
    max_retries: int = 1000,
) -> TripleSet:
    """Inject ``ceil(lam * |train|)`` false triples into a training split.

    ``mode="replace"`` swaps that many distinct, uniformly chosen training
    triples in place for corruptions (size preserved); ``mode="append"``
    corrupts copies of them and appends the results.  Each corruption swaps
    the head or the tail for a uniform random entity, re-drawn until the new
    triple is absent from ``train`` plus every set in ``known`` and from the
    noise produced so far.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"noise rate must lie in [0, 1], got {lam}")
    if mode not in ("replace", "append"):
        raise ValueError(f"mode must be 'replace' or 'append', got {mode!r}")
    if n_entities < 2:
        raise CorruptionError("corruption needs at least 2 entities")
    rng = as_generator(rng)
    n = len(train)
    m = noisy_count(lam, n)
    if m == 0:
        return TripleSet(train.array, train.split)

    clean = train.as_set()
    for ts in known:
        clean |= ts.as_set()
    chosen = np.sort(rng.choice(n, size=m, replace=False))
    taken: set[tuple[int, int, int]] = set()
    noise = np.empty((m, 3), dtype=np.int64)
    for j, i in enumerate(chosen.tolist()):
        h, r, t = train.array[i].tolist()
        for _ in range(max_retries):
            e = int(rng.integers(n_entities))
            cand = (e, r, t) if rng.random() < 0.5 else (h, r, e)
            if cand not in clean and cand not in taken:
                break
        else:
            raise CorruptionError(
                f"could not find an unseen corruption of triple {i} after {max_retries} draws"
            )
        taken.add(cand)
        noise[j] = cand

    if mode == "replace":
        out = train.array.copy()
        out[chosen] = noise
    else:
        out = np.concatenate([train.array, noise])
    return TripleSet(out, train.split)


@dataclass(frozen=True)
class SyntheticKG(Dataset):
    """A generated dataset plus the planted entity types (useful for diagnostics)."""

    entity_types: np.ndarray = field(default=None, compare=False)


def generate_synthetic_kg(
    n_entities: int,
    n_relations: int,
    rule_density: float,
    rng,
    group_size: int = 5,
) -> SyntheticKG:
    """Generate a small KG with planted, learnable structure.

    Entities are dealt into type clusters of about ``group_size`` members.
    Each relation permutes the clusters: ``(h, r, t)`` is a rule triple when
    ``t``'s cluster is the image of ``h``'s cluster under relation ``r``.
    Every relation after the first two with an even index is the composition
    of two earlier relations.  Each rule triple is kept with probability
    ``rule_density``.

    The result is split roughly 80/10/10 so that every entity and relation
    occurs in the training split and the three splits are disjoint.
    """
    if n_entities < 10 or n_relations < 2:
        raise GenerationError("need at least 10 entities and 2 relations")
    if not 0.0 < rule_density <= 1.0:
        raise GenerationError("rule_density must lie in (0, 1]")
    rng = as_generator(rng)
    n_types = max(2, n_entities // group_size)

    etype = np.empty(n_entities, dtype=np.int64)
    etype[rng.permutation(n_entities)] = np.arange(n_entities) % n_types
    members = [np.flatnonzero(etype == c) for c in range(n_types)]

    type_map = np.empty((n_relations, n_types), dtype=np.int64)
    for r in range(n_relations):
        if r >= 2 and r % 2 == 0:
            a, b = rng.choice(r, size=2, replace=False)
            type_map[r] = type_map[b][type_map[a]]
        else:
            type_map[r] = rng.permutation(n_types)

    rows = [
        (h, r, int(t))
        for r in range(n_relations)
        for h in range(n_entities)
        for t in members[type_map[r, etype[h]]]
    ]
    rows = np.unique(np.asarray(rows, dtype=np.int64), axis=0)
    keep = rng.random(len(rows)) < rule_density
    # every entity needs at least one triple and every relation too
    for h in range(n_entities):
        mine = np.flatnonzero((rows[:, 0] == h) | (rows[:, 2] == h))
        if not keep[mine].any():
            keep[rng.choice(mine)] = True
    for r in range(n_relations):
        mine = np.flatnonzero(rows[:, 1] == r)
        if not keep[mine].any():
            keep[rng.choice(mine)] = True
    triples = rows[keep]

    perm = rng.permutation(len(triples))
    seen_e = np.zeros(n_entities, dtype=bool)
    seen_r = np.zeros(n_relations, dtype=bool)
    anchor = np.zeros(len(triples), dtype=bool)
    for i in perm:
        h, r, t = triples[i]
        if not (seen_e[h] and seen_e[t] and seen_r[r]):
            anchor[i] = True
            seen_e[h] = seen_e[t] = seen_r[r] = True
    pool = [i for i in perm if not anchor[i]]
    n_hold = int(round(0.1 * len(triples)))
    if n_hold == 0 or 2 * n_hold > len(pool):
        raise GenerationError(
            f"{len(triples)} triples are too few to hold out valid/test splits"
        )
    valid_idx = np.sort(pool[:n_hold])
    test_idx = np.sort(pool[n_hold : 2 * n_hold])
    train_mask = np.ones(len(triples), dtype=bool)
    train_mask[valid_idx] = False
    train_mask[test_idx] = False
    return SyntheticKG(
        Vocab.synthetic(n_entities, n_relations),
        TripleSet(triples[train_mask], "train"),
        TripleSet(triples[valid_idx], "valid"),
        TripleSet(triples[test_idx], "test"),
        entity_types=etype,
    )
