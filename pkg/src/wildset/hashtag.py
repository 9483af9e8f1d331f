"""Hashtag-to-synset matching, canonical merging and relabeling.

A hashtag matches the synsets returned for the tag itself and for every
two-word split of it ("brownbear" -> "b rownbear", ..., "brown bear", ...).
Two hashtags are merged when their full matched-synset sets are equal and
non-empty.
"""

from __future__ import annotations

from collections import Counter, defaultdict
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

from .errors import InvalidArgumentError


def normalize_tag(tag: str) -> str:
    """Strip a leading '#', trim and case-fold."""
    return tag.strip().lstrip("#").strip().lower()


def _norm_term(term: str) -> str:
    return " ".join(term.strip().lower().replace("_", " ").split())


class SynsetDB:
    """Offline term -> synset-id lookup table.

    Terms are case-folded and underscores treated as spaces, matching the
    lemma convention of WordNet-style databases.
    """

    def __init__(self, entries: Mapping[str, Iterable[str]] | None = None):
        self._table: dict[str, frozenset[str]] = {}
        for term, ids in (entries or {}).items():
            key = _norm_term(term)
            self._table[key] = self._table.get(key, frozenset()) | frozenset(ids)

    @classmethod
    def load(cls, path) -> "SynsetDB":
        """Read ``term<TAB>id[,id...]`` lines; blank lines and ``#`` comments are skipped."""
        entries: dict[str, set[str]] = defaultdict(set)
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                line = line.rstrip("\n")
                if not line.strip() or line.startswith("#"):
                    continue
                if "\t" not in line:
                    raise InvalidArgumentError(f"{path}:{lineno}: expected 'term<TAB>synset_ids'")
                term, ids = line.split("\t", 1)
                entries[term].update(s.strip() for s in ids.split(",") if s.strip())
        return cls(entries)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for term in sorted(self._table):
                fh.write(f"{term}\t{','.join(sorted(self._table[term]))}\n")

    def lookup(self, query: str) -> frozenset[str]:
        return self._table.get(_norm_term(query), frozenset())

    def all_synsets(self) -> frozenset[str]:
        out: set[str] = set()
        for ids in self._table.values():
            out.update(ids)
        return frozenset(out)

    def __len__(self) -> int:
        return len(self._table)


def query_strings(tag: str) -> list[str]:
    """The tag itself plus every split formed by inserting one space."""
    return [tag] + [f"{tag[:i]} {tag[i:]}" for i in range(1, len(tag))]


def synset_match(tag: str, db: SynsetDB, synsets: Iterable[str] | None = None) -> frozenset[str]:
    """Synsets matched by ``tag``, restricted to ``synsets`` (all synsets if ``None``)."""
    h = normalize_tag(tag)
    if not h:
        raise InvalidArgumentError("empty hashtag")
    if not h.isascii():
        return frozenset()
    found: set[str] = set()
    for q in query_strings(h):
        found.update(db.lookup(q))
    if synsets is not None:
        found &= set(synsets)
    return frozenset(found)


@dataclass
class CanonicalMap:
    """Partition of hashtags into merge groups, each with a canonical member."""

    canonical: dict[str, str]
    groups: dict[str, list[str]]
    keys: dict[str, frozenset[str]]

    def __getitem__(self, tag: str) -> str:
        h = normalize_tag(tag)
        return self.canonical.get(h, h)

    def __contains__(self, tag: str) -> bool:
        return normalize_tag(tag) in self.canonical

    def __len__(self) -> int:
        return len(self.groups)

    def records(self, freqs: Mapping[str, int] | None = None) -> list[dict]:
        freqs = freqs or {}
        out = []
        for rep in sorted(self.groups):
            members = self.groups[rep]
            out.append(
                {
                    "canonical": rep,
                    "members": members,
                    "frequency": int(sum(freqs.get(m, 0) for m in members)),
                    "synsets": sorted(self.keys[rep]),
                }
            )
        return out


def canonical_merge(
    hashtags: Iterable[str],
    db: SynsetDB,
    freqs: Mapping[str, int] | None = None,
    synsets: Iterable[str] | None = None,
) -> CanonicalMap:
    """Group hashtags whose matched-synset sets coincide.

    Tags with no matched synset stay in singleton groups. The canonical
    member of a group is its most frequent tag, ties broken lexicographically.
    """
    freqs = {normalize_tag(k): v for k, v in (freqs or {}).items()}
    S = None if synsets is None else frozenset(synsets)
    by_key: dict[frozenset[str], list[str]] = defaultdict(list)
    singletons: list[tuple[str, frozenset[str]]] = []
    seen = set()
    for tag in hashtags:
        h = normalize_tag(tag)
        if not h or h in seen:
            continue
        seen.add(h)
        key = synset_match(h, db, S)
        if key:
            by_key[key].append(h)
        else:
            singletons.append((h, key))

    canonical, groups, keys = {}, {}, {}
    for key, members in list(by_key.items()) + [(k, [h]) for h, k in singletons]:
        members = sorted(members)
        rep = min(members, key=lambda m: (-freqs.get(m, 0), m))
        groups[rep] = members
        keys[rep] = key
        for m in members:
            canonical[m] = rep
    return CanonicalMap(canonical, groups, keys)


def select_vocab(
    synsets: Iterable[str],
    freqs: Mapping[str, int],
    db: SynsetDB,
    top_n: int | None = None,
) -> list[str]:
    """Hashtags matching at least one synset in ``synsets``, most frequent first.

    ``top_n`` truncates to the most frequent tags (ties broken lexicographically).
    """
    S = frozenset(synsets)
    if not S:
        return []
    agg: Counter[str] = Counter()
    for tag, f in freqs.items():
        h = normalize_tag(tag)
        if h:
            agg[h] += int(f)
    selected = [h for h in agg if synset_match(h, db, S)]
    selected.sort(key=lambda h: (-agg[h], h))
    if top_n is not None:
        selected = selected[:top_n]
    return selected


def relabel(tags: Iterable[str], cmap: CanonicalMap, selected: Iterable[str]) -> list[str]:
    """Canonical labels of ``tags`` that belong to the selected vocabulary.

    A tag survives when its canonical form is the canonical form of some
    selected tag. Output is sorted and duplicate-free; it may be empty.
    """
    allowed = {cmap[s] for s in selected}
    out = set()
    for t in tags:
        h = normalize_tag(t)
        if not h:
            continue
        c = cmap[h]
        if c in allowed:
            out.add(c)
    return sorted(out)
