"""Temporal knowledge graph: data model, TSV I/O, interval handling, corruption.

Facts are (subject_id, relation_id, object_id, start_year, end_year). A fact
with no temporal annotation carries ``None`` in both year slots and maps to
the reserved NO_TIME timestamp id (always the last id in the timestamp table).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

NO_TIME_LABEL = "NO_TIME"


class KGFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Fact:
    subject: int
    relation: int
    object: int
    start: int | None  # None means untimed (NO_TIME)
    end: int | None

    @property
    def timed(self):
        return self.start is not None


@dataclass(frozen=True)
class FactQuadruple:
    """Point-in-time view of a fact; year is None for untimed facts."""

    subject: int
    relation: int
    object: int
    year: int | None


@dataclass
class TemporalKG:
    entity_names: list[str]
    relation_names: list[str]
    years: list[int]  # sorted ascending; NO_TIME sits after these as the last id
    facts: list[Fact] = field(default_factory=list)

    def __post_init__(self):
        self._entity_index = {n: i for i, n in enumerate(self.entity_names)}
        self._relation_index = {n: i for i, n in enumerate(self.relation_names)}
        self._year_index = {y: i for i, y in enumerate(self.years)}

    @property
    def num_entities(self):
        return len(self.entity_names)

    @property
    def num_relations(self):
        return len(self.relation_names)

    @property
    def num_timestamps(self):
        """Year ids plus the trailing NO_TIME sentinel."""
        return len(self.years) + 1

    @property
    def no_time_id(self):
        return len(self.years)

    def entity_id(self, name):
        return self._entity_index[name]

    def relation_id(self, name):
        return self._relation_index[name]

    def year_id(self, year):
        """Timestamp id of a year, or the sentinel id for None."""
        if year is None:
            return self.no_time_id
        return self._year_index[year]

    # -- queries ---------------------------------------------------------

    def facts_with_entities(self, ids, mode="all"):
        """Facts whose {subject, object} covers (all) or intersects (any) ids."""
        ids = set(ids)
        if not ids:
            raise ValueError("facts_with_entities: empty id set")
        for i in ids:
            if not 0 <= i < self.num_entities:
                raise KeyError(f"unknown entity id {i}")
        if mode not in ("all", "any"):
            raise ValueError(f"unknown mode {mode!r}")
        out = []
        for f in self.facts:
            pair = {f.subject, f.object}
            if (mode == "all" and ids <= pair) or (mode == "any" and ids & pair):
                out.append(f)
        return out

    def expand_intervals(self, cap):
        """One quadruple per year of each timed fact, truncated to the
        earliest `cap` years; untimed facts yield a single sentinel quadruple."""
        if cap < 1:
            raise ValueError("cap must be >= 1")
        quads = []
        for f in self.facts:
            if not f.timed:
                quads.append(FactQuadruple(f.subject, f.relation, f.object, None))
                continue
            span = min(f.end - f.start + 1, cap)
            for y in range(f.start, f.start + span):
                quads.append(FactQuadruple(f.subject, f.relation, f.object, y))
        return quads

    def corrupt_timestamps(self, p, seed):
        """Independently replace each fact's interval with NO_TIME with
        probability p. Deterministic for a fixed seed."""
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"corruption probability {p} outside [0, 1]")
        rng = np.random.default_rng(seed)
        draws = rng.random(len(self.facts))
        facts = [
            Fact(f.subject, f.relation, f.object, None, None) if draws[i] < p else f
            for i, f in enumerate(self.facts)
        ]
        return TemporalKG(list(self.entity_names), list(self.relation_names),
                          list(self.years), facts)


def _dedupe(facts):
    seen, out = set(), []
    for f in facts:
        key = (f.subject, f.relation, f.object, f.start, f.end)
        if key not in seen:
            seen.add(key)
            out.append(f)
    return out


def load_tkg(path):
    """Parse the TSV fact file (see save_tkg) into a validated TemporalKG."""
    entities, relations, years = {}, {}, set()
    raw = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise KGFormatError(f"{path}:{lineno}: expected 5 columns, got {len(parts)}")
            s, r, o, start_s, end_s = parts
            if start_s == NO_TIME_LABEL or end_s == NO_TIME_LABEL:
                if start_s != end_s:
                    raise KGFormatError(f"{path}:{lineno}: NO_TIME must fill both time columns")
                start = end = None
            else:
                try:
                    start, end = int(start_s), int(end_s)
                except ValueError:
                    raise KGFormatError(f"{path}:{lineno}: non-integer year") from None
                if start > end:
                    raise KGFormatError(f"{path}:{lineno}: start {start} > end {end}")
                years.add(start)
                years.add(end)
            for name, table in ((s, entities), (o, entities)):
                if name not in table:
                    table[name] = len(table)
            if r not in relations:
                relations[r] = len(relations)
            raw.append((s, r, o, start, end))

    # every intermediate year of an interval is a real timestamp too
    for _, _, _, start, end in raw:
        if start is not None:
            years.update(range(start, end + 1))

    ent_names = sorted(entities, key=entities.get)
    rel_names = sorted(relations, key=relations.get)
    kg = TemporalKG(ent_names, rel_names, sorted(years))
    kg.facts = _dedupe(
        Fact(kg.entity_id(s), kg.relation_id(r), kg.entity_id(o), start, end)
        for s, r, o, start, end in raw
    )
    return kg


def save_tkg(kg, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# subject\trelation\tobject\tstart\tend\n")
        for f in kg.facts:
            start = NO_TIME_LABEL if f.start is None else str(f.start)
            end = NO_TIME_LABEL if f.end is None else str(f.end)
            fh.write(f"{kg.entity_names[f.subject]}\t{kg.relation_names[f.relation]}\t"
                     f"{kg.entity_names[f.object]}\t{start}\t{end}\n")
