"""Synthetic annotated questions over a TemporalKG, with a brute-force
answer oracle.

Question types:
  simple_entity             who relates to X at year T
  simple_time               when did X relate to Y
  before_after              who relates to X strictly after/before Y did
  first_last                who was first/last to relate to X
  time_join                 who relates to X with an interval overlapping Y's
  before_and_after          between two reference entities (held-out combo)
  before_after_first_last   closest-in-time after/before (held-out combo)

Every question annotates its entities (and timestamp, when present) with
token spans. Gold answers are always produced by answer_oracle, an
exhaustive scan over the KG facts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

SIMPLE_TYPES = ("simple_entity", "simple_time")
COMPLEX_TYPES = ("before_after", "first_last", "time_join")
COMBO_TYPES = ("before_and_after", "before_after_first_last")
ALL_TYPES = SIMPLE_TYPES + COMPLEX_TYPES + COMBO_TYPES


@dataclass(frozen=True)
class Annotation:
    span: tuple  # [lo, hi) over tokens
    kind: str    # "entity" | "timestamp"
    id: int


@dataclass
class AnnotatedQuestion:
    tokens: list[str]
    annotations: list[Annotation]
    qtype: str
    answer_kind: str  # "entity" | "time"
    answers: set = field(default_factory=set)
    relation: int = 0        # KG relation the question is about
    flavor: str | None = None  # after/before/first/last/after_first/before_last

    def __post_init__(self):
        for a in self.annotations:
            lo, hi = a.span
            if not (0 <= lo < hi <= len(self.tokens)):
                raise ValueError(f"annotation span {a.span} outside question")

    def entity_ids(self):
        return [a.id for a in self.annotations if a.kind == "entity"]

    def timestamp_id(self):
        for a in self.annotations:
            if a.kind == "timestamp":
                return a.id
        return None

    def signature(self):
        return (self.qtype, self.flavor, tuple(a.id for a in self.annotations))


class TemplateBank:
    """Per-qtype paraphrase templates. Placeholders: {head} is the shared
    thing (award/position/team), {tail}/{tail2} reference entities, {time}
    a year."""

    DEFAULT = {
        "simple_entity": [
            "who held the {head} in {time}",
            "in {time} who was associated with the {head}",
            "which person had the {head} in the year {time}",
            "name the holder of the {head} in {time}",
        ],
        "simple_time": [
            "when did {tail} hold the {head}",
            "in which years was {tail} associated with the {head}",
            "what year did {tail} have the {head}",
            "when was {tail} linked to the {head}",
        ],
        "before_after": [
            "who held the {head} {flavor} {tail}",
            "which person had the {head} {flavor} {tail} did",
            "name a holder of the {head} {flavor} {tail}",
            "{flavor} {tail} who was associated with the {head}",
        ],
        "first_last": [
            "who was the {flavor} to hold the {head}",
            "name the {flavor} person associated with the {head}",
            "which person held the {head} {flavor}",
            "who {flavor} had the {head}",
        ],
        "time_join": [
            "name a person who shared the {head} with {tail}",
            "who held the {head} at the same time as {tail}",
            "which person was associated with the {head} together with {tail}",
            "who overlapped with {tail} at the {head}",
        ],
        "before_and_after": [
            "who held the {head} after {tail} and before {tail2}",
            "who held the {head} before {tail} and after {tail2}",
        ],
        "before_after_first_last": [
            "who was the first to hold the {head} after {tail}",
            "who was the last to hold the {head} before {tail}",
        ],
    }

    def __init__(self, templates=None):
        self.templates = templates or dict(self.DEFAULT)

    def pick(self, qtype, rng):
        return self.templates[qtype][rng.integers(len(self.templates[qtype]))]

    def vocabulary(self):
        words = set()
        for templates in self.templates.values():
            for t in templates:
                for tok in t.split():
                    if not (tok.startswith("{") and tok.endswith("}")):
                        words.add(tok)
        words.update(["after", "before", "first", "last"])
        return sorted(words)


class GenerationError(ValueError):
    pass


# -- pattern discovery --------------------------------------------------------


def _groups(kg):
    """Timed facts grouped by (relation, shared object)."""
    groups = {}
    for f in kg.facts:
        if f.timed:
            groups.setdefault((f.relation, f.object), []).append(f)
    return groups


def _other(fact, anchor):
    return fact.subject if fact.object == anchor else fact.object


def _ref_start(kg, relation, thing, entity):
    """Earliest start year among the entity's qualifying facts."""
    starts = [f.start for f in kg.facts
              if f.timed and f.relation == relation
              and {thing, entity} <= {f.subject, f.object}]
    return min(starts) if starts else None


# -- the brute-force oracle ---------------------------------------------------


def answer_oracle(kg, q):
    """Gold ids for a question by exhaustive scan of kg.facts.

    Entity answers are entity ids; time answers are kg timestamp ids.
    """
    ents = q.entity_ids()
    for e in ents:
        if not 0 <= e < kg.num_entities:
            raise ValueError(f"annotation entity id {e} not in KG")
    r = q.relation
    facts = [f for f in kg.facts if f.relation == r]

    if q.qtype == "simple_entity":
        anchor, tau_id = ents[0], q.timestamp_id()
        year = kg.years[tau_id]
        return {_other(f, anchor) for f in facts
                if f.timed and anchor in (f.subject, f.object)
                and f.start <= year <= f.end}

    if q.qtype == "simple_time":
        pair = set(ents)
        gold = set()
        for f in facts:
            if f.timed and {f.subject, f.object} == pair:
                gold.update(kg.year_id(y) for y in range(f.start, f.end + 1))
        return gold

    if q.qtype == "time_join":
        thing, ref = ents[0], ents[1]
        ref_ivs = [(f.start, f.end) for f in facts
                   if f.timed and {ref, thing} <= {f.subject, f.object}]
        gold = set()
        for f in facts:
            if not f.timed or thing not in (f.subject, f.object):
                continue
            x = _other(f, thing)
            if x == ref:
                continue
            if any(f.start <= e and s <= f.end for s, e in ref_ivs):
                gold.add(x)
        return gold

    if q.qtype == "first_last":
        anchor = ents[0]
        timed = [f for f in facts if f.timed and anchor in (f.subject, f.object)]
        if not timed:
            return set()
        target = min(f.start for f in timed) if q.flavor == "first" \
            else max(f.start for f in timed)
        return {_other(f, anchor) for f in timed if f.start == target}

    # the remaining types all compare start years within a (relation, thing)
    # pattern relative to a reference entity
    thing, ref = ents[0], ents[1]
    ref_start = _ref_start(kg, r, thing, ref)
    if ref_start is None:
        return set()
    starts = {}
    for f in facts:
        if f.timed and thing in (f.subject, f.object):
            x = _other(f, thing)
            starts[x] = min(starts.get(x, f.start), f.start)

    if q.qtype == "before_after":
        if q.flavor == "after":
            return {x for x, s in starts.items() if s > ref_start and x != ref}
        return {x for x, s in starts.items() if s < ref_start and x != ref}

    if q.qtype == "before_and_after":
        tail2 = ents[2]
        t2_start = _ref_start(kg, r, thing, tail2)
        lo, hi = sorted((ref_start, t2_start))
        return {x for x, s in starts.items() if lo < s < hi}

    if q.qtype == "before_after_first_last":
        if q.flavor == "after_first":
            later = {x: s for x, s in starts.items() if s > ref_start}
            if not later:
                return set()
            closest = min(later.values())
            return {x for x, s in later.items() if s == closest}
        earlier = {x: s for x, s in starts.items() if s < ref_start}
        if not earlier:
            return set()
        closest = max(earlier.values())
        return {x for x, s in earlier.items() if s == closest}

    raise ValueError(f"unknown question type {q.qtype!r}")


# -- question construction ----------------------------------------------------


def _instantiate(kg, bank, rng, qtype, relation, fills, flavor, annot_ids, tau=None):
    template = bank.pick(qtype, rng)
    if qtype in ("before_after", "first_last"):
        template = template.replace("{flavor}", flavor)
    elif qtype == "before_and_after":
        template = bank.templates[qtype][0 if flavor == "after" else 1]
    elif qtype == "before_after_first_last":
        template = bank.templates[qtype][0 if flavor == "after_first" else 1]
    tokens, annotations = [], []
    for tok in template.split():
        if tok in fills:
            name, kind, aid = fills[tok]
            annotations.append(Annotation((len(tokens), len(tokens) + 1), kind, aid))
            tokens.append(name)
        else:
            tokens.append(tok)
    # annotations ordered as in fills, not text order, so callers can rely on
    # [thing, ref, ...] positions
    order = {ph: i for i, ph in enumerate(fills)}
    ph_at = {fills[ph][2]: order[ph] for ph in fills}
    annotations.sort(key=lambda a: (0, ph_at[a.id]) if a.kind == "entity" else (1, 0))
    q = AnnotatedQuestion(tokens, annotations, qtype,
                          "time" if qtype == "simple_time" else "entity",
                          set(), relation, flavor)
    q.answers = answer_oracle(kg, q)
    return q


def _candidates(kg, qtype):
    """Instantiation slots for one question type, as deterministic lists."""
    groups = _groups(kg)
    out = []
    if qtype == "simple_entity":
        for (r, thing), facts in sorted(groups.items()):
            years = sorted({y for f in facts for y in range(f.start, f.end + 1)})
            out.extend((r, thing, None, y) for y in years)
    elif qtype == "simple_time":
        for (r, thing), facts in sorted(groups.items()):
            out.extend((r, thing, f.subject if f.object == thing else f.object, None)
                       for f in sorted(facts, key=lambda f: (f.subject, f.start)))
    elif qtype in ("before_after", "before_and_after", "before_after_first_last"):
        need = 4 if qtype == "before_and_after" else 2
        for (r, thing), facts in sorted(groups.items()):
            starts = sorted({f.start for f in facts})
            if len(starts) < need:
                continue
            for f in sorted(facts, key=lambda f: (f.start, f.subject)):
                out.append((r, thing, _other(f, thing), f.start))
    elif qtype == "first_last":
        for (r, thing), facts in sorted(groups.items()):
            if len({f.start for f in facts}) >= 2:
                out.append((r, thing, None, None))
    elif qtype == "time_join":
        for (r, thing), facts in sorted(groups.items()):
            for f in sorted(facts, key=lambda f: (f.start, f.subject)):
                x = _other(f, thing)
                if any(g is not f and g.start <= f.end and f.start <= g.end
                       for g in facts):
                    out.append((r, thing, x, None))
    else:
        raise ValueError(qtype)
    return out


def _make_question(kg, bank, rng, qtype, slot):
    r, thing, ref, aux = slot
    thing_name = kg.entity_names[thing]
    if qtype == "simple_entity":
        tau_id = kg.year_id(aux)
        fills = {"{head}": (thing_name, "entity", thing),
                 "{time}": (str(aux), "timestamp", tau_id)}
        return _instantiate(kg, bank, rng, qtype, r, fills, None, None)
    if qtype == "simple_time":
        fills = {"{head}": (thing_name, "entity", thing),
                 "{tail}": (kg.entity_names[ref], "entity", ref)}
        return _instantiate(kg, bank, rng, qtype, r, fills, None, None)
    if qtype == "before_after":
        starts = sorted({f.start for f in kg.facts
                         if f.timed and f.relation == r
                         and thing in (f.subject, f.object)})
        flavor = "after" if aux < starts[-1] else "before"
        fills = {"{head}": (thing_name, "entity", thing),
                 "{tail}": (kg.entity_names[ref], "entity", ref)}
        return _instantiate(kg, bank, rng, qtype, r, fills, flavor, None)
    if qtype == "first_last":
        flavor = "first" if rng.random() < 0.5 else "last"
        fills = {"{head}": (thing_name, "entity", thing)}
        return _instantiate(kg, bank, rng, qtype, r, fills, flavor, None)
    if qtype == "time_join":
        fills = {"{head}": (thing_name, "entity", thing),
                 "{tail}": (kg.entity_names[ref], "entity", ref)}
        return _instantiate(kg, bank, rng, qtype, r, fills, None, None)
    raise ValueError(qtype)


def generate_dataset(kg, mix, bank=None, seed=0):
    """Deterministically sample `mix[qtype]` questions per type.

    Raises GenerationError naming any type the KG cannot satisfy. Questions
    with empty gold sets are never emitted.
    """
    bank = bank or TemplateBank()
    rng = np.random.default_rng(seed)
    questions = []
    for qtype, count in mix.items():
        if qtype in COMBO_TYPES:
            raise GenerationError(f"{qtype} is generated by generate_unseen_combos")
        if qtype not in ALL_TYPES:
            raise GenerationError(f"unknown question type {qtype!r}")
        slots = _candidates(kg, qtype)
        if not slots:
            raise GenerationError(f"KG cannot instantiate any {qtype} question")
        made, attempts = 0, 0
        limit = max(count * 50, 1000)
        while made < count:
            attempts += 1
            if attempts > limit:
                raise GenerationError(
                    f"could not instantiate {count} {qtype} questions "
                    f"(got {made} after {attempts} attempts)")
            slot = slots[rng.integers(len(slots))]
            q = _make_question(kg, bank, rng, qtype, slot)
            if q.answers:
                questions.append(q)
                made += 1
    return questions


def generate_unseen_combos(kg, bank=None, seed=0, max_per_type=200):
    """Combined-constraint questions held out from training.

    before_and_after: the far boundary is the entity whose qualifying start
    year is the third-closest distinct one to the head's; gold is everything
    strictly between the two boundaries. before_after_first_last: gold is
    restricted to the closest-in-time qualifying entity.
    """
    bank = bank or TemplateBank()
    rng = np.random.default_rng(seed)
    groups = _groups(kg)
    rich = []
    for (r, thing), facts in sorted(groups.items()):
        if len({f.start for f in facts}) >= 4:
            rich.append((r, thing, facts))
    if not rich:
        raise GenerationError("no (relation, object) pattern has >= 4 distinct start years")

    out = []
    for r, thing, facts in rich:
        by_start = {}
        for f in sorted(facts, key=lambda f: (f.start, f.subject)):
            by_start.setdefault(f.start, _other(f, thing))
        starts = sorted(by_start)
        for i, head_start in enumerate(starts):
            head = by_start[head_start]
            # after-side chain needs >= 3 distinct later starts
            later = starts[i + 1:]
            if len(later) >= 3:
                tail2 = by_start[later[2]]
                fills = {"{head}": (kg.entity_names[thing], "entity", thing),
                         "{tail}": (kg.entity_names[head], "entity", head),
                         "{tail2}": (kg.entity_names[tail2], "entity", tail2)}
                q = _instantiate(kg, bank, rng, "before_and_after", r, fills,
                                 "after", None)
                if q.answers:
                    out.append(q)
            earlier = starts[:i]
            if len(earlier) >= 3:
                tail2 = by_start[earlier[-3]]
                fills = {"{head}": (kg.entity_names[thing], "entity", thing),
                         "{tail}": (kg.entity_names[head], "entity", head),
                         "{tail2}": (kg.entity_names[tail2], "entity", tail2)}
                q = _instantiate(kg, bank, rng, "before_and_after", r, fills,
                                 "before", None)
                if q.answers:
                    out.append(q)
            for flavor, ok in (("after_first", bool(later)), ("before_last", bool(earlier))):
                if not ok:
                    continue
                fills = {"{head}": (kg.entity_names[thing], "entity", thing),
                         "{tail}": (kg.entity_names[head], "entity", head)}
                q = _instantiate(kg, bank, rng, "before_after_first_last", r,
                                 fills, flavor, None)
                if q.answers:
                    out.append(q)

    by_type = {t: [q for q in out if q.qtype == t] for t in COMBO_TYPES}
    trimmed = []
    for t in COMBO_TYPES:
        qs = by_type[t]
        if len(qs) > max_per_type:
            keep = rng.choice(len(qs), size=max_per_type, replace=False)
            qs = [qs[i] for i in sorted(keep)]
        trimmed.extend(qs)
    return trimmed


def split_dataset(questions, fractions=(0.8, 0.1, 0.1), seed=0):
    """Split into train/dev/test keeping every signature in a single split."""
    rng = np.random.default_rng(seed)
    sig_groups = {}
    for q in questions:
        sig_groups.setdefault(q.signature(), []).append(q)
    sigs = sorted(sig_groups)
    order = rng.permutation(len(sigs))
    total = len(questions)
    targets = np.cumsum(fractions) / sum(fractions) * total
    splits = [[], [], []]
    si, filled = 0, 0
    for gi in order:
        group = sig_groups[sigs[gi]]
        while si < 2 and filled >= targets[si]:
            si += 1
        splits[si].extend(group)
        filled += len(group)
    return [sorted(s, key=lambda q: q.signature()) for s in splits]


def question_vocab(kg, bank=None):
    """Every token a generated question can contain: template words, entity
    names, and year literals."""
    bank = bank or TemplateBank()
    words = set(bank.vocabulary())
    words.update(kg.entity_names)
    words.update(str(y) for y in kg.years)
    return sorted(words)


# -- persistence ---------------------------------------------------------------


def save_questions(questions, path):
    with open(path, "w", encoding="utf-8") as fh:
        for q in questions:
            rec = {
                "tokens": q.tokens,
                "annotations": [{"span": list(a.span), "kind": a.kind, "id": a.id}
                                for a in q.annotations],
                "qtype": q.qtype,
                "answer_kind": q.answer_kind,
                "answers": sorted(q.answers),
                "relation": q.relation,
                "flavor": q.flavor,
            }
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_questions(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            out.append(AnnotatedQuestion(
                rec["tokens"],
                [Annotation(tuple(a["span"]), a["kind"], a["id"])
                 for a in rec["annotations"]],
                rec["qtype"], rec["answer_kind"], set(rec["answers"]),
                rec.get("relation", 0), rec.get("flavor")))
    return out
