"""Seeded synthetic temporal KG generator.

Produces a people-and-things world with three relation families whose
temporal structure matches what the question generator needs:

  won       point facts (person, won, award, [y, y]); one winner per year
            per award, so every (relation, award) pattern is a clean
            chronology of distinct start years
  held      interval facts (person, held, position, [start, end]); holders
            follow each other back to back
  member_of interval facts (person, member_of, team, [start, end]) with
            deliberate overlaps for time-join questions
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kg import Fact, TemporalKG


@dataclass
class SynthConfig:
    num_people: int = 120
    num_awards: int = 12
    num_positions: int = 8
    num_teams: int = 8
    year_start: int = 1950
    year_end: int = 2000
    award_years: int = 20       # chronology length per award
    holders_per_position: int = 8
    members_per_team: int = 10
    seed: int = 0


def generate_kg(config=None):
    config = config or SynthConfig()
    rng = np.random.default_rng(config.seed)
    people = [f"person{i}" for i in range(config.num_people)]
    awards = [f"award{i}" for i in range(config.num_awards)]
    positions = [f"position{i}" for i in range(config.num_positions)]
    teams = [f"team{i}" for i in range(config.num_teams)]
    entity_names = people + awards + positions + teams
    relation_names = ["won", "held", "member_of"]
    years = list(range(config.year_start, config.year_end + 1))
    kg = TemporalKG(entity_names, relation_names, years)

    pid = lambda i: i
    n_p = config.num_people
    award_id = lambda i: n_p + i
    pos_id = lambda i: n_p + config.num_awards + i
    team_id = lambda i: n_p + config.num_awards + config.num_positions + i
    span = config.year_end - config.year_start

    facts = []
    for a in range(config.num_awards):
        n_years = min(config.award_years, span)
        offset = int(rng.integers(0, span - n_years + 1))
        ys = config.year_start + offset + np.sort(
            rng.choice(span - offset, size=n_years, replace=False))
        winners = rng.choice(n_p, size=n_years, replace=False)
        for y, w in zip(ys, winners):
            facts.append(Fact(pid(int(w)), 0, award_id(a), int(y), int(y)))

    for p in range(config.num_positions):
        n_hold = config.holders_per_position
        holders = rng.choice(n_p, size=n_hold, replace=False)
        y = config.year_start + int(rng.integers(0, 5))
        for h in holders:
            if y > config.year_end:
                break
            term = int(rng.integers(2, 7))
            end = min(y + term - 1, config.year_end)
            facts.append(Fact(pid(int(h)), 1, pos_id(p), y, end))
            y = end + 1

    for t in range(config.num_teams):
        members = rng.choice(n_p, size=config.members_per_team, replace=False)
        for m in members:
            start = config.year_start + int(rng.integers(0, span - 5))
            length = int(rng.integers(3, 10))
            end = min(start + length, config.year_end)
            facts.append(Fact(pid(int(m)), 2, team_id(t), start, end))

    kg.facts = facts
    return kg


def toy_kg(num_entities=200, num_relations=5, num_years=50, num_facts=3000, seed=0):
    """Unstructured random TKG used by the link-prediction quality checks."""
    rng = np.random.default_rng(seed)
    names = [f"e{i}" for i in range(num_entities)]
    rels = [f"r{i}" for i in range(num_relations)]
    years = list(range(2000, 2000 + num_years))
    kg = TemporalKG(names, rels, years)
    seen = set()
    facts = []
    # correlated structure: each relation maps subjects to a nearby object
    # block and the year is a function of the pair, so a good factorization
    # can recover held-out facts almost deterministically
    while len(facts) < num_facts:
        r = int(rng.integers(num_relations))
        s = int(rng.integers(num_entities))
        o = (s + r * (num_entities // num_relations)
             + int(rng.integers(1, 5))) % num_entities
        y = years[(s + o) % num_years]
        key = (s, r, o, y)
        if key in seen:
            continue
        seen.add(key)
        facts.append(Fact(s, r, o, y, y))
    kg.facts = facts
    return kg
