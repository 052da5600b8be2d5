"""Deterministic template-grammar data generator.

Produces retrieval supervision (query / fact / unrelated-fact triplets) and
structural near-miss pairs in three families: negation flips, binding swaps
(role reversal or attribute exchange), and spatial-relation flips, plus
meaning-preserving paraphrase pairs used only for evaluation.

Train and held-out worlds draw entities from disjoint lexicon halves;
structural words (verbs, relations, function words) are shared, which is what
lets structural training distort them for everyone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embstore import CorpusRecord, Triplet
from .errors import DataEmpty, LexiconExhausted, UnsupportedPattern

# ------------------------------------------------------------------ lexicons

AGENTS = (
    "dog", "man", "cat", "woman", "boy", "girl", "horse", "farmer",
    "teacher", "nurse", "painter", "sailor", "monkey", "pilot", "baker", "clown",
    "soldier", "wizard", "hunter", "keeper", "rider", "weaver", "smith", "scout",
)
PATIENTS = (
    "rabbit", "child", "fox", "singer", "doctor", "dancer", "student", "guard",
    "puppy", "kitten", "judge", "actor", "tiger", "lawyer", "barber", "poet",
    "climber", "swimmer", "runner", "archer", "drummer", "tailor", "miner", "porter",
)
VERBS = (
    "bit", "chased", "saw", "pushed", "carried", "followed",
    "greeted", "lifted", "touched", "watched", "hugged", "kicked",
)
ATTRIBUTES = (
    "red", "blue", "green", "yellow", "black", "white", "purple", "orange",
    "pink", "brown", "gray", "silver", "golden", "tiny", "huge", "shiny",
    "dull", "bright", "heavy", "light", "smooth", "rough", "round", "square",
    "narrow", "wide", "tall", "short", "clean", "dusty", "old", "new",
)
OBJECTS = (
    "cube", "ball", "book", "cup", "lamp", "chair", "table", "box",
    "coin", "bottle", "plate", "spoon", "basket", "mirror", "candle", "ribbon",
    "vase", "clock", "brush", "kettle", "pencil", "folder", "pillow", "net",
    "drum", "flag", "bell", "rope", "jar", "tray", "stool", "crayon",
)
LOCATIONS = (
    "kitchen", "garden", "park", "library", "office", "barn",
    "classroom", "market", "museum", "station", "bakery", "harbor",
    "attic", "cellar", "studio", "workshop", "hallway", "courtyard",
    "meadow", "orchard",
)

RELATION_ANTONYMS = {
    "left of": "right of",
    "right of": "left of",
    "above": "below",
    "below": "above",
    "inside": "outside",
    "outside": "inside",
}

SYNONYMS = {
    "man": "gentleman", "gentleman": "man",
    "dog": "hound", "hound": "dog",
    "woman": "lady", "lady": "woman",
    "child": "kid", "kid": "child",
    "rabbit": "bunny", "bunny": "rabbit",
    "cup": "mug", "mug": "cup",
    "book": "novel", "novel": "book",
    "box": "crate", "crate": "box",
    "ball": "sphere", "sphere": "ball",
    "chair": "seat", "seat": "chair",
    "lamp": "lantern", "lantern": "lamp",
    "saw": "spotted", "spotted": "saw",
    "chased": "pursued", "pursued": "chased",
    "carried": "hauled", "hauled": "carried",
    "watched": "observed", "observed": "watched",
    "tiny": "small", "small": "tiny",
    "huge": "giant", "giant": "huge",
}

MIN_SENTENCE_CHARS = 20


@dataclass(frozen=True)
class TemplateWorld:
    """Entity lexicons for one scope plus the shared structural vocabulary."""

    agents: tuple[str, ...]
    patients: tuple[str, ...]
    verbs: tuple[str, ...]
    attributes: tuple[str, ...]
    objects: tuple[str, ...]
    relations: tuple[str, ...]
    locations: tuple[str, ...]
    seed: int
    scope: str

    def __post_init__(self):
        for name in ("agents", "patients", "verbs", "attributes", "objects", "locations"):
            values = getattr(self, name)
            if not values:
                raise ValueError(f"{name} lexicon is empty")
            if len(set(values)) != len(values):
                raise ValueError(f"{name} lexicon has duplicates")
        for rel in self.relations:
            if RELATION_ANTONYMS[RELATION_ANTONYMS[rel]] != rel:
                raise ValueError(f"antonym map is not an involution at {rel!r}")


def _half(values: tuple[str, ...], scope: str) -> tuple[str, ...]:
    mid = len(values) // 2
    return values[:mid] if scope == "train" else values[mid:]


def build_world(seed: int = 42, scope: str = "train") -> TemplateWorld:
    """World with scope-specific entity halves; 'train' and 'heldout' are disjoint."""
    if scope not in ("train", "heldout"):
        raise ValueError(f"unknown scope {scope!r}")
    return TemplateWorld(
        agents=_half(AGENTS, scope),
        patients=_half(PATIENTS, scope),
        verbs=VERBS,
        attributes=_half(ATTRIBUTES, scope),
        objects=_half(OBJECTS, scope),
        relations=tuple(RELATION_ANTONYMS),
        locations=_half(LOCATIONS, scope),
        seed=seed,
        scope=scope,
    )


@dataclass(frozen=True)
class PairRecord:
    """A sentence pair with high lexical overlap; near-miss or paraphrase."""

    s1: str
    s2: str
    family: str
    is_near_miss: bool

    def __post_init__(self):
        if self.s1 == self.s2:
            raise ValueError("pair sentences must differ")
        if token_jaccard(self.s1, self.s2) < 0.5:
            raise ValueError(f"pair overlap below 0.5: {self.s1!r} / {self.s2!r}")


def token_jaccard(s1: str, s2: str) -> float:
    a, b = set(s1.split()), set(s2.split())
    return len(a & b) / len(a | b)


# ------------------------------------------------------------- perturbations


def perturb_negation(s: str) -> str:
    """Flip polarity once at the first copula/auxiliary; an involution."""
    for needle, repl in ((" is not ", " is "), (" is ", " is not "),
                        (" are not ", " are "), (" are ", " are not "),
                        (" cannot ", " can "), (" can ", " cannot ")):
        idx = s.find(needle)
        if idx >= 0:
            return s[:idx] + repl + s[idx + len(needle):]
    raise UnsupportedPattern(f"no copula/auxiliary in {s!r}")


def perturb_spatial(s: str) -> str:
    """Replace the first known spatial relation by its antonym; an involution."""
    padded = f" {s} "
    for rel in sorted(RELATION_ANTONYMS, key=len, reverse=True):
        idx = padded.find(f" {rel} ")
        if idx >= 0:
            out = padded[: idx + 1] + RELATION_ANTONYMS[rel] + padded[idx + 1 + len(rel):]
            return out[1:-1]
    raise UnsupportedPattern(f"no known spatial relation in {s!r}")


def perturb_binding(s: str, world: TemplateWorld) -> str:
    """Swap roles around a transitive verb, or two attributes across heads.

    Preserves the token multiset exactly; an involution.
    """
    tokens = s.split()
    # attribute exchange: "the C1 O1 and the C2 O2 ..."
    if (
        len(tokens) >= 7
        and tokens[0] == "the"
        and tokens[3] == "and"
        and tokens[4] == "the"
        and tokens[1] in world.attributes
        and tokens[5] in world.attributes
        and tokens[2] in world.objects
        and tokens[6] in world.objects
    ):
        tokens[1], tokens[5] = tokens[5], tokens[1]
        return " ".join(tokens)
    # role swap: "the A V the B ..."
    if (
        len(tokens) >= 5
        and tokens[0] == "the"
        and tokens[3] == "the"
        and tokens[2] in world.verbs
    ):
        tokens[1], tokens[4] = tokens[4], tokens[1]
        return " ".join(tokens)
    raise UnsupportedPattern(f"no transitive or two-attribute pattern in {s!r}")


def _paraphrase_rules(s: str) -> list[str]:
    rules = []
    tokens = s.split()
    if any(t in SYNONYMS for t in tokens):
        rules.append("synonym")
    if "the" in tokens:
        rules.append("determiner")
    if (
        len(tokens) >= 7
        and tokens[0] == "the"
        and tokens[3] == "and"
        and tokens[4] == "the"
    ):
        rules.append("reorder")
    return rules


def perturb_paraphrase(s: str, rule: str | None = None) -> str:
    """Meaning-preserving edit: synonym, determiner swap, or conjunct reorder."""
    rules = _paraphrase_rules(s)
    if not rules:
        raise UnsupportedPattern(f"no paraphrase rule applies to {s!r}")
    if rule is None:
        rule = rules[0]
    elif rule not in rules:
        raise UnsupportedPattern(f"rule {rule!r} does not apply to {s!r}")
    tokens = s.split()
    if rule == "synonym":
        for i, t in enumerate(tokens):
            if t in SYNONYMS:
                tokens[i] = SYNONYMS[t]
                return " ".join(tokens)
    if rule == "determiner":
        idx = tokens.index("the")
        tokens[idx] = "a"
        return " ".join(tokens)
    # conjunct reorder: swap the two noun-phrase blocks around "and"
    left, right = tokens[:3], tokens[4:7]
    return " ".join(right + ["and"] + left + tokens[7:])


# ----------------------------------------------------------- fact templates


def _decode(space: tuple[tuple[str, ...], ...], idx: int) -> tuple[str, ...]:
    out = []
    for values in reversed(space):
        idx, pos = divmod(idx, len(values))
        out.append(values[pos])
    return tuple(reversed(out))


def _space_size(space: tuple[tuple[str, ...], ...]) -> int:
    size = 1
    for values in space:
        size *= len(values)
    return size


class _FactClass:
    """One fact template: a combo space plus renderers for fact and query."""

    def __init__(self, name, space, render, render_query, entities):
        self.name = name
        self.space = space
        self.render = render
        self.render_query = render_query
        self.entities = entities

    def walk(self, world: TemplateWorld, start: int, count: int | None):
        """Deterministically yield ``count`` valid unique combos from ``start``.

        The walk order is a seeded permutation of the whole combo space;
        combos whose slots collide (same entity twice) are skipped. A count
        of ``None`` yields until the space is exhausted without raising.
        """
        if count is not None and count <= 0:
            return
        size = _space_size(self.space)
        rng = np.random.default_rng([world.seed, _CLASS_SEEDS[self.name]])
        order = rng.permutation(size)
        taken = 0
        accepted = 0
        for idx in order:
            combo = _decode(self.space, int(idx))
            if len(set(combo)) != len(combo):
                continue
            if accepted >= start:
                yield combo
                taken += 1
                if count is not None and taken == count:
                    return
            accepted += 1
        if count is not None:
            raise LexiconExhausted(
                f"{self.name}: requested {count} facts after {start}, space holds {accepted}"
            )


_CLASS_SEEDS = {"transitive": 11, "attribute": 13, "spatial": 17, "conjunction": 19}


# Queries mention every content slot of their fact so that fact -> query is
# injective; retrieval difficulty comes from distractor facts that share
# entities, not from withheld slots.
def _fact_classes(world: TemplateWorld) -> list[_FactClass]:
    return [
        _FactClass(
            "transitive",
            (world.agents, world.verbs, world.patients, world.locations),
            lambda c: f"the {c[0]} {c[1]} the {c[2]} in the {c[3]}",
            lambda c: f"was it the {c[0]} that {c[1]} the {c[2]} in the {c[3]}",
            lambda c: set(c),
        ),
        _FactClass(
            "attribute",
            (world.attributes, world.objects, world.locations),
            lambda c: f"the {c[0]} {c[1]} is in the {c[2]}",
            lambda c: f"is the {c[0]} {c[1]} in the {c[2]}",
            lambda c: set(c),
        ),
        _FactClass(
            "spatial",
            (world.objects, world.relations, world.objects, world.locations),
            lambda c: f"the {c[0]} is {c[1]} the {c[2]} in the {c[3]}",
            lambda c: f"is the {c[0]} {c[1]} the {c[2]} in the {c[3]}",
            lambda c: {c[0], c[2], c[3]},
        ),
        _FactClass(
            "conjunction",
            (world.attributes, world.objects, world.attributes, world.objects,
             world.locations),
            lambda c: f"the {c[0]} {c[1]} and the {c[2]} {c[3]} are in the {c[4]}",
            lambda c: f"are the {c[0]} {c[1]} and the {c[2]} {c[3]} in the {c[4]}",
            lambda c: set(c),
        ),
    ]


# Per-class share of standard-triplet generation; the attribute space is the
# smallest, so it carries the lightest load.
_CLASS_WEIGHTS = {"transitive": 0.30, "attribute": 0.15, "spatial": 0.25, "conjunction": 0.30}


def _apply_query_synonyms(query: str, rng: np.random.Generator, prob: float = 0.3) -> str:
    tokens = query.split()
    for i, t in enumerate(tokens):
        if t in SYNONYMS and rng.random() < prob:
            tokens[i] = SYNONYMS[t]
    return " ".join(tokens)


def _weighted_shares(count: int, classes) -> list[int]:
    raw = [count * _CLASS_WEIGHTS[cls.name] for cls in classes]
    shares = [int(x) for x in raw]
    remainders = sorted(
        range(len(raw)), key=lambda i: raw[i] - shares[i], reverse=True
    )
    for i in remainders[: count - sum(shares)]:
        shares[i] += 1
    return shares


def _collect_facts(world: TemplateWorld, count: int, skip: int = 0):
    """Unique (fact, query, entity-set) records spread over the fact classes."""
    classes = _fact_classes(world)
    shares = _weighted_shares(count, classes)
    skips = _weighted_shares(skip, classes) if skip else [0] * len(classes)
    rng = np.random.default_rng([world.seed, 23])
    records = []
    seen_queries: set[str] = set()
    for cls, share, start in zip(classes, shares, skips):
        got = 0
        for combo in cls.walk(world, start, None):
            fact = cls.render(combo)
            query = _apply_query_synonyms(cls.render_query(combo), rng)
            if query in seen_queries or fact == query:
                continue
            seen_queries.add(query)
            records.append((fact, query, cls.entities(combo)))
            got += 1
            if got == share:
                break
        if got < share:
            raise LexiconExhausted(f"{cls.name}: only {got} unique facts, wanted {share}")
    return records


def gen_standard_triplets(world: TemplateWorld, count: int) -> list[Triplet]:
    """(query, its fact, entity-disjoint other fact) triples, family 'standard'."""
    if count < 1:
        raise ValueError("count must be >= 1")
    records = _collect_facts(world, count)
    rng = np.random.default_rng([world.seed, 29])
    triplets = []
    n = len(records)
    for i, (fact, query, entities) in enumerate(records):
        negative = None
        for probe in rng.permutation(n):
            if probe == i:
                continue
            other_fact, _, other_entities = records[probe]
            if entities.isdisjoint(other_entities):
                negative = other_fact
                break
        if negative is None:
            raise LexiconExhausted("no entity-disjoint negative available")
        triplets.append(Triplet(query, fact, negative, "standard"))
    return triplets


def gen_retrieval_eval(
    world: TemplateWorld, n_queries: int, n_distractors: int, skip: int = 0
) -> tuple[list[CorpusRecord], list[CorpusRecord], dict[str, dict[str, int]]]:
    """Corpus, queries, and binary qrels for ranking evaluation.

    ``skip`` jumps over fact combos already consumed by training generation
    from the same world.
    """
    records = _collect_facts(world, n_queries + n_distractors, skip=skip)
    prefix = world.scope
    corpus = [CorpusRecord(f"{prefix}-d{i}", fact) for i, (fact, _, _) in enumerate(records)]
    queries = [
        CorpusRecord(f"{prefix}-q{i}", query)
        for i, (_, query, _) in enumerate(records[:n_queries])
    ]
    qrels = {f"{prefix}-q{i}": {f"{prefix}-d{i}": 1} for i in range(n_queries)}
    return corpus, queries, qrels


# ------------------------------------------------------------ pair families


def gen_pairs(world: TemplateWorld, per_family: int) -> list[PairRecord]:
    """Near-miss pairs for the three structural families plus paraphrase pairs.

    ``per_family`` pairs are produced for each of negation, binding, spatial,
    and paraphrase. Anchor sentences per family never repeat: each template
    class keeps a cursor into its seeded combo walk.
    """
    if per_family < 1:
        raise ValueError("per_family must be >= 1")
    classes = {cls.name: cls for cls in _fact_classes(world)}
    cursors = {name: 0 for name in classes}

    def draw(name: str, n: int):
        start = cursors[name]
        cursors[name] += n
        return (classes[name].render(c) for c in classes[name].walk(world, start, n))

    pairs: list[PairRecord] = []

    # negation: copula sentences, half attribute facts, half conjunction facts
    n_attr = per_family - per_family // 2
    for s1 in draw("attribute", n_attr):
        pairs.append(PairRecord(s1, perturb_negation(s1), "negation", True))
    for s1 in draw("conjunction", per_family // 2):
        pairs.append(PairRecord(s1, perturb_negation(s1), "negation", True))

    # binding: role swaps on transitive facts, attribute exchanges on conjunctions
    n_role = per_family - per_family // 2
    for s1 in draw("transitive", n_role):
        pairs.append(PairRecord(s1, perturb_binding(s1, world), "binding", True))
    for s1 in draw("conjunction", per_family // 2):
        pairs.append(PairRecord(s1, perturb_binding(s1, world), "binding", True))

    # spatial: antonym flips
    for s1 in draw("spatial", per_family):
        pairs.append(PairRecord(s1, perturb_spatial(s1), "spatial", True))

    # paraphrases: fresh anchors over the same template styles
    rng = np.random.default_rng([world.seed, 31])
    share = per_family // 3
    for style, n in (
        ("attribute", per_family - 2 * share),
        ("transitive", share),
        ("conjunction", share),
    ):
        for s1 in draw(style, n):
            rule = str(rng.choice(_paraphrase_rules(s1)))
            pairs.append(PairRecord(s1, perturb_paraphrase(s1, rule), "paraphrase", False))
    return pairs


def make_structural_triplets(pairs: list[PairRecord]) -> list[Triplet]:
    """(s1, s1, s2) triplets from near-miss pairs; paraphrases are eval-only."""
    return [
        Triplet(p.s1, p.s1, p.s2, p.family) for p in pairs if p.is_near_miss
    ]


def split_pairs(
    pairs: list[PairRecord], ratio: float = 0.8, seed: int = 42
) -> tuple[list[PairRecord], list[PairRecord]]:
    """Deterministic stratified-by-family shuffled split."""
    if not 0.0 < ratio < 1.0:
        raise ValueError("ratio must be in (0, 1)")
    by_family: dict[str, list[PairRecord]] = {}
    for p in pairs:
        by_family.setdefault(p.family, []).append(p)
    train: list[PairRecord] = []
    heldout: list[PairRecord] = []
    for fam_idx, family in enumerate(sorted(by_family)):
        bucket = by_family[family]
        rng = np.random.default_rng([seed, 41, fam_idx])
        order = rng.permutation(len(bucket))
        cut = int(len(bucket) * ratio)
        train.extend(bucket[i] for i in order[:cut])
        heldout.extend(bucket[i] for i in order[cut:])
    return train, heldout


def mix_datasets(
    standard: list[Triplet],
    structural: list[Triplet],
    structural_fraction: float = 0.192,
    seed: int = 42,
) -> list[Triplet]:
    """Shuffled union with the structural share resampled to the target fraction.

    Triplets containing any sentence shorter than 20 characters are dropped
    before mixing. Structural triplets are over- or subsampled to land the
    fraction within rounding of the target.
    """
    def long_enough(t: Triplet) -> bool:
        return all(
            len(s) >= MIN_SENTENCE_CHARS for s in (t.anchor, t.positive, t.negative)
        )

    std = [t for t in standard if long_enough(t)]
    if not std:
        raise DataEmpty("no standard triplets survive the length filter")
    if structural_fraction <= 0.0:
        return std
    struct = [t for t in structural if long_enough(t)]
    if not struct:
        raise DataEmpty("no structural triplets survive the length filter")

    target = round(structural_fraction * len(std) / (1.0 - structural_fraction))
    rng = np.random.default_rng([seed, 37])
    if target <= len(struct):
        chosen_idx = rng.choice(len(struct), size=target, replace=False)
    else:
        chosen_idx = rng.choice(len(struct), size=target, replace=True)
    mixed = std + [struct[int(i)] for i in chosen_idx]
    order = rng.permutation(len(mixed))
    return [mixed[int(i)] for i in order]


# ------------------------------------------------------------------ pair I/O


def write_pairs_jsonl(path, pairs: list[PairRecord]) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            fh.write(
                json.dumps(
                    {"s1": p.s1, "s2": p.s2, "family": p.family,
                     "is_near_miss": p.is_near_miss},
                    sort_keys=True,
                )
            )
            fh.write("\n")


def load_pairs_jsonl(path) -> list[PairRecord]:
    import json

    from .errors import ParseError

    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    PairRecord(
                        s1=str(obj["s1"]),
                        s2=str(obj["s2"]),
                        family=str(obj["family"]),
                        is_near_miss=bool(obj["is_near_miss"]),
                    )
                )
            except (KeyError, ValueError, TypeError) as exc:
                raise ParseError(lineno, str(exc)) from exc
    return pairs
