"""Corpus ingestion, tokenization, vocabulary, and a synthetic dialog generator.

Tokenization is pure and deterministic: lowercase, punctuation characters
separated into their own tokens, then whitespace split. The corpus file
format is JSON Lines with tagged fields; see docs/formats.md for the exact
schema and a worked example.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional

from .errors import ConfigurationError, ContractError, CorpusError, ParseError
from .seeding import rng

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
USR_TOKEN = "<usr>"
SYS_TOKEN = "<sys>"
RESERVED_TOKENS = (PAD_TOKEN, UNK_TOKEN, USR_TOKEN, SYS_TOKEN)

_PUNCT = re.compile(r"([^\w\s])")


def tokenize(text: str) -> list[str]:
    """Lowercase, split punctuation into separate tokens, split on whitespace."""
    return _PUNCT.sub(r" \1 ", text.lower()).split()


@dataclass(frozen=True)
class Vocabulary:
    id_to_token: tuple

    @property
    def size(self) -> int:
        return len(self.id_to_token)

    @property
    def content_size(self) -> int:
        return self.size - len(RESERVED_TOKENS)

    @property
    def token_to_id(self) -> dict:
        cached = self.__dict__.get("_map")
        if cached is None:
            cached = {tok: i for i, tok in enumerate(self.id_to_token)}
            self.__dict__["_map"] = cached
        return cached

    @property
    def content_hash(self) -> str:
        return hashlib.sha256("\n".join(self.id_to_token).encode("utf-8")).hexdigest()

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, self.token_to_id[UNK_TOKEN])

    def encode_text(self, text: str) -> list[int]:
        return [self.id_of(tok) for tok in tokenize(text)]

    def speaker_id(self, speaker: str) -> int:
        return self.token_to_id[USR_TOKEN if speaker == "usr" else SYS_TOKEN]

    def save(self, path) -> None:
        Path(path).write_text(
            json.dumps({"kind": "multigran-vocab", "version": 1,
                        "tokens": list(self.id_to_token)}, sort_keys=True),
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path) -> "Vocabulary":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("kind") != "multigran-vocab":
            raise ParseError(f"{path}: not a vocabulary file")
        return cls(id_to_token=tuple(payload["tokens"]))


def build_vocab(train_split, max_size: int, min_count: int = 1) -> Vocabulary:
    """Most frequent training tokens up to max_size; frequency ties break lexicographically."""
    if not train_split:
        raise CorpusError("cannot build a vocabulary from an empty split")
    counts: Counter = Counter()
    for ex in train_split:
        for _, text in ex.turns:
            counts.update(tokenize(text))
        counts.update(tokenize(ex.response))
    ranked = sorted(
        (tok for tok, c in counts.items() if c >= min_count),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary(id_to_token=tuple(RESERVED_TOKENS) + tuple(ranked[:max_size]))


# ---------------------------------------------------------------------------
# dialog examples and corpus files


@dataclass
class DialogExample:
    dialog_id: str
    turns: list  # [(speaker, text)], speaker in {"usr", "sys"}
    response: str
    candidates: Optional[list] = None  # indices into the split's response list
    topic: Optional[int] = None

    def last_utterance(self) -> str:
        return self.turns[-1][1]


def split_responses(split) -> list[str]:
    return [ex.response for ex in split]


def split_fingerprint(split) -> str:
    digest = hashlib.sha256()
    for ex in split:
        digest.update(json.dumps(_example_record(ex), sort_keys=True).encode("utf-8"))
    return digest.hexdigest()


def _example_record(ex: DialogExample) -> dict:
    return {
        "id": ex.dialog_id,
        "turns": [[spk, text] for spk, text in ex.turns],
        "response": ex.response,
        "candidates": ex.candidates,
        "topic": ex.topic,
    }


def write_corpus(split, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        for ex in split:
            fh.write(json.dumps(_example_record(ex), sort_keys=True) + "\n")


def load_corpus(path) -> list:
    path = Path(path)
    split = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                turns = [(spk, text) for spk, text in rec["turns"]]
                ex = DialogExample(
                    dialog_id=rec["id"],
                    turns=turns,
                    response=rec["response"],
                    candidates=rec["candidates"],
                    topic=rec["topic"],
                )
            except (KeyError, TypeError, ValueError) as err:
                raise ParseError(f"{path}: malformed corpus record ({err})", line=lineno)
            if not ex.turns or not ex.response:
                raise ParseError(f"{path}: record needs >= 1 turn and a response", line=lineno)
            split.append(ex)
    if not split:
        raise CorpusError(f"{path}: empty corpus")
    return split


def context_token_ids(ex: DialogExample, vocab: Vocabulary, truncation: int) -> list[int]:
    """Speaker-tagged, concatenated context, truncated to the last `truncation` ids."""
    ids: list[int] = []
    for speaker, text in ex.turns:
        ids.append(vocab.speaker_id(speaker))
        ids.extend(vocab.encode_text(text))
    return ids[-truncation:]


def eval_examples(split, vocab: Vocabulary, truncation: int):
    """(context_ids, candidate_id_lists, truth_position) per evaluation example."""
    responses = split_responses(split)
    encoded = [vocab.encode_text(r) for r in responses]
    out = []
    for i, ex in enumerate(split):
        if not ex.candidates:
            raise ContractError(f"example {ex.dialog_id} has no candidate list")
        if ex.candidates.count(i) != 1:
            raise CorpusError(f"example {ex.dialog_id}: ground truth must appear exactly once")
        ctx = context_token_ids(ex, vocab, truncation)
        cands = [encoded[j] for j in ex.candidates]
        out.append((ctx, cands, ex.candidates.index(i)))
    return out


# ---------------------------------------------------------------------------
# label-filtered retrieval conversion


def binary_to_retrieval(labeled_pairs: Iterable) -> tuple:
    """Keep only label-1 pairs as retrieval examples; their responses form the pool.

    Accepts (context, response, label) triples where context is either a turn
    list or a plain string (wrapped as a single user turn).
    """
    examples = []
    pool = []
    saw_any = False
    for n, (context, response, label) in enumerate(labeled_pairs):
        saw_any = True
        if label not in (0, 1):
            raise ContractError(f"record {n}: label must be 0 or 1, got {label!r}")
        if label == 1:
            turns = [("usr", context)] if isinstance(context, str) else list(context)
            examples.append(
                DialogExample(dialog_id=f"pair-{n}", turns=turns, response=response)
            )
            pool.append(response)
    if not saw_any or not examples:
        raise CorpusError("no positive pairs: retrieval corpus would be empty")
    return examples, pool


# ---------------------------------------------------------------------------
# synthetic corpus generator


@dataclass
class TopicSpec:
    name: str
    items: list
    attrs: list
    places: list
    domain: list
    user_templates: list = field(default_factory=list)   # single-turn openers, slot-bearing
    opener_templates: list = field(default_factory=list)  # first turn of 3-turn dialogs
    clarify_templates: list = field(default_factory=list)
    final_templates: list = field(default_factory=list)   # last user turn, slot-bearing
    vague_user_templates: list = field(default_factory=list)  # single turn, no slot words
    response_templates: list = field(default_factory=list)

    def slot_words(self) -> set:
        return set(self.items) | set(self.attrs) | set(self.places) | set(self.domain)


_USER_PATTERNS = (
    "hi , i need the {attr} {item} at the {place} {domain0} , something {detail}",
    "hello , can you get me a {attr} {item} near the {place} ? {detail} if possible , try the {domain1}",
    "good day , i want the {attr} {item} from the {place} {domain0} , make it {detail}",
)

_OPENER_PATTERNS = (
    "hi , i am browsing the {domain0} today",
    "hello , i need some help with the {domain1}",
    "good morning , can you check the {domain0} for me ?",
)

_CLARIFY_PATTERNS = (
    "sure , what exactly are you after ?",
    "of course , any preferences ?",
)

_FINAL_PATTERNS = (
    "i want the {attr} {item} at the {place} , keep it {detail}",
    "find me a {attr} {item} near the {place} , ideally {detail}",
    "the {attr} {item} from the {place} please , {detail} preferred",
    "do you still have the {attr} {item} at the {place} ? it must be {detail}",
)

_RESPONSE_PATTERNS = (
    "our {domain0} has the {attr} {item} at the {place} , noted your {detail} request , shall i book ?",
    "i found the {attr} {item} in the {place} {domain0} , marked as {detail}",
    "the {domain0} lists the {attr} {item} near the {place} , {detail} included",
    "yes , the {place} {domain0} offers the {attr} {item} right now , {detail} as asked",
    "there is exactly 1 {detail} {attr} {item} left at the {place} {domain0} , want it ?",
    "booked : the {attr} {item} at the {place} , {detail} , courtesy of our {domain1}",
)

_VAGUE_USER_PATTERNS = (
    "hi , i need something {detail} today , whatever you suggest",
    "hello , anything {detail} would help me out",
)

# topic-neutral detail words shared across all topics; the final user turn
# names one and the ground-truth response echoes it
_DETAIL_WORDS = (
    "urgent", "flexible", "refundable", "quiet", "shaded", "premium", "basic",
    "standard", "double", "single", "early", "late", "weekend", "weekday",
    "morning", "evening", "festive", "casual", "formal", "private", "public",
    "corner", "upstairs", "downstairs", "heated", "cooled", "packaged",
    "wrapped", "insured", "tracked", "monthly", "yearly", "seasonal",
    "introductory", "loyalty", "student", "senior", "family", "group", "solo",
)

_BUILTIN_TOPICS = (
    ("restaurant",
     ["pizza", "pasta", "sushi", "burger", "curry", "salad", "noodles", "omelette"],
     ["spicy", "vegan", "grilled", "creamy", "roasted", "smoky"],
     ["bistro", "diner", "trattoria", "steakhouse", "brasserie", "foodcourt"],
     ["restaurant", "menu"]),
    ("hotel",
     ["suite", "dorm", "penthouse", "hostel", "cabin", "loft", "bungalow", "villa"],
     ["refurbished", "oceanfront", "heritage", "deluxe", "cosy", "airy"],
     ["plaza", "riverside", "esplanade", "courtyard", "promenade", "hillside"],
     ["hotel", "lobby"]),
    ("taxi",
     ["cab", "shuttle", "limousine", "rickshaw", "minivan", "carpool", "sidecar", "towncar"],
     ["metered", "express", "shared", "chauffeured", "prepaid", "licensed"],
     ["airport", "harbour", "terminal", "depot", "curbside", "interchange"],
     ["taxi", "ride"]),
    ("train",
     ["sleeper", "intercity", "freight", "monorail", "tram", "railcar", "funicular", "expressliner"],
     ["nonstop", "scenic", "overnight", "punctual", "electrified", "narrowgauge"],
     ["junction", "platform", "crossing", "viaduct", "trackside", "roundhouse"],
     ["train", "route"]),
    ("museum",
     ["sculpture", "fresco", "fossil", "manuscript", "tapestry", "mosaic", "amphora", "daguerreotype"],
     ["medieval", "baroque", "prehistoric", "contemporary", "gilded", "restored"],
     ["gallery", "atrium", "pavilion", "rotunda", "vault", "annex"],
     ["museum", "exhibit"]),
    ("weather",
     ["drizzle", "thunderstorm", "heatwave", "blizzard", "fog", "hail", "monsoon", "sleet"],
     ["humid", "gusty", "mild", "freezing", "muggy", "blustery"],
     ["coastline", "valley", "plateau", "foothills", "lowlands", "headland"],
     ["forecast", "sky"]),
    ("music",
     ["violin", "saxophone", "cello", "banjo", "synthesizer", "accordion", "oboe", "theremin"],
     ["acoustic", "orchestral", "improvised", "amplified", "polyphonic", "unplugged"],
     ["amphitheater", "conservatory", "studio", "bandstand", "operahouse", "rehearsalroom"],
     ["concert", "melody"]),
    ("movie",
     ["thriller", "documentary", "western", "musical", "animation", "biopic", "noir", "mockumentary"],
     ["subtitled", "remastered", "dubbed", "uncut", "panoramic", "silent"],
     ["cineplex", "multiplex", "matinee", "premiere", "screeningroom", "drivein"],
     ["cinema", "screening"]),
    ("sport",
     ["marathon", "kayaking", "archery", "fencing", "snowboarding", "cricket", "biathlon", "rowing"],
     ["amateur", "professional", "indoor", "freestyle", "varsity", "olympic"],
     ["stadium", "velodrome", "rink", "gymnasium", "clubhouse", "fairway"],
     ["tournament", "league"]),
    ("shopping",
     ["necklace", "backpack", "typewriter", "lantern", "hammock", "teapot", "gramophone", "satchel"],
     ["handmade", "vintage", "discounted", "imported", "bespoke", "refurbed"],
     ["bazaar", "arcade", "emporium", "kiosk", "warehouse", "atelier"],
     ["market", "catalog"]),
    ("cafe",
     ["espresso", "latte", "cappuccino", "mocha", "macchiato", "cortado", "affogato", "flatwhite"],
     ["decaf", "frothy", "iced", "caffeinated", "organic", "syrupy"],
     ["terrace", "mezzanine", "rooftop", "alcove", "veranda", "snug"],
     ["cafe", "barista"]),
    ("bakery",
     ["croissant", "baguette", "sourdough", "brioche", "pretzel", "scone", "ciabatta", "strudel"],
     ["flaky", "glutenfree", "wholegrain", "buttery", "crusty", "yeasted"],
     ["millhouse", "ovenside", "counterfront", "bakehouse", "granary", "patisserie"],
     ["bakery", "oven"]),
    ("library",
     ["atlas", "encyclopedia", "novel", "anthology", "dictionary", "almanac", "thesaurus", "chronicle"],
     ["annotated", "hardcover", "illustrated", "abridged", "firstedition", "paperback"],
     ["readingroom", "stacks", "archive", "carrel", "foyer", "wing"],
     ["library", "librarian"]),
    ("bank",
     ["mortgage", "loan", "deposit", "bond", "annuity", "overdraft", "voucher", "remittance"],
     ["fixedrate", "variable", "compounding", "taxfree", "longterm", "shortterm"],
     ["branchoffice", "vaultroom", "tellerdesk", "headoffice", "drivethru", "counterhall"],
     ["bank", "teller"]),
    ("clinic",
     ["checkup", "vaccination", "xray", "ultrasound", "physiotherapy", "biopsy", "acupuncture", "podiatry"],
     ["outpatient", "sameday", "painless", "preventive", "pediatric", "geriatric"],
     ["wardroom", "surgeryroom", "infirmary", "dispensary", "recoveryroom", "triage"],
     ["clinic", "nurse"]),
    ("garden",
     ["roses", "tulips", "orchids", "ferns", "bonsai", "succulents", "daffodils", "hydrangeas"],
     ["perennial", "flowering", "potted", "pruned", "variegated", "fragrant"],
     ["greenhouse", "nursery", "arboretum", "trellis", "orchard", "meadow"],
     ["garden", "florist"]),
    ("hiking",
     ["trail", "summit", "ridgeline", "glacier", "waterfall", "canyon", "gorge", "saddleback"],
     ["steep", "gentle", "alpine", "forested", "snowcapped", "rocky"],
     ["trailhead", "basecamp", "overlook", "campsite", "shelterhut", "switchback"],
     ["hiking", "ranger"]),
    ("ferry",
     ["catamaran", "hovercraft", "steamer", "barge", "hydrofoil", "trawler", "dinghy", "schooner"],
     ["coastal", "seaworthy", "breezy", "anchored", "chartered", "maiden"],
     ["wharf", "jetty", "marina", "dockside", "boathouse", "quay"],
     ["ferry", "skipper"]),
    ("theater",
     ["tragedy", "comedy", "pantomime", "cabaret", "operetta", "monologue", "soliloquy", "farce"],
     ["staged", "costumed", "scripted", "immersive", "openair", "rehearsed"],
     ["playhouse", "balcony", "boxseat", "greenroom", "stagefront", "proscenium"],
     ["theater", "usher"]),
    ("photography",
     ["portrait", "panorama", "closeup", "timelapse", "collage", "headshot", "stilllife", "polaroid"],
     ["monochrome", "sepia", "glossy", "matte", "overexposed", "candid"],
     ["darkroom", "lightbox", "studioloft", "printshop", "backdrop", "filmlab"],
     ["photography", "lens"]),
)


def builtin_topics(count: int = 10) -> list:
    if not 1 <= count <= len(_BUILTIN_TOPICS):
        raise ConfigurationError(
            f"builtin generator defines {len(_BUILTIN_TOPICS)} topics, requested {count}"
        )
    topics = []
    for name, items, attrs, places, domain in _BUILTIN_TOPICS[:count]:
        topics.append(
            TopicSpec(
                name=name, items=items, attrs=attrs, places=places, domain=domain,
                user_templates=list(_USER_PATTERNS),
                opener_templates=list(_OPENER_PATTERNS),
                clarify_templates=list(_CLARIFY_PATTERNS),
                final_templates=list(_FINAL_PATTERNS),
                vague_user_templates=list(_VAGUE_USER_PATTERNS),
                response_templates=list(_RESPONSE_PATTERNS),
            )
        )
    return topics


@dataclass
class GeneratorSpec:
    topics: list
    train_dialogs: int = 2000
    valid_dialogs: int = 300
    test_dialogs: int = 300
    candidates: int = 10
    details: tuple = _DETAIL_WORDS  # topic-neutral, echoed context -> response
    vague_fraction: float = 0.06    # single-turn dialogs with no topic signal

    def validate(self) -> None:
        if self.train_dialogs < 200:
            raise ConfigurationError("synthetic corpus needs at least 200 training dialogs")
        if self.candidates < 2:
            raise ConfigurationError("candidate sets need k >= 2")
        if not self.topics:
            raise ConfigurationError("generator spec has no topics")
        if not self.details:
            raise ConfigurationError("generator spec needs detail words")
        for t in self.topics:
            if not (t.user_templates and t.response_templates):
                raise ConfigurationError(f"topic {t.name!r} is missing templates")
            if not (t.items and t.attrs and t.places and t.domain):
                raise ConfigurationError(f"topic {t.name!r} is missing slot lexicons")


_GENERATOR_KEYS = {"topics": int, "train_dialogs": int, "valid_dialogs": int,
                   "test_dialogs": int, "candidates": int}


def load_generator_spec(path) -> GeneratorSpec:
    """Parse a generator spec file (documented `key = value` format).

    Keys: topics, train_dialogs, valid_dialogs, test_dialogs, candidates.
    Topics come from the builtin topic bank; unknown keys are rejected.
    """
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(f"{path}: expected 'key = value'", line=lineno)
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _GENERATOR_KEYS:
            raise ConfigurationError(f"{path} line {lineno}: unknown generator key {key!r}")
        try:
            values[key] = _GENERATOR_KEYS[key](raw)
        except ValueError:
            raise ConfigurationError(f"{path} line {lineno}: bad value for {key}: {raw!r}")
    topic_count = values.pop("topics", 10)
    return GeneratorSpec(topics=builtin_topics(topic_count), **values)


def _fill(template: str, item: str, attr: str, place: str, domain, detail: str) -> str:
    return template.format(item=item, attr=attr, place=place,
                           domain0=domain[0], domain1=domain[-1], detail=detail)


def _generate_dialog(gen, topic_idx: int, topic: TopicSpec, detail: str,
                     vague_fraction: float, dialog_id: str) -> DialogExample:
    item = topic.items[gen.integers(len(topic.items))]
    attr = topic.attrs[gen.integers(len(topic.attrs))]
    place = topic.places[gen.integers(len(topic.places))]
    fill = lambda tpl: _fill(tpl, item, attr, place, topic.domain, detail)

    def pick(templates):
        return fill(templates[gen.integers(len(templates))])

    # a small vague fraction carries no topic words at all, which keeps the
    # abstract-label probes off the 100%-F1 ceiling
    if topic.vague_user_templates and gen.random() < vague_fraction:
        turns = [("usr", pick(topic.vague_user_templates))]
    elif gen.random() < 0.35 or not (topic.opener_templates and topic.final_templates):
        turns = [("usr", pick(topic.user_templates))]
    else:
        turns = [("usr", pick(topic.opener_templates))]
        if topic.clarify_templates:
            turns.append(("sys", pick(topic.clarify_templates)))
        turns.append(("usr", pick(topic.final_templates)))
    response = pick(topic.response_templates)
    return DialogExample(dialog_id=dialog_id, turns=turns, response=response, topic=topic_idx)


def _attach_candidates(split, k: int, gen) -> None:
    """Ground truth + a same-topic/uniform negative mix, in seeded shuffled order."""
    responses = split_responses(split)
    by_topic: dict = {}
    for i, ex in enumerate(split):
        by_topic.setdefault(ex.topic, []).append(i)
    for i, ex in enumerate(split):
        banned = {j for j, r in enumerate(responses) if r == ex.response}
        same = [j for j in by_topic[ex.topic] if j not in banned]
        other = [j for j in range(len(split)) if j not in banned and split[j].topic != ex.topic]
        want_same = min((k - 1) // 2, len(same))
        negatives = list(gen.choice(same, size=want_same, replace=False)) if want_same else []
        rest = k - 1 - len(negatives)
        if rest > len(other):
            raise ConfigurationError("split too small for the requested candidate count")
        negatives += list(gen.choice(other, size=rest, replace=False))
        cands = [int(j) for j in negatives] + [i]
        gen.shuffle(cands)
        ex.candidates = cands


def generate_synthetic_corpus(spec: GeneratorSpec, seed) -> dict:
    """Seeded train/valid/test splits with latent topic labels attached."""
    spec.validate()
    gen = rng(seed, "synthetic-corpus")
    splits = {}
    counter = 0
    for name, count in (("train", spec.train_dialogs), ("valid", spec.valid_dialogs),
                        ("test", spec.test_dialogs)):
        split = []
        for _ in range(count):
            topic_idx = int(gen.integers(len(spec.topics)))
            detail = spec.details[gen.integers(len(spec.details))]
            split.append(
                _generate_dialog(gen, topic_idx, spec.topics[topic_idx], detail,
                                 spec.vague_fraction, f"{name}-{counter:06d}")
            )
            counter += 1
        splits[name] = split
    for name in ("valid", "test"):
        _attach_candidates(splits[name], spec.candidates, gen)
    return splits


# ---------------------------------------------------------------------------
# bucketed training corpora (file format shared with the sampling module)

TRAIN_CORPUS_KIND = "multigran-train-corpus"


@dataclass
class TrainingExample:
    context_ids: list
    gt_index: int          # index into the training response pool
    negative_indices: list  # k-1 pool indices
    level: Optional[int]    # bucket level, None = uniform baseline


def write_train_corpus(path, examples, *, level, k, pool_fingerprint) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": TRAIN_CORPUS_KIND, "version": 1, "level": level, "k": k,
        "pool_fingerprint": pool_fingerprint, "count": len(examples),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for ex in examples:
            rec = {"context_ids": ex.context_ids, "gt": ex.gt_index,
                   "negatives": ex.negative_indices, "level": ex.level}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def load_train_corpus(path) -> tuple:
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
        if not first.strip():
            raise CorpusError(f"{path}: empty corpus file")
        try:
            header = json.loads(first)
        except ValueError as err:
            raise ParseError(f"{path}: bad header ({err})", line=1)
        if header.get("kind") != TRAIN_CORPUS_KIND:
            raise ParseError(f"{path}: not a training corpus", line=1)
        examples = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                examples.append(
                    TrainingExample(
                        context_ids=list(rec["context_ids"]), gt_index=int(rec["gt"]),
                        negative_indices=list(rec["negatives"]), level=rec["level"],
                    )
                )
            except (KeyError, TypeError, ValueError) as err:
                raise ParseError(f"{path}: malformed record ({err})", line=lineno)
    if len(examples) != header["count"]:
        raise ParseError(f"{path}: header count {header['count']} != {len(examples)} records")
    return header, examples
