"""bAbI-dialog corpora: parsing, serialization, turn extraction, subsampling.

Line format: ``<n> <user text>\\t<bot text>`` for an exchange, ``<n> <text>``
(no tab) for knowledge-base results. Numbering restarts at 1 for each dialog;
blank lines also separate dialogs. In the personalized variant the first
line of every dialog is the user profile.

The synthetic generator at the bottom emits the same format. Its related
task mimics full reservation dialogs (rating-ordered suggestions, API
updates, extra-info requests); its primary task mimics personalized option
display (profile-dependent response style, suggestions ordered by diet and
favourite food before rating).
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .memnet import (SPEAKER_TOKENS, CandidateSet, DialogTensors, SentenceTable, Vocabulary, time_token,
                     tokenize)

DEFAULT_MAX_MEMORY = 50


class DialogParseError(ValueError):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass
class Turn:
    speaker: str  # "user" | "bot" | "kb"
    text: str


@dataclass
class Dialog:
    turns: list[Turn] = field(default_factory=list)
    profile: str | None = None

    def bot_turns(self) -> int:
        return sum(t.speaker == "bot" for t in self.turns)


@dataclass
class DialogCorpus:
    dialogs: list[Dialog]
    task: str = "related"
    split: str = "train"

    def __len__(self) -> int:
        return len(self.dialogs)

    def n_examples(self) -> int:
        return sum(d.bot_turns() for d in self.dialogs)


@dataclass
class TurnExample:
    history: list[Turn]
    profile: str | None
    user_utterance: str
    target: str


def _split_number(raw: str, lineno: int) -> tuple[int, str]:
    head, _, rest = raw.partition(" ")
    if not head.isdigit():
        raise DialogParseError(lineno, f"expected a line number, got {raw[:20]!r}")
    return int(head), rest


def parse_babi_text(text: str, task: str = "related", split: str = "train",
                    personalized: bool | None = None) -> DialogCorpus:
    """Parse bAbI-dialog text. ``personalized=None`` detects a profile line."""
    dialogs: list[Dialog] = []
    current: Dialog | None = None
    expected = 1
    first_line_tabless: bool | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        raw = raw.rstrip("\r\n")
        if not raw.strip():
            current, expected = None, 1
            continue
        num, body = _split_number(raw, lineno)
        if not body.strip():
            raise DialogParseError(lineno, "line has a number but no content")
        if num == 1:
            current = Dialog()
            dialogs.append(current)
            expected = 1
        elif current is None or num != expected:
            raise DialogParseError(lineno, f"line number {num} does not continue the dialog (expected {expected})")
        expected = num + 1
        if num == 1:
            if first_line_tabless is None:
                first_line_tabless = "\t" not in body
            is_profile = personalized if personalized is not None else first_line_tabless
            if is_profile:
                if "\t" in body:
                    raise DialogParseError(lineno, "profile line must not contain a tab")
                current.profile = body
                continue
        if "\t" in body:
            user, _, bot = body.partition("\t")
            if "\t" in bot or not bot.strip():
                raise DialogParseError(lineno, "exchange lines need exactly one non-empty bot response")
            current.turns.append(Turn("user", user))
            current.turns.append(Turn("bot", bot))
        else:
            current.turns.append(Turn("kb", body))
    return DialogCorpus(dialogs, task, split)


def parse_babi(path, task: str = "related", split: str = "train", personalized: bool | None = None) -> DialogCorpus:
    with open(path, encoding="utf-8") as fh:
        return parse_babi_text(fh.read(), task, split, personalized)


def serialize_babi(corpus: DialogCorpus) -> str:
    out = io.StringIO()
    for di, dialog in enumerate(corpus.dialogs):
        if di:
            out.write("\n")
        n = 1
        if dialog.profile is not None:
            out.write(f"{n} {dialog.profile}\n")
            n += 1
        turns = dialog.turns
        i = 0
        while i < len(turns):
            t = turns[i]
            if t.speaker == "user":
                if i + 1 >= len(turns) or turns[i + 1].speaker != "bot":
                    raise ValueError("user turn without a bot response cannot be serialized")
                out.write(f"{n} {t.text}\t{turns[i + 1].text}\n")
                i += 2
            elif t.speaker == "kb":
                out.write(f"{n} {t.text}\n")
                i += 1
            else:
                raise ValueError("bot turn without a preceding user turn")
            n += 1
    return out.getvalue()


def write_babi(corpus: DialogCorpus, path) -> None:
    Path(path).write_text(serialize_babi(corpus), encoding="utf-8")


def turn_examples(dialog: Dialog) -> list[TurnExample]:
    out = []
    for i, t in enumerate(dialog.turns):
        if t.speaker == "bot":
            out.append(TurnExample(dialog.turns[:i - 1], dialog.profile, dialog.turns[i - 1].text, t.text))
    return out


def subsample(corpus: DialogCorpus, n_dialogs: int, rng: np.random.Generator | None = None,
              take_first: bool = False) -> DialogCorpus:
    """Keep ``n_dialogs`` whole dialogs, either the prefix or a seeded random draw."""
    if n_dialogs > len(corpus) or n_dialogs < 0:
        raise ValueError(f"cannot take {n_dialogs} dialogs from a corpus of {len(corpus)}")
    if take_first:
        keep = list(range(n_dialogs))
    else:
        if rng is None:
            raise ValueError("random subsampling needs an rng")
        keep = sorted(rng.choice(len(corpus), size=n_dialogs, replace=False).tolist())
    return DialogCorpus([corpus.dialogs[i] for i in keep], corpus.task, corpus.split)


def _memory_sentences(dialog: Dialog, max_time: int):
    """Yield ``(kind, tokens_for_memory, raw_text)`` in dialog order, with markers appended."""
    k = 0

    def mark(tokens, speaker):
        nonlocal k
        k += 1
        return tokens + [SPEAKER_TOKENS[speaker], time_token(min(k, max_time) if max_time else k)]

    if dialog.profile is not None:
        yield "profile", mark(tokenize(dialog.profile), "profile"), dialog.profile
    for t in dialog.turns:
        yield t.speaker, mark(tokenize(t.text), t.speaker), t.text


def build_vocabulary(corpora: Iterable[DialogCorpus]) -> Vocabulary:
    """Vocabulary over the given (training) corpora, with speaker/time markers."""
    sents: list[list[str]] = []
    max_time = 0
    for corpus in corpora:
        for d in corpus.dialogs:
            n = len(d.turns) + (d.profile is not None)
            max_time = max(max_time, n)
            if d.profile is not None:
                sents.append(tokenize(d.profile))
            sents.extend(tokenize(t.text) for t in d.turns)
    vocab = Vocabulary.build(sents, max_time=max_time)
    vocab.max_time = max_time
    return vocab


def build_candidates(corpora: Iterable[DialogCorpus], vocab: Vocabulary) -> CandidateSet:
    return CandidateSet.build((t.text for c in corpora for d in c.dialogs for t in d.turns if t.speaker == "bot"),
                              vocab)


def extract_examples(corpus: DialogCorpus, vocab: Vocabulary, cands: CandidateSet,
                     max_memory: int = DEFAULT_MAX_MEMORY, strict: bool | None = None) -> DialogTensors:
    """Encode one example per bot turn.

    Memory holds the profile, KB lines and earlier exchanges (most recent
    ``max_memory`` of them); the query is the user turn that the bot answers.
    With ``strict`` (default for training splits) an answer missing from the
    candidate set is an error; otherwise it maps to the -1 sentinel.
    """
    if strict is None:
        strict = corpus.split == "train"
    max_time = getattr(vocab, "max_time", 0)
    table = SentenceTable(vocab)
    sentences: list[list[str]] = []

    def add(tokens):
        sentences.append(tokens)
        return table.add(tokens)

    mem_ptr, mem_ids, wmem_ptr, wmem_ids = [0], [], [0], []
    query_ids, answers, texts, dialog_of = [], [], [], []
    for di, dialog in enumerate(corpus.dialogs):
        history: list[int] = []
        query = user_sid = None
        for kind, tokens, raw in _memory_sentences(dialog, max_time):
            sid = add(tokens)
            if kind == "user":
                query, user_sid = add(tokenize(raw)), sid
                continue
            if kind == "bot":
                ans = cands.id_of(raw)
                if ans < 0 and strict:
                    raise ValueError(f"answer {raw!r} (dialog {di}) is not in the candidate set")
                mem = history[-max_memory:] if max_memory else []
                mem_ids.extend(mem)
                mem_ptr.append(len(mem_ids))
                wmem_ids.extend(mem + [sid])
                wmem_ptr.append(len(wmem_ids))
                query_ids.append(query)
                answers.append(ans)
                texts.append(raw)
                dialog_of.append(di)
                history.append(user_sid)
            history.append(sid)
    indptr, indices, counts = table.arrays()
    return DialogTensors(
        task=corpus.task, vocab_size=len(vocab), indptr=indptr, indices=indices, counts=counts,
        mem_ptr=np.array(mem_ptr, dtype=np.int64), mem_ids=np.array(mem_ids or [0], dtype=np.int64),
        wmem_ptr=np.array(wmem_ptr, dtype=np.int64), wmem_ids=np.array(wmem_ids or [0], dtype=np.int64),
        query_ids=np.array(query_ids, dtype=np.int64), answers=np.array(answers, dtype=np.int64),
        sentences=sentences, answer_texts=texts, dialog_of=np.array(dialog_of, dtype=np.int64),
    )


# ---------------------------------------------------------------------------
# official file discovery

OFFICIAL_FILES = {
    ("related", "train"): "dialog-babi-task5-full-dialogs-trn.txt",
    ("related", "valid"): "dialog-babi-task5-full-dialogs-dev.txt",
    ("related", "test"): "dialog-babi-task5-full-dialogs-tst.txt",
    ("primary", "train"): "personalized-dialog-task3-options-trn.txt",
    ("primary", "valid"): "personalized-dialog-task3-options-dev.txt",
    ("primary", "test"): "personalized-dialog-task3-options-tst.txt",
}


def find_corpus_file(root, task: str, split: str) -> Path:
    name = OFFICIAL_FILES[(task, split)]
    for dirpath, _, files in os.walk(root):
        if name in files:
            return Path(dirpath) / name
    raise FileNotFoundError(f"{name} not found under {root}")


def load_corpora(root) -> dict[tuple[str, str], DialogCorpus]:
    out = {}
    for (task, split) in OFFICIAL_FILES:
        if task == "related" and split != "train":
            continue
        path = find_corpus_file(root, task, split)
        out[(task, split)] = parse_babi(path, task, split, personalized=(task == "primary"))
    return out


def write_corpora(corpora: dict[tuple[str, str], DialogCorpus], root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for key, corpus in corpora.items():
        write_babi(corpus, root / OFFICIAL_FILES[key])


# ---------------------------------------------------------------------------
# synthetic corpora

CUISINES = ("italian", "french", "indian", "spanish", "british", "thai")
LOCATIONS = ("rome", "paris", "london", "madrid", "bombay", "bangkok")
PRICES = ("cheap", "moderate", "expensive")
PARTY = ("two", "four", "six", "eight")
FOODS = ("biryani", "paella", "pizza", "curry", "fish_and_chips", "ratatouille", "pad_thai", "tapas")
DIETS = ("veg", "non-veg")
AGES = ("young", "middle-aged", "elderly")
GENDERS = ("male", "female")

GREETINGS = ("hi", "hello", "good morning", "hey there")
# wide phrasing pools: a few dozen primary dialogs cannot cover them all
REJECTS = ("no this does not work for me", "no i don't like that", "do you have something else",
           "not really my taste", "hmm i'd rather not", "that one is too far", "nope show me another",
           "i am not convinced", "sounds boring", "let's skip that one", "i have been there already",
           "my friends dislike that place", "can we try a different one", "that looks overpriced",
           "not that one please", "i heard bad reviews", "any other suggestion", "no way",
           "pass on that", "meh", "too noisy for us", "we went there last week", "not keen", "next one",
           "that seems dull", "negative", "i'll decline that", "we want something fancier")
ACCEPTS = ("let's do it", "that looks great", "i love that", "perfect", "sounds good", "book it",
           "excellent choice", "yes please", "go ahead", "deal", "awesome", "lovely", "sure why not",
           "i'm in", "wonderful", "brilliant", "that is fine", "let's go with that", "sounds delicious",
           "great pick", "count me in", "absolutely", "splendid", "fantastic", "works nicely",
           "yes reserve it", "that suits us", "fabulous")
# (age, gender) -> phrases for the personalized task
_HONORIFIC = {("young", "male"): "bro", ("young", "female"): "sis",
              ("middle-aged", "male"): "sir", ("middle-aged", "female"): "maam",
              ("elderly", "male"): "sir", ("elderly", "female"): "madam"}


@dataclass
class SyntheticSpec:
    """Sizes of the generated corpora and of the shared restaurant pool."""

    n_related: int = 1000
    n_primary_train: int = 1000
    n_primary_valid: int = 1000
    n_primary_test: int = 1000
    n_restaurants: int = 16
    results_per_query: tuple[int, int] = (3, 5)
    p_update_api: float = 0.4
    p_extra_info: float = 0.5
    max_rejections: int = 2


@dataclass
class Restaurant:
    name: str
    cuisine: str
    location: str
    price: str
    rating: int
    diet: str
    speciality: str

    def related_line(self) -> str:
        return f"{self.name} {self.cuisine} {self.location} {self.price} rating_{self.rating}"

    def primary_line(self) -> str:
        return f"{self.related_line()} {self.diet} {self.speciality}"


def _restaurants(spec: SyntheticSpec, rng: np.random.Generator) -> list[Restaurant]:
    out = []
    for i in range(spec.n_restaurants):
        cuisine = CUISINES[rng.integers(len(CUISINES))]
        location = LOCATIONS[rng.integers(len(LOCATIONS))]
        out.append(Restaurant(
            name=f"resto_{i}",
            cuisine=cuisine,
            location=location,
            price=PRICES[rng.integers(len(PRICES))],
            rating=int(rng.integers(1, 9)),
            diet=DIETS[rng.integers(2)],
            speciality=FOODS[rng.integers(len(FOODS))],
        ))
    return out


def _pick(rng, options):
    return options[rng.integers(len(options))]


def _results(pool, rng, spec) -> list[Restaurant]:
    k = int(rng.integers(spec.results_per_query[0], spec.results_per_query[1] + 1))
    idx = rng.choice(len(pool), size=k, replace=False)
    return [pool[i] for i in idx]


def rating_order(results: Sequence[Restaurant]) -> list[Restaurant]:
    return sorted(results, key=lambda r: (-r.rating, r.name))


def personalized_order(results: Sequence[Restaurant], diet: str, food: str) -> list[Restaurant]:
    return sorted(results, key=lambda r: (r.diet != diet, r.speciality != food, -r.rating, r.name))


def _suggest_and_close(turns, ordered, rng, spec, suggest, another, book):
    n_reject = int(rng.integers(0, min(spec.max_rejections, len(ordered) - 1) + 1))
    for j in range(n_reject + 1):
        turns.append(Turn("user", "<silence>"))
        turns.append(Turn("bot", suggest(ordered[j].name)))
        if j < n_reject:
            turns.append(Turn("user", _pick(rng, REJECTS)))
            turns.append(Turn("bot", another))
    turns.append(Turn("user", _pick(rng, ACCEPTS)))
    turns.append(Turn("bot", book))
    return ordered[n_reject]


def _related_dialog(pool, rng, spec) -> Dialog:
    turns: list[Turn] = []
    slots = {"cuisine": _pick(rng, CUISINES), "location": _pick(rng, LOCATIONS),
             "party": _pick(rng, PARTY), "price": _pick(rng, PRICES)}
    turns += [Turn("user", _pick(rng, GREETINGS)), Turn("bot", "hello what can i help you with today")]
    given = [s for s in slots if rng.random() < 0.5]
    phrase = {"cuisine": f"with {slots['cuisine']} food", "location": f"in {slots['location']}",
              "party": f"for {slots['party']} people", "price": f"in a {slots['price']} price range"}
    turns += [Turn("user", " ".join(["can you book a table"] + [phrase[s] for s in given])),
              Turn("bot", "i'm on it")]
    asks = {"cuisine": ("any preference on a type of cuisine", f"{slots['cuisine']} food please"),
            "location": ("where should it be", f"{slots['location']} please"),
            "party": ("how many people would be in your party", f"we will be {slots['party']}"),
            "price": ("which price range are looking for", f"in a {slots['price']} price range please")}
    user_text = "<silence>"
    for s in slots:
        if s not in given:
            turns += [Turn("user", user_text), Turn("bot", asks[s][0])]
            user_text = asks[s][1]
    turns += [Turn("user", user_text), Turn("bot", "ok let me look into some options for you")]
    if rng.random() < spec.p_update_api:
        slot = _pick(rng, ("cuisine", "location", "price"))
        options = {"cuisine": CUISINES, "location": LOCATIONS, "price": PRICES}[slot]
        slots[slot] = _pick(rng, tuple(o for o in options if o != slots[slot]))
        change = {"cuisine": f"instead could it be with {slots['cuisine']} food",
                  "location": f"actually i would prefer in {slots['location']}",
                  "price": f"actually i would prefer a {slots['price']} price range"}[slot]
        turns += [Turn("user", change), Turn("bot", "sure is there anything else to update"),
                  Turn("user", "no"), Turn("bot", "ok let me look into some options for you")]
    turns += [Turn("user", "<silence>"),
              Turn("bot", f"api_call {slots['cuisine']} {slots['location']} {slots['party']} {slots['price']}")]
    results = _results(pool, rng, spec)
    turns += [Turn("kb", r.related_line()) for r in results]
    chosen = _suggest_and_close(turns, rating_order(results), rng, spec,
                                suggest=lambda n: f"what do you think of this option: {n}",
                                another="sure let me find an other option for you",
                                book="great let me do the reservation")
    if rng.random() < spec.p_extra_info:
        for ask, attr in rng.permutation([("may i have the phone number of the restaurant", "phone"),
                                          ("do you have its address", "address")])[: int(rng.integers(1, 3))]:
            turns += [Turn("user", str(ask)), Turn("bot", f"here it is {chosen.name}_{attr}")]
    turns += [Turn("user", "thank you"), Turn("bot", "you're welcome")]
    return Dialog(turns)


def _styled(age: str, gender: str):
    h = _HONORIFIC[(age, gender)]
    if age == "young":
        return dict(greet=f"hey {h} what's up", lookup=f"ok {h} let me look into some options",
                    suggest=lambda n: f"what do you think of this option: {n}",
                    another=f"no worries {h} let me find another option",
                    book=f"cool {h} let me do the reservation")
    if age == "middle-aged":
        return dict(greet=f"hello {h} what can i help you with today",
                    lookup=f"ok {h} let me look into some options for you",
                    suggest=lambda n: f"{h} how about this option: {n}",
                    another=f"sure {h} let me find an other option for you",
                    book=f"great {h} let me do the reservation")
    return dict(greet=f"good day {h} how may i assist you", lookup=f"thank you {h} i shall look into some options",
                suggest=lambda n: f"{h} would you consider this option: {n}",
                another=f"certainly {h} i shall find another option",
                book=f"excellent {h} i shall make the reservation")


def _primary_dialog(pool, rng, spec) -> Dialog:
    age, gender = _pick(rng, AGES), _pick(rng, GENDERS)
    diet, food = _pick(rng, DIETS), _pick(rng, FOODS)
    style = _styled(age, gender)
    results = _results(pool, rng, spec)
    turns = [Turn("kb", r.primary_line()) for r in results]
    cuisine, location, party, price = (_pick(rng, CUISINES), _pick(rng, LOCATIONS), _pick(rng, PARTY),
                                       _pick(rng, PRICES))
    turns += [Turn("user", _pick(rng, GREETINGS)), Turn("bot", style["greet"]),
              Turn("user", f"can you book a table with {cuisine} food in {location} for {party} people "
                           f"in a {price} price range"),
              Turn("bot", style["lookup"])]
    _suggest_and_close(turns, personalized_order(results, diet, food), rng, spec,
                       style["suggest"], style["another"], style["book"])
    return Dialog(turns, profile=f"{gender} {age} {diet} {food}")


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator):
    """Return ``(related_train, {split: primary_corpus})`` built from one restaurant pool."""
    pool = _restaurants(spec, rng)
    related = DialogCorpus([_related_dialog(pool, rng, spec) for _ in range(spec.n_related)], "related", "train")
    primary = {
        split: DialogCorpus([_primary_dialog(pool, rng, spec) for _ in range(n)], "primary", split)
        for split, n in (("train", spec.n_primary_train), ("valid", spec.n_primary_valid),
                         ("test", spec.n_primary_test))
    }
    return related, primary
