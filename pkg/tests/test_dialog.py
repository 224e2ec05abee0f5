import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metaweight import dialog as dlg
from metaweight.memnet import NO_ANSWER, SPEAKER_TOKENS
from metaweight.tensor import make_rng


def test_single_exchange():
    c = dlg.parse_babi_text("1 hi\tgreetings\n")
    assert len(c) == 1
    turns = c.dialogs[0].turns
    assert [(t.speaker, t.text) for t in turns] == [("user", "hi"), ("bot", "greetings")]


def test_reset_and_blank_line_split_dialogs():
    text = "1 a\tb\n2 c\td\n1 e\tf\n\n1 g\th\n"
    c = dlg.parse_babi_text(text)
    assert len(c) == 3 and [d.bot_turns() for d in c.dialogs] == [2, 1, 1]


def test_kb_lines_and_profile():
    text = "1 male young veg pizza\n2 hi\thello\n3 resto_1 r_cuisine italian\n4 <silence>\tok\n"
    d = dlg.parse_babi_text(text, task="primary").dialogs[0]
    assert d.profile == "male young veg pizza"
    assert [t.speaker for t in d.turns] == ["user", "bot", "kb", "user", "bot"]


@pytest.mark.parametrize("text", ["1 a\tb\n3 c\td\n", "x a\tb\n", "1 a\tb\tc\n", "1\n"])
def test_malformed_lines_report_line_number(text):
    with pytest.raises(dlg.DialogParseError) as err:
        dlg.parse_babi_text(text)
    assert err.value.lineno >= 1


def test_round_trip_fixed_point(tiny_corpora):
    related, primary = tiny_corpora
    for corpus in (related, primary["train"], primary["test"]):
        text = dlg.serialize_babi(corpus)
        again = dlg.parse_babi_text(text, corpus.task, corpus.split)
        assert again.dialogs == corpus.dialogs
        assert dlg.serialize_babi(again) == text


_token = st.text("abcdefgh_'", min_size=1, max_size=5)
_utt = st.lists(_token, min_size=1, max_size=4).map(" ".join)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(st.tuples(st.booleans(), _utt, _utt), min_size=1, max_size=5), min_size=1, max_size=4))
def test_round_trip_property(dialogs):
    corpus = dlg.DialogCorpus([dlg.Dialog([t for kb, u, b in d for t in
                                           ([dlg.Turn("kb", u)] if kb else [dlg.Turn("user", u), dlg.Turn("bot", b)])])
                               for d in dialogs], "related", "train")
    text = dlg.serialize_babi(corpus)
    again = dlg.parse_babi_text(text, personalized=False)
    assert dlg.serialize_babi(again) == text


def test_subsample_keeps_whole_dialogs(tiny_corpora):
    related, _ = tiny_corpora
    a = dlg.subsample(related, 5, make_rng(1))
    b = dlg.subsample(related, 5, make_rng(1))
    assert a.dialogs == b.dialogs and len(a) == 5
    assert all(d in related.dialogs for d in a.dialogs)
    assert dlg.subsample(related, len(related), take_first=True).dialogs == related.dialogs
    assert dlg.subsample(related, 3, take_first=True).dialogs == related.dialogs[:3]
    with pytest.raises(ValueError):
        dlg.subsample(related, len(related) + 1, make_rng(0))


def test_one_example_per_bot_turn(tiny_dialog_data, tiny_corpora):
    related, _ = tiny_corpora
    vocab, rc, pc, rel, pri = tiny_dialog_data
    assert len(rel) == sum(d.bot_turns() for d in related.dialogs)
    assert np.all(rel.answers >= 0) and np.all(pri.answers >= 0)
    first = rel.example(0)
    assert first.memory == [] and first.query == related.dialogs[0].turns[0].text.split()


def test_single_turn_dialog_has_empty_memory():
    corpus = dlg.parse_babi_text("1 hello\tgood day\n")
    vocab = dlg.build_vocabulary([corpus])
    cands = dlg.build_candidates([corpus], vocab)
    t = dlg.extract_examples(corpus, vocab, cands)
    assert len(t) == 1 and t.example(0).memory == [] and t.example(0).query == ["hello"]


def test_memory_markers_and_growth():
    corpus = dlg.parse_babi_text("1 hi\thello\n2 resto_1 italian\n3 book it\tdone\n")
    vocab = dlg.build_vocabulary([corpus])
    t = dlg.extract_examples(corpus, vocab, dlg.build_candidates([corpus], vocab))
    mem = t.example(1).memory
    assert mem == [["hi", SPEAKER_TOKENS["user"], "#1"], ["hello", SPEAKER_TOKENS["bot"], "#2"],
                   ["resto_1", "italian", SPEAKER_TOKENS["kb"], "#3"]]


def test_missing_answers_error_on_train_and_map_to_sentinel_elsewhere():
    train = dlg.parse_babi_text("1 hi\thello\n")
    test = dlg.parse_babi_text("1 hi\tunseen reply\n", split="test")
    vocab = dlg.build_vocabulary([train])
    cands = dlg.build_candidates([train], vocab)
    assert dlg.extract_examples(test, vocab, cands).answers.tolist() == [NO_ANSWER]
    with pytest.raises(ValueError):
        dlg.extract_examples(dlg.parse_babi_text("1 hi\tunseen reply\n"), vocab, cands)


def test_candidates_unique_and_sorted(tiny_dialog_data):
    _, rc, pc, _, _ = tiny_dialog_data
    for c in (rc, pc):
        assert len(set(c.utterances)) == len(c) and c.utterances == sorted(c.utterances)


def test_generator_structure(tiny_corpora):
    related, primary = tiny_corpora
    assert len(related) == 12 and len(primary["train"]) == 6
    assert all(d.profile for d in primary["train"].dialogs)
    assert not any(d.profile for d in related.dialogs)
    rv = {w for d in related.dialogs for t in d.turns for w in t.text.split()}
    pv = {w for d in primary["train"].dialogs for t in d.turns for w in t.text.split()}
    assert rv & pv and not rv <= pv and not pv <= rv


def test_every_primary_answer_in_its_candidates():
    _, primary = dlg.generate_synthetic(dlg.SyntheticSpec(n_related=2, n_primary_train=30), make_rng(0))
    vocab = dlg.build_vocabulary([primary["train"]])
    cands = dlg.build_candidates([primary["train"]], vocab)
    assert all(cands.id_of(t.text) >= 0 for d in primary["train"].dialogs for t in d.turns if t.speaker == "bot")


def test_orderings_disagree_somewhere():
    rng = make_rng(3)
    pool = dlg._restaurants(dlg.SyntheticSpec(), rng)
    disagree = 0
    for _ in range(200):
        res = dlg._results(pool, rng, dlg.SyntheticSpec())
        diet, food = dlg._pick(rng, dlg.DIETS), dlg._pick(rng, dlg.FOODS)
        disagree += dlg.rating_order(res)[0] != dlg.personalized_order(res, diet, food)[0]
    assert 0 < disagree < 200


def test_generated_files_reparse(tmp_path, tiny_corpora):
    related, primary = tiny_corpora
    dlg.write_corpora({("related", "train"): related, **{("primary", k): v for k, v in primary.items()}}, tmp_path)
    loaded = dlg.load_corpora(tmp_path)
    assert loaded[("related", "train")].dialogs == related.dialogs
    assert loaded[("primary", "test")].dialogs == primary["test"].dialogs
