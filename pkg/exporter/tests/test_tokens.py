import pytest

from abss_exporter.errors import ExportError
from abss_exporter.pipelines import FakeTokenizer
from abss_exporter.tokens import clean_token, find_word_spans, map_core_words


def test_clean_token_strips_markers():
    assert clean_token("Dog</w>") == "dog"
    assert clean_token("##ing") == "ing"
    assert clean_token("<|startoftext|>") == "startoftext"


def test_find_single_word_span():
    tokens = ["<bos>", "a</w>", "dog</w>", "walk</w>", "<eos>"]
    assert find_word_spans(tokens, "dog") == [[2]]


def test_find_multi_subword_span():
    tokens = ["<bos>", "butter", "fly</w>", "<eos>"]
    assert find_word_spans(tokens, "butterfly") == [[1, 2]]


def test_find_repeated_word_all_occurrences():
    tokens = ["<bos>", "dog</w>", "and</w>", "dog</w>", "<eos>"]
    assert find_word_spans(tokens, "dog") == [[1], [3]]


def test_map_core_words_simple_prompt():
    tokens = FakeTokenizer().token_strings("A dog walk on the street")
    annotation = map_core_words("p0", tokens, {"core_tokens": ["dog"]})
    # "dog" is token 2: BOS, "a", "dog", ...
    assert annotation["core_tokens"] == [2]
    assert annotation["token_count"] == len(tokens)


def test_map_core_words_multi_subword_contributes_all_indices():
    tokens = FakeTokenizer().token_strings("a butterfly in a meadow")
    annotation = map_core_words("p0", tokens, {"core_tokens": ["butterfly"]})
    assert len(annotation["core_tokens"]) == 2
    joined = "".join(clean_token(tokens[i]) for i in annotation["core_tokens"])
    assert joined == "butterfly"


def test_map_core_words_missing_word_warns_and_skips():
    tokens = FakeTokenizer().token_strings("a dog on the street")
    with pytest.warns(UserWarning, match="unicorn"):
        annotation = map_core_words(
            "p0", tokens, {"core_tokens": ["dog", "unicorn"]}
        )
    assert len(annotation["core_tokens"]) == 1


def test_map_core_words_all_core_words_missing_is_error():
    tokens = FakeTokenizer().token_strings("a dog on the street")
    with pytest.warns(UserWarning):
        with pytest.raises(ExportError, match="core words"):
            map_core_words("p0", tokens, {"core_tokens": ["unicorn", "gryphon"]})


def test_map_core_words_categories_stay_disjoint():
    tokens = FakeTokenizer().token_strings("a black cat yawns under the window")
    annotation = map_core_words("p0", tokens, {
        "core_tokens": ["cat"], "adjectives": ["black", "cat"],
        "verbs": ["yawns"], "prepositions": ["under"],
    })
    core = set(annotation["core_tokens"])
    assert core
    assert core.isdisjoint(annotation["adjectives"])
    assert annotation["verbs"] and annotation["prepositions"]


def test_specials_never_mapped():
    tokens = FakeTokenizer().token_strings("startoftext endoftext")
    annotation = map_core_words("p0", tokens, {"core_tokens": ["startoftext"]})
    assert 0 not in annotation["core_tokens"]
