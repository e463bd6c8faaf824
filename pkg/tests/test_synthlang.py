import numpy as np
import pytest

from adapterlab.errors import ConfigError
from adapterlab.synthlang import (
    CLS,
    EQUAL,
    FIRST_LONGER,
    FIRST_REGULAR,
    PAD,
    SECOND_LONGER,
    SEQ_CLS,
    TAGGING,
    SyntheticLanguageSpec,
    apply_language,
    build_vocab,
    corpus_to_ids,
    gen_seq_task,
    gen_tag_task,
    generate_corpus,
    invert_language,
    language_overlap,
    load_bundled_corpus,
    load_task_dataset,
    make_word_list,
    save_task_dataset,
    stable_bucket,
    tag_labels_for_base,
)


def toy_setup(n_sentences=400, seed=0):
    lines = generate_corpus(n_sentences, n_words=60, n_classes=4, seed=seed)
    vocab = build_vocab(lines)
    return lines, vocab, corpus_to_ids(lines, vocab)


# --- vocab ------------------------------------------------------------------------


def test_vocab_frequency_order():
    vocab = build_vocab(["a a b"])
    assert vocab.token_to_id["a"] < vocab.token_to_id["b"]


def test_vocab_tie_breaks_lexicographically():
    vocab = build_vocab(["b a"])
    assert vocab.token_to_id["a"] < vocab.token_to_id["b"]


def test_vocab_reserved_layout_and_size_cap():
    vocab = build_vocab(["a b c d e"], size=FIRST_REGULAR + 3)
    assert vocab.size == FIRST_REGULAR + 3
    assert vocab.id_to_token[:FIRST_REGULAR] == ["[PAD]", "[UNK]", "[CLS]", "[MASK]", "[SEP]"]
    assert vocab.encode(["a", "zzz"]) == [FIRST_REGULAR, 1]  # unknown -> UNK


def test_vocab_empty_corpus_rejected():
    with pytest.raises(ConfigError):
        build_vocab([])


def test_vocab_hash_stable_across_runs():
    lines = generate_corpus(1000, n_words=80, n_classes=5, seed=3)
    h1 = build_vocab(lines).content_hash()
    h2 = build_vocab(generate_corpus(1000, n_words=80, n_classes=5, seed=3)).content_hash()
    assert h1 == h2


# --- language transforms -------------------------------------------------------------


def test_identity_spec_is_noop():
    _, vocab, ids = toy_setup()
    spec = SyntheticLanguageSpec("src", divergence=0.0)
    np.testing.assert_array_equal(apply_language(spec, ids[0], vocab.size), ids[0])


def test_cipher_is_a_bijection_with_inverse():
    _, vocab, ids = toy_setup()
    spec = SyntheticLanguageSpec("tgt", cipher_seed=5, divergence=0.7,
                                 word_order="reverse")
    for sent in ids[:20]:
        out = apply_language(spec, sent, vocab.size)
        np.testing.assert_array_equal(invert_language(spec, out, vocab.size), sent)


def test_reverse_transform_hand_trace():
    spec = SyntheticLanguageSpec("tgt", cipher_seed=1, divergence=1.0,
                                 word_order="reverse")
    vocab_size = 12
    cipher = spec.cipher(vocab_size)
    seq = np.array([CLS, 6, 7, 8, PAD])
    out = apply_language(spec, seq, vocab_size)
    np.testing.assert_array_equal(out, [CLS, cipher[8], cipher[7], cipher[6], PAD])


def test_reserved_ids_always_fixed():
    spec = SyntheticLanguageSpec("tgt", cipher_seed=9, divergence=1.0)
    cipher = spec.cipher(40)
    np.testing.assert_array_equal(cipher[:FIRST_REGULAR], np.arange(FIRST_REGULAR))
    assert sorted(cipher) == list(range(40))


def test_divergence_controls_remapped_fraction():
    spec = SyntheticLanguageSpec("tgt", cipher_seed=2, divergence=0.5)
    cipher = spec.cipher(105)
    moved = (cipher[FIRST_REGULAR:] != np.arange(FIRST_REGULAR, 105)).mean()
    assert abs(moved - 0.5) < 0.02


def test_disjoint_seeds_give_low_overlap():
    a = SyntheticLanguageSpec("a", cipher_seed=11, divergence=1.0)
    b = SyntheticLanguageSpec("b", cipher_seed=22, divergence=1.0)
    assert language_overlap(a, b, 125) < 0.05


def test_spec_file_roundtrip(tmp_path):
    spec = SyntheticLanguageSpec("xx", cipher_seed=77, divergence=0.25,
                                 word_order="rotate:3")
    path = tmp_path / "xx.lang"
    spec.to_file(path)
    loaded = SyntheticLanguageSpec.from_file(path)
    assert loaded == spec
    np.testing.assert_array_equal(loaded.cipher(50), spec.cipher(50))


# --- corpora --------------------------------------------------------------------------


def test_generate_corpus_deterministic():
    assert generate_corpus(50, seed=4) == generate_corpus(50, seed=4)
    assert generate_corpus(50, seed=4) != generate_corpus(50, seed=5)


def test_word_list_unique():
    words = make_word_list(200)
    assert len(set(words)) == 200


def test_bundled_corpus_loads():
    lines = load_bundled_corpus()
    assert len(lines) > 80
    assert all(line == line.strip() and line for line in lines)


# --- seq task -------------------------------------------------------------------------


def test_seq_task_rule_definition():
    # a 3-token vs 5-token pair is second-longer regardless of language
    _, vocab, _ = toy_setup()
    short = np.array([7, 8, 9])
    long = np.array([7, 8, 9, 10, 11])
    assert len(short) < len(long)
    spec = SyntheticLanguageSpec("tgt", cipher_seed=3, divergence=1.0,
                                 word_order="reverse")
    assert len(apply_language(spec, short, vocab.size)) == 3
    assert len(apply_language(spec, long, vocab.size)) == 5


def test_seq_task_balanced_and_invariant():
    _, vocab, ids = toy_setup(n_sentences=600)
    spec = SyntheticLanguageSpec("tgt", cipher_seed=6, divergence=0.5)
    ds = gen_seq_task(ids, spec, vocab, n_examples=2000, split="train", seed=1)
    counts = ds.label_counts()
    assert ds.kind == SEQ_CLS and ds.num_classes == 3
    for label in (FIRST_LONGER, SECOND_LONGER, EQUAL):
        assert abs(counts[label] - 2000 / 3) <= 0.05 * 2000
    # labels depend only on lengths, which every transform preserves
    for a, b, label in ds.examples[:50]:
        if label == FIRST_LONGER:
            assert len(a) > len(b)
        elif label == SECOND_LONGER:
            assert len(a) < len(b)
        else:
            assert len(a) == len(b)


def test_seq_task_degenerate_corpus_rejected():
    lines = ["a b c"] * 50  # every sentence the same length
    vocab = build_vocab(lines)
    ids = corpus_to_ids(lines, vocab)
    with pytest.raises(ConfigError, match="degenerate"):
        gen_seq_task(ids, SyntheticLanguageSpec("src"), vocab, 30, "train", 0)


# --- tag task -------------------------------------------------------------------------


def test_tag_task_fixed_bucket_per_type():
    _, vocab, ids = toy_setup()
    spec = SyntheticLanguageSpec("src")
    ds = gen_tag_task(ids, spec, vocab, n_examples=50, split="train", seed=2, n_tags=4)
    assert ds.kind == TAGGING
    seen = {}
    for sent, tags in ds.examples:
        for t, tag in zip(sent, tags):
            token = vocab.id_to_token[int(t)]
            assert seen.setdefault(token, int(tag)) == int(tag)
            assert int(tag) == stable_bucket(token, 4)


def test_tag_task_every_bucket_populated():
    _, vocab, ids = toy_setup(n_sentences=2000)
    ds = gen_tag_task(ids, SyntheticLanguageSpec("src"), vocab, n_examples=2000,
                      split="train", seed=3, n_tags=6)
    counts = ds.label_counts()
    total = sum(counts.values())
    assert total > 10000
    assert all(counts[k] > 0 for k in range(6))


def test_labels_commute_with_language_transforms():
    _, vocab, ids = toy_setup(n_sentences=1000)
    spec = SyntheticLanguageSpec("tgt", cipher_seed=8, divergence=0.6,
                                 word_order="reverse")
    n_tags = 5
    for base in ids[:1000]:
        base_tags = tag_labels_for_base(base, vocab, n_tags)
        out, moved_tags = apply_language(spec, base, vocab.size, labels=base_tags)
        # undoing the transform must recover the base labeling exactly
        recovered = invert_language(spec, out, vocab.size)
        np.testing.assert_array_equal(recovered, base)
        recovered_tags = tag_labels_for_base(recovered, vocab, n_tags)
        np.testing.assert_array_equal(np.sort(moved_tags), np.sort(recovered_tags))
        # and the moved tags still ride their own tokens
        inverse_cipher = np.argsort(spec.cipher(vocab.size))
        for token_id, tag in zip(out, moved_tags):
            pre = vocab.id_to_token[int(inverse_cipher[int(token_id)])]
            assert int(tag) == stable_bucket(pre, n_tags)


def test_splits_disjoint_and_hash_stable():
    lines = generate_corpus(900, n_words=60, n_classes=4, seed=9)
    vocab = build_vocab(lines)
    pools = {
        "train": corpus_to_ids(lines[:600], vocab),
        "dev": corpus_to_ids(lines[600:750], vocab),
        "test": corpus_to_ids(lines[750:], vocab),
    }
    spec = SyntheticLanguageSpec("src")
    sets = {
        name: gen_tag_task(pool, spec, vocab, 100, name, seed=4)
        for name, pool in pools.items()
    }
    hashes = {name: ds.content_hash() for name, ds in sets.items()}
    again = gen_tag_task(pools["test"], spec, vocab, 100, "test", seed=4)
    assert again.content_hash() == hashes["test"]
    train_sents = {tuple(map(int, ex[0])) for ex in sets["train"].examples}
    test_sents = {tuple(map(int, ex[0])) for ex in sets["test"].examples}
    assert not train_sents & test_sents


# --- on-disk formats -------------------------------------------------------------------


def test_seq_dataset_file_roundtrip(tmp_path):
    _, vocab, ids = toy_setup()
    ds = gen_seq_task(ids, SyntheticLanguageSpec("src"), vocab, 60, "dev", seed=5)
    path = tmp_path / "seq.tsv"
    save_task_dataset(ds, vocab, path)
    loaded = load_task_dataset(path, vocab, SEQ_CLS, "src", "dev", 3)
    assert loaded.content_hash() == ds.content_hash()


def test_tag_dataset_file_roundtrip(tmp_path):
    _, vocab, ids = toy_setup()
    ds = gen_tag_task(ids, SyntheticLanguageSpec("src"), vocab, 40, "dev", seed=6)
    path = tmp_path / "tag.conll"
    save_task_dataset(ds, vocab, path)
    loaded = load_task_dataset(path, vocab, TAGGING, "src", "dev", 6)
    assert loaded.content_hash() == ds.content_hash()
