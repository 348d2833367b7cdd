import hashlib

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from inkubator import ink, toyworld
from inkubator.seeding import derive_seed, splitmix64, tag
from inkubator.toyworld import (BigramModel, ToyConfig, ToyConfigError, WriterStyle, build_dataset,
                                choose_excluded_bigrams, cluster_of, sample_writer, write_text)

texts = st.text(alphabet=toyworld.TOY_CHARS, min_size=1, max_size=6)


def plain_style(**kw):
    base = dict(cluster_id=0, slant=0.0, scale=1.0, jitter_sigma=0.0, spacing=0.25, cursive_prob=0.0, speed=5)
    base.update(kw)
    return WriterStyle(**base)


class TestSeeding:
    def test_splitmix_reference_values(self):
        # first outputs of the reference generator seeded with 0
        assert splitmix64(0) == 0xE220A8397B1DCDAF
        assert splitmix64(0x9E3779B97F4A7C15) == 0x6E789E6AA1B965F4

    def test_derive_is_chained(self):
        assert derive_seed(5) == 5
        assert derive_seed(5, 3) == splitmix64(5 ^ 3)
        assert derive_seed(5, 3, 9) == splitmix64(splitmix64(5 ^ 3) ^ 9)

    def test_tag_is_fnv1a(self):
        assert tag("") == 0xCBF29CE484222325
        assert tag("a") == 0xAF63DC4C8601EC8C


class TestWriters:
    def test_same_seed_same_style(self):
        a = sample_writer(2, np.random.default_rng(11))
        b = sample_writer(2, np.random.default_rng(11))
        assert a == b

    def test_monte_carlo_ranges(self):
        rng = np.random.default_rng(0)
        for k in range(5):
            for _ in range(1000 if k == 0 else 200):
                w = sample_writer(k, rng)
                assert w.cluster_id == k
                assert -0.5 <= w.slant <= 0.5
                assert 0.5 <= w.scale <= 2.0
                assert w.jitter_sigma >= 0
                assert w.spacing > 0
                assert 0 <= w.cursive_prob <= 1
                assert isinstance(w.speed, int) and w.speed >= 2

    def test_cluster_out_of_range(self):
        with pytest.raises(ToyConfigError):
            sample_writer(5, np.random.default_rng(0))
        with pytest.raises(ToyConfigError):
            sample_writer(-1, np.random.default_rng(0))

    def test_more_clusters_than_centers(self):
        w = sample_writer(7, np.random.default_rng(0), n_clusters=8)
        assert w.cluster_id == 7 and 0.5 <= w.scale <= 2.0


class TestWriteText:
    def test_noise_free_identity(self):
        s = write_text("a", plain_style(), np.random.default_rng(0))
        expected = toyworld.resample(toyworld.skeleton("a").polylines[0], 5)
        np.testing.assert_allclose(ink.to_absolute(s)[:, :2], expected, atol=1e-12)

    def test_same_seed_twice(self):
        st_ = sample_writer(3, np.random.default_rng(1))
        a = write_text("abc", st_, np.random.default_rng(4))
        b = write_text("abc", st_, np.random.default_rng(4))
        assert ink.dumps_sample(a) == ink.dumps_sample(b)

    def test_cursive_joins_everything(self):
        s = write_text("ab", plain_style(cursive_prob=1.0), np.random.default_rng(0))
        # only the very first point is reached with the pen up
        assert int((s.moves[:, 2] == 0).sum()) == 1
        assert s.moves[0, 2] == 0

    def test_print_style_lifts_between_glyphs(self):
        s = write_text("ab", plain_style(), np.random.default_rng(0))
        assert int((s.moves[:, 2] == 0).sum()) == 2

    def test_errors(self):
        with pytest.raises(ToyConfigError):
            write_text("", plain_style(), np.random.default_rng(0))
        with pytest.raises(ToyConfigError):
            write_text("az", plain_style(), np.random.default_rng(0))

    @given(texts, st.integers(0, 2**32))
    def test_deterministic_without_noise(self, text, seed):
        a = write_text(text, plain_style(), np.random.default_rng(seed))
        b = write_text(text, plain_style(), np.random.default_rng(seed + 1))
        np.testing.assert_array_equal(a.moves, b.moves)

    @given(texts, st.integers(0, 4), st.integers(0, 2**32))
    def test_samples_validate_and_round_trip(self, text, cluster, seed):
        rng = np.random.default_rng(seed)
        s = write_text(text, sample_writer(cluster, rng), rng)
        s.validate(ink.Alphabet(tuple(toyworld.TOY_CHARS)))
        back = ink.parse_record(ink.dumps_sample(s), 1)
        assert back.moves.tobytes() == s.moves.tobytes()


class TestBigrams:
    def test_exclusion_zeroes_transition(self):
        lm = BigramModel(excluded=frozenset({("a", "b")}))
        assert lm.trans[0, 1] == 0
        np.testing.assert_allclose(lm.trans.sum(axis=1), 1.0)

    def test_all_successors_removed(self):
        with pytest.raises(ToyConfigError, match="no bigram left"):
            BigramModel("ab", frozenset({("a", "a"), ("a", "b")}))

    @pytest.mark.parametrize("policy", ["rare", "uniform"])
    def test_choice_keeps_two_successors(self, policy):
        ex = choose_excluded_bigrams(toyworld.TOY_CHARS, 0.3, np.random.default_rng(0), policy)
        assert len(ex) == 30
        for a in toyworld.TOY_CHARS:
            assert sum(1 for p in ex if p[0] == a) <= 8

    def test_rare_takes_lowest_probabilities(self):
        ex = choose_excluded_bigrams("abcd", 0.25)
        trans = BigramModel("abcd").trans
        kept = [trans["abcd".index(a), "abcd".index(b)] for a in "abcd" for b in "abcd" if (a, b) not in ex]
        dropped = [trans["abcd".index(a), "abcd".index(b)] for a, b in ex]
        assert max(dropped) <= np.median(kept)

    def test_infeasible_fraction(self):
        with pytest.raises(ToyConfigError):
            choose_excluded_bigrams("abc", 0.9)


class TestConfig:
    def test_empty_clusters(self):
        with pytest.raises(ToyConfigError):
            ToyConfig(collected_clusters=())

    def test_cluster_outside(self):
        with pytest.raises(ToyConfigError):
            ToyConfig(collected_clusters=(0, 5))

    def test_bigram_outside_alphabet(self):
        with pytest.raises(ToyConfigError):
            ToyConfig(alphabet_size=3, excluded_bigrams=(("a", "z"),))

    def test_bad_policy(self):
        with pytest.raises(ToyConfigError):
            ToyConfig(exclude_policy="weird")


class TestDataset:
    def test_excluded_pair_absent(self):
        ds = build_dataset(ToyConfig(n_train=200, n_val=20, n_test=20, n_real_test=10, writers_per_cluster=3,
                                     excluded_bigrams=(("a", "b"),)))
        assert all("ab" not in s.content for s in ds.train + ds.val + ds.test)

    def test_collected_cluster_support(self, small_world):
        cfg, ds = small_world
        collected = {cluster_of(s.writer_id) for s in ds.train + ds.val + ds.test}
        assert collected == set(cfg.collected_clusters)
        assert {cluster_of(s.writer_id) for s in ds.real_test} <= set(range(5))
        assert ds.writers[ds.train[0].writer_id].cluster_id == cluster_of(ds.train[0].writer_id)

    def test_excluded_count_is_zero(self, small_world):
        cfg, ds = small_world
        report = ds.gap_report(cfg)
        assert report["collected_samples_with_excluded_bigram"] == 0
        assert len(report["excluded_bigrams"]) == 30

    def test_labels(self, small_world):
        _, ds = small_world
        for name in ("train", "val", "test"):
            assert all(s.split == name and s.writer_id for s in getattr(ds, name))
        assert all(s.split == "test" for s in ds.real_test)
        assert ds.corpus == [s.content for s in ds.train]

    def test_subset_regenerates(self, small_world):
        cfg, ds = small_world
        smaller = build_dataset(ToyConfig(**{**cfg.__dict__, "n_train": 10}))
        for a, b in zip(ds.train[:10], smaller.train):
            assert ink.dumps_sample(a) == ink.dumps_sample(b)

    def test_byte_identical_files(self, small_world, tmp_path):
        cfg, _ = small_world

        def digest(d):
            paths = build_dataset(cfg).write(d, cfg)
            return {k: hashlib.sha256(p.read_bytes()).hexdigest() for k, p in paths.items()}

        assert digest(tmp_path / "one") == digest(tmp_path / "two")
