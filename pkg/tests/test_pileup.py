"""Generator, encoding, transforms, exact posterior oracle, binary format."""

import dataclasses
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescall.errors import (
    ConfigurationError,
    DegenerateDatasetError,
    EmptyInputError,
    FormatError,
    NumericError,
    RangeError,
    ShapeError,
)
from bayescall.pileup import (
    Base,
    Dataset,
    EncodedExample,
    GeneratorConfig,
    LabeledExample,
    PairMatrix,
    balance_undersample,
    center_column,
    encode_dataset,
    encode_pair,
    features_matrix,
    generate_dataset,
    oracle_hypothesis_posteriors,
    oracle_posterior,
    perturb_dataset,
    perturb_gaussian,
    read_dataset,
    reduce_dataset_depth,
    reduce_depth,
    split_dataset,
    write_dataset,
)

A, C, G, T, GAP = Base.A, Base.C, Base.G, Base.T, Base.GAP


def pair_of(normal, tumor):
    return PairMatrix(np.array(normal, dtype=np.uint8), np.array(tumor, dtype=np.uint8))


def column_pair(normal_bases, tumor_bases):
    """Width-1 pair from two base-code sequences."""
    return pair_of(
        np.array(normal_bases, dtype=np.uint8)[:, None],
        np.array(tumor_bases, dtype=np.uint8)[:, None],
    )


# ---------------------------------------------------------------------------
# Independent posterior references.  Both recompute the generative model from
# scratch: one exactly in rational arithmetic from center counts, one in float
# over every cell of the raw grids (marginalizing a per-column reference and
# treating GAP as no observation).
# ---------------------------------------------------------------------------

def _rational_tables(e, ea, f, r, a):
    noisy = [e / 3] * 4
    noisy[r] = 1 - e
    het = [Fraction(0)] * 4
    het[r] = Fraction(1, 2)
    het[a] = Fraction(1, 2)
    som = [Fraction(0)] * 4
    som[a] = f
    som[r] = 1 - f
    art = [ea / 3] * 4
    art[r] = 1 - ea
    return [(noisy, som), (het, het), (noisy, art)]


def rational_posteriors(n_counts, t_counts, cfg):
    """Exact hypothesis posteriors from center-column counts."""
    e = Fraction(cfg.error_rate).limit_denominator(10**6)
    ea = Fraction(cfg.artifact_error_rate).limit_denominator(10**6)
    f = Fraction(cfg.vaf).limit_denominator(10**6)
    cb = Fraction(cfg.class_balance).limit_denominator(10**6)
    gf = Fraction(cfg.germline_fraction).limit_denominator(10**6)
    priors = [cb, (1 - cb) * gf, (1 - cb) * (1 - gf)]
    joints = [Fraction(0)] * 3
    for r in range(4):
        for a in range(4):
            if a == r:
                continue
            for k, (pn, pt) in enumerate(_rational_tables(e, ea, f, r, a)):
                lik = Fraction(1)
                for b in range(4):
                    lik *= Fraction(pn[b]) ** int(n_counts[b])
                    lik *= Fraction(pt[b]) ** int(t_counts[b])
                joints[k] += priors[k] * lik / 12
    total = sum(joints)
    return [float(j / total) for j in joints]


def grid_posteriors(pair, cfg):
    """Float posteriors from every cell, including off-center columns.

    Marginalizes one reference base per column and the alternate at the
    center, so it independently checks that off-center columns cancel.
    """
    e, ea, f = cfg.error_rate, cfg.artifact_error_rate, cfg.vaf
    priors = [
        cfg.class_balance,
        (1 - cfg.class_balance) * cfg.germline_fraction,
        (1 - cfg.class_balance) * (1 - cfg.germline_fraction),
    ]
    c = center_column(pair.width)

    def column_factor(column, probs):
        lik = 1.0
        for base in column:
            if base != GAP:
                lik *= probs[base]
        return lik

    def noisy(rate, r):
        probs = [rate / 3] * 4
        probs[r] = 1 - rate
        return probs

    joints = [0.0, 0.0, 0.0]
    for r in range(4):
        off_center = 1.0
        for j in range(pair.width):
            if j == c:
                continue
            # both tissues read plain reference with error rate e off-center;
            # each column's own reference is marginalized independently
            factor = 0.0
            for rj in range(4):
                factor += 0.25 * column_factor(pair.normal[:, j], noisy(e, rj)) * column_factor(
                    pair.tumor[:, j], noisy(e, rj)
                )
            off_center *= factor
        for a in range(4):
            if a == r:
                continue
            het = [0.0] * 4
            het[r] = 0.5
            het[a] = 0.5
            som = [0.0] * 4
            som[a] = f
            som[r] = 1 - f
            tables = [(noisy(e, r), som), (het, het), (noisy(e, r), noisy(ea, r))]
            for k, (pn, pt) in enumerate(tables):
                lik = column_factor(pair.normal[:, c], pn) * column_factor(pair.tumor[:, c], pt)
                joints[k] += priors[k] * lik * off_center / (4.0 * 3.0)
    total = sum(joints)
    return [j / total for j in joints]


class TestGeneratorConfig:
    def test_defaults_validate(self):
        cfg = GeneratorConfig()
        assert (cfg.depth, cfg.width) == (100, 10)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"depth": 0},
            {"width": 0},
            {"error_rate": -0.1},
            {"error_rate": 0.1, "artifact_error_rate": 0.05},
            {"artifact_error_rate": 1.0},
            {"vaf": 0.0},
            {"vaf": 1.5},
            {"germline_fraction": -0.2},
            {"class_balance": 1.1},
        ],
    )
    def test_invalid_fields_rejected(self, kwargs):
        with pytest.raises(ConfigurationError):
            GeneratorConfig(**kwargs)

    def test_boundary_values_allowed(self):
        GeneratorConfig(error_rate=0.0, artifact_error_rate=0.0, vaf=1.0)
        GeneratorConfig(class_balance=0.0, germline_fraction=1.0)


class TestGenerate:
    def test_zero_noise_full_vaf_positives(self):
        cfg = GeneratorConfig(error_rate=0.0, artifact_error_rate=0.0, vaf=1.0, class_balance=1.0)
        ds = generate_dataset(cfg, 1, 7)
        pair = ds[0].pair
        c = center_column(cfg.width)
        ref = pair.normal[0, c]
        assert ds[0].label == 1
        assert np.all(pair.normal == pair.normal[0])  # error-free copies
        assert np.all(pair.tumor[:, c] != ref)
        assert np.all(pair.tumor[:, c] == pair.tumor[0, c])
        off = [j for j in range(cfg.width) if j != c]
        np.testing.assert_array_equal(pair.tumor[:, off], pair.normal[:, off])

    def test_exact_class_and_confounder_counts(self):
        # with zero error rates the three hypotheses are distinguishable:
        # somatic -> label 1, germline-het -> some ALT in the normal center,
        # artifact (rate 0) -> tumor identical to clean reference
        cfg = GeneratorConfig(
            depth=30, error_rate=0.0, artifact_error_rate=0.0,
            class_balance=0.4, germline_fraction=0.3,
        )
        count = 101
        ds = generate_dataset(cfg, count, 3)
        labels = ds.labels()
        n_pos = round(count * cfg.class_balance)
        n_neg = count - n_pos
        assert labels.sum() == n_pos
        c = center_column(cfg.width)
        germline = sum(
            1
            for ex in ds
            if ex.label == 0 and len(np.unique(ex.pair.normal[:, c])) > 1
        )
        assert germline == round(n_neg * cfg.germline_fraction)

    def test_label_mean_matches_class_balance(self, default_dataset):
        labels = default_dataset.labels()
        assert abs(labels.mean() - 0.5) <= 0.01

    def test_positive_tumor_alt_fraction_concentrates_at_vaf(self, default_dataset):
        cfg = default_dataset.generator_config
        c = center_column(cfg.width)
        carriers = 0
        reads = 0
        for ex in default_dataset:
            if ex.label != 1:
                continue
            # reference at the center = the normal-column majority base
            column = ex.pair.normal[:, c]
            ref = np.bincount(column, minlength=5)[:4].argmax()
            carriers += int((ex.pair.tumor[:, c] != ref).sum())
            reads += ex.pair.depth
        fraction = carriers / reads
        f = cfg.vaf
        bound = 3.0 * np.sqrt(f * (1 - f) / reads)
        # tumor ALT observations = carriers plus a small error leak, so allow
        # the binomial band plus the error rate itself
        assert abs(fraction - f) <= bound + cfg.error_rate

    def test_deterministic_in_all_arguments(self):
        cfg = GeneratorConfig(depth=12, width=3)
        a = generate_dataset(cfg, 40, 9)
        b = generate_dataset(cfg, 40, 9)
        assert a == b
        assert a != generate_dataset(cfg, 40, 10)

    def test_zero_count_rejected(self):
        with pytest.raises(EmptyInputError):
            generate_dataset(GeneratorConfig(), 0, 1)

    def test_provenance_attached(self):
        cfg = GeneratorConfig(depth=5, width=3)
        assert generate_dataset(cfg, 3, 0).generator_config == cfg


class TestEncode:
    def test_palette_row(self):
        ex = encode_pair(pair_of([[A]], [[T]]))
        np.testing.assert_array_equal(ex.features, [[1, 0, 0, 1, 1, 0]])

    def test_all_gap_encodes_to_zeros(self):
        ex = encode_pair(pair_of(np.full((3, 2), GAP), np.full((3, 2), GAP)))
        assert ex.features.shape == (3, 12)
        assert not ex.features.any()

    def test_default_shape_flattens_channels(self):
        ds = generate_dataset(GeneratorConfig(), 1, 5)
        ex = encode_pair(ds[0].pair)
        assert ex.features.shape == (100, 60)

    def test_every_base_has_a_distinct_vector(self):
        vectors = {
            tuple(encode_pair(pair_of([[b]], [[A]])).features[0, :3]) for b in range(5)
        }
        assert len(vectors) == 5

    def test_normal_columns_come_before_tumor(self):
        ex = encode_pair(pair_of([[C, G]], [[T, A]]))
        np.testing.assert_array_equal(
            ex.features, [[0, 1, 0, 0, 0, 1, 1, 1, 0, 1, 0, 0]]
        )

    def test_encode_dataset_preserves_labels_and_provenance(self):
        cfg = GeneratorConfig(depth=4, width=3)
        ds = generate_dataset(cfg, 10, 2)
        enc = encode_dataset(ds)
        assert enc.generator_config == cfg
        np.testing.assert_array_equal(enc.labels(), ds.labels())

    def test_features_matrix_flattens(self):
        ds = encode_dataset(generate_dataset(GeneratorConfig(depth=4, width=3), 6, 2))
        x, y = features_matrix(ds)
        assert x.shape == (6, 4 * 18)
        assert y.shape == (6,)

    def test_features_matrix_requires_encoding(self):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), 2, 2)
        with pytest.raises(ConfigurationError):
            features_matrix(ds)
        with pytest.raises(EmptyInputError):
            features_matrix(Dataset([]))

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_distinct_pairs_encode_distinctly(self, seed):
        rng = np.random.default_rng(seed)
        g = lambda: rng.integers(0, 5, size=(3, 2), dtype=np.uint8)
        first, second = pair_of(g(), g()), pair_of(g(), g())
        if first == second:
            return
        assert encode_pair(first) != encode_pair(second)


class TestBalance:
    def test_already_balanced_keeps_multiset(self):
        ds = generate_dataset(GeneratorConfig(depth=6, width=3), 20, 4)
        # default class balance is exact, so 10 + 10
        out = balance_undersample(ds, 0)
        assert sorted(out.labels()) == sorted(ds.labels())
        key = lambda ex: ex.pair.normal.tobytes() + ex.pair.tumor.tobytes()
        assert sorted(map(key, out)) == sorted(map(key, ds))

    def test_majority_subsampled_to_minority(self):
        cfg = GeneratorConfig(depth=6, width=3, class_balance=100 / 140)
        ds = generate_dataset(cfg, 140, 4)
        assert ds.labels().sum() == 100
        out = balance_undersample(ds, 1)
        labels = out.labels()
        assert len(out) == 80 and labels.sum() == 40

    def test_same_seed_same_order(self):
        ds = generate_dataset(GeneratorConfig(depth=6, width=3), 30, 5)
        assert balance_undersample(ds, 7) == balance_undersample(ds, 7)

    def test_single_class_rejected(self):
        ds = generate_dataset(GeneratorConfig(depth=6, width=3, class_balance=1.0), 8, 0)
        with pytest.raises(DegenerateDatasetError):
            balance_undersample(ds, 0)

    def test_empty_rejected(self):
        with pytest.raises(EmptyInputError):
            balance_undersample(Dataset([]), 0)


class TestSplit:
    def test_eighty_twenty_sizes(self):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), 10, 6)
        train, test = split_dataset(ds, 0.8, 0)
        assert (len(train), len(test)) == (8, 2)

    def test_floor_rule_on_singleton(self):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), 1, 6)
        train, test = split_dataset(ds, 0.5, 0)
        assert (len(train), len(test)) == (0, 1)

    def test_partition_preserves_multiset(self):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), 23, 6)
        train, test = split_dataset(ds, 0.7, 3)
        key = lambda ex: (ex.label, ex.pair.normal.tobytes(), ex.pair.tumor.tobytes())
        assert sorted(map(key, list(train) + list(test))) == sorted(map(key, ds))

    def test_deterministic_per_seed(self):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), 12, 6)
        assert split_dataset(ds, 0.8, 2) == split_dataset(ds, 0.8, 2)

    @pytest.mark.parametrize("fraction", [0.0, 1.0, -0.5, 2.0])
    def test_fraction_out_of_range_rejected(self, fraction):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), 4, 6)
        with pytest.raises(ConfigurationError):
            split_dataset(ds, fraction, 0)


class TestPerturb:
    def make_encoded(self):
        ds = generate_dataset(GeneratorConfig(), 1, 8)
        return encode_pair(ds[0].pair, ds[0].label)

    def test_zero_sigma_copies_features(self):
        ex = self.make_encoded()
        out = perturb_gaussian(ex, 0.0, 3)
        assert out == ex
        assert not np.shares_memory(out.features, ex.features)

    def test_noise_mean_concentrates(self):
        ex = self.make_encoded()
        out = perturb_gaussian(ex, 1.0, 3)
        diff = out.features - ex.features
        assert diff.size == 6000
        assert abs(diff.mean()) <= 4.0 / np.sqrt(diff.size)
        assert out.label == ex.label

    def test_same_seed_identical(self):
        ex = self.make_encoded()
        assert perturb_gaussian(ex, 0.7, 9) == perturb_gaussian(ex, 0.7, 9)

    def test_negative_sigma_rejected(self):
        ex = self.make_encoded()
        with pytest.raises(ConfigurationError):
            perturb_gaussian(ex, -0.1, 0)
        with pytest.raises(ConfigurationError):
            perturb_dataset(Dataset([ex]), -0.1, 0)

    def test_dataset_perturbation_is_per_example_deterministic(self):
        ds = encode_dataset(generate_dataset(GeneratorConfig(depth=4, width=3), 5, 1))
        a = perturb_dataset(ds, 0.5, 11)
        b = perturb_dataset(ds, 0.5, 11)
        assert a == b
        assert a != perturb_dataset(ds, 0.5, 12)


class TestReduceDepth:
    def test_full_depth_is_identity(self):
        ds = generate_dataset(GeneratorConfig(depth=7, width=3), 1, 0)
        pair = ds[0].pair
        assert reduce_depth(pair, 7) == pair

    def test_padding_appends_gap_rows(self):
        ds = generate_dataset(GeneratorConfig(), 1, 0)
        out = reduce_depth(ds[0].pair, 25, pad=True)
        assert out.depth == 100
        assert np.all(out.normal[25:] == GAP)
        assert np.all(out.tumor[25:] == GAP)
        np.testing.assert_array_equal(out.normal[:25], ds[0].pair.normal[:25])

    def test_padded_encoding_keeps_shape(self):
        ds = generate_dataset(GeneratorConfig(), 1, 0)
        out = reduce_dataset_depth(ds, 25, pad=True)
        assert encode_pair(out[0].pair).features.shape == (100, 60)

    def test_unpadded_truncation(self):
        ds = generate_dataset(GeneratorConfig(depth=10, width=3), 1, 0)
        out = reduce_depth(ds[0].pair, 4)
        assert out.depth == 4

    @pytest.mark.parametrize("new_depth", [0, 11, -2])
    def test_out_of_range_rejected(self, new_depth):
        ds = generate_dataset(GeneratorConfig(depth=10, width=3), 1, 0)
        with pytest.raises(RangeError):
            reduce_depth(ds[0].pair, new_depth)


class TestOracle:
    def test_clean_full_vaf_signal_is_certainly_somatic(self):
        cfg = GeneratorConfig(
            depth=100, width=1, error_rate=0.0, artifact_error_rate=0.0, vaf=1.0
        )
        pair = column_pair([A] * 100, [C] * 100)
        posteriors = oracle_hypothesis_posteriors(pair, cfg)
        assert posteriors[0] == pytest.approx(1.0, abs=1e-12)
        assert oracle_posterior(pair, cfg) == posteriors[0]

    def test_equal_alt_counts_read_as_germline(self):
        cfg = GeneratorConfig(depth=100, width=1)
        half = [A] * 50 + [C] * 50
        pair = column_pair(half, half)
        posteriors = oracle_hypothesis_posteriors(pair, cfg)
        # frozen rational-arithmetic reference values
        assert posteriors[1] == pytest.approx(1.0, abs=1e-12)
        assert posteriors[0] == pytest.approx(4.352364458161231e-104, rel=1e-12)
        assert oracle_posterior(pair, cfg) < 0.5

    def test_matches_frozen_rational_reference(self):
        cfg = GeneratorConfig(depth=10, width=1)
        pair = column_pair([A] * 9 + [C], [A] * 6 + [C] * 4)
        expected = [0.572442505674456, 0.42744137624220985, 0.00011611808333417557]
        np.testing.assert_allclose(oracle_hypothesis_posteriors(pair, cfg), expected, atol=1e-14)
        np.testing.assert_allclose(rational_posteriors([9, 1, 0, 0], [6, 4, 0, 0], cfg), expected, atol=1e-14)

    def test_exhaustive_depth_two_grids_match_cell_level_reference(self):
        cfg = GeneratorConfig(depth=2, width=1)
        codes = range(5)
        for n0 in codes:
            for n1 in codes:
                for t0 in codes:
                    for t1 in codes:
                        pair = column_pair([n0, n1], [t0, t1])
                        expected = grid_posteriors(pair, cfg)
                        got = oracle_hypothesis_posteriors(pair, cfg)
                        np.testing.assert_allclose(got, expected, atol=1e-13)

    def test_off_center_columns_cancel(self):
        cfg = GeneratorConfig(depth=3, width=3)
        rng = np.random.default_rng(0)
        for _ in range(40):
            pair = pair_of(
                rng.integers(0, 5, size=(3, 3), dtype=np.uint8),
                rng.integers(0, 5, size=(3, 3), dtype=np.uint8),
            )
            np.testing.assert_allclose(
                oracle_hypothesis_posteriors(pair, cfg),
                grid_posteriors(pair, cfg),
                atol=1e-13,
            )

    def test_gap_rows_do_not_change_the_posterior(self):
        cfg_small = GeneratorConfig(depth=4, width=1)
        cfg_padded = GeneratorConfig(depth=9, width=1)
        small = column_pair([A, A, C, A], [C, C, A, C])
        padded = column_pair([A, A, C, A] + [GAP] * 5, [C, C, A, C] + [GAP] * 5)
        np.testing.assert_allclose(
            oracle_hypothesis_posteriors(small, cfg_small),
            oracle_hypothesis_posteriors(padded, cfg_padded),
            atol=1e-15,
        )

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40, deadline=None)
    def test_posteriors_normalize_on_generated_examples(self, seed):
        cfg = GeneratorConfig(depth=12, width=3)
        ds = generate_dataset(cfg, 1, seed)
        posteriors = oracle_hypothesis_posteriors(ds[0].pair, cfg)
        assert np.all(posteriors >= 0.0) and np.all(posteriors <= 1.0)
        assert posteriors.sum() == pytest.approx(1.0, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        cfg = GeneratorConfig(depth=5, width=1)
        with pytest.raises(ConfigurationError):
            oracle_posterior(column_pair([A] * 4, [C] * 4), cfg)

    def test_impossible_observation_under_zero_error_rejected(self):
        cfg = GeneratorConfig(depth=3, width=1, error_rate=0.0, artifact_error_rate=0.0)
        with pytest.raises(NumericError):
            oracle_posterior(column_pair([A, C, G], [A, A, A]), cfg)


class TestDatasetIo:
    def test_round_trip_with_provenance(self, tmp_path):
        cfg = GeneratorConfig(depth=6, width=3, vaf=0.35)
        ds = generate_dataset(cfg, 12, 13)
        path = tmp_path / "ds.pmx"
        write_dataset(ds, path)
        assert read_dataset(path) == ds

    def test_round_trip_without_provenance(self, tmp_path):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), 5, 13)
        bare = Dataset(list(ds), generator_config=None)
        path = tmp_path / "bare.pmx"
        write_dataset(bare, path)
        back = read_dataset(path)
        assert back == bare
        assert back.generator_config is None

    def test_empty_dataset_is_header_only(self, tmp_path):
        path = tmp_path / "empty.pmx"
        write_dataset(Dataset([]), path)
        assert path.stat().st_size == 20
        back = read_dataset(path)
        assert len(back) == 0 and back.generator_config is None

    def test_encoded_dataset_rejected(self, tmp_path):
        ds = encode_dataset(generate_dataset(GeneratorConfig(depth=4, width=3), 2, 0))
        with pytest.raises(ConfigurationError):
            write_dataset(ds, tmp_path / "enc.pmx")

    def make_file(self, tmp_path, count=3):
        ds = generate_dataset(GeneratorConfig(depth=4, width=3), count, 13)
        path = tmp_path / "ds.pmx"
        write_dataset(ds, path)
        return path, path.read_bytes()

    def test_bad_magic_reports_offset_zero(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        path.write_bytes(b"XMPX" + raw[4:])
        with pytest.raises(FormatError, match="magic") as exc_info:
            read_dataset(path)
        assert exc_info.value.offset == 0

    def test_unsupported_version_rejected(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        path.write_bytes(raw[:4] + (99).to_bytes(4, "little") + raw[8:])
        with pytest.raises(FormatError, match="version") as exc_info:
            read_dataset(path)
        assert exc_info.value.offset == 4

    def test_truncated_header_reports_offset(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        path.write_bytes(raw[:10])
        with pytest.raises(FormatError, match="truncated") as exc_info:
            read_dataset(path)
        assert exc_info.value.offset == 10

    def test_truncated_example_payload(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        path.write_bytes(raw[:30])
        with pytest.raises(FormatError, match="truncated"):
            read_dataset(path)

    def test_bad_label_byte(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        path.write_bytes(raw[:20] + b"\x02" + raw[21:])
        with pytest.raises(FormatError, match="label") as exc_info:
            read_dataset(path)
        assert exc_info.value.offset == 20

    def test_bad_base_code_reports_its_offset(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        corrupted = bytearray(raw)
        corrupted[21 + 5] = 6  # sixth base byte of the first example
        path.write_bytes(bytes(corrupted))
        with pytest.raises(FormatError, match="base code") as exc_info:
            read_dataset(path)
        assert exc_info.value.offset == 26

    def test_corrupt_provenance_blob(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        ds = read_dataset(path)
        body_end = 20 + len(ds) * (1 + 2 * 4 * 3)
        blob = b"{not json"
        path.write_bytes(raw[:body_end] + len(blob).to_bytes(4, "little") + blob)
        with pytest.raises(FormatError, match="provenance"):
            read_dataset(path)

    def test_trailing_garbage_rejected(self, tmp_path):
        path, raw = self.make_file(tmp_path)
        path.write_bytes(raw + b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_dataset(path)

    @given(st.data())
    @settings(max_examples=25, deadline=None)
    def test_random_round_trips(self, tmp_path_factory, data):
        depth = data.draw(st.integers(1, 6))
        width = data.draw(st.integers(1, 4))
        count = data.draw(st.integers(0, 5))
        seed = data.draw(st.integers(0, 2**32 - 1))
        rng = np.random.default_rng(seed)
        examples = [
            LabeledExample(
                pair_of(
                    rng.integers(0, 6, size=(depth, width)) % 5,
                    rng.integers(0, 6, size=(depth, width)) % 5,
                ),
                int(rng.integers(0, 2)),
            )
            for _ in range(count)
        ]
        cfg = GeneratorConfig(depth=depth, width=width) if data.draw(st.booleans()) else None
        ds = Dataset(examples, generator_config=cfg)
        path = tmp_path_factory.mktemp("io") / "roundtrip.pmx"
        write_dataset(ds, path)
        assert read_dataset(path) == ds


class TestValidation:
    def test_pair_shape_mismatch_rejected(self):
        with pytest.raises(ShapeError):
            pair_of(np.zeros((2, 3), dtype=np.uint8), np.zeros((3, 2), dtype=np.uint8))

    def test_pair_code_range_enforced(self):
        with pytest.raises(RangeError):
            pair_of([[7]], [[0]])

    def test_pair_requires_integer_grid(self):
        with pytest.raises(ShapeError):
            PairMatrix(np.zeros((2, 2)), np.zeros((2, 2)))

    def test_label_domain_enforced(self):
        with pytest.raises(RangeError):
            LabeledExample(pair_of([[A]], [[C]]), 2)

    def test_encoded_features_must_be_finite(self):
        with pytest.raises(NumericError):
            EncodedExample(np.array([[np.inf] * 6]), 0)

    def test_encoded_column_count_multiple_of_six(self):
        with pytest.raises(ShapeError):
            EncodedExample(np.zeros((2, 5)), 0)

    def test_dataset_rejects_mixed_shapes(self):
        a = LabeledExample(pair_of([[A]], [[C]]), 0)
        b = LabeledExample(pair_of([[A, C]], [[C, G]]), 0)
        with pytest.raises(ShapeError):
            Dataset([a, b])

    def test_dataset_shape_falls_back_to_config(self):
        cfg = GeneratorConfig(depth=9, width=2)
        assert Dataset([], generator_config=cfg).shape == (9, 2)
        assert Dataset([]).shape == (0, 0)
