import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from drbench.data import (
    LESIONS,
    Dataset,
    DatasetKind,
    FundusSample,
    LesionDensity,
    PhantomSpec,
    PlantingLog,
    compute_statistics,
    grade_from_counts,
    grading_phantom_spec,
    load_dataset,
    save_dataset,
    seg_phantom_spec,
    split_dataset,
    synthesize_phantom,
    write_phantom,
)
from drbench.errors import (
    DimensionMismatch,
    EmptyDataset,
    GradeOutOfRange,
    InvalidSpec,
    LesionOverflow,
    MissingLabels,
    MissingMaskFile,
    TooFewSamples,
    UnknownLesionKind,
)


def _sample(sid, size=64, grade=0, masks=None):
    image = np.zeros((size, size, 3), np.float32)
    return FundusSample(sid, image, lesion_masks=masks or {}, lesion_flags={"LM": False, "PM": False}, grade=grade)


class TestLoading:
    def test_empty_directory(self, tmp_path):
        with pytest.raises(MissingMaskFile, match="0 samples loaded"):
            load_dataset(tmp_path, "seg-set")

    def test_single_sample(self, tmp_path):
        ma = np.zeros((64, 64), bool)
        ma[10:12, 10:12] = True
        save_dataset(Dataset([_sample("a", masks={"MA": ma})], kind="seg-set"), tmp_path)
        ds = load_dataset(tmp_path, "seg-set")
        assert len(ds) == 1
        assert (ds[0].mask("MA") == ma).all()

    def test_mask_dimension_mismatch_names_sample(self, tmp_path):
        save_dataset(Dataset([_sample("eye7")], kind="seg-set"), tmp_path)
        from drbench.data.io import write_mask

        (tmp_path / "masks" / "HE").mkdir(parents=True)
        write_mask(tmp_path / "masks" / "HE" / "eye7.png", np.ones((32, 32), bool))
        with pytest.raises(DimensionMismatch) as err:
            load_dataset(tmp_path, "seg-set")
        assert err.value.sample_id == "eye7"
        assert "eye7" in str(err.value)

    def test_unknown_lesion_directory(self, tmp_path):
        save_dataset(Dataset([_sample("a")], kind="seg-set"), tmp_path)
        (tmp_path / "masks" / "DRUSEN").mkdir(parents=True)
        with pytest.raises(UnknownLesionKind):
            load_dataset(tmp_path, "seg-set")

    def test_grade_out_of_range(self, tmp_path):
        save_dataset(Dataset([_sample("a", grade=2)], kind="seg-set"), tmp_path)
        manifest = tmp_path / "manifest.tsv"
        lines = manifest.read_text().splitlines()
        cells = lines[1].split("\t")
        cells[1] = "7"
        manifest.write_text("\n".join([lines[0], "\t".join(cells)]) + "\n")
        with pytest.raises(GradeOutOfRange):
            load_dataset(tmp_path, "seg-set")

    def test_round_trip_is_bit_identical(self, tmp_path):
        ds, _ = synthesize_phantom(seg_phantom_spec(3, 64, seed=5))
        save_dataset(ds, tmp_path)
        back = load_dataset(tmp_path, "phantom")
        for a, b in zip(ds, back):
            assert np.array_equal(a.image, b.image)
            for k in LESIONS:
                assert np.array_equal(a.mask(k), b.mask(k))
            assert a.grade == b.grade and a.lesion_flags == b.lesion_flags


class TestStatistics:
    def test_two_images(self):
        ma = np.zeros((64, 64), bool)
        ma[3, 3] = True
        ds = Dataset([_sample("a", grade=2, masks={"MA": ma}), _sample("b", grade=2)])
        st_ = compute_statistics(ds)
        assert st_.images_per_lesion["MA"] == 1
        assert st_.lesions_per_grade_normalized[(2, "MA")] == 0.5
        assert st_.grade_distribution[2] == 2

    def test_all_zero_masks(self):
        st_ = compute_statistics(Dataset([_sample("a"), _sample("b", grade=3)]))
        assert all(v == 0 for v in st_.images_per_lesion.values())
        assert all(v == 0.0 for v in st_.lesions_per_grade_normalized.values())

    def test_errors(self):
        with pytest.raises(EmptyDataset):
            compute_statistics(Dataset([]))
        s = _sample("a")
        s.grade = None
        with pytest.raises(MissingLabels):
            compute_statistics(Dataset([s]))

    def test_matches_planting_log(self, tmp_path):
        spec = grading_phantom_spec(10, 64, seed=3, lm_rate=0.3, pm_rate=0.3)
        ds, log = synthesize_phantom(spec)
        assert compute_statistics(ds) == log.statistics()
        write_phantom(ds, log, tmp_path)
        assert PlantingLog.read(tmp_path / "planting_log.tsv").statistics() == log.statistics()


class TestPhantom:
    def test_zero_densities(self):
        spec = PhantomSpec(4, 64, {k: LesionDensity(0, 0, 1, 1) for k in LESIONS}, seed=1)
        ds, log = synthesize_phantom(spec)
        assert all(not s.mask(k).any() for s in ds for k in LESIONS)
        assert all(s.grade == 0 for s in ds)
        assert {r.kind for r in log.records} == {"-"}

    def test_deterministic(self):
        spec = seg_phantom_spec(3, 64, seed=9)
        a, la = synthesize_phantom(spec)
        b, lb = synthesize_phantom(spec)
        assert la == lb
        for x, y in zip(a, b):
            assert np.array_equal(x.image, y.image)
            assert all(np.array_equal(x.mask(k), y.mask(k)) for k in LESIONS)

    def test_seed_changes_images(self):
        a, _ = synthesize_phantom(seg_phantom_spec(1, 64, seed=0))
        b, _ = synthesize_phantom(seg_phantom_spec(1, 64, seed=1))
        assert not np.array_equal(a[0].image, b[0].image)

    def test_five_ma_dots(self):
        spec = PhantomSpec(1, 128, {"MA": LesionDensity(5, 5, 2, 2)}, seed=4)
        ds, log = synthesize_phantom(spec)
        mask = ds[0].mask("MA")
        assert 5 * np.pi * 1.5**2 <= mask.sum() <= 5 * np.pi * 2.5**2
        assert oracles.flood_fill_components(mask) == 5
        assert sum(r.kind == "MA" for r in log.records) == 5

    @given(st.integers(0, 10_000))
    @settings(max_examples=15, deadline=None)
    def test_image_range_and_grade_rule(self, seed):
        ds, log = synthesize_phantom(grading_phantom_spec(1, 64, seed=seed))
        s = ds[0]
        assert s.image.dtype == np.float32
        assert 0.0 <= s.image.min() and s.image.max() <= 1.0
        counts = {k: sum(r.kind == k for r in log.records) for k in LESIONS}
        assert s.grade == grade_from_counts(counts)

    def test_overflow(self):
        spec = PhantomSpec(1, 32, {"HE": LesionDensity(60, 60, 4, 4)}, seed=0, max_attempts=5)
        with pytest.raises(LesionOverflow):
            synthesize_phantom(spec)

    def test_invalid_spec(self):
        with pytest.raises(InvalidSpec):
            synthesize_phantom(PhantomSpec(1, 64, {"XX": LesionDensity(1, 1, 1, 1)}))

    @pytest.mark.parametrize(
        "counts, grade",
        [
            ({}, 0),
            ({"MA": 1}, 1),
            ({"MA": 3}, 1),
            ({"MA": 2, "HE": 2}, 2),
            ({"EX": 7}, 2),
            ({"SE": 8}, 3),
            ({"IRMA": 1}, 3),
            ({"MA": 1, "NV": 1}, 4),
        ],
    )
    def test_grade_rule_table(self, counts, grade):
        assert grade_from_counts(counts) == grade


class TestSplit:
    def test_four_samples(self):
        ds = Dataset([_sample(f"s{i}", grade=i % 2) for i in range(4)])
        splits = split_dataset(ds, 2, seed=0)
        tests = [set(te.ids) for _, te in splits]
        assert [len(t) for t in tests] == [2, 2]
        assert tests[0].isdisjoint(tests[1]) and tests[0] | tests[1] == set(ds.ids)
        for tr, te in splits:
            assert set(tr.ids) == set(ds.ids) - set(te.ids)

    def test_stratified(self):
        ds = Dataset([_sample(f"s{i}", grade=0 if i < 5 else 4) for i in range(10)])
        for _, te in split_dataset(ds, 2, seed=3):
            for g in (0, 4):
                assert sum(s.grade == g for s in te) in (2, 3)

    def test_deterministic_and_errors(self):
        ds = Dataset([_sample(f"s{i}", grade=i % 5) for i in range(10)])
        a = [te.ids for _, te in split_dataset(ds, 2, seed=1)]
        b = [te.ids for _, te in split_dataset(ds, 2, seed=1)]
        assert a == b
        with pytest.raises(TooFewSamples):
            split_dataset(ds.subset([0]), 2)
