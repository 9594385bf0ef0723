import json

import numpy as np
import pytest

from confsynth.conformal import PValueOptions, fit, mondrian_p, mondrian_pvalues, prediction_set
from confsynth.dataset import LabeledDataset, SplitConfig, make_toy
from confsynth.errors import ConfigError, DataError
from confsynth.grid import GridSpec, index_to_point
from confsynth.synthesis import (
    ConfidenceRegionMap,
    PValueField,
    SynthesisConfig,
    emit_synthetic,
    export_field,
    extract_regions,
    read_field,
    region_summary,
    score_grid,
    stream_regions,
    synthesize,
)

LE = PValueOptions(direction="paper-le")


@pytest.fixture(scope="module")
def toy_model():
    data = make_toy(200, 0.2, seed=4)
    proper = data.subset(np.arange(0, 200, 2))
    calib = data.subset(np.arange(1, 200, 2))
    return fit(proper, calib)


class TestScoreGrid:
    def test_single_point(self):
        proper = LabeledDataset(np.array([[0.0]]), np.array([0]))
        calib = LabeledDataset(np.array([[1.0], [2.0]]), np.array([0, 0]))
        model = fit(proper, calib)
        spec = GridSpec((1.5,), 1.0, (1,))
        pfield = score_grid(model, spec)
        assert pfield.values[0].tolist() == [mondrian_p(model, [1.5], 0)]

    def test_chunking_invariant(self, toy_model):
        spec = GridSpec((-2.0, -2.0), 0.1, (40, 30))
        a = score_grid(toy_model, spec, chunk_size=1, workers=1)
        b = score_grid(toy_model, spec, chunk_size=1000, workers=4)
        c = score_grid(toy_model, spec, chunk_size=37, workers=3)
        for y in range(2):
            assert a.values[y].tobytes() == b.values[y].tobytes() == c.values[y].tobytes()

    def test_matches_pointwise(self, toy_model):
        spec = GridSpec((-1.0, -1.0), 0.5, (7, 5))
        pfield = score_grid(toy_model, spec, chunk_size=4)
        pts = index_to_point(spec, np.arange(spec.size))
        for y in range(2):
            assert np.array_equal(pfield.values[y], mondrian_pvalues(toy_model, pts, y))

    def test_coincident_point(self):
        # proper samples sit on lattice points; the one at (1, 1) scores 0 for class 0
        proper = LabeledDataset(np.array([[1.0, 1.0], [0.0, 0.0]]), np.array([0, 1]))
        calib = LabeledDataset(np.array([[1.5, 1.0], [2.0, 2.0], [1.0, 1.1], [0.0, 2.0]]),
                               np.array([0, 0, 0, 1]))
        model = fit(proper, calib)
        spec = GridSpec((0.0, 0.0), 1.0, (3, 3))
        calib0 = model.calib_alphas[0].tolist()
        for opts in (LE, PValueOptions()):
            pfield = score_grid(model, spec, opts)
            direct = (sum(1 for a in calib0 if (a <= 0.0 if opts.direction == "paper-le" else a >= 0.0)) + 1) \
                / (len(calib0) + 1)
            assert pfield.values[0][4] == direct
        le = score_grid(model, spec, LE).values[0]
        ge = score_grid(model, spec).values[0]
        assert le[4] == le.min() == 0.25
        assert ge[4] == ge.max() == 1.0

    def test_dimension_mismatch(self, toy_model):
        with pytest.raises(DataError):
            score_grid(toy_model, GridSpec((0.0,), 1.0, (3,)))


class TestRegions:
    @pytest.fixture
    def pfield(self):
        spec = GridSpec((0.0,), 1.0, (4,))
        return PValueField(spec, (np.array([0.75, 0.5, 1.0, 0.2]), np.array([0.8, 0.9, 0.1, 0.75])))

    def test_strict(self, pfield):
        regions = extract_regions(pfield, 0.75)
        assert regions.indices[0].tolist() == [2]
        assert regions.indices[1].tolist() == [0, 1]

    def test_zero_includes_all(self, pfield):
        regions = extract_regions(pfield, 0.0)
        assert regions.sizes() == [4, 4]

    def test_one_includes_none(self, pfield):
        assert extract_regions(pfield, 1.0).sizes() == [0, 0]

    def test_range(self, pfield):
        with pytest.raises(ConfigError):
            extract_regions(pfield, -0.1)

    def test_nesting(self, toy_model):
        spec = GridSpec((-2.0, -2.0), 0.1, (60, 40))
        pfield = score_grid(toy_model, spec)
        prev = None
        for eps in (0.5, 0.8, 0.9, 0.95):
            regions = extract_regions(pfield, eps)
            if prev is not None:
                for y in range(2):
                    assert set(regions.indices[y]) <= set(prev.indices[y])
            prev = regions

    def test_stream_matches_dense(self, toy_model):
        spec = GridSpec((-2.0, -2.0), 0.1, (60, 40))
        dense = extract_regions(score_grid(toy_model, spec), 0.9)
        streamed = stream_regions(toy_model, spec, 0.9, chunk_size=333, workers=3)
        for a, b in zip(dense.indices, streamed.indices):
            assert np.array_equal(a, b)

    def test_lemma_equivalence_small(self, toy_model):
        spec = GridSpec((-2.0, -2.0), 0.25, (20, 16))
        regions = extract_regions(score_grid(toy_model, spec), 0.8)
        pts = index_to_point(spec, np.arange(spec.size))
        for i, x in enumerate(pts):
            gamma = prediction_set(toy_model, x, 0.8)
            for y in range(2):
                assert (y in gamma) == (i in set(regions.indices[y]))


class TestEmit:
    def test_shared_point(self):
        spec = GridSpec((0.0, 0.0), 1.0, (3, 3))
        regions = ConfidenceRegionMap(0.9, (np.array([4]), np.array([4])))
        syn = emit_synthetic(regions, spec)
        assert len(syn) == 2
        assert syn.labels.tolist() == [0, 1]
        assert syn.features.tolist() == [[1.0, 1.0], [1.0, 1.0]]

    def test_empty(self):
        spec = GridSpec((0.0, 0.0), 1.0, (3, 3))
        syn = emit_synthetic(ConfidenceRegionMap(0.9, (np.array([], int), np.array([], int))), spec)
        assert len(syn) == 0 and syn.n_classes == 2

    def test_counting_and_order(self):
        spec = GridSpec((0.0, 0.0), 1.0, (3, 3))
        regions = ConfidenceRegionMap(0.5, (np.array([1, 5, 8]), np.array([0, 5])))
        syn = emit_synthetic(regions, spec)
        assert len(syn) == 5
        assert syn.labels.tolist() == [0, 0, 0, 1, 1]
        assert syn.features.tolist() == index_to_point(spec, [1, 5, 8, 0, 5]).tolist()

    def test_classes_filter(self):
        spec = GridSpec((0.0,), 1.0, (3,))
        regions = ConfidenceRegionMap(0.5, (np.array([0]), np.array([1, 2])))
        syn = emit_synthetic(regions, spec, classes=[0])
        assert syn.labels.tolist() == [0] and syn.n_classes == 2

    def test_dedupe(self):
        spec = GridSpec((0.0,), 1.0, (3,))
        regions = ConfidenceRegionMap(0.5, (np.array([0, 1]), np.array([1, 2])))
        syn = emit_synthetic(regions, spec, dedupe=True)
        assert syn.features[:, 0].tolist() == [0.0, 2.0]
        assert syn.labels.tolist() == [0, 1]


@pytest.fixture(scope="module")
def toy():
    return make_toy(100, 0.1, seed=0)


class TestSynthesize:
    def test_epsilon_sweep(self, toy):
        sizes = []
        for eps in (0.8, 0.9, 0.95):
            res = synthesize(toy, SynthesisConfig(epsilon=eps, grid_step=0.05))
            sizes.append(len(res.synthetic))
        assert sizes[0] > sizes[1] > sizes[2]

    def test_step_halving(self, toy):
        coarse = synthesize(toy, SynthesisConfig(epsilon=0.9, grid_step=0.1))
        fine = synthesize(toy, SynthesisConfig(epsilon=0.9, grid_step=0.05))
        assert len(fine.synthetic) > len(coarse.synthetic)

    def test_epsilon_one(self, toy):
        assert len(synthesize(toy, SynthesisConfig(epsilon=1.0, grid_step=0.1)).synthetic) == 0

    def test_reuse_field(self, toy):
        res = synthesize(toy, SynthesisConfig(epsilon=0.9, grid_step=0.1))
        again = synthesize(toy, SynthesisConfig(epsilon=0.8, grid_step=0.1))
        syn, regions = res.reextract(0.8)
        assert np.array_equal(syn.features, again.synthetic.features)
        assert regions.sizes() == again.regions.sizes()

    def test_counting_identity(self, toy):
        res = synthesize(toy, SynthesisConfig(epsilon=0.9, grid_step=0.1))
        assert len(res.synthetic) == sum(res.regions.sizes())
        summary = region_summary(res)
        assert summary["gamma"] == 0.1 and summary["epsilon"] == 0.9
        assert [c["synth_count"] for c in summary["per_class"]] == res.regions.sizes()
        json.dumps(summary)

    def test_minority_only(self, toy):
        res = synthesize(toy, SynthesisConfig(epsilon=0.9, grid_step=0.1, minority_only=(0,)))
        assert set(res.synthetic.labels.tolist()) == {0}
        assert len(res.synthetic) == res.regions.sizes()[0]

    def test_streamed_path(self, toy):
        dense = synthesize(toy, SynthesisConfig(epsilon=0.9, grid_step=0.1))
        streamed = synthesize(toy, SynthesisConfig(epsilon=0.9, grid_step=0.1, dense_limit=10))
        assert streamed.field is None
        assert np.array_equal(dense.synthetic.features, streamed.synthetic.features)
        with pytest.raises(ConfigError):
            streamed.reextract(0.8)

    def test_missing_class(self):
        data = LabeledDataset(np.arange(6.0).reshape(-1, 1), np.array([0, 0, 0, 2, 2, 2]))
        with pytest.raises(DataError):
            synthesize(data, SynthesisConfig(grid_step=0.5))

    def test_config_checks(self):
        with pytest.raises(ConfigError):
            SynthesisConfig(epsilon=1.5)
        with pytest.raises(ConfigError):
            SynthesisConfig(grid_step=0)


class TestExport:
    def test_shape_and_round_trip(self, tmp_path):
        spec = GridSpec((0.0,), 0.5, (3,))
        pfield = PValueField(spec, (np.array([1 / 3, 2 / 3, 1.0]), np.array([0.123456789123, 0.5, 0.25])))
        path = tmp_path / "field.csv"
        export_field(pfield, path, chunk_size=2)
        lines = path.read_text().splitlines()
        assert lines[0] == "flat_index,x0,p_0,p_1"
        assert len(lines) == 1 + spec.size
        flat, coords, p = read_field(path)
        assert flat.tolist() == [0, 1, 2]
        assert coords[:, 0].tolist() == [0.0, 0.5, 1.0]
        np.testing.assert_allclose(p[:, 0], pfield.values[0], rtol=5e-9)
        np.testing.assert_allclose(p[:, 1], pfield.values[1], rtol=5e-9)
