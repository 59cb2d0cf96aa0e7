import base64
import json
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mixreg.baseline import RidgeModel
from mixreg.dataset import AtlasMap, Dataset
from mixreg.exceptions import ArgumentError, FormatError, ModelFormatError
from mixreg.io import (
    load_atlas,
    load_matrix,
    load_matrix_with_ids,
    load_model,
    matrix_from_bytes,
    matrix_to_bytes,
    model_from_json,
    model_to_json,
    save_atlas,
    save_matrix,
    save_model,
)
from mixreg.model import MixtureModel, gate_probabilities
from mixreg.synthetic import SyntheticSpec, generate_synthetic
from mixreg.trainer import TrainingConfig, fit

finite = st.floats(allow_nan=False, allow_infinity=False, width=64)
matrices = st.tuples(st.integers(1, 6), st.integers(1, 6)).flatmap(lambda s: arrays(np.float64, s, elements=finite))


class TestDataset:
    def test_vector_inputs_become_columns(self):
        d = Dataset([1.0, 2.0], [3.0, 4.0])
        assert d.x.shape == (2, 1) and d.y.shape == (2, 1)

    def test_row_mismatch(self):
        with pytest.raises(ArgumentError):
            Dataset(np.ones((3, 2)), np.ones((2, 1)))

    def test_non_finite(self):
        with pytest.raises(ArgumentError):
            Dataset([[np.nan]], [[1.0]])
        with pytest.raises(ArgumentError):
            Dataset([[1.0]], [[np.inf]])

    def test_ids(self):
        d = Dataset(np.ones((2, 1)), ids=["a", "b"])
        assert d.row_ids == ("a", "b")
        assert Dataset(np.ones((2, 1))).row_ids == ("0", "1")
        with pytest.raises(ArgumentError):
            Dataset(np.ones((2, 1)), ids=["a"])

    def test_read_only_and_subset(self):
        d = Dataset(np.arange(6.0).reshape(3, 2), np.arange(3.0), ids="xyz")
        with pytest.raises(ValueError):
            d.x[0, 0] = 9
        s = d.subset([2, 0])
        np.testing.assert_array_equal(s.x, [[4, 5], [0, 1]])
        assert s.ids == ("z", "x")

    def test_targets_required(self):
        with pytest.raises(ArgumentError):
            Dataset(np.ones((2, 1))).require_targets()


class TestMatrixFormats:
    def test_csv_example(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3,4")
        np.testing.assert_array_equal(load_matrix(p), [[1, 2], [3, 4]])

    def test_csv_ids_and_header(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("id,a,b\nhouse,1,2\ntree,3,4\n")
        M, ids = load_matrix_with_ids(p, header=True)
        np.testing.assert_array_equal(M, [[1, 2], [3, 4]])
        assert ids == ["house", "tree"]

    def test_empty_csv(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("")
        with pytest.raises(FormatError, match="empty"):
            load_matrix(p)

    def test_ragged_csv_names_line(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3,4,5\n")
        with pytest.raises(FormatError, match=":2:"):
            load_matrix(p)

    def test_non_numeric_csv_names_line(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,2\n3,abc\n")
        with pytest.raises(FormatError, match=":2:.*abc"):
            load_matrix(p)

    def test_non_finite_csv(self, tmp_path):
        p = tmp_path / "m.csv"
        p.write_text("1,nan\n")
        with pytest.raises(FormatError, match="non-finite"):
            load_matrix(p)

    def test_bin_layout(self):
        blob = matrix_to_bytes([[1.0, 2.0, 3.0]])
        assert blob[:8] == b"MOREMAT1"
        assert struct.unpack("<QQ", blob[8:24]) == (1, 3)
        assert struct.unpack("<3d", blob[24:]) == (1.0, 2.0, 3.0)

    def test_bin_bad_magic(self):
        blob = b"NOTMAGIC" + matrix_to_bytes([[1.0]])[8:]
        with pytest.raises(FormatError, match="magic.*offset 0"):
            matrix_from_bytes(blob)

    def test_bin_truncated(self):
        blob = matrix_to_bytes(np.ones((2, 2)))
        with pytest.raises(FormatError, match="truncated.*offset 48"):
            matrix_from_bytes(blob[:-8])
        with pytest.raises(FormatError, match="truncated header"):
            matrix_from_bytes(blob[:10])

    def test_bin_trailing_bytes(self):
        with pytest.raises(FormatError, match="trailing"):
            matrix_from_bytes(matrix_to_bytes([[1.0]]) + b"\0")

    def test_bin_non_finite(self):
        blob = bytearray(matrix_to_bytes([[1.0, 2.0]]))
        blob[32:40] = struct.pack("<d", math.inf)
        with pytest.raises(FormatError, match="offset 32"):
            matrix_from_bytes(bytes(blob))

    @settings(max_examples=50, deadline=None)
    @given(matrices)
    def test_round_trips_are_exact(self, tmp_path_factory, M):
        d = tmp_path_factory.mktemp("rt")
        save_matrix(d / "m.bin", M)
        save_matrix(d / "m.csv", M)
        assert (d / "m.bin").read_bytes() == matrix_to_bytes(load_matrix(d / "m.bin"))
        np.testing.assert_array_equal(load_matrix(d / "m.csv"), M)

    def test_unknown_format(self, tmp_path):
        with pytest.raises(FormatError):
            load_matrix(tmp_path / "x", fmt="npy")


class TestAtlas:
    def test_two_regions(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("dim_index,region_label\n0,L\n1,L\n2,R\n3,R\n")
        atlas = load_atlas(p)
        assert atlas.region_labels == ("L", "R")
        np.testing.assert_array_equal(atlas.dim_to_region, [0, 0, 1, 1])

    def test_single_region(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("0,all\n1,all\n2,all\n")
        assert load_atlas(p).n_regions == 1

    def test_row_order_independent(self, tmp_path):
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        a.write_text("0,x\n1,y\n2,x\n3,z\n")
        b.write_text("3,z\n1,y\n0,x\n2,x\n")
        assert load_atlas(a) == load_atlas(b)

    def test_duplicate_and_missing(self, tmp_path):
        p = tmp_path / "a.csv"
        p.write_text("0,x\n0,y\n")
        with pytest.raises(FormatError, match="duplicate"):
            load_atlas(p)
        p.write_text("0,x\n2,y\n")
        with pytest.raises(FormatError, match="missing"):
            load_atlas(p)

    def test_round_trip(self, tmp_path):
        atlas = AtlasMap.from_labels(["b", "a", "b", "c"])
        save_atlas(tmp_path / "a.csv", atlas)
        assert load_atlas(tmp_path / "a.csv") == atlas

    def test_unused_labels(self):
        atlas = AtlasMap(("a", "b", "c"), np.array([0, 2]))
        assert atlas.unused_labels == ("b",)


def random_mixture(seed=0):
    rng = np.random.default_rng(seed)
    return MixtureModel(rng.normal(size=(3, 2, 4)), rng.uniform(0.1, 2, (3, 2)), rng.normal(size=(3, 4)))


class TestModelFiles:
    def test_mixture_round_trip_is_exact(self, tmp_path):
        model = random_mixture()
        save_model(tmp_path / "m.json", model)
        again = load_model(tmp_path / "m.json")
        assert isinstance(again, MixtureModel)
        for name in ("weights", "variances", "gating"):
            assert getattr(again, name).tobytes() == getattr(model, name).tobytes()

    def test_ridge_round_trip_and_dispatch(self, tmp_path):
        ridge = RidgeModel(np.arange(6.0).reshape(2, 3), 0.5)
        save_model(tmp_path / "r.json", ridge)
        save_model(tmp_path / "m.json", random_mixture())
        again = load_model(tmp_path / "r.json")
        assert isinstance(again, RidgeModel) and again.lam == 0.5
        np.testing.assert_array_equal(again.weights, ridge.weights)
        assert isinstance(load_model(tmp_path / "m.json"), MixtureModel)

    def test_negative_variance_rejected(self):
        manifest = json.loads(model_to_json(random_mixture()))
        bad = np.full((3, 2), -1.0)
        manifest["matrices"]["variances"]["data"] = base64.b64encode(matrix_to_bytes(bad)).decode()
        with pytest.raises(ModelFormatError, match="variance"):
            model_from_json(json.dumps(manifest))

    def test_version_mismatch(self):
        manifest = json.loads(model_to_json(random_mixture()))
        manifest["format_version"] = "2"
        with pytest.raises(ModelFormatError, match="version"):
            model_from_json(json.dumps(manifest))

    def test_unknown_type_and_bad_json(self):
        manifest = json.loads(model_to_json(random_mixture()))
        manifest["type"] = "forest"
        with pytest.raises(ModelFormatError, match="type"):
            model_from_json(json.dumps(manifest))
        with pytest.raises(ModelFormatError):
            model_from_json("{not json")

    def test_shape_mismatch(self):
        manifest = json.loads(model_to_json(random_mixture()))
        manifest["k"] = 2
        with pytest.raises(ModelFormatError, match="shape"):
            model_from_json(json.dumps(manifest))

    def test_sibling_file_reference(self, tmp_path):
        model = random_mixture()
        manifest = json.loads(model_to_json(model))
        (tmp_path / "gating.bin").write_bytes(matrix_to_bytes(model.gating))
        manifest["matrices"]["gating"] = {"file": "gating.bin"}
        (tmp_path / "m.json").write_text(json.dumps(manifest))
        np.testing.assert_array_equal(load_model(tmp_path / "m.json").gating, model.gating)


class TestSynthetic:
    def test_noiseless_single_expert_recovered(self):
        synth = generate_synthetic(SyntheticSpec(k=1, n=3, m=2, n_samples=50, noise_std=0.0, seed=1))
        np.testing.assert_allclose(synth.data.y, synth.data.x @ synth.model.weights[0].T, atol=1e-14)
        model, _ = fit(synth.data, TrainingConfig(k=1))
        np.testing.assert_allclose(model.weights[0], synth.model.weights[0], atol=1e-8)

    def test_zero_gating_scale_gives_uniform_labels(self):
        N, k = 6000, 3
        synth = generate_synthetic(SyntheticSpec(k=k, n_samples=N, gating_scale=0.0, seed=2))
        shares = np.bincount(synth.labels, minlength=k) / N
        assert np.all(np.abs(shares - 1 / k) <= 3 / math.sqrt(N))

    @pytest.mark.parametrize("seed", range(3))
    def test_large_gating_scale_is_confident(self, seed):
        # measured: at n=32 the confident share stays above 0.92 over seeds 0..9
        synth = generate_synthetic(SyntheticSpec(k=3, n=32, gating_scale=5.0, n_samples=2000, seed=seed))
        gates = gate_probabilities(synth.model, synth.data.x)
        assert np.mean(gates.max(axis=1) > 0.9) >= 0.9

    def test_deterministic(self):
        a = generate_synthetic(SyntheticSpec(seed=7))
        b = generate_synthetic(SyntheticSpec(seed=7))
        assert a.data.x.tobytes() == b.data.x.tobytes() and a.data.y.tobytes() == b.data.y.tobytes()
        np.testing.assert_array_equal(a.labels, b.labels)

    def test_labels_follow_their_expert(self):
        synth = generate_synthetic(SyntheticSpec(noise_std=0.0, n_samples=100, seed=3))
        W = synth.model.weights[synth.labels]
        np.testing.assert_allclose(np.einsum("nij,nj->ni", W, synth.data.x), synth.data.y, atol=1e-12)

    def test_invalid_spec(self):
        with pytest.raises(ArgumentError):
            SyntheticSpec(k=0)
        with pytest.raises(ArgumentError):
            SyntheticSpec(noise_std=-1)
