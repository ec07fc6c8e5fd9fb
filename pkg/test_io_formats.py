#!/usr/bin/env python3
# Serialization round trips and parse errors

import json

import numpy as np
import pytest

from conftest import travelling_wave
from dmd_core import DmdModel, PairedModel, fit_pipeline, reconstruct
from io_formats import (read_decomposition, read_matrix, read_model,
                        write_decomposition, write_manifest, write_matrix,
                        write_model)
from multires import LevelConfig, decompose, total_reconstruction
from snapshots import FormatParseError, IntegrityError, InvalidArgumentError


class TestMatrix:

    def test_one_by_one(self, tmp_path):
        path = tmp_path / "m.csv"
        write_matrix(path, [[np.pi]], [0.5], [1.25])
        m = read_matrix(path)
        assert m.values[0, 0] == np.pi
        assert m.space[0] == 0.5 and m.time[0] == 1.25
        assert path.read_text(encoding="utf-8").startswith("x\t")

    def test_uniscale_bit_exact(self, tmp_path, uniscale):
        X, _ = uniscale
        path = tmp_path / "total.csv"
        write_matrix(path, X.values, X.space, X.time)
        m = read_matrix(path)
        np.testing.assert_array_equal(m.values, X.values)
        np.testing.assert_array_equal(m.time, X.time.points)
        back = m.to_snapshots()
        assert back.dt == pytest.approx(X.dt, rel=1e-12)

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x\t0\t1\n0\t1.0\t2.0\n1\t3.0\n", encoding="utf-8")
        with pytest.raises(FormatParseError) as excinfo:
            read_matrix(path)
        assert excinfo.value.line == 3

    def test_non_numeric_cell(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("x\t0\t1\n0\t1.0\tabc\n", encoding="utf-8")
        with pytest.raises(FormatParseError) as excinfo:
            read_matrix(path)
        assert excinfo.value.line == 2
        assert "abc" in str(excinfo.value)

    def test_non_finite_rejected(self, tmp_path):
        with pytest.raises(InvalidArgumentError):
            write_matrix(tmp_path / "nan.csv", [[np.nan]])

    @pytest.mark.parametrize("cell", ["nan", "inf", "-inf"])
    def test_non_finite_cell_reported_at_its_line(self, tmp_path, cell):
        path = tmp_path / "bad.csv"
        path.write_text(f"x\t0\t1\n0\t1.0\t2.0\n1\t{cell}\t3.0\n2\t4.0\t5.0\n", encoding="utf-8")
        with pytest.raises(FormatParseError) as excinfo:
            read_matrix(path)
        assert excinfo.value.line == 3
        assert cell in str(excinfo.value)


class TestModel:

    def test_empty_model(self, tmp_path):
        pm = PairedModel((), (), DmdModel(np.zeros((3, 0)), [], [], 0.25))
        path = tmp_path / "empty.json"
        write_model(path, pm)
        doc = read_model(path)
        assert doc.paired.model.rank == 0
        assert doc.paired.model.n_space == 3
        assert doc.pair_modes == [] and doc.space is None

    def test_uniscale_round_trip(self, tmp_path, uniscale):
        X, _ = uniscale
        pm = fit_pipeline(X, 4).paired
        path = tmp_path / "model.json"
        write_model(path, pm, X.space, X.time)
        doc = read_model(path)
        np.testing.assert_array_equal(doc.paired.model.modes, pm.model.modes)
        np.testing.assert_array_equal(doc.paired.model.eigenvalues, pm.model.eigenvalues)
        before = reconstruct(pm.model, X.time)
        after = reconstruct(doc.paired.model, doc.time)
        assert np.max(np.abs(after - before)) <= 1e-12
        assert doc.paired.pairs == pm.pairs
        assert len(doc.pair_modes) == 2

    def test_corrupted_pattern(self, tmp_path, uniscale):
        X, _ = uniscale
        path = tmp_path / "model.json"
        write_model(path, fit_pipeline(X, 4).paired)
        document = json.loads(path.read_text(encoding="utf-8"))
        document["phasor"]["pairs"][0]["S"][10] += 1e-3
        path.write_text(json.dumps(document), encoding="utf-8")
        with pytest.raises(IntegrityError):
            read_model(path)

    def test_wrong_document_kind(self, tmp_path):
        path = tmp_path / "other.json"
        path.write_text(json.dumps({"kind": "something-else", "schema_version": 1}), encoding="utf-8")
        with pytest.raises(IntegrityError):
            read_model(path)


class TestDecomposition:

    def test_round_trip(self, tmp_path):
        wave = travelling_wave()
        decomp = decompose(wave, [LevelConfig(80, 40, 6, refine="varpro")], n_bands=1)
        path = tmp_path / "decomposition.json"
        write_decomposition(path, decomp)
        back = read_decomposition(path)
        assert back.bands == decomp.bands
        assert [m.triplet for m in back.modes] == [m.triplet for m in decomp.modes]
        np.testing.assert_array_equal(back.lowfreq_residual, decomp.lowfreq_residual)
        np.testing.assert_array_equal(total_reconstruction(back), total_reconstruction(decomp))
        assert back.levels[0].config == decomp.levels[0].config
        assert back.levels[0].config.refine == "varpro"


class TestManifest:

    def test_sorted_and_stable(self, tmp_path):
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_manifest(a, {"zeta": 1, "alpha": {"y": 2.5, "b": [1, 2]}})
        write_manifest(b, {"alpha": {"b": [1, 2], "y": 2.5}, "zeta": 1})
        assert a.read_bytes() == b.read_bytes()
        assert list(json.loads(a.read_text(encoding="utf-8"))) == ["alpha", "zeta"]
