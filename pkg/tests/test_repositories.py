import struct

import numpy as np
import pytest

from healnet.models.dataset import ModalityBlock, ModalityKind
from healnet.repositories import (
    Checkpoint,
    CheckpointRepository,
    PatchFeatureRepository,
    ReportRepository,
    SurvivalRepository,
    TabularRepository,
)
from healnet.repositories import checkpoint_repository, patch_feature_repository
from healnet.utils.errors import ConfigError, ContractError, DataError, FormatError, ParseError


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def hpf_bytes(n, t_max, d_x, samples):
    chunks = [b"HPF1", struct.pack("<3I", n, t_max, d_x)]
    for values in samples:
        values = np.asarray(values, dtype="<f4").reshape(-1, d_x)
        chunks.append(struct.pack("<I", values.shape[0]))
        chunks.append(values.tobytes())
    return b"".join(chunks)


class TestTabularRepository:
    def test_loads_rows_in_file_order(self, tmp_path):
        path = write(tmp_path / "omic.csv", "id,g1,g2\nb,1,2\na,3,4\nc,5,6\n")
        block = TabularRepository.load(path)
        assert block.name == "omic"
        assert block.kind is ModalityKind.TABULAR
        assert block.ids == ["b", "a", "c"]
        assert block.data.shape == (3, 2, 1)
        np.testing.assert_array_equal(block.data[:, :, 0], [[1, 2], [3, 4], [5, 6]])
        assert block.feature_names == ["g1", "g2"]
        assert block.present.all()

    def test_blank_cell_marks_sample_absent(self, tmp_path):
        path = write(tmp_path / "omic.csv", "id,g1,g2\na,1,2\nb,,4\n")
        block = TabularRepository.load(path, name="rna")
        assert block.name == "rna"
        assert block.present.tolist() == [True, False]

    def test_non_numeric_cell_reports_line(self, tmp_path):
        path = write(tmp_path / "omic.csv", "id,g1\na,1\nb,2\nc,high\n")
        with pytest.raises(ParseError, match="high") as info:
            TabularRepository.load(path)
        assert info.value.line == 4
        assert info.value.exit_code == 2

    def test_short_row_reports_line(self, tmp_path):
        path = write(tmp_path / "omic.csv", "id,g1,g2\na,1,2\nb,3\n")
        with pytest.raises(ParseError, match="too few") as info:
            TabularRepository.load(path)
        assert info.value.line == 3

    def test_long_row_reports_line(self, tmp_path):
        path = write(tmp_path / "omic.csv", "id,g1,g2\na,1,2\nb,3,4\nc,5,6,7\n")
        with pytest.raises(ParseError, match="too many") as info:
            TabularRepository.load(path)
        assert info.value.line == 4

    def test_duplicate_id(self, tmp_path):
        path = write(tmp_path / "omic.csv", "id,g1\na,1\na,2\n")
        with pytest.raises(ParseError, match="duplicate"):
            TabularRepository.load(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            TabularRepository.load(tmp_path / "nope.csv")

    def test_save_then_load_keeps_absence(self, tmp_path):
        block = ModalityBlock(
            "omic",
            ModalityKind.TABULAR,
            ["x", "y"],
            np.array([[[0.5], [1.25]], [[9.0], [9.0]]]),
            np.array([True, False]),
            feature_names=["g0", "g1"],
        )
        loaded = TabularRepository.load(TabularRepository.save(block, tmp_path / "omic.csv"))
        assert loaded.present.tolist() == [True, False]
        np.testing.assert_array_equal(loaded.data[0], block.data[0])


class TestSurvivalRepository:
    def test_load(self, tmp_path):
        path = write(tmp_path / "survival.csv", "id,months,censored\na,12.5,0\nb,3,1\n")
        records = SurvivalRepository.load(path)
        assert [(r.sample_id, r.months, r.censored) for r in records] == [("a", 12.5, 0), ("b", 3.0, 1)]

    def test_bad_header(self, tmp_path):
        path = write(tmp_path / "survival.csv", "id,time,event\na,1,0\n")
        with pytest.raises(ParseError) as info:
            SurvivalRepository.load(path)
        assert info.value.line == 1

    @pytest.mark.parametrize("row", ["a,-1,0", "a,4,2", "a,,0"])
    def test_invalid_values(self, tmp_path, row):
        path = write(tmp_path / "survival.csv", f"id,months,censored\nb,1,0\n{row}\n")
        with pytest.raises(ParseError) as info:
            SurvivalRepository.load(path)
        assert info.value.line == 3

    def test_save_round_trip(self, tmp_path, records):
        path = SurvivalRepository.save(records, tmp_path / "survival.csv")
        loaded = SurvivalRepository.load(path)
        assert [(r.sample_id, r.months, r.censored) for r in loaded] == [
            (r.sample_id, r.months, r.censored) for r in records
        ]


class TestPatchFeatureRepository:
    def test_decode_pads_and_masks(self):
        payload = hpf_bytes(3, 3, 2, [[1, 2, 3, 4, 5, 6], [7, 8], []])
        data, mask = patch_feature_repository.decode(payload)
        assert data.shape == (3, 3, 2)
        np.testing.assert_array_equal(data[1], [[7, 8], [0, 0], [0, 0]])
        assert mask.tolist() == [[True] * 3, [True, False, False], [False] * 3]

    def test_load_with_sidecar_ids(self, tmp_path):
        path = tmp_path / "wsi.hpf"
        path.write_bytes(hpf_bytes(2, 2, 1, [[1, 2], []]))
        write(tmp_path / "wsi.ids", "p1\np2\n")
        block = PatchFeatureRepository.load(path)
        assert block.ids == ["p1", "p2"]
        assert block.present.tolist() == [True, False]
        assert block.token_mask[1].tolist() == [True, False]

    def test_missing_ids(self, tmp_path):
        path = tmp_path / "wsi.hpf"
        path.write_bytes(hpf_bytes(1, 1, 1, [[1]]))
        with pytest.raises(DataError, match="wsi.ids"):
            PatchFeatureRepository.load(path)
        assert PatchFeatureRepository.load(path, ids=["only"]).ids == ["only"]

    def test_id_count_mismatch(self, tmp_path):
        path = tmp_path / "wsi.hpf"
        path.write_bytes(hpf_bytes(1, 1, 1, [[1]]))
        with pytest.raises(DataError, match="2 sample ids"):
            PatchFeatureRepository.load(path, ids=["a", "b"])

    def test_bad_magic(self):
        with pytest.raises(FormatError) as info:
            patch_feature_repository.decode(b"HPF2" + bytes(12))
        assert info.value.offset == 0

    def test_truncated_payload_reports_offset(self):
        payload = hpf_bytes(2, 2, 2, [[1, 2, 3, 4], [5, 6]])
        with pytest.raises(FormatError, match="sample 1") as info:
            patch_feature_repository.decode(payload[:-4])
        assert info.value.offset == len(payload) - 4

    def test_too_many_patches(self):
        with pytest.raises(FormatError, match="header allows 1"):
            patch_feature_repository.decode(hpf_bytes(1, 1, 1, [[1, 2]]))

    def test_trailing_bytes(self):
        with pytest.raises(FormatError, match="trailing"):
            patch_feature_repository.decode(hpf_bytes(1, 1, 1, [[1]]) + b"\x00")

    def test_save_writes_absent_as_empty(self, tmp_path):
        mask = np.array([[True, True, False], [True, True, True]])
        block = ModalityBlock(
            "wsi",
            ModalityKind.PATCHES,
            ["a", "b"],
            np.arange(12, dtype=np.float32).reshape(2, 3, 2),
            np.array([True, False]),
            token_mask=mask,
        )
        path = PatchFeatureRepository.save(block, tmp_path / "wsi.hpf")
        assert len(path.read_bytes()) == 16 + 2 * 4 + 2 * 2 * 4
        loaded = PatchFeatureRepository.load(path)
        assert loaded.present.tolist() == [True, False]
        np.testing.assert_array_equal(loaded.data[0, :2], block.data[0, :2])
        assert loaded.token_mask[0].tolist() == [True, True, False]

    def test_padding_must_trail(self):
        with pytest.raises(DataError, match="padding"):
            patch_feature_repository.encode(np.zeros((1, 2, 1)), np.array([[False, True]]), np.array([True]))


class TestCheckpointRepository:
    def test_round_trip(self, tmp_path, tiny_model):
        meta = {"edges": np.array([1.5, 4.0, 9.25]), "norm.omic.mean": np.arange(5, dtype=np.float64) / 3}
        path = CheckpointRepository.save(Checkpoint(tiny_model, meta=meta, fold=2), tmp_path / "fold2.heal")
        loaded = CheckpointRepository.load(path)
        assert loaded.fold == 2
        assert loaded.seed == tiny_model.seed
        assert loaded.model.modalities == tiny_model.modalities
        assert loaded.model.config.latent_dim == tiny_model.config.latent_dim
        for name, values in tiny_model.state_dict().items():
            np.testing.assert_array_equal(loaded.model.state_dict()[name], values)
        np.testing.assert_array_equal(loaded.edges, meta["edges"])
        mean, std = loaded.norm_stats("omic")
        np.testing.assert_array_equal(mean, meta["norm.omic.mean"])
        assert std is None
        assert loaded.norm_stats("wsi") is None

    def test_foldless(self, tiny_model):
        payload = checkpoint_repository.encode(Checkpoint(tiny_model))
        assert checkpoint_repository.decode(payload).fold is None

    def test_bad_magic(self, tiny_model):
        payload = checkpoint_repository.encode(Checkpoint(tiny_model))
        with pytest.raises(FormatError, match="magic"):
            checkpoint_repository.decode(b"XXXX" + payload[4:])

    def test_truncation(self, tiny_model):
        payload = checkpoint_repository.encode(Checkpoint(tiny_model))
        with pytest.raises(FormatError, match="truncated"):
            checkpoint_repository.decode(payload[:-1])

    def test_missing_file(self, tmp_path):
        with pytest.raises(DataError):
            CheckpointRepository.load(tmp_path / "absent.heal")


class TestReportRepository:
    def test_kv_round_trip(self, tmp_path):
        values = {"result.mean_cindex": "0.61", "depth": "2", "modalities": "omic,wsi"}
        path = ReportRepository.write_kv(values, tmp_path / "report.kv")
        assert path.read_text() == "result.mean_cindex=0.61\ndepth=2\nmodalities=omic,wsi\n"
        assert ReportRepository.read_kv(path) == values

    def test_missing_kv(self, tmp_path):
        with pytest.raises(ConfigError):
            ReportRepository.read_kv(tmp_path / "none.kv")

    def test_multiline_value(self, tmp_path):
        with pytest.raises(ContractError, match="spans lines"):
            ReportRepository.write_kv({"a": "x\ny"}, tmp_path / "bad.kv")

    def test_pgm(self, tmp_path):
        path = ReportRepository.write_pgm([0.0, 0.25, 0.5, 0.25, 0.0, 0.0], (2, 3), tmp_path / "a.pgm")
        raw = path.read_bytes()
        header = b"P5\n3 2\n255\n"
        assert raw.startswith(header)
        assert list(raw[len(header) :]) == [0, 128, 255, 128, 0, 0]

    def test_pgm_grid_mismatch(self, tmp_path):
        with pytest.raises(ConfigError):
            ReportRepository.write_pgm([1.0, 2.0, 3.0], (2, 2), tmp_path / "a.pgm")

    def test_folds_table(self, tmp_path):
        rows = [{"fold": 0, "test_cindex": 0.5}, {"fold": 1, "test_cindex": float("nan")}]
        frame = ReportRepository.read_folds(ReportRepository.write_folds(rows, tmp_path / "folds.csv"))
        assert frame["fold"].tolist() == [0, 1]
        assert frame["test_cindex"].iloc[0] == 0.5
        assert np.isnan(frame["test_cindex"].iloc[1])
