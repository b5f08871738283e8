"""
Tests for artifact storage.
"""

import json
import math
import pytest
import numpy as np
import pandas as pd

from telecoupling import __version__
from telecoupling.storage import (
    ArtifactStore, atomic_write_text, build_report, dumps_json, frame_to_csv, report_hash,
    round_significant, sha256_text,
)


class TestCanonicalFormats:
    """Test cases for canonical CSV and JSON text."""

    def test_round_significant(self):
        assert round_significant(1.0 / 3.0) == 0.333333333333
        assert math.isnan(round_significant(float("nan")))

    def test_json_sorted_and_normalized(self):
        text = dumps_json({"b": np.float64(0.1 + 0.2), "a": [np.int64(3), float("nan")], "c": (True,)})
        data = json.loads(text)
        assert list(data) == ["a", "b", "c"]
        assert data["a"] == [3, None]
        assert data["b"] == 0.3
        assert data["c"] == [True]
        assert text.endswith("\n")

    def test_csv_lines_and_digits(self):
        frame = pd.DataFrame({"x": [1.0 / 3.0, 2.0], "name": ["a", "b"]})
        text = frame_to_csv(frame)
        assert text == "x,name\n0.333333333333,a\n2,b\n"
        assert "\r" not in text

    def test_atomic_write_leaves_no_temp_file(self, tmp_path):
        path = tmp_path / "nested" / "file.txt"
        atomic_write_text(path, "hello\n")
        assert path.read_text(encoding="utf-8") == "hello\n"
        assert not (tmp_path / "nested" / "file.txt.tmp").exists()


class TestReports:
    """Test cases for report envelopes."""

    def test_envelope(self):
        report = build_report("fit", {"n": 1}, {"seed": 3})
        assert report["kind"] == "fit"
        assert report["version"] == __version__
        assert report["config"] == {"seed": 3}
        assert "generated_at" in report

    def test_hash_ignores_timestamp(self):
        first = build_report("fit", {"n": 1})
        second = dict(first, generated_at="1999-01-01T00:00:00")
        assert report_hash(first) == report_hash(second)
        assert report_hash(first) != report_hash(build_report("fit", {"n": 2}))


class TestArtifactStore:
    """Test cases for ArtifactStore."""

    @pytest.fixture
    def store(self, tmp_path):
        return ArtifactStore(out_dir=tmp_path / "out")

    def test_creates_directory(self, store, tmp_path):
        assert store.out_dir == tmp_path / "out"
        assert store.out_dir.exists()

    def test_env_default(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TELECOUPLING_OUT_DIR", str(tmp_path / "env-out"))
        store = ArtifactStore()
        assert store.out_dir == tmp_path / "env-out"

    def test_csv_hash_matches_text(self, store):
        frame = pd.DataFrame({"a": [1, 2]})
        path = store.write_csv("a.csv", frame)
        assert store.hashes["a.csv"] == sha256_text(path.read_text(encoding="utf-8"))

    def test_report_hash_ignores_timestamp(self, store):
        store.write_json("r.json", build_report("x", {"v": 1}))
        first = store.hashes["r.json"]
        store.write_json("r.json", dict(build_report("x", {"v": 1}), generated_at="2000-01-01T00:00:00"))
        assert store.hashes["r.json"] == first

    def test_content_hash_is_order_independent(self, tmp_path):
        one = ArtifactStore(tmp_path / "one")
        one.write_csv("a.csv", pd.DataFrame({"a": [1]}))
        one.write_csv("b.csv", pd.DataFrame({"b": [2]}))
        two = ArtifactStore(tmp_path / "two")
        two.write_csv("b.csv", pd.DataFrame({"b": [2]}))
        two.write_csv("a.csv", pd.DataFrame({"a": [1]}))
        assert one.content_hash() == two.content_hash()

    def test_manifest(self, store):
        store.write_csv("a.csv", pd.DataFrame({"a": [1]}))
        path = store.write_manifest()
        manifest = json.loads(path.read_text(encoding="utf-8"))
        assert manifest["version"] == __version__
        assert list(manifest["artifacts"]) == ["a.csv"]
        assert manifest["last_run_hash"] == store.content_hash()

    def test_manifest_keeps_earlier_runs(self, tmp_path):
        first = ArtifactStore(tmp_path / "out")
        first.write_csv("a.csv", pd.DataFrame({"a": [1]}))
        first.write_manifest()
        second = ArtifactStore(tmp_path / "out")
        second.write_csv("b.csv", pd.DataFrame({"b": [1]}))
        manifest = json.loads(second.write_manifest().read_text(encoding="utf-8"))
        assert sorted(manifest["artifacts"]) == ["a.csv", "b.csv"]
        assert manifest["last_run_hash"] == second.content_hash()

    def test_storage_info(self, store):
        store.write_csv("a.csv", pd.DataFrame({"a": [1]}))
        info = store.get_storage_info()
        assert info["artifacts"] == ["a.csv"]
        assert info["content_hash"] == store.content_hash()
