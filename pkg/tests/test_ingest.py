import json

import pytest

from canopy_forge.errors import FetchFailure, MalformedCatalog
from canopy_forge.geo import BBox, bbox_contains
from canopy_forge.ingest import (TileRecord, build_index, fetch,
                                 local_fetch_path, match_tiles)


def row(id, kind="pointcloud", minx=0.0, miny=0.0, maxx=1000.0, maxy=1000.0,
        year=2021.0, url="file.laz", department="D01"):
    return {"id": id, "kind": kind, "minx": minx, "miny": miny, "maxx": maxx,
            "maxy": maxy, "year": year, "url": url, "department": department}


def write_catalog(path, rows):
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return path


class TestBuildIndex:
    def test_two_rows_ordered_by_id(self, tmp_path):
        catalog = write_catalog(tmp_path / "c.jsonl",
                                [row("b"), row("a")])
        records = build_index(catalog)
        assert [r.id for r in records] == ["a", "b"]

    def test_ordering_by_department_kind_id(self, tmp_path):
        catalog = write_catalog(tmp_path / "c.jsonl", [
            row("x", department="D02"),
            row("y", kind="rgb", department="D01"),
            row("z", kind="nirrg", department="D01"),
        ])
        records = build_index(catalog)
        assert [(r.department, r.kind, r.id) for r in records] == [
            ("D01", "nirrg", "z"), ("D01", "rgb", "y"), ("D02", "pointcloud", "x")]

    def test_missing_bbox_names_line(self, tmp_path):
        bad = row("a")
        del bad["minx"]
        catalog = write_catalog(tmp_path / "c.jsonl", [row("b"), bad])
        with pytest.raises(MalformedCatalog, match=":2"):
            build_index(catalog)

    def test_duplicate_identical_rows_deduplicated(self, tmp_path):
        catalog = write_catalog(tmp_path / "c.jsonl", [row("a"), row("a")])
        assert len(build_index(catalog)) == 1

    def test_duplicate_conflicting_rows_rejected(self, tmp_path):
        catalog = write_catalog(tmp_path / "c.jsonl",
                                [row("a"), row("a", year=2020.0)])
        with pytest.raises(MalformedCatalog, match="conflicting"):
            build_index(catalog)

    def test_csv_catalog(self, tmp_path):
        path = tmp_path / "c.csv"
        path.write_text(
            "id,kind,minx,miny,maxx,maxy,year,url,department\n"
            "t1,rgb,0,0,1000,1000,2020,/data/t1.tif,D01\n")
        records = build_index(path)
        assert records[0].id == "t1" and records[0].kind == "rgb"

    def test_bad_json_line(self, tmp_path):
        path = tmp_path / "c.jsonl"
        path.write_text('{"id": "a", \n')
        with pytest.raises(MalformedCatalog):
            build_index(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MalformedCatalog):
            build_index(tmp_path / "nope.jsonl")


def record(id, kind, bbox, year=2020.0, url="x", department="D01"):
    return TileRecord(id, kind, bbox, url, year, department)


class TestMatchTiles:
    def test_containment(self):
        optical = [record("o", "rgb", BBox(0, 0, 5000, 5000))]
        clouds = [record("in", "pointcloud", BBox(0, 0, 1000, 1000)),
                  record("out", "pointcloud", BBox(6000, 0, 7000, 1000))]
        matches = match_tiles(optical, clouds)
        assert len(matches) == 1
        assert [c.id for c in matches[0].pointcloud_tiles] == ["in"]

    def test_no_clouds(self):
        assert match_tiles([record("o", "rgb", BBox(0, 0, 10, 10))], []) == []

    def test_straddling_tile_excluded(self):
        optical = [record("o", "rgb", BBox(0, 0, 5000, 5000))]
        clouds = [record("c", "pointcloud", BBox(4500, 0, 5500, 1000))]
        assert match_tiles(optical, clouds) == []

    def test_matches_bruteforce_on_random_sets(self):
        import numpy as np

        rng = np.random.default_rng(12)
        optical, clouds = [], []
        for i in range(20):
            x, y = rng.uniform(0, 500, 2)
            w, h = rng.uniform(50, 300, 2)
            optical.append(record(f"o{i}", "rgb", BBox(x, y, x + w, y + h)))
        for i in range(60):
            x, y = rng.uniform(0, 700, 2)
            w, h = rng.uniform(10, 200, 2)
            clouds.append(record(f"c{i}", "pointcloud", BBox(x, y, x + w, y + h)))

        got = {m.optical.id: [c.id for c in m.pointcloud_tiles]
               for m in match_tiles(optical, clouds)}
        expect = {}
        for o in optical:
            inside = [c.id for c in clouds if bbox_contains(o.bbox, c.bbox)]
            if inside:
                expect[o.id] = inside
        assert got == expect


class TestFetch:
    def make_sources(self, tmp_path, n=3):
        records = []
        for i in range(n):
            src = tmp_path / "src" / f"tile{i}.laz"
            src.parent.mkdir(parents=True, exist_ok=True)
            src.write_bytes(f"payload-{i}".encode() * 100)
            records.append(record(f"tile{i}", "pointcloud",
                                  BBox(0, 0, 1, 1), url=str(src)))
        return records

    def test_offline_copy(self, tmp_path):
        records = self.make_sources(tmp_path)
        paths = fetch(records, tmp_path / "dest", max_parallel=2, retries=0)
        assert len(paths) == 3
        for path, rec in zip(paths, records):
            assert path.read_bytes() == (tmp_path / "src" / f"{rec.id}.laz").read_bytes()
            assert path == local_fetch_path(tmp_path / "dest", rec)

    def test_idempotent_second_run_copies_nothing(self, tmp_path):
        records = self.make_sources(tmp_path)
        fetch(records, tmp_path / "dest", 2, 0)
        calls = []

        def counting_transfer(rec, target, timeout):
            calls.append(rec.id)
            raise AssertionError("should not be called")

        paths = fetch(records, tmp_path / "dest", 2, 0, transfer=counting_transfer)
        assert calls == []
        assert len(paths) == 3

    def test_size_mismatch_triggers_refetch(self, tmp_path):
        records = self.make_sources(tmp_path, n=1)
        paths = fetch(records, tmp_path / "dest", 1, 0)
        paths[0].write_bytes(b"truncated")
        paths = fetch(records, tmp_path / "dest", 1, 0)
        assert paths[0].read_bytes().startswith(b"payload-0")

    def test_retries_then_failure(self, tmp_path):
        records = self.make_sources(tmp_path, n=1)
        attempts = []

        def flaky(rec, target, timeout):
            attempts.append(1)
            raise OSError("connection reset")

        with pytest.raises(FetchFailure) as info:
            fetch(records, tmp_path / "dest", 1, retries=2, backoff_base=0.0,
                  transfer=flaky)
        assert len(attempts) == 3
        assert info.value.attempts == 3
        assert info.value.tile_id == "tile0"

    def test_partial_download_removed_on_failure(self, tmp_path):
        records = self.make_sources(tmp_path, n=1)

        def partial(rec, target, timeout):
            target.write_bytes(b"half")
            raise OSError("interrupted")

        with pytest.raises(FetchFailure):
            fetch(records, tmp_path / "dest", 1, retries=0, backoff_base=0.0,
                  transfer=partial)
        assert not local_fetch_path(tmp_path / "dest", records[0]).exists()

    def test_successful_subset_survives_one_failure(self, tmp_path):
        records = self.make_sources(tmp_path, n=3)
        missing = record("ghost", "pointcloud", BBox(0, 0, 1, 1),
                         url=str(tmp_path / "src" / "ghost.laz"))
        with pytest.raises(FetchFailure):
            fetch(records + [missing], tmp_path / "dest", 2, retries=0,
                  backoff_base=0.0)
        for rec in records:
            assert local_fetch_path(tmp_path / "dest", rec).exists()
