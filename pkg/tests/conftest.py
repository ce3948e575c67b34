"""Shared test helpers: tiny grid builders and the synthetic department
used by the pipeline and acceptance tests."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from canopy_forge.geo import AffineTransform
from canopy_forge.grid import NODATA, Grid
from canopy_forge.lasio import year_to_adjusted_gps
from canopy_forge.pointcloud import write_point_cloud


def make_grid(values, origin=(0.0, 0.0), cell=0.5, nodata=NODATA) -> Grid:
    """Grid from a 2-D list/array; origin is the (west, north) corner."""
    values = np.asarray(values, dtype=np.float32)
    transform = AffineTransform(origin[0], origin[1], cell, -cell)
    return Grid(transform, values, nodata)


def grid_points(x0, x1, y0, y1, step, offset):
    """Deterministic lattice of points covering [x0,x1) x [y0,y1)."""
    xs = np.arange(x0 + offset, x1, step)
    ys = np.arange(y0 + offset, y1, step)
    xv, yv = np.meshgrid(xs, ys)
    return xv.ravel(), yv.ravel()


class SceneSpec:
    """Geometry of the synthetic department shared across tests.

    A 128 m x 128 m site: flat ground at z=100 on a 0.4 m lattice with a
    10 m x 10 m water void (no ground returns), one large canopy block of
    class-5 returns at z=110, split into two cloud tiles (west/east) with
    different acquisition years. Optical tiles cover the site at 0.25 m
    for three years; one year carries a zero-imagery rectangle.
    """

    x0, y0 = 600000.0, 6500000.0
    size = 128.0
    ground_z = 100.0
    canopy_z = 110.0
    canopy = (600010.0, 6500010.0, 600120.0, 6500120.0)
    void = (600020.0, 6500050.0, 600030.0, 6500060.0)
    zero_patch = (600040.0, 6500090.0, 600060.0, 6500110.0)  # in year 2018 imagery
    years = (2016.0, 2018.0, 2020.0)
    cloud_years = (2021.25, 2021.75)
    department = "D01"
    bands_by_year = {
        2016.0: {"r": 50, "g": 60, "b": 70, "nir": 150},
        2018.0: {"r": 80, "g": 90, "b": 100, "nir": 160},
        2020.0: {"r": 40, "g": 55, "b": 65, "nir": 170},
    }

    @property
    def x1(self):
        return self.x0 + self.size

    @property
    def y1(self):
        return self.y0 + self.size

    @property
    def mean_cloud_year(self):
        return sum(self.cloud_years) / len(self.cloud_years)


SCENE = SceneSpec()


def _inside(xs, ys, rect):
    return (xs >= rect[0]) & (xs < rect[2]) & (ys >= rect[1]) & (ys < rect[3])


def build_cloud_tile(path: Path, x0: float, x1: float, scene: SceneSpec,
                     year: float) -> None:
    """Write one LAZ cloud tile spanning [x0, x1) in x, full site in y."""
    gx, gy = grid_points(x0, x1, scene.y0, scene.y1, 0.4, 0.2)
    keep = ~_inside(gx, gy, scene.void)
    gx, gy = gx[keep], gy[keep]
    ground = np.full(gx.size, scene.ground_z)

    vx, vy = grid_points(x0, x1, scene.y0, scene.y1, 0.25, 0.125)
    keep = _inside(vx, vy, scene.canopy)
    vx, vy = vx[keep], vy[keep]
    veg = np.full(vx.size, scene.canopy_z)

    xs = np.concatenate([gx, vx])
    ys = np.concatenate([gy, vy])
    zs = np.concatenate([ground, veg])
    cls = np.concatenate([np.full(gx.size, 2, np.uint8),
                          np.full(vx.size, 5, np.uint8)])
    gps = np.full(xs.size, year_to_adjusted_gps(year))
    write_point_cloud(path, xs, ys, zs, cls, gps)


def build_optical_tile(path: Path, scene: SceneSpec, year: float,
                       kind: str) -> None:
    """Write a 3-band 0.25 m orthophoto (rgb or nirrg) for one year."""
    from canopy_forge.geotiff import write_geotiff
    from canopy_forge.grid import OpticalImage

    n = int(scene.size / 0.25)
    values = scene.bands_by_year[year]
    if kind == "rgb":
        planes = [values["r"], values["g"], values["b"]]
    else:
        planes = [values["nir"], values["r"], values["g"]]
    bands = np.stack([np.full((n, n), v, dtype=np.uint8) for v in planes])

    if year == 2018.0:  # simulated fetch gap
        c0 = int((scene.zero_patch[0] - scene.x0) / 0.25)
        c1 = int((scene.zero_patch[2] - scene.x0) / 0.25)
        r0 = int((scene.y1 - scene.zero_patch[3]) / 0.25)
        r1 = int((scene.y1 - scene.zero_patch[1]) / 0.25)
        bands[:, r0:r1, c0:c1] = 0

    transform = AffineTransform(scene.x0, scene.y1, 0.25, -0.25)
    write_geotiff(OpticalImage(transform, bands, year), path)


def build_catalog(root: Path, scene: SceneSpec) -> Path:
    """Materialize the synthetic department and its catalog under root."""
    src = root / "source"
    src.mkdir(parents=True, exist_ok=True)
    rows = []

    mid = scene.x0 + scene.size / 2
    for name, x0, x1, year in (("cloud_w", scene.x0, mid, scene.cloud_years[0]),
                               ("cloud_e", mid, scene.x1, scene.cloud_years[1])):
        path = src / f"{name}.laz"
        if not path.exists():
            build_cloud_tile(path, x0, x1, scene, year)
        rows.append({"id": name, "kind": "pointcloud", "minx": x0, "miny": scene.y0,
                     "maxx": x1, "maxy": scene.y1, "year": year,
                     "url": str(path), "department": scene.department})

    for year in scene.years:
        for kind in ("rgb", "nirrg"):
            name = f"{kind}_{year:g}"
            path = src / f"{name}.tif"
            if not path.exists():
                build_optical_tile(path, scene, year, kind)
            rows.append({"id": name, "kind": kind, "minx": scene.x0,
                         "miny": scene.y0, "maxx": scene.x1, "maxy": scene.y1,
                         "year": year, "url": str(path),
                         "department": scene.department})

    catalog = root / "catalog.jsonl"
    catalog.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    return catalog


@pytest.fixture(scope="session")
def scene_catalog(tmp_path_factory) -> tuple[Path, SceneSpec]:
    root = tmp_path_factory.mktemp("scene")
    return build_catalog(root, SCENE), SCENE
