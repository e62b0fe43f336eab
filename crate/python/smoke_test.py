#!/usr/bin/env python3
"""Smoke test for the eventflow_py extension module.

Builds the cdylib with cargo (pass --no-build to skip), loads it, and
exercises the main bindings: projection, bandwidth formulas, polygon area,
Gi*, flow shares, scenario generation, the pipeline run, and a user
surface.

Usage:  python3 python/smoke_test.py [--no-build] [--release]
"""

import json
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def build_and_import(no_build: bool, release: bool):
    profile = "release" if release else "debug"
    if not no_build:
        cmd = ["cargo", "build", "-p", "eventflow-py"]
        if release:
            cmd.append("--release")
        subprocess.run(cmd, cwd=REPO, check=True)
    lib = REPO / "target" / profile / "libeventflow_py.so"
    if not lib.exists():  # macOS fallback
        lib = REPO / "target" / profile / "libeventflow_py.dylib"
    if not lib.exists():
        sys.exit(f"extension library not found under target/{profile}")
    stage = Path(tempfile.mkdtemp(prefix="eventflow-py-"))
    shutil.copy(lib, stage / "eventflow_py.so")
    sys.path.insert(0, str(stage))
    import eventflow_py

    return eventflow_py


def write_fixture(tmp: Path) -> tuple[Path, Path]:
    def rect(region_id, population, lat0, lat1, lon0, lon1):
        return {
            "type": "Feature",
            "properties": {"region_id": region_id, "name": region_id, "population": population},
            "geometry": {
                "type": "Polygon",
                "coordinates": [[
                    [lon0, lat0], [lon1, lat0], [lon1, lat1], [lon0, lat1], [lon0, lat0],
                ]],
            },
        }

    regions = {
        "type": "FeatureCollection",
        "features": [
            rect("Z00", 1_000_000, 40.0, 42.0, -100.0, -98.0),
            rect("Z01", 1_000_000, 40.0, 42.0, -98.0, -96.0),
            rect("Z02", 1_000_000, 42.0, 44.0, -100.0, -98.0),
            rect("Z03", 1_000_000, 42.0, 44.0, -98.0, -96.0),
        ],
    }
    corridor = {
        "type": "FeatureCollection",
        "features": [rect("corr", 0, 40.0, 44.0, -100.0, -96.0)],
    }
    (tmp / "regions.geojson").write_text(json.dumps(regions))
    (tmp / "corridor.geojson").write_text(json.dumps(corridor))
    scenario = """\
regions = regions.geojson
corridor = corridor.geojson
seed = 4242
cohort_size = 40
records_min = 10
records_max = 20
home_fidelity = 0.85
home_sigma_m = 15000
history_days = 60
event_day = 2017-08-21
keywords = eclipse,totality
"""
    (tmp / "scenario.conf").write_text(scenario)
    config = """\
store = synth/store.ndjson
regions = regions.geojson
corridor = corridor.geojson
keywords = eclipse,totality
window_start = 2017-08-21
window_end = 2017-08-22
grid_max_dim = 128
destinations = Z00,Z01
"""
    (tmp / "pipeline.conf").write_text(config)
    return tmp / "scenario.conf", tmp / "pipeline.conf"


def main():
    no_build = "--no-build" in sys.argv
    release = "--release" in sys.argv
    ef = build_and_import(no_build, release)

    # Projection: identity at the origin, known milli-degree length, and an
    # exact round trip.
    proj = ef.Projection(45.0, -120.0)
    assert proj.forward(45.0, -120.0) == (0.0, 0.0)
    x, y = ef.Projection(0.0, 0.0).forward(0.0, 0.001)
    assert abs(x - 111.19508023353292) < 1e-9 and y == 0.0
    lat, lon = proj.inverse(*proj.forward(45.5, -119.25))
    assert abs(lat - 45.5) < 1e-9 and abs(lon - -119.25) < 1e-9
    print("PASS projection")

    # Bandwidths: the four-corner base bandwidth and the area widening.
    bw = ef.base_bandwidth([(1000, 1000), (1000, -1000), (-1000, 1000), (-1000, -1000)])
    assert abs(bw - 964.5961162826638) < 1e-9
    assert ef.record_bandwidth(0.0, 500.0) == 500.0
    assert abs(ef.record_bandwidth(80.0, 500.0) / 500.0 - math.sqrt(2)) < 1e-12
    assert abs(ef.record_bandwidth(720.0, 500.0) / 500.0 - math.sqrt(10)) < 1e-12
    print("PASS bandwidths")

    # Polygon area.
    assert ef.polygon_area([(0, 0), (1000, 0), (1000, 1000), (0, 1000)]) == 1_000_000.0
    print("PASS polygon area")

    # Gi*: all-equal values give z = 0 everywhere.
    zs = ef.gi_star(
        {"a": 5.0, "b": 5.0, "c": 5.0, "d": 5.0},
        {"a": ["b"], "b": ["a", "c"], "c": ["b", "d"], "d": ["c"]},
    )
    assert all(z == 0.0 and label == "not_significant" for z, label in zs.values())
    print("PASS gi_star")

    # Flow shares: counts {A:100, B:50} with populations {A:1000, B:100}
    # give shares (1/6, 5/6).
    shares = ef.flow_shares({"A": 100, "B": 50}, {"A": 1000, "B": 100})
    assert abs(shares["A"][2] - 1 / 6) < 1e-12
    assert abs(shares["B"][2] - 5 / 6) < 1e-12
    assert shares["B"][3] == 1  # rank 1
    print("PASS flow shares")

    # Scenario generation and the full pipeline.
    tmp = Path(tempfile.mkdtemp(prefix="eventflow-smoke-"))
    scenario, config = write_fixture(tmp)
    n_records = ef.generate_scenario(scenario, tmp / "synth", seed=4242)
    assert n_records > 0
    counts = ef.run_pipeline(config, tmp / "out", threads=2)
    assert int(counts["event_users"]) == 40
    assert int(counts["homes_determined"]) > 0
    assert (tmp / "out" / "manifest.txt").exists()
    assert (tmp / "out" / "flows_Z00.csv").exists()
    print(f"PASS pipeline ({counts['filtered_records']} event records, "
          f"{counts['homes_determined']} homes)")

    # Per-user surface: normalized mass ≈ 1.
    values, n_rows, n_cols, cell, _, _ = ef.user_surface(
        tmp / "synth" / "store.ndjson", "user00000"
    )
    assert len(values) == n_rows * n_cols
    mass = sum(values) * cell * cell
    assert abs(mass - 1.0) < 1e-6
    print("PASS user surface")

    print("smoke test OK")


if __name__ == "__main__":
    main()
