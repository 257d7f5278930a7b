"""Smoke test for the ctf3d Python extension.

Build and install first:  pip install --no-build-isolation ./crates/python
"""

import json
import math
import tempfile
from pathlib import Path

import ctf3d


def two_buildings(gap):
    """Two 10 m x 20 m blocks separated by `gap` meters on a 0.5 m grid."""
    gsd = 0.5
    w, h = 80, 60
    rows = []
    for r in range(h):
        y = 30.0 - (r + 0.5) * gsd
        row = []
        for c in range(w):
            x = (c + 0.5) * gsd
            inside_a = 5 <= x <= 15 and 5 <= y <= 25
            inside_b = 15 + gap <= x <= 25 + gap and 5 <= y <= 25
            row.append(100.0 + (8.0 if inside_a or inside_b else 0.0))
        rows.append(row)
    return ctf3d.Raster(rows, 500000.0, 4000030.0, gsd, crs="EPSG:32611")


def main():
    # Model and fit on noiseless points.
    d = [0.5 * 1.3**i for i in range(15)]
    c = [ctf3d.ctf_model(0.95, 0.4, x) for x in d]
    fit = ctf3d.fit_points(d, c)
    assert abs(fit.amp_a - 0.95) < 1e-6 and abs(fit.sigma - 0.4) < 1e-6, fit
    ds = fit.threshold_distance(0.2)
    assert abs(fit(ds) - 0.2) < 1e-9
    print("fit:", fit, "d*(0.2) = %.3f m" % ds)

    # Raster round trip and alignment of a raster against itself.
    ref = two_buildings(4.0)
    with tempfile.TemporaryDirectory() as tmp:
        p = Path(tmp) / "ref.tif"
        ref.write(str(p))
        back = ctf3d.Raster.read(str(p))
        assert back.rows() == ref.rows() and back.crs == ref.crs
    moved = ref.shifted(dz=1.5)
    a = ctf3d.global_align(moved, ref, window_px=32, valid_frac=0.9)
    assert abs(a.dx) < 1e-6 and abs(a.dy) < 1e-6 and abs(a.dz + 1.5) < 1e-6, a
    aligned = ctf3d.apply_alignment(moved, a, ref)
    print("alignment:", a)

    # Regions and contrast from a tribar; the reference against itself is ideal.
    dsm, fps = ctf3d.generate_tribar()
    regions = ctf3d.build_regions(fps, cell_size=dsm.gsd)
    assert len(regions) > 0
    recs = ctf3d.filter_records(ctf3d.compute_ctf(dsm, dsm, regions), 0.95)
    valid = [r for r in recs if r.valid]
    assert valid and all(r.c_test == r.c_ref for r in recs)
    tfit = ctf3d.fit_records(recs)
    print("tribar:", len(fps), "bars,", len(regions), "regions,", len(valid), "valid,", tfit)

    # Aligned copy gives the same contrast as the reference.
    boxes = ctf3d.Footprints.load(str(write_boxes(4.0)), "EPSG:32611")
    box_regions = ctf3d.build_regions(boxes, cell_size=0.5)
    rec = ctf3d.compute_ctf(aligned, ref, box_regions)[0]
    assert math.isclose(rec.c_test, rec.c_ref, abs_tol=1e-9), rec
    print("boxes:", rec)

    try:
        ctf3d.fit_points([1.0], [0.5])
    except ctf3d.Ctf3dError as e:
        print("expected error:", e)
    else:
        raise AssertionError("fit with one point should fail")
    print("ok")


def write_boxes(gap):

    def rect(x0, y0, x1, y1):
        return [[[500000 + x0, 4000000 + y0], [500000 + x1, 4000000 + y0],
                 [500000 + x1, 4000000 + y1], [500000 + x0, 4000000 + y1],
                 [500000 + x0, 4000000 + y0]]]

    fc = {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": {"id": 1},
             "geometry": {"type": "Polygon", "coordinates": rect(5, 5, 15, 25)}},
            {"type": "Feature", "properties": {"id": 2},
             "geometry": {"type": "Polygon", "coordinates": rect(15 + gap, 5, 25 + gap, 25)}},
        ],
    }
    p = Path(tempfile.mkdtemp()) / "boxes.geojson"
    p.write_text(json.dumps(fc))
    return p


if __name__ == "__main__":
    main()
