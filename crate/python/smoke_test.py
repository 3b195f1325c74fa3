"""Smoke test for the graspswarm extension module.

Build and install first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install --force-reinstall dist/graspswarm-*.whl
"""

import tempfile
from pathlib import Path

import graspswarm as gs


def check_geometry():
    a = gs.GraspRect(100.0, 100.0, 0.0, 20.0, 40.0)
    b = gs.GraspRect(110.0, 100.0, 0.0, 20.0, 40.0)
    assert abs(a.iou(b) - 30.0 / 50.0) < 1e-9
    assert abs(gs.rect_iou(a, b) - a.iou(b)) < 1e-12
    assert gs.rect_match(b, a)
    assert not gs.rect_match(gs.GraspRect(100.0, 100.0, 90.0, 20.0, 40.0), a)
    assert gs.angle_diff(175.0, 5.0) == 10.0
    assert len(a.corners()) == 4
    assert a == gs.GraspRect(*a.to_tuple())
    try:
        gs.GraspRect(0.0, 0.0, 0.0, -1.0, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative size accepted")


def check_network(tmp):
    w = gs.Weights.random(7)
    path = Path(tmp) / "net.gnwb"
    w.save(str(path))
    again = gs.Weights.load(str(path))
    assert again.to_bytes() == w.to_bytes() == path.read_bytes()
    assert gs.Weights.from_bytes(w.to_bytes()).layer_count == w.layer_count

    patch = gs.Raster.filled(24, 24, 3, 0.4)
    p0, p1 = w.class_probabilities(patch)
    assert abs(p0 + p1 - 1.0) < 1e-9
    assert w.forward(patch) == p1


def check_search():
    image = gs.Raster.filled(224, 224, 3, 0.5)
    target = gs.GraspRect(112.0, 104.0, 35.0, 28.0, 52.0)
    scorer = gs.Scorer.synthetic([target])
    assert abs(scorer.score(image, target) - 1.0) < 1e-9

    cfg = gs.SwarmConfig(seed=3, init_threshold=0.0, max_iter=200)
    cfg.topology = "global"
    res = gs.search(image, scorer, cfg)
    again = gs.search(image, scorer, cfg)
    assert res.best == again.best and res.best_score == again.best_score
    assert res.best_score > 0.9, res
    assert res.best.matches(target)
    assert res.trajectory[-1][1] == res.best_score

    strict = gs.SwarmConfig(seed=3, init_threshold=1.0, max_init=2)
    try:
        gs.search(image, gs.Scorer.synthetic([gs.GraspRect(10, 10, 0, 5, 5)]), strict)
    except gs.InitFailed:
        pass
    else:
        raise AssertionError("unreachable gate did not raise")

    peaks = gs.Scorer.synthetic(
        [gs.GraspRect(72, 112, 30, 25, 45), gs.GraspRect(152, 112, 120, 25, 45)]
    )
    multi_cfg = gs.SwarmConfig(seed=5, init_threshold=0.0, topology="ring:1")
    grasps = gs.multigrasp(image, peaks, multi_cfg, k=2, floor=0.5, min_separation=30.0)
    assert 1 <= len(grasps) <= 2
    assert all(s >= 0.5 for _, s in grasps)


def check_imaging(tmp):
    frame = gs.Raster.filled(640, 480, 3, 0.6)
    small = frame.preprocess()
    assert (small.width, small.height, small.channels) == (224, 224, 3)
    patch = small.extract_patch(gs.GraspRect(112, 112, 20, 30, 50))
    assert (patch.width, patch.height) == (24, 24)
    out = Path(tmp) / "small.png"
    small.save_png(str(out))
    assert gs.Raster.load(str(out)).width == 224

    data = [0.9] * (224 * 224 * 3)
    for r in range(90, 130):
        for c in range(80, 150):
            for ch in range(3):
                data[(r * 224 + c) * 3 + ch] = 0.1
    est = gs.estimate_object_scale(gs.Raster(224, 224, 3, data))
    lo, hi = est["w_range"]
    assert lo < hi and est["foreground_pixels"] > 0


def main():
    check_geometry()
    with tempfile.TemporaryDirectory() as tmp:
        check_network(tmp)
        check_imaging(tmp)
    check_search()
    print("graspswarm python smoke test: ok")


if __name__ == "__main__":
    main()
