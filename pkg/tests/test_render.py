import numpy as np
import pytest

from videoguide.geometry import Pose6D, TriMesh
from videoguide.render import colorize, rasterize, read_ppm, write_ppm
from videoguide.sim import ObjectSpec, SimState

from conftest import cube_scene


def test_empty_scene_renders_nothing():
    scene = cube_scene()
    obs = rasterize(SimState.initial(scene), scene, include=[])
    assert not obs.depth.valid.any()
    assert not obs.seg.labels.any()


def test_cube_front_face_depth():
    scene = cube_scene()
    obs = rasterize(SimState.initial(scene), scene)
    # face spans x,y in [-0.5,0.5] at z=1.5 -> |u-64| <= 33.3 px
    center = obs.depth.values[44:85, 44:85]
    assert obs.depth.valid[44:85, 44:85].all()
    assert np.abs(center - 1.5).max() < 1e-4
    assert obs.seg.present_labels() == {1}


def test_cube_silhouette_is_centered():
    scene = cube_scene()
    m = rasterize(SimState.initial(scene), scene).seg.mask(1)
    rows, cols = np.nonzero(m)
    assert rows.mean() == pytest.approx(64, abs=0.5)
    assert cols.mean() == pytest.approx(64, abs=0.5)


def test_nearer_object_occludes():
    near = ObjectSpec(2, "near", TriMesh.box([0.4, 0.4, 0.4]), Pose6D([0.2, 0.0, 1.0]))
    scene = cube_scene(extra=(near,))
    obs = rasterize(SimState.initial(scene), scene)
    # pixel on the optical axis ray through the near box's left part
    assert obs.seg.labels[64, 70] == 2
    assert obs.depth.values[64, 70] == pytest.approx(0.8, abs=1e-4)
    assert obs.seg.labels[64, 40] == 1


def test_include_filters_objects():
    near = ObjectSpec(2, "near", TriMesh.box([0.4, 0.4, 0.4]), Pose6D([0.2, 0.0, 1.0]))
    scene = cube_scene(extra=(near,))
    obs = rasterize(SimState.initial(scene), scene, include=[1])
    assert obs.seg.present_labels() == {1}
    assert obs.depth.values[64, 70] == pytest.approx(1.5, abs=1e-4)


def test_ppm_round_trip(tmp_path):
    scene = cube_scene()
    obs = rasterize(SimState.initial(scene), scene)
    rgb = colorize(obs.depth, obs.seg)
    write_ppm(tmp_path / "a.ppm", rgb)
    assert np.array_equal(read_ppm(tmp_path / "a.ppm"), rgb)
