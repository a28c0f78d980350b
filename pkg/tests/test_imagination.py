import numpy as np
import pytest

from videoguide.errors import AllRejected, ConfigurationError, ProtocolError
from videoguide.geometry import Pose6D, TriMesh
from videoguide.imagination import (NoiseModel, OracleVerifier, OracleVideoProvider, SelectionLog, VideoSample,
                                    VideoScore, confusion_metrics, derive_seed, generate, parse_rubric_reply,
                                    rejection_sample, rewrite_prompt, select, verifier_metrics)
from videoguide.render import colorize, rasterize
from videoguide.sim import ObjectSpec, SceneConfig, SimState
from videoguide.taskfile import load_task

from conftest import small_camera


@pytest.fixture(scope="module")
def hammer():
    return load_task("hammer-peg")


@pytest.fixture(scope="module")
def clean_samples(hammer):
    prov = OracleVideoProvider(hammer.scene, hammer.script(), NoiseModel(0.0), hammer.segment_duration)
    init = rasterize(SimState.initial(hammer.scene), hammer.scene)
    return generate(prov, "p", init, n=3, seed=5)


def _frame(n=2):
    return tuple(np.zeros((4, 4, 3), np.uint8) for _ in range(n))


def _sample(i=0):
    return VideoSample(_frame(), "p", "test", i, i)


def knife_scene():
    box = TriMesh.box([0.1] * 3)
    return SceneConfig((ObjectSpec(1, "knife", box, Pose6D([0, 0, 1]), actuator=True),
                        ObjectSpec(2, "dough", box, Pose6D([0.3, 0, 1]), target=True)), small_camera())


def test_rewrite_prompt_names_objects_and_is_deterministic():
    scene = knife_scene()
    a = rewrite_prompt("cut the dough", scene)
    assert "knife" in a and "dough" in a
    assert a == rewrite_prompt("cut the dough", scene)


def test_rewrite_prompt_rejects_empty():
    with pytest.raises(ConfigurationError):
        rewrite_prompt("   ", knife_scene())


def test_noise_free_frames_equal_script_renders(hammer, clean_samples):
    s = clean_samples[1]  # candidate order: hover, demo, intruder
    take = s.oracle
    for f in (0, 17, 39):
        obs = rasterize(take.states[f], hammer.scene)
        assert obs.depth == take.depth[f]
        assert obs.seg == take.labels_map[f]
        assert np.array_equal(colorize(obs.depth, obs.seg), s.frames[f])


def test_generate_n_distinct_seeds(clean_samples):
    assert len(clean_samples) == 3
    assert len({s.seed for s in clean_samples}) == 3


def test_failure_script_scores_goal_two(clean_samples):
    hover = clean_samples[0]
    assert hover.oracle.variant == "hover"
    assert OracleVerifier().verify(hover, "").goal_reached == 2


def test_success_script_scores_fifteen(clean_samples):
    sc = OracleVerifier().verify(clean_samples[1], "")
    assert (sc.match_description, sc.hand_motion, sc.goal_reached, sc.total) == (6, 3, 6, 15)


def test_new_object_forces_minimum(clean_samples):
    sc = OracleVerifier().verify(clean_samples[2], "")
    assert sc.new_object_detected and sc.total == 5 and not sc.accepted


def test_accept_threshold_is_strict():
    assert not VideoScore(12).accepted
    assert VideoScore(13).accepted


@pytest.mark.parametrize("totals,winner", [((13, 9, 15), 2), ((14, 14), 0)])
def test_select(totals, winner):
    scored = [(_sample(i), VideoScore(t)) for i, t in enumerate(totals)]
    assert select(scored).sample.index == winner


def test_select_all_rejected():
    with pytest.raises(AllRejected) as e:
        select([(_sample(0), VideoScore(10)), (_sample(1), VideoScore(11))])
    assert e.value.scores == [10, 11]


def test_score_component_ranges():
    with pytest.raises(ProtocolError):
        VideoScore(15, 7, 3, 5)
    with pytest.raises(ProtocolError):
        VideoScore(14, 6, 3, 6)
    with pytest.raises(ProtocolError):
        VideoScore(16)
    with pytest.raises(ProtocolError):
        VideoScore(12, 6, None, None)


def test_parse_rubric_reply_variants():
    full = "match_description: 5/6\nhand_motion: 3/3\ngoal_reached: 6/6\nscore: 14/15"
    s = parse_rubric_reply(full)
    assert (s.total, s.match_description, s.hand_motion, s.goal_reached) == (14, 5, 3, 6)
    assert parse_rubric_reply("Looks fine.\nscore: 13/15").total == 13
    assert parse_rubric_reply("new_object: yes\nscore: 14/15").total == 5


@pytest.mark.parametrize("reply", ["no score here", "score: 17/15", "score: 3/15", None])
def test_parse_rubric_reply_rejects_malformed(reply):
    with pytest.raises(ProtocolError) as e:
        parse_rubric_reply(reply)
    assert e.value.raw is not None


def test_inconsistent_components_fall_back_to_total():
    s = parse_rubric_reply("match_description: 2/6 hand_motion: 1/3 goal_reached: 2/6\nscore: 14/15")
    assert s.total == 14 and s.match_description is None


def test_confusion_metrics_examples():
    m = confusion_metrics([True] * 5 + [False], [True] * 4 + [False, True])
    assert (m.tp, m.fp, m.fn) == (4, 1, 1)
    assert m.precision == pytest.approx(0.8) and m.recall == pytest.approx(0.8) and m.f1 == pytest.approx(0.8)
    perfect = confusion_metrics([True, False], [True, False])
    assert (perfect.precision, perfect.recall, perfect.f1) == (1.0, 1.0, 1.0)


def test_verifier_metrics_on_oracle_samples(clean_samples):
    labeled = [(s, s.oracle.variant == "demo") for s in clean_samples]
    m = verifier_metrics(labeled, OracleVerifier())
    assert (m.precision, m.recall, m.f1) == (1.0, 1.0, 1.0)


def test_rejection_sampling_picks_success_at_noise_zero(hammer):
    prov = OracleVideoProvider(hammer.scene, hammer.script(), NoiseModel(0.0), hammer.segment_duration)
    init = rasterize(SimState.initial(hammer.scene), hammer.scene)
    log = SelectionLog()
    gv = rejection_sample(prov, OracleVerifier(), "p", "d", init, n=4, seed=1, log=log)
    assert gv.sample.oracle.variant == "demo"
    assert gv.score.total == 15
    assert log.rejected == 2


def test_noise_model_draws_are_seeded(hammer):
    prov = OracleVideoProvider(hammer.scene, hammer.script(), NoiseModel(1.0), hammer.segment_duration)
    a = prov.generate("p", None, 1, seed=3, offset=1)[0]
    b = prov.generate("p", None, 1, seed=3, offset=1)[0]
    c = prov.generate("p", None, 1, seed=4, offset=1)[0]
    assert all(np.array_equal(x, y) for x, y in zip(a.frames, b.frames))
    assert not all(np.array_equal(x, y) for x, y in zip(a.frames, c.frames))


def test_noise_mask_perturbation_bounded(hammer):
    prov = OracleVideoProvider(hammer.scene, hammer.script(), NoiseModel(1.0), hammer.segment_duration)
    take = prov.generate("p", None, 1, seed=3, offset=1)[0].oracle
    act = hammer.scene.actuator.id
    for f in range(0, 40, 7):
        clean = take.labels_map[f].mask(act)
        noisy = take.masks[act][f]
        from scipy import ndimage
        assert not (noisy & ~ndimage.binary_dilation(clean, iterations=2)).any()
        assert not (ndimage.binary_erosion(clean, iterations=2) & ~noisy).any()


def test_derive_seed_is_stable():
    assert derive_seed("video", 1, 2) == derive_seed("video", 1, 2)
    assert derive_seed("video", 1, 2) != derive_seed("video", 2, 1)


def test_video_sample_needs_two_frames():
    with pytest.raises(ConfigurationError):
        VideoSample(_frame(1), "p", "t", 0)
