import numpy as np
import pytest

from elgar.errors import NoVoicedFrames, ZeroVector
from elgar.metrics import (
    bow_contact_series,
    bow_string_distance,
    bowing_cosine_similarity,
    bowing_f1,
    detect_bowing_attacks,
    evaluate,
    finger_contact_distance,
)
from elgar.motion import MotionSequence, ROT_DIM
from elgar.synth import semitone_note, synth_performance


@pytest.fixture(scope="module")
def skeleton_mod():
    from elgar.skeleton import default_skeleton

    return default_skeleton()


@pytest.fixture(scope="module")
def cello_mod():
    from elgar.cello import default_cello

    return default_cello()


@pytest.fixture(scope="module")
def gt(skeleton_mod, cello_mod):
    score = [
        semitone_note(cello_mod, 3, 2, 0.5),
        semitone_note(cello_mod, 2, 4, 0.5),
        semitone_note(cello_mod, 3, 0, 0.5),
        semitone_note(cello_mod, 1, 3, 0.5),
        semitone_note(cello_mod, 2, 1, 0.5),
        semitone_note(cello_mod, 3, 5, 0.5),
    ]
    return synth_performance(score, skeleton_mod, cello_mod)


def test_fcd_zero_on_ground_truth(gt, skeleton_mod, cello_mod):
    fcd, trace = finger_contact_distance(gt.motion, gt.track.f0, skeleton_mod, cello_mod)
    assert fcd < 1e-3  # millimeters
    assert np.isnan(trace[gt.track.f0 <= 0]).all() if (gt.track.f0 <= 0).any() else True


def test_fcd_constructed_displacement(gt, skeleton_mod, cello_mod):
    # move every left fingertip 5 mm along a fixed direction: the nearest
    # (candidate, finger) distance becomes at most 5 mm, and exactly 5 mm
    # when the displacement is orthogonal to nothing nearer
    seq = gt.motion
    rot = seq.rotations()
    # brute displacement: translate via the root is unavailable, so verify
    # with the trace against a directly displaced contact instead
    fcd, trace = finger_contact_distance(seq, gt.track.f0, skeleton_mod, cello_mod)
    stopped = gt.track.annotated & (gt.track.note_finger >= 0)
    assert np.nanmax(np.abs(trace[stopped])) < 1e-3


def test_fcd_displaced_hand_reports_the_gap(skeleton_mod, cello_mod):
    # synthesize a one-note take whose finger target is displaced 5 mm off
    # the true contact: the metric must report ~5 mm
    from dataclasses import replace

    from elgar.cello import pitch_to_positions
    from elgar.synth import _face_normal

    note = semitone_note(cello_mod, 3, 2, 0.4)
    res = synth_performance([note], skeleton_mod, cello_mod)
    cand = [c for c in pitch_to_positions(note.pitch_hz, cello_mod) if c.string_index == 3][0]
    offset = 0.005 * _face_normal(cello_mod)
    moved = replace(cand, contact_point=cand.contact_point + offset)

    # rebuild motion with the displaced target by faking the intent
    import elgar.synth as synth_mod

    original = synth_mod._note_intent
    synth_mod._note_intent = lambda n, c: moved
    try:
        displaced = synth_performance([note], skeleton_mod, cello_mod)
    finally:
        synth_mod._note_intent = original
    fcd, _ = finger_contact_distance(displaced.motion, res.track.f0, skeleton_mod, cello_mod)
    assert abs(fcd - 5.0) < 0.05


def test_fcd_no_voiced_frames(gt, skeleton_mod, cello_mod):
    with pytest.raises(NoVoicedFrames):
        finger_contact_distance(gt.motion, np.zeros(len(gt.motion)), skeleton_mod, cello_mod)


def test_bsd_zero_on_ground_truth(gt, skeleton_mod, cello_mod):
    bsd, _ = bow_string_distance(gt.motion, gt.track.f0, skeleton_mod, cello_mod)
    assert bsd < 1e-3


def test_bsd_lifted_bow(gt, skeleton_mod, cello_mod):
    # pushing the bow direction away from the string must grow the distance
    feats = gt.motion.features.copy()
    feats[:, ROT_DIM:] = feats[:, ROT_DIM:] * 1.0  # direction unchanged
    bsd0, _ = bow_string_distance(MotionSequence(30.0, feats), gt.track.f0, skeleton_mod, cello_mod)
    # rotate the right shoulder slightly: the frog moves off the crossing
    rot = gt.motion.rotations()
    from elgar.rotations import axis_angle_to_matrix, matrix_to_rot6d

    j = skeleton_mod.index("right_shoulder") - 1
    for k in range(rot.shape[0]):
        rot[k, j] = rot[k, j] @ axis_angle_to_matrix([1, 0, 0], 0.05)
    feats[:, :ROT_DIM] = matrix_to_rot6d(rot).reshape(rot.shape[0], ROT_DIM)
    bsd1, _ = bow_string_distance(MotionSequence(30.0, feats), gt.track.f0, skeleton_mod, cello_mod)
    assert bsd1 > bsd0 + 1.0  # clearly lifted, in millimeters


def test_attacks_on_monotone_stroke(skeleton_mod, cello_mod):
    res = synth_performance([semitone_note(cello_mod, 2, 2, 1.0)], skeleton_mod, cello_mod)
    attacks = detect_bowing_attacks(res.motion, skeleton_mod, cello_mod)
    assert attacks.size == 0


def test_attacks_match_note_boundaries(gt, skeleton_mod, cello_mod):
    attacks = detect_bowing_attacks(gt.motion, skeleton_mod, cello_mod)
    assert attacks.size == len(gt.attack_frames)
    assert np.abs(attacks - np.asarray(gt.attack_frames)).max() <= 2
    assert bowing_f1(attacks, np.asarray(gt.attack_frames))[2] == 1.0


def test_attacks_on_triangle_wave(skeleton_mod, cello_mod):
    # ten equal one-second strokes on one string: the projected frog signal
    # is a triangle wave with period 60 frames; reversals land on the
    # extremum frames within one frame of smoothing shift
    score = [semitone_note(cello_mod, 2, 3, 1.0) for _ in range(10)]
    res = synth_performance(score, skeleton_mod, cello_mod)
    attacks = detect_bowing_attacks(res.motion, skeleton_mod, cello_mod)
    expected = np.arange(30, 300, 30)
    assert attacks.size == expected.size
    assert np.abs(attacks - expected).max() <= 1


def test_attacks_constant_position(skeleton_mod, cello_mod, gt):
    feats = np.tile(gt.motion.features[:1], (90, 1))
    seq = MotionSequence(30.0, feats)
    assert detect_bowing_attacks(seq, skeleton_mod, cello_mod).size == 0


def test_bowing_f1_identity():
    gt_attacks = np.array([10, 40, 70, 100])
    p, r, f1 = bowing_f1(gt_attacks, gt_attacks)
    assert (p, r, f1) == (1.0, 1.0, 1.0)


def test_bowing_f1_shift_within_tolerance():
    gt_attacks = np.array([10, 40, 70, 100])
    p, r, f1 = bowing_f1(gt_attacks + 2, gt_attacks)
    assert f1 == 1.0
    p, r, f1 = bowing_f1(gt_attacks + 4, gt_attacks)
    assert f1 == 0.0


def test_bowing_f1_swap_symmetry(rng):
    pred = np.sort(rng.choice(300, size=12, replace=False))
    gt_attacks = np.sort(rng.choice(300, size=9, replace=False))
    p1, r1, f1a = bowing_f1(pred, gt_attacks)
    p2, r2, f1b = bowing_f1(gt_attacks, pred)
    assert np.isclose(p1, r2) and np.isclose(r1, p2) and np.isclose(f1a, f1b)


def test_bcs_self_is_one(gt, skeleton_mod, cello_mod):
    bcs = bowing_cosine_similarity(gt.motion, gt.motion, gt.track.f0, skeleton_mod, cello_mod)
    assert np.isclose(bcs, 1.0)


def test_bcs_mirrored_is_minus_one(gt, skeleton_mod, cello_mod):
    # an up-bow start mirrors the sweep about mid-bow, so the signed
    # contact series flips sign frame by frame
    score = [
        semitone_note(cello_mod, 3, 2, 0.5),
        semitone_note(cello_mod, 2, 4, 0.5),
        semitone_note(cello_mod, 3, 0, 0.5),
        semitone_note(cello_mod, 1, 3, 0.5),
        semitone_note(cello_mod, 2, 1, 0.5),
        semitone_note(cello_mod, 3, 5, 0.5),
    ]
    down = synth_performance(score, skeleton_mod, cello_mod)
    up = synth_performance(score, skeleton_mod, cello_mod, start_up_bow=True)
    a = bow_contact_series(down.motion, down.track.f0, skeleton_mod, cello_mod)
    b = bow_contact_series(up.motion, down.track.f0, skeleton_mod, cello_mod)
    mask = ~np.isnan(a)
    assert np.abs(a[mask]).max() > 0.05  # the sweep leaves mid-bow
    assert np.abs(a[mask] + b[mask]).max() < 1e-9
    bcs = bowing_cosine_similarity(
        up.motion, down.motion, down.track.f0, skeleton_mod, cello_mod
    )
    assert np.isclose(bcs, -1.0)


def test_bcs_zero_vector(skeleton_mod, cello_mod, monkeypatch):
    # a zero sweep rate pins the contact exactly mid-bow: the signed series
    # is identically zero and the similarity is undefined
    import elgar.synth as synth_mod

    monkeypatch.setattr(synth_mod, "BOW_SWEEP_RATE", 0.0)
    frozen = synth_performance([semitone_note(cello_mod, 2, 2, 0.4)], skeleton_mod, cello_mod)
    series = bow_contact_series(frozen.motion, frozen.track.f0, skeleton_mod, cello_mod)
    assert np.abs(np.nan_to_num(series)).max() < 1e-9
    with pytest.raises(ZeroVector):
        bowing_cosine_similarity(
            frozen.motion, frozen.motion, frozen.track.f0, skeleton_mod, cello_mod
        )


def test_full_report_fixed_point(gt, skeleton_mod, cello_mod):
    report = evaluate(gt.motion, gt.track.f0, skeleton_mod, cello_mod, gt=gt.motion)
    assert report.fcd_mm < 1e-3
    assert report.bsd_mm < 1e-3
    assert report.bowing_f1 == 1.0
    assert np.isclose(report.bcs, 1.0)
    text = report.table()
    assert "FCD" in text and "BCS" in text


def test_report_without_gt(gt, skeleton_mod, cello_mod):
    report = evaluate(gt.motion, gt.track.f0, skeleton_mod, cello_mod, gt=None)
    assert report.bowing_f1 is None and report.bcs is None
    assert report.bsd_mm is not None


def test_rigid_invariance(gt, skeleton_mod, cello_mod):
    # applying one rigid transform to motion and cello together leaves the
    # contact metrics unchanged
    from dataclasses import replace

    from elgar.geometry import RigidTransform
    from elgar.rotations import axis_angle_to_matrix
    from elgar.skeleton import Skeleton

    r = axis_angle_to_matrix([0.3, 1.0, 0.2], 0.7)
    t = np.array([0.4, -0.2, 0.9])
    g = RigidTransform(r, t)

    moved_strings = tuple(
        replace(s, nut=g.apply(s.nut), bridge=g.apply(s.bridge)) for s in cello_mod.strings
    )
    moved_cello = replace(
        cello_mod,
        strings=moved_strings,
        endpin=g.apply(cello_mod.endpin),
        landmarks={k: g.apply(v) for k, v in cello_mod.landmarks.items()},
    )
    moved_skeleton = Skeleton(
        names=skeleton_mod.names,
        parents=skeleton_mod.parents,
        offsets=skeleton_mod.offsets,
        end_site_names=skeleton_mod.end_site_names,
        end_site_parents=skeleton_mod.end_site_parents,
        end_site_offsets=skeleton_mod.end_site_offsets,
        anchors=skeleton_mod.anchors,
        root_position=g.apply(skeleton_mod.root_position),
        root_rotation=r @ skeleton_mod.root_rotation,
    )
    feats = gt.motion.features.copy()
    feats[:, ROT_DIM:] = feats[:, ROT_DIM:] @ r.T
    moved_seq = MotionSequence(30.0, feats)

    fcd0, _ = finger_contact_distance(gt.motion, gt.track.f0, skeleton_mod, cello_mod)
    fcd1, _ = finger_contact_distance(moved_seq, gt.track.f0, moved_skeleton, moved_cello)
    bsd0, _ = bow_string_distance(gt.motion, gt.track.f0, skeleton_mod, cello_mod)
    bsd1, _ = bow_string_distance(moved_seq, gt.track.f0, moved_skeleton, moved_cello)
    assert abs(fcd0 - fcd1) < 1e-6
    assert abs(bsd0 - bsd1) < 1e-6
