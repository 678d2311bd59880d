import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from presstyle.data import GRAVITY, AttributeVector, DatasetManifest, load_sequence
from presstyle.errors import ScriptOutOfGridError
from presstyle.synth import (
    ACTIVITIES,
    HEEL_SHARE,
    Contact,
    GenerationConfig,
    MotionScript,
    generate_corpus,
    generate_sequence,
    make_footprint,
    make_script,
    roll_heel_share,
    sample_attributes,
)


def static_script(n=20, split=0.5):
    fr = (Contact("foot", -1, 0.0, 0.0, 1, split), Contact("foot", 1, 0.0, 0.0, 1, 1 - split))
    return MotionScript("act", n / 60, 60.0, 0, "still", [fr] * n)


def body(w=75.0, h=175.0, sex=1):
    return AttributeVector(sex, w, h)


def bbox_rows(mask):
    r = np.flatnonzero(mask.any(1))
    return r[-1] - r[0] + 1


def test_static_double_stance_force():
    seq = generate_sequence(static_script(), body(75.0))
    np.testing.assert_allclose(seq.total_force(), 735.75, atol=1e-3)


def test_weight_ratio_exact():
    s = make_script("walk", 3.0, seed=4)
    a = generate_sequence(s, body(65.0)).total_force()
    b = generate_sequence(s, body(75.0)).total_force()
    live = b > 0
    np.testing.assert_allclose(a[live] / b[live], 65 / 75, rtol=1e-9)
    assert np.all(a[~live] == 0)


def test_height_changes_footprint_not_timing():
    s = static_script()
    short, tall = generate_sequence(s, body(h=160.0)), generate_sequence(s, body(h=190.0))
    assert len(short) == len(tall)
    assert bbox_rows(tall.frames[0] > 0) > bbox_rows(short.frames[0] > 0)


def test_footprint_weights_sum_to_one():
    for h in (140.0, 175.0, 215.0):
        for d in (1, -1):
            fp = make_footprint(body(h=h), direction=d)
            assert abs(fp.weights.sum() - 1.0) < 1e-12
            assert fp.length_cells == pytest.approx(0.152 * h / 2)


def test_heel_roll_endpoints():
    assert roll_heel_share(0.0) == 1.0
    assert roll_heel_share(0.5) == HEEL_SHARE
    assert roll_heel_share(1.0) == 0.0


@pytest.mark.parametrize("activity", ACTIVITIES)
def test_script_invariants(activity):
    s = make_script(activity, 6.0, seed=11)
    assert s.n_frames == 360
    load = s.load_fractions()
    assert np.all(load <= 1.0 + 1e-12) and np.all(load >= 0)
    assert make_script(activity, 6.0, seed=11).frames == s.frames


@pytest.mark.parametrize("activity", ACTIVITIES)
def test_conservation_and_alignment(activity):
    s = make_script(activity, 5.0, seed=2)
    full = s.full_support()
    assert full.any()
    seqs = [generate_sequence(s, a) for a in (body(50.0, 150.0, 0), body(110.0, 200.0, 1))]
    for seq in seqs:
        w = seq.attributes.weight * GRAVITY
        np.testing.assert_allclose(seq.total_force()[full], w, rtol=1e-3)
        np.testing.assert_allclose(seq.total_force(), w * s.load_fractions(), rtol=1e-9, atol=1e-9)
        assert seq.frames.min() >= 0
    assert len(seqs[0]) == len(seqs[1])


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(ACTIVITIES), st.integers(0, 2**31 - 1), st.floats(130.0, 220.0))
def test_scripts_stay_on_grid(activity, seed, height):
    generate_sequence(make_script(activity, 4.0, seed=seed), body(h=height))


def test_monotone_in_weight_and_height():
    s = make_script("exercise", 3.0, seed=5)
    forces = [generate_sequence(s, body(w)).total_force().sum() for w in (55.0, 70.0, 85.0, 100.0)]
    assert np.all(np.diff(forces) > 0)
    areas = [(generate_sequence(s, body(h=h)).frames > 0).sum() for h in (150.0, 165.0, 180.0, 195.0)]
    assert np.all(np.diff(areas) >= 0)


def test_out_of_grid_reports_frame():
    fr = [(Contact("foot", 1, 0.0, 0.0, 1, 1.0),)] * 3 + [(Contact("foot", 1, 2.0, 0.0, 1, 1.0),)]
    with pytest.raises(ScriptOutOfGridError) as err:
        generate_sequence(MotionScript("walk", 4 / 60, 60.0, 0, "bad", fr), body())
    assert err.value.frame == 3


def test_unknown_activity():
    with pytest.raises(ValueError):
        make_script("swim")


def test_fps_mismatch():
    with pytest.raises(ValueError):
        generate_sequence(static_script(), body(), fps=30)


def test_attribute_sampler_statistics():
    rng = np.random.default_rng(7)
    h = np.array([a.height for a in sample_attributes(1, 1000, rng)])
    assert abs(h.mean() - 175) < 1.5
    assert abs(h.std() - 15) < 1.5
    assert np.all(np.abs(h - 175) <= 45)


def test_corpus_layout_and_determinism(tmp_path):
    cfg = GenerationConfig(subjects_per_sex=2, test_subjects_per_sex=1, unseen_scripts=True, duration=1.0, seed=3)
    m = generate_corpus(cfg, tmp_path / "a")
    assert len(m.split("train")) == 4 * 4
    assert len(m.split("test")) == 2 * 8
    again = generate_corpus(cfg, tmp_path / "b")
    for x, y in zip(m.entries, again.entries):
        assert x.path.name == y.path.name
        assert x.path.read_bytes() == y.path.read_bytes()
    loaded = DatasetManifest.load(tmp_path / "a" / "manifest.json")
    assert [e.subject_id for e in loaded.entries] == [e.subject_id for e in m.entries]
    # every subject replays the same timeline of a script
    walk = [e for e in m.entries if e.script == "walk1"]
    loads = [load_sequence(e.path).total_force() / (e.attributes.weight * GRAVITY) for e in walk]
    for lf in loads[1:]:
        np.testing.assert_allclose(lf, loads[0], atol=1e-6)  # files store float32


def test_generation_config_rejects_unknown_keys():
    with pytest.raises(ValueError):
        GenerationConfig.from_dict({"subjects": 3})
    cfg = GenerationConfig.from_dict(json.loads(json.dumps(GenerationConfig().to_dict())))
    assert cfg == GenerationConfig()
