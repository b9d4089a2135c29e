from dataclasses import replace

import numpy as np
import pytest

from gazeload.core import load_session, save_session
from gazeload.errors import DataError
from gazeload.ivt import angular_velocity, detect_fixations
from gazeload.synth import SynthConfig, cohort_config, generate_cohort, generate_session


def test_deterministic():
    a, ea = generate_session(SynthConfig(duration_s=5, seed=3))
    b, eb = generate_session(SynthConfig(duration_s=5, seed=3))
    assert a.left_pupil_mm.tobytes() == b.left_pupil_mm.tobytes()
    assert a.left_dir.tobytes() == b.left_dir.tobytes() and ea == eb


def test_noiseless_shift_is_exact():
    base = SynthConfig(duration_s=10, noise_sd_mm=0.0, seed=1)
    low, _ = generate_session(base)
    high, _ = generate_session(replace(base, cl_label=1, fixation_dur_mean_ms=250.0))
    diff = high.left_pupil_mm.mean() - low.left_pupil_mm.mean()
    assert diff == pytest.approx(0.5, abs=1e-12)


def test_ivt_recovers_ground_truth():
    for label in (0, 1):
        s, truth = generate_session(SynthConfig(duration_s=60, cl_label=label, seed=5 + label))
        found = detect_fixations(s)
        starts = np.array([e.sample_range[0] for e in found])
        stops = np.array([e.sample_range[1] for e in found])
        hits = 0
        for e in truth:
            a, b = e.sample_range
            k = np.argmin(np.abs(starts - a))
            if abs(starts[k] - a) <= 2 and abs(stops[k] - b) <= 2:
                hits += 1
        assert hits >= 0.95 * len(truth)


def test_motion_and_duration_bounds():
    s, truth = generate_session(SynthConfig(duration_s=30, seed=2, fixation_dur_mean_ms=150))
    v = angular_velocity(s)
    inside = np.concatenate([v[a:b - 1] for a, b in (e.sample_range for e in truth)])
    assert inside.max() < 0.1 * 200
    assert all(e.duration_ms >= 60 for e in truth)
    assert np.all(np.diff(s.timestamp_us) > 0)
    assert np.allclose(np.linalg.norm(s.left_dir, axis=1), 1.0)


def test_high_fixations_longer():
    lo = generate_session(SynthConfig(duration_s=60, seed=1))[1]
    hi = generate_session(SynthConfig(duration_s=60, seed=1, cl_label=1))[1]
    assert np.mean([e.duration_ms for e in hi]) > np.mean([e.duration_ms for e in lo]) + 80


def test_cohort_shape_and_tlx():
    cohort = generate_cohort(10, 10, seed=4, base=SynthConfig(duration_s=2))
    assert len(cohort) == 20
    tlx = [m.tlx_mental for _, m in cohort]
    assert all(1 <= t <= 4 for t in tlx[:10]) and all(5 <= t <= 7 for t in tlx[10:])
    assert len({m.participant_id for _, m in cohort}) == 20


def test_participant_depends_only_on_seed_and_index():
    a = cohort_config(3, 2, 1.0, 9)
    b = cohort_config(3, 2, 1.0, 9)
    assert a == b and cohort_config(4, 2, 1.0, 9).seed != a.seed
    small = generate_cohort(2, 3, seed=9, base=SynthConfig(duration_s=2))
    big = generate_cohort(2, 6, seed=9, base=SynthConfig(duration_s=2))
    assert small[3][0].left_pupil_mm.tobytes() == big[3][0].left_pupil_mm.tobytes()


def test_zero_effect_is_label_free():
    cohort = generate_cohort(6, 6, effect=0.0, seed=2, base=SynthConfig(duration_s=20))
    means = np.array([s.left_pupil_mm.mean() for s, _ in cohort])
    assert abs(means[:6].mean() - means[6:].mean()) < 0.05
    cfgs = [cohort_config(k, 6, 0.0, 2) for k in range(12)]
    assert len({(c.fixation_dur_mean_ms, c.pupil_cl_shift_mm) for c in cfgs}) == 1


def test_output_loads_as_csv(tmp_path):
    s, _ = generate_session(SynthConfig(duration_s=1, seed=0))
    save_session(s, tmp_path / "s.csv", tmp_path / "s.manifest")
    back = load_session(tmp_path / "s.csv", tmp_path / "s.manifest")
    assert len(back) == 200


def test_rejects_bad_config():
    with pytest.raises(DataError):
        generate_session(SynthConfig(duration_s=0.5))
    with pytest.raises(DataError):
        SynthConfig(sampling_hz=0)
    with pytest.raises(DataError):
        generate_cohort(1, 0)
