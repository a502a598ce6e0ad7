import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aaii.augment import (MixError, MixKind, mix_clips, plan_adversarial, plan_stratified,
                          realize_plan, stratified_training_set)
from aaii.dataset import AudioClip, DatasetError, Role, SampleRateMismatch, write_wav

from conftest import make_record


def const(v, n=100, rate=1000):
    return AudioClip(np.full(n, v, dtype=float), rate, f"c{v}")


def records(K, per_ind, role):
    return [make_record(f"{role.value}_{i}_{k}.wav", f"ind{i}", role)
            for i in range(K) for k in range(per_ind)]


class TestMix:
    def test_equal_constants(self):
        np.testing.assert_allclose(mix_clips(const(0.4), const(0.4)).samples, 0.4)

    def test_silent_background_halves(self):
        fg = AudioClip(np.linspace(-1, 1, 50), 1000)
        np.testing.assert_allclose(mix_clips(fg, const(0.0, 50)).samples, 0.5 * fg.samples)

    def test_background_wraps(self):
        fg = AudioClip(np.zeros(3000), 1000)
        bg = AudioClip(np.arange(2000) / 2000.0, 1000)
        out = mix_clips(fg, bg).samples
        assert out.size == 3000
        np.testing.assert_allclose(out[2000:], 0.5 * bg.samples[:1000])
        np.testing.assert_allclose(out[:2000], 0.5 * bg.samples)

    def test_longer_background_is_cut(self):
        out = mix_clips(const(0.0, 10), AudioClip(np.arange(30) / 30.0, 1000))
        assert out.samples.size == 10

    def test_rate_mismatch(self):
        with pytest.raises(SampleRateMismatch):
            mix_clips(const(0.1, rate=1000), const(0.1, rate=2000))

    @given(st.integers(1, 400), st.integers(0, 2 ** 32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_commutative_at_equal_length_and_never_clamps(self, n, seed):
        rng = np.random.default_rng(seed)
        a = AudioClip(rng.uniform(-1, 1, n), 8000)
        b = AudioClip(rng.uniform(-1, 1, n), 8000)
        ab, clamped = mix_clips(a, b, return_clamped=True)
        ba = mix_clips(b, a)
        np.testing.assert_array_equal(ab.samples, ba.samples)
        assert clamped == 0

    def test_clamp_counter_counts(self):
        _, clamped = mix_clips(const(1.0), const(1.0), gain=0.9, return_clamped=True)
        assert clamped == 100


class TestStratified:
    def test_size_factor_K(self):
        fg = records(13, 8, Role.FOREGROUND)[:100]
        bg = records(13, 2, Role.BACKGROUND)
        plan = plan_stratified(fg, bg, seed=1)
        K = len({r.individual for r in fg})
        assert K == 13
        assert len(stratified_training_set(fg, plan)) == 100 * 13
        assert len(stratified_training_set(fg, plan, include_originals=False)) == 100 * 12

    def test_each_other_individual_exactly_once(self):
        fg = records(4, 3, Role.FOREGROUND)
        bg = records(4, 5, Role.BACKGROUND)
        plan = plan_stratified(fg, bg, seed=0)
        assert plan.kind is MixKind.STRATIFIED
        for f in fg:
            owners = sorted(e.background.individual for e in plan.entries if e.foreground is f)
            assert owners == sorted({r.individual for r in fg} - {f.individual})
        assert all(e.label == e.foreground.individual for e in plan.entries)

    def test_K2(self):
        fg = records(2, 3, Role.FOREGROUND)
        plan = plan_stratified(fg, records(2, 1, Role.BACKGROUND))
        assert len(plan) == len(fg)

    def test_deterministic(self):
        fg, bg = records(5, 4, Role.FOREGROUND), records(5, 6, Role.BACKGROUND)
        assert plan_stratified(fg, bg, 7) == plan_stratified(fg, bg, 7)
        assert plan_stratified(fg, bg, 7) != plan_stratified(fg, bg, 8)

    def test_missing_backgrounds(self):
        fg = records(3, 2, Role.FOREGROUND)
        bg = [r for r in records(3, 2, Role.BACKGROUND) if r.individual != "ind1"]
        with pytest.raises(DatasetError, match="ind1"):
            plan_stratified(fg, bg)


class TestAdversarial:
    def test_same_size_no_own_background(self):
        fg = records(13, 16, Role.FOREGROUND)[:201]
        bg = records(13, 4, Role.BACKGROUND)
        for seed in range(20):
            plan = plan_adversarial(fg, bg, seed)
            assert len(plan) == 201
            assert [e.foreground for e in plan.entries] == fg
            assert all(e.background.individual != e.foreground.individual for e in plan.entries)

    def test_K2_uses_other(self):
        fg = records(2, 5, Role.FOREGROUND)
        plan = plan_adversarial(fg, records(2, 2, Role.BACKGROUND))
        for e in plan.entries:
            assert e.background.individual == ("ind1" if e.foreground.individual == "ind0" else "ind0")

    def test_only_own_backgrounds(self):
        fg = records(2, 2, Role.FOREGROUND)
        with pytest.raises(DatasetError):
            plan_adversarial(fg, records(1, 3, Role.BACKGROUND))

    def test_choice_roughly_uniform(self):
        fg = [make_record("f.wav", "ind0")] * 3000
        plan = plan_adversarial(fg, records(4, 1, Role.BACKGROUND), seed=3)
        counts = np.bincount([int(e.background.individual[3:]) for e in plan.entries], minlength=4)
        assert counts[0] == 0
        assert np.all(np.abs(counts[1:] - 1000) < 120)


class TestRealize:
    def test_empty(self):
        plan = plan_adversarial([], records(2, 1, Role.BACKGROUND))
        assert realize_plan(plan) == []

    def test_one_entry(self, tmp_path):
        fg = make_record(tmp_path / "f.wav", "A")
        bg = make_record(tmp_path / "b.wav", "B", Role.BACKGROUND)
        write_wav(fg.path, np.full(2000, 0.5), 8000)
        write_wav(bg.path, np.full(500, -0.25), 8000)
        plan = plan_adversarial([fg], [bg, make_record(tmp_path / "own.wav", "A", Role.BACKGROUND)])
        out = realize_plan(plan)
        assert len(out) == 1
        clip, label = out[0]
        assert label == "A"
        np.testing.assert_allclose(clip.samples, 0.125, atol=1 / 32768)

    def test_load_error_has_context(self, tmp_path):
        fg = make_record(tmp_path / "missing.wav", "A")
        bg = make_record(tmp_path / "b.wav", "B", Role.BACKGROUND)
        plan = plan_adversarial([fg], [bg, make_record(tmp_path / "own.wav", "A", Role.BACKGROUND)])
        with pytest.raises(MixError, match="plan entry 0"):
            realize_plan(plan)


def test_plan_csv():
    fg, bg = records(2, 2, Role.FOREGROUND), records(2, 1, Role.BACKGROUND)
    plan = plan_stratified(fg, bg, seed=5)
    buf = io.StringIO()
    plan.write_csv(buf)
    rows = list(csv.DictReader(io.StringIO(buf.getvalue())))
    assert list(rows[0]) == ["fg_path", "bg_path", "label", "kind", "seed"]
    assert len(rows) == 4
    assert {r["kind"] for r in rows} == {"stratified"}
    assert {r["seed"] for r in rows} == {"5"}
