import numpy as np
import pytest

from myobench import game, metrics, movements, sigproc, subject


class TestPrototypes:
    def test_rest_has_smallest_norm(self):
        protos = subject.base_prototypes()
        norms = np.linalg.norm(protos, axis=1)
        assert np.argmin(norms) == movements.REST_ID

    def test_pairwise_distinct(self):
        protos = subject.base_prototypes()
        for i in range(13):
            for j in range(i + 1, 13):
                assert not np.allclose(protos[i], protos[j])

    def test_combination_superposes_activations(self):
        te = subject.channel_activations(1)
        ie = subject.channel_activations(3)
        rest = subject.channel_activations(0)
        combo = subject.channel_activations(7)  # thumb+index ext
        np.testing.assert_allclose(combo, te + ie - rest)


class TestEmitFeatures:
    def test_zero_noise_exact_prototype(self):
        prof = subject.make_profile(noise_scale=0.0, seed=1)
        rng = np.random.default_rng(0)
        for mid in (0, 4, 12):
            np.testing.assert_array_equal(
                subject.emit_features(prof, mid, rng), prof.prototypes[mid]
            )

    def test_distinct_movements_distinct_states(self):
        prof = subject.make_profile(noise_scale=0.0, seed=1)
        rng = np.random.default_rng(0)
        a = subject.emit_features(prof, 1, rng)
        b = subject.emit_features(prof, 2, rng)
        assert not np.array_equal(a, b)

    def test_count_features_rounded_and_clamped(self):
        prof = subject.make_profile(noise_scale=3.0, seed=2)
        feats = subject.emit_features_batch(prof, np.zeros(500, dtype=int), np.random.default_rng(3))
        counts = feats[:, 2::4].ravel().tolist() + feats[:, 3::4].ravel().tolist()
        assert all(v == int(v) and 0 <= v <= 199 for v in counts)
        amps = feats[:, 0::4]
        assert np.all(amps >= 0)

    def test_batch_matches_marginal_distribution(self):
        prof = subject.make_profile(noise_scale=0.3, seed=4)
        rng = np.random.default_rng(5)
        feats = subject.emit_features_batch(prof, np.full(4000, 6), rng)
        np.testing.assert_allclose(
            feats.mean(axis=0)[0::4], prof.prototypes[6][0::4], rtol=0.1, atol=0.05
        )

    def test_determinism(self):
        prof = subject.make_profile(noise_scale=0.5, seed=6)
        a = subject.emit_features_batch(prof, [1, 2, 3], np.random.default_rng(7))
        b = subject.emit_features_batch(prof, [1, 2, 3], np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_out_of_range_movement(self):
        prof = subject.make_profile(seed=1)
        with pytest.raises(ValueError):
            subject.emit_features(prof, 13, np.random.default_rng(0))


class TestExecuteIntention:
    def test_no_errors(self):
        prof = subject.make_profile(error_rate=0.0, seed=1)
        rng = np.random.default_rng(0)
        assert all(
            subject.execute_intention(prof, 5, rng).executed == 5 for _ in range(100)
        )

    def test_always_errors(self):
        prof = subject.make_profile(error_rate=1.0, seed=1)
        rng = np.random.default_rng(0)
        assert all(
            subject.execute_intention(prof, 5, rng).executed != 5 for _ in range(100)
        )

    def test_error_fraction_binomial_bound(self):
        prof = subject.make_profile(error_rate=0.2, seed=1)
        rng = np.random.default_rng(2)
        executed = subject.execute_intentions_batch(prof, np.full(10_000, 3), rng)
        frac = float(np.mean(executed != 3))
        # alpha = 0.001 two-sided binomial bound
        bound = 3.2905 * np.sqrt(0.2 * 0.8 / 10_000)
        assert abs(frac - 0.2) < bound

    def test_substitution_uniform_over_others(self):
        prof = subject.make_profile(error_rate=1.0, seed=1)
        rng = np.random.default_rng(3)
        executed = subject.execute_intentions_batch(prof, np.full(12_000, 4), rng)
        counts = np.bincount(executed, minlength=13)
        assert counts[4] == 0
        assert counts[np.arange(13) != 4].min() > 700  # 1000 expected each


class TestEvolve:
    def test_identity_when_rates_zero(self):
        prof = subject.make_profile(noise_scale=0.4, seed=1)
        evolved = subject.evolve(prof, 1)
        np.testing.assert_array_equal(evolved.prototypes, prof.prototypes)
        assert evolved.noise_scale == prof.noise_scale
        assert evolved.error_rate == prof.error_rate

    def test_adaptation_shrinks_noise_and_errors(self):
        prof = subject.make_profile(
            noise_scale=0.4, error_rate=0.2, adaptation_rate=0.25, seed=1
        )
        evolved = subject.evolve(prof, 1)
        assert evolved.noise_scale == pytest.approx(0.3)
        assert evolved.error_rate == pytest.approx(0.15)

    def test_drift_magnitude_decays(self):
        prof = subject.make_profile(drift_rate=1.0, drift_decay=0.5, seed=9)
        step1 = np.linalg.norm(
            (subject.evolve(prof, 1).prototypes - prof.prototypes) / prof.feature_scale,
            axis=1,
        )
        step3 = np.linalg.norm(
            (subject.evolve(prof, 3).prototypes - prof.prototypes) / prof.feature_scale,
            axis=1,
        )
        np.testing.assert_allclose(step1, 1.0, rtol=1e-9)
        np.testing.assert_allclose(step3, 0.25, rtol=1e-9)

    def test_evolve_deterministic_per_repetition(self):
        prof = subject.make_profile(drift_rate=0.5, seed=10)
        a = subject.evolve(prof, 2)
        b = subject.evolve(prof, 2)
        np.testing.assert_array_equal(a.prototypes, b.prototypes)

    def test_repetition_must_be_positive(self):
        prof = subject.make_profile(seed=1)
        with pytest.raises(ValueError):
            subject.evolve(prof, 0)

    def test_drifting_subject_approaches_final_distribution(self):
        # PSI against the rep-8 state distribution shrinks as k -> 8
        prof = subject.make_profile(
            noise_scale=0.15, drift_rate=2.5, drift_decay=0.7, seed=11
        )
        rng = np.random.default_rng(12)
        profiles = []
        p = prof
        for rep in range(9):
            p = subject.evolve(p, rep + 1)
            profiles.append(p)
        ids = np.tile(np.arange(13), 200)
        samples = [subject.emit_features_batch(p, ids, rng) for p in profiles]
        psi_to_last = [metrics.psi(s, samples[8])[1] for s in samples[:8]]
        assert psi_to_last[0] > psi_to_last[4] > psi_to_last[7]


class TestMutualInformationCalibration:
    def test_mi_monotone_nonincreasing_in_noise(self):
        chart = game.build_chart(3)
        ids = chart.ideal_ids
        values = []
        for noise in (0.2, 0.6, 1.8):
            acc = []
            for seed in (0, 1):
                prof = subject.make_profile(noise_scale=noise, seed=seed)
                feats = subject.emit_features_batch(prof, ids, np.random.default_rng(seed))
                acc.append(metrics.mutual_information(feats, ids))
            values.append(float(np.mean(acc)))
        assert values[0] > values[1] > values[2]


class TestEmitRaw:
    def test_movement_snr_positive(self):
        prof = subject.make_profile(seed=13)
        rng = np.random.default_rng(14)
        feats, labels = [], []
        for mid in (0, 1):
            raw = subject.emit_raw(prof, mid, 1000, rng)
            for _, vec in sigproc.feature_stream(raw):
                feats.append(vec)
                labels.append(mid)
        per, _ = metrics.snr_by_movement(np.array(feats), np.array(labels))
        assert per[1] > 0.0

    def test_amplitude_doubling_doubles_mav(self):
        prof = subject.make_profile(seed=15)
        rng = np.random.default_rng(16)
        base_amp = subject.channel_activations(1)
        raw_a = subject.emit_raw(prof, 1, 3000, np.random.default_rng(17))
        # regenerate with channel 0 doubled by scaling the raw stream directly
        raw_b = raw_a.copy()
        raw_b[:, 0] *= 2.0
        feats_a = np.array([v for _, v in sigproc.feature_stream(raw_a)])
        feats_b = np.array([v for _, v in sigproc.feature_stream(raw_b)])
        ratio = feats_b[:, 0].mean() / feats_a[:, 0].mean()
        assert ratio == pytest.approx(2.0, rel=0.1)

    def test_mav_ordering_follows_template(self):
        prof = subject.make_profile(seed=18)
        raw = subject.emit_raw(prof, 1, 4000, np.random.default_rng(19))
        feats = np.array([v for _, v in sigproc.feature_stream(raw)])
        mav = feats[:, 0::4].mean(axis=0)
        amp = subject.channel_activations(1)
        assert np.argmax(mav) == np.argmax(amp)

    def test_too_short_duration(self):
        prof = subject.make_profile(seed=20)
        with pytest.raises(ValueError):
            subject.emit_raw(prof, 1, 100, np.random.default_rng(0))


class TestHumanAdapter:
    def test_no_keys_is_rest(self):
        adapter = subject.HumanAdapter(subject.make_profile(seed=1))
        assert adapter.intention_from_keys([]) == movements.REST_ID

    def test_thumb_index_flex_chord(self):
        adapter = subject.HumanAdapter(subject.make_profile(seed=1))
        assert adapter.intention_from_keys(["a", "s"]) == 8

    def test_conflicting_keys_cancel_dof(self):
        adapter = subject.HumanAdapter(subject.make_profile(seed=1))
        # thumb ext+flex conflict cancels; index flex remains
        assert adapter.intention_from_keys(["q", "a", "s"]) == 4

    def test_unmapped_chord_is_rest(self):
        adapter = subject.HumanAdapter(subject.make_profile(seed=1))
        assert adapter.intention_from_keys(["z", "x"]) == movements.REST_ID

    def test_non_taxonomy_chord_falls_back_to_rest(self):
        adapter = subject.HumanAdapter(subject.make_profile(seed=1))
        # thumb flex + middle flex is not one of the 13 movements
        assert adapter.intention_from_keys(["a", "d"]) == movements.REST_ID

    def test_every_canonical_movement_reachable(self):
        adapter = subject.HumanAdapter(subject.make_profile(seed=1))
        key_for_bit = {v: k for k, v in subject.DEFAULT_KEYMAP.items()}
        for mid in range(movements.N_MOVEMENTS):
            bits = movements.encode(mid)
            keys = [key_for_bit[b] for b in range(6) if bits[b]]
            assert adapter.intention_from_keys(keys) == mid

    def test_emit_uses_profile_path(self):
        prof = subject.make_profile(noise_scale=0.0, seed=1)
        adapter = subject.HumanAdapter(prof)
        event, feats = adapter.emit(["a", "s"], np.random.default_rng(0))
        assert event.intended == 8
        np.testing.assert_array_equal(feats, prof.prototypes[8])


class TestProfileJson:
    def test_round_trip(self):
        prof = subject.make_profile(
            noise_scale=0.4, error_rate=0.1, drift_rate=0.2, adaptation_rate=0.05, seed=21
        )
        back = subject.profile_from_json(subject.profile_to_json(prof))
        assert back.noise_scale == prof.noise_scale
        assert back.seed == prof.seed
        np.testing.assert_array_equal(back.prototypes, prof.prototypes)
