import numpy as np
import pytest
from sklearn.linear_model import Ridge
from scipy import stats
from sklearn.model_selection import cross_val_predict, cross_val_score

from healnet.schemas import Scenario, SynthScenario
from healnet.services.survival_service import harrell_c
from healnet.services.synthetic_service import generate_synthetic, sample_ids, synthetic_truth


def flat(block):
    return block.data.reshape(block.n, -1).astype(np.float64)


class TestGenerate:
    def test_same_seed_same_cohort(self, small_scenario):
        a = generate_synthetic(small_scenario, seed=5)
        b = generate_synthetic(small_scenario, seed=5)
        c = generate_synthetic(small_scenario, seed=6)
        for name in ("omic", "wsi"):
            np.testing.assert_array_equal(a.modality(name).data, b.modality(name).data)
        assert [r.months for r in a.records] == [r.months for r in b.records]
        assert not np.array_equal(a.modality("omic").data, c.modality("omic").data)

    def test_shapes_and_ids(self, small_scenario):
        dataset = generate_synthetic(small_scenario, seed=0)
        assert dataset.modality_names == ["omic", "wsi"]
        assert dataset.modality("omic").data.shape == (60, 6, 1)
        assert dataset.modality("wsi").data.shape == (60, 4, 3)
        assert dataset.sample_ids[:2] == ["s0000", "s0001"]
        assert dataset.provenance.source == "synthetic"

    def test_sample_ids_are_sortable(self):
        ids = sample_ids(12345)
        assert ids == sorted(ids)
        assert ids[-1] == "s12344"

    def test_censoring_rate(self):
        dataset = generate_synthetic(SynthScenario(n=4000, p=4, t=4, d_x=2, censor_rate=0.3), seed=1)
        rate = np.mean([r.censored for r in dataset.records])
        assert rate == pytest.approx(0.3, abs=0.03)

    def test_censored_times_precede_events(self):
        scenario = SynthScenario(n=500, p=4, t=4, d_x=2, censor_rate=0.5)
        truth = synthetic_truth(scenario, seed=2)
        dataset = generate_synthetic(scenario, seed=2)
        months = np.array([r.months for r in dataset.records])
        censored = np.array([r.censored for r in dataset.records], dtype=bool)
        assert np.all(months[censored] <= truth.event_months[censored])
        np.testing.assert_array_equal(months[~censored], truth.event_months[~censored])

    def test_missing_rate(self):
        dataset = generate_synthetic(SynthScenario(n=2000, p=4, t=4, d_x=2, missing_rate=0.5), seed=0)
        wsi = dataset.modality("wsi")
        assert (~wsi.present).mean() == pytest.approx(0.5, abs=0.05)
        assert np.all(wsi.data[~wsi.present] == 0.0)
        assert dataset.modality("omic").present.all()

    def test_noise_modality(self):
        scenario = SynthScenario(scenario=Scenario.NOISE_MODALITY, n=50, p=7)
        dataset = generate_synthetic(scenario, seed=0)
        assert dataset.modality_names == ["omic", "wsi", "noise"]
        assert dataset.modality("noise").data.shape == (50, 7, 1)


class TestPlantedSignal:
    def test_noiseless_times_follow_risk(self):
        scenario = SynthScenario(n=400, p=4, t=4, d_x=2, noise_sigma=0.0, censor_rate=0.3)
        truth = synthetic_truth(scenario, seed=0)
        dataset = generate_synthetic(scenario, seed=0)
        months = np.array([r.months for r in dataset.records])
        censored = np.array([r.censored for r in dataset.records])
        assert harrell_c(truth.log_risk, months, censored) == 1.0

    def test_interaction_risk_is_a_product(self):
        scenario = SynthScenario(n=4000, p=4, t=4, d_x=2, main_effect=0.0)
        truth = synthetic_truth(scenario, seed=0)
        np.testing.assert_allclose(truth.log_risk, truth.z1 * truth.z2)
        # neither factor alone tracks the product
        assert abs(np.corrcoef(truth.z1, truth.log_risk)[0, 1]) < 0.1
        assert abs(np.corrcoef(truth.z2, truth.log_risk)[0, 1]) < 0.1

    def test_dominance_puts_all_signal_in_omic(self):
        scenario = SynthScenario(scenario=Scenario.MODALITY_DOMINANCE, n=1000, p=8, t=4, d_x=4)
        truth = synthetic_truth(scenario, seed=0)
        dataset = generate_synthetic(scenario, seed=0)
        np.testing.assert_array_equal(truth.log_risk, truth.z1)

        omic_r2 = cross_val_score(Ridge(alpha=1.0), flat(dataset.modality("omic")), truth.log_risk, cv=5)
        wsi_r2 = cross_val_score(Ridge(alpha=1.0), flat(dataset.modality("wsi")), truth.log_risk, cv=5)
        assert omic_r2.mean() > 0.8
        assert wsi_r2.mean() < 0.05

    def test_interaction_signal_reaches_both_modalities(self):
        scenario = SynthScenario(n=1000, p=8, t=4, d_x=4)
        truth = synthetic_truth(scenario, seed=0)
        dataset = generate_synthetic(scenario, seed=0)
        omic_r2 = cross_val_score(Ridge(alpha=1.0), flat(dataset.modality("omic")), truth.z1, cv=5)
        wsi_r2 = cross_val_score(Ridge(alpha=1.0), flat(dataset.modality("wsi")), truth.z2, cv=5)
        assert omic_r2.mean() > 0.8
        assert wsi_r2.mean() > 0.8

    def test_main_effect_is_weak(self):
        scenario = SynthScenario(n=4000, p=4, t=4, d_x=2)
        truth = synthetic_truth(scenario, seed=0)
        np.testing.assert_allclose(truth.log_risk, truth.z1 * truth.z2 + 0.2 * (truth.z1 + truth.z2))
        for factor in (truth.z1, truth.z2):
            assert 0.1 < np.corrcoef(factor, truth.log_risk)[0, 1] < 0.3


def _survival(dataset):
    months = np.array([r.months for r in dataset.records])
    censored = np.array([r.censored for r in dataset.records])
    return months, censored


class TestTimeModel:
    def test_unit_noise_gives_exponential_times(self):
        scenario = SynthScenario(n=4000, p=4, t=4, d_x=2, noise_sigma=1.0)
        truth = synthetic_truth(scenario, seed=0)
        # rate exp(log_risk) / 24, so the rescaled times are Exp(1)
        scaled = truth.event_months * np.exp(truth.log_risk) / 24.0
        assert scaled.mean() == pytest.approx(1.0, abs=0.05)
        assert np.median(scaled) == pytest.approx(np.log(2.0), abs=0.04)
        assert stats.kstest(scaled, "expon").statistic < 0.035

    def test_noise_scales_one_draw(self):
        logs = []
        for sigma in (0.5, 1.0):
            truth = synthetic_truth(SynthScenario(n=300, p=4, t=4, d_x=2, noise_sigma=sigma), seed=4)
            logs.append(np.log(truth.event_months) + truth.log_risk - np.log(24.0))
        np.testing.assert_allclose(logs[0], 0.5 * logs[1], atol=1e-10)

    def test_dominance_times_are_exponential_too(self):
        scenario = SynthScenario(scenario=Scenario.MODALITY_DOMINANCE, n=4000, p=4, t=4, d_x=2, noise_sigma=1.0)
        truth = synthetic_truth(scenario, seed=1)
        scaled = truth.event_months * np.exp(truth.log_risk) / 24.0
        assert stats.kstest(scaled, "expon").statistic < 0.035


class TestOracles:
    """Ranking power of the best linear read-out of each modality on a noiseless cohort."""

    @pytest.fixture(scope="class")
    def cohort(self):
        scenario = SynthScenario(n=4000, p=8, t=4, d_x=4, noise_sigma=0.0)
        return synthetic_truth(scenario, seed=0), generate_synthetic(scenario, seed=0)

    @pytest.mark.parametrize("modality", ["omic", "wsi"])
    def test_single_modality_stays_weak(self, cohort, modality):
        truth, dataset = cohort
        predicted = cross_val_predict(Ridge(alpha=1.0), flat(dataset.modality(modality)), truth.log_risk, cv=5)
        assert harrell_c(predicted, *_survival(dataset)) < 0.6

    def test_both_modalities_rank_almost_perfectly(self, cohort):
        truth, dataset = cohort
        z1 = cross_val_predict(Ridge(alpha=1.0), flat(dataset.modality("omic")), truth.z1, cv=5)
        z2 = cross_val_predict(Ridge(alpha=1.0), flat(dataset.modality("wsi")), truth.z2, cv=5)
        assert harrell_c(z1 * z2 + 0.2 * (z1 + z2), *_survival(dataset)) > 0.95
