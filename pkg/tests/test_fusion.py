import itertools

import numpy as np
import pytest

from healnet.models import tensor as T
from healnet.models.dataset import ModalityKind
from healnet.models.fusion import (
    ForwardContext,
    HealNetModel,
    ModalityAttentionParams,
    ModalityBatch,
    ModalitySpec,
    SharedUpdateParams,
    cross_attention,
    fusion_forward,
    mean_attention,
    modality_update,
    snn_block,
)
from healnet.models.tensor import GradTape, Parameter, Tensor, backward
from healnet.schemas import HeadMode
from healnet.utils.errors import ConfigError


def _attention_setup(config, tokens=6, channels=3, seed=0):
    spec = ModalitySpec("wsi", ModalityKind.PATCHES, tokens=tokens, channels=channels)
    params = ModalityAttentionParams.initialize(spec, config, seed)
    shared = SharedUpdateParams.initialize(config, seed)
    return params, shared


class TestCrossAttention:
    def test_rows_are_distributions(self, tiny_config, rng):
        params, shared = _attention_setup(tiny_config)
        for _ in range(200):
            latent = Tensor(rng.uniform(-3, 3, (2, 3, 8)))
            batch = ModalityBatch(1, Tensor(rng.normal(scale=3.0, size=(2, 6, 3))), present=[True, True])
            _, attn = cross_attention(latent, batch, params, latent_norm=(shared.norm_gamma, shared.norm_beta))
            assert attn.shape == (2, 2, 3, 6)
            np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-5)
            assert attn.min() >= 0.0 and attn.max() <= 1.0

    def test_identical_tokens_split_evenly(self, tiny_config, rng):
        params, _ = _attention_setup(tiny_config, tokens=2)
        token = rng.normal(size=(1, 1, 3))
        batch = ModalityBatch(1, Tensor(np.repeat(token, 2, axis=1)), present=[True])
        _, attn = cross_attention(Tensor(rng.uniform(size=(1, 3, 8))), batch, params)
        np.testing.assert_allclose(attn, 0.5, atol=1e-6)

    def test_single_token_takes_all_mass(self, tiny_config, rng):
        params, _ = _attention_setup(tiny_config, tokens=1)
        batch = ModalityBatch(1, Tensor(rng.normal(size=(2, 1, 3))), present=[True, True])
        _, attn = cross_attention(Tensor(rng.uniform(size=(2, 3, 8))), batch, params)
        np.testing.assert_array_equal(attn, np.ones((2, 2, 3, 1)))

    def test_padded_tokens_get_zero_mass(self, tiny_config, rng):
        params, _ = _attention_setup(tiny_config)
        mask = np.ones((2, 6), dtype=bool)
        mask[0, 3:] = False
        batch = ModalityBatch(1, Tensor(rng.normal(size=(2, 6, 3))), present=[True, True], token_mask=mask)
        _, attn = cross_attention(Tensor(rng.uniform(size=(2, 3, 8))), batch, params)
        assert np.all(attn[0, :, :, 3:] == 0.0)
        np.testing.assert_allclose(attn[0].sum(axis=-1), 1.0, atol=1e-5)

    def test_channel_mismatch(self, tiny_config, rng):
        params, _ = _attention_setup(tiny_config, channels=3)
        batch = ModalityBatch(1, Tensor(rng.normal(size=(1, 6, 4))), present=[True])
        with pytest.raises(ConfigError):
            cross_attention(Tensor(rng.uniform(size=(1, 3, 8))), batch, params)


class TestModalityUpdate:
    def test_absent_modality_leaves_latent_untouched(self, tiny_config, rng):
        params, shared = _attention_setup(tiny_config)
        latent = Tensor(rng.uniform(size=(3, 3, 8)))
        batch = ModalityBatch(1, Tensor(rng.normal(size=(3, 6, 3))), present=[True, False, True])
        updated, _ = modality_update(latent, batch, params, shared)
        np.testing.assert_array_equal(updated.data[1], latent.data[1])
        assert not np.array_equal(updated.data[0], latent.data[0])

        nobody = ModalityBatch(1, batch.data, present=[False, False, False])
        same, attn = modality_update(latent, nobody, params, shared)
        assert same is latent
        assert attn is None

    def test_zero_output_weights_isolate_the_residual(self, tiny_config, rng):
        params, shared = _attention_setup(tiny_config)
        params.w_out.assign(np.zeros(params.w_out.shape))
        latent = Tensor(rng.uniform(size=(2, 3, 8)))
        batch = ModalityBatch(1, Tensor(rng.normal(size=(2, 6, 3))), present=[True, True])
        updated, _ = modality_update(latent, batch, params, shared)
        expected = snn_block(latent, shared, 0.0, ForwardContext(), "expected")
        np.testing.assert_array_equal(updated.data, expected.data)

    def test_gradient_reaches_latent_and_input(self, tiny_config, rng):
        params, shared = _attention_setup(tiny_config)
        latent = Parameter(rng.uniform(size=(1, 3, 8)), name="latent")
        x = Parameter(rng.normal(size=(1, 6, 3)), name="x")
        with GradTape():
            updated, _ = modality_update(latent, ModalityBatch(1, x, present=[True]), params, shared)
            loss = T.reduce_sum(T.square(updated))
        grads = backward(loss, {"latent": latent, "x": x})
        assert np.abs(grads["latent"].data).sum() > 0
        assert np.abs(grads["x"].data).sum() > 0


class TestFusionForward:
    def test_logits_shape_and_record(self, tiny_model, tiny_batches):
        logits, record = fusion_forward(tiny_model, tiny_batches)
        assert logits.shape == (4, 4)
        assert record.layers_for(1) == [0, 1]
        assert record.matrix(0, 2, 0).shape == (2, 3, 6)

    def test_repeated_runs_are_identical(self, tiny_model, tiny_batches):
        first, _ = fusion_forward(tiny_model, tiny_batches)
        second, _ = fusion_forward(tiny_model, tiny_batches)
        np.testing.assert_array_equal(first.data, second.data)

    def test_zero_depth_predicts_from_initial_latent(self, tiny_config, specs, tiny_batches):
        model = HealNetModel(tiny_config.model_copy(update={"depth": 0}), specs, num_bins=4, seed=7)
        logits, _ = fusion_forward(model, tiny_batches)
        expected = model.head(T.add(Tensor(np.zeros((4, 1, 1))), model.latent.values))
        np.testing.assert_array_equal(logits.data, expected.data)

    def test_sample_without_any_modality_is_flagged(self, tiny_model, tiny_batches):
        for batch in tiny_batches:
            batch.present[2] = False
        logits, record = fusion_forward(tiny_model, tiny_batches)
        assert record.all_absent.tolist() == [False, False, True, False]
        initial = tiny_model.head(T.add(Tensor(np.zeros((4, 1, 1))), tiny_model.latent.values))
        np.testing.assert_array_equal(logits.data[2], initial.data[2])

    def test_parameter_count_independent_of_depth(self, tiny_config, specs):
        shallow = HealNetModel(tiny_config.model_copy(update={"depth": 2}), specs)
        deep = HealNetModel(tiny_config.model_copy(update={"depth": 5}), specs)
        assert shallow.parameter_count() == deep.parameter_count()

    def test_frozen_latent_is_not_trainable(self, tiny_config, specs):
        model = HealNetModel(tiny_config.model_copy(update={"latent_trainable": False}), specs)
        assert "latent" not in model.parameters()
        assert "latent" in model.state_dict()

    def test_mean_pool_head(self, tiny_config, specs, tiny_batches):
        model = HealNetModel(tiny_config.model_copy(update={"head": HeadMode.MEAN_POOL}), specs)
        assert model.head.weight.shape == (8, 4)
        logits, _ = fusion_forward(model, tiny_batches)
        assert logits.shape == (4, 4)

    def test_single_modality_matches_masked_second_modality(self, tiny_config, specs, tiny_batches):
        alone = HealNetModel(tiny_config, specs[:1], num_bins=4, seed=11)
        paired = HealNetModel(tiny_config, specs, num_bins=4, seed=11)
        omic, wsi = tiny_batches
        masked = ModalityBatch(2, wsi.data, present=np.zeros(4, dtype=bool), token_mask=wsi.token_mask)
        expected, _ = fusion_forward(alone, [omic])
        got, _ = fusion_forward(paired, [omic, masked])
        np.testing.assert_array_equal(got.data, expected.data)

    def test_skip_update_is_exact_identity(self, tiny_config, rng):
        specs = [
            ModalitySpec("omic", ModalityKind.TABULAR, tokens=4, channels=1),
            ModalitySpec("wsi", ModalityKind.PATCHES, tokens=5, channels=3),
            ModalitySpec("rna", ModalityKind.TABULAR, tokens=3, channels=1),
        ]
        model = HealNetModel(tiny_config, specs, num_bins=4, seed=5)
        n = 20
        data = [Tensor(rng.normal(size=(n, s.tokens, s.channels))) for s in specs]
        subsets = list(itertools.product([False, True], repeat=3))

        uniform = {}
        for subset in subsets:
            batches = [
                ModalityBatch(m + 1, data[m], present=np.full(n, keep))
                for m, keep in enumerate(subset)
                if keep
            ] or [ModalityBatch(1, data[0], present=np.zeros(n, dtype=bool))]
            uniform[subset], _ = fusion_forward(model, batches)

        assigned = [subsets[i] for i in rng.integers(0, len(subsets), n)]
        mixed_batches = [
            ModalityBatch(m + 1, data[m], present=np.array([s[m] for s in assigned])) for m in range(3)
        ]
        mixed, _ = fusion_forward(model, mixed_batches)
        for i, subset in enumerate(assigned):
            np.testing.assert_array_equal(mixed.data[i], uniform[subset].data[i])

    def test_rejects_bad_batches(self, tiny_model, tiny_batches):
        with pytest.raises(ConfigError):
            fusion_forward(tiny_model, [])
        with pytest.raises(ConfigError):
            fusion_forward(tiny_model, [tiny_batches[0], tiny_batches[0]])

    def test_state_round_trip(self, tiny_config, specs, tiny_batches):
        source = HealNetModel(tiny_config, specs, seed=1)
        target = HealNetModel(tiny_config, specs, seed=2)
        target.load_state_dict(source.state_dict())
        a, _ = fusion_forward(source, tiny_batches)
        b, _ = fusion_forward(target, tiny_batches)
        np.testing.assert_array_equal(a.data, b.data)
        with pytest.raises(ConfigError):
            target.load_state_dict({"latent": source.latent.values.numpy()})

    def test_training_dropout_depends_on_step(self, tiny_config, specs, tiny_batches):
        config = tiny_config.model_copy(update={"attn_dropout": 0.3, "ff_dropout": 0.3})
        model = HealNetModel(config, specs, seed=3)
        a, _ = fusion_forward(model, tiny_batches, ForwardContext(training=True, seed=1, step=0))
        b, _ = fusion_forward(model, tiny_batches, ForwardContext(training=True, seed=1, step=0))
        c, _ = fusion_forward(model, tiny_batches, ForwardContext(training=True, seed=1, step=1))
        np.testing.assert_array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)


class TestMeanAttention:
    def test_matches_brute_force_average(self, tiny_model, tiny_batches):
        _, record = fusion_forward(tiny_model, tiny_batches)
        for modality_id in (1, 2):
            result = mean_attention(record, modality_id)
            mask = record.token_masks[modality_id]
            for i, weights in enumerate(result):
                if not record.present[modality_id][i]:
                    assert weights is None
                    continue
                total = np.zeros(mask.shape[1])
                count = 0
                for layer in record.layers_for(modality_id):
                    a = record.matrix(layer, modality_id, i)
                    for head in range(a.shape[0]):
                        for channel in range(a.shape[1]):
                            total += a[head, channel]
                            count += 1
                expected = (total / count)[mask[i]]
                expected /= expected.sum()
                np.testing.assert_allclose(weights, expected, rtol=1e-6)
                assert weights.sum() == pytest.approx(1.0, abs=1e-4)
                assert weights.min() >= 0.0

    def test_padding_is_dropped(self, tiny_model, tiny_batches):
        _, record = fusion_forward(tiny_model, tiny_batches)
        result = mean_attention(record, 2)
        assert len(result[0]) == 4
        assert len(result[1]) == 6
        assert result[2] is None
