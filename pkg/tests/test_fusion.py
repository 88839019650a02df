import numpy as np
import pytest

from texdiff import fusion
from texdiff.fusion import (
    AdaptorLayer,
    AdaptorSpec,
    SegPrediction,
    StageOutputs,
    adapt,
    decode_embedding,
    default_adaptor_spec,
    default_decoder_params,
    default_stage_params,
    embed_backbone,
    fuse_inputs,
    inject,
    joint_input,
    seg_head,
    seg_loss,
)
from texdiff.numeric import (
    ConfigError,
    ConvParams,
    ShapeError,
    channel_concat,
    conv2d,
    init_conv,
    relu,
    resample,
    sigmoid,
)


class TestJointInput:
    def test_additive_identities(self):
        rng = np.random.default_rng(0)
        x = rng.uniform(size=(3, 8, 8))
        np.testing.assert_array_equal(joint_input(np.zeros_like(x), x), x)
        np.testing.assert_array_equal(joint_input(x, np.zeros_like(x)), x)

    def test_commutative(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(2, 3, 6, 6))
        np.testing.assert_array_equal(joint_input(a, b), joint_input(b, a))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            joint_input(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))

    def test_fusion_manners(self):
        rng = np.random.default_rng(2)
        a, b = rng.uniform(size=(2, 3, 4, 4))
        np.testing.assert_array_equal(fuse_inputs(a, b, "add"), a + b)
        np.testing.assert_array_equal(fuse_inputs(a, b, "hadamard"), a * b)
        assert fuse_inputs(a, b, "concat").shape == (6, 4, 4)
        with pytest.raises(ConfigError):
            fuse_inputs(a, b, "subtract")


class TestEmbedBackbone:
    def test_stage_resolutions(self):
        rng = np.random.default_rng(3)
        params = default_stage_params(rng, 3)
        out = embed_backbone(rng.uniform(size=(3, 32, 32)), params)
        shapes = [o.shape for o in out.stages]
        assert shapes == [(16, 16, 16), (32, 8, 8), (64, 4, 4), (128, 2, 2)]

    def test_zero_input_zero_stages(self):
        params = default_stage_params(np.random.default_rng(4), 3)
        out = embed_backbone(np.zeros((3, 32, 32)), params)
        for o in out.stages:
            np.testing.assert_array_equal(o, 0.0)

    def test_matches_composed_ops(self):
        rng = np.random.default_rng(5)
        params = default_stage_params(rng, 3)
        z = rng.uniform(size=(3, 32, 32))
        out = embed_backbone(z, params)
        cur = z
        for p, o in zip(params, out.stages):
            cur = relu(conv2d(cur, p))
            np.testing.assert_allclose(o, cur, atol=1e-12)

    def test_divisibility_enforced(self):
        params = default_stage_params(np.random.default_rng(6), 3)
        with pytest.raises(ShapeError):
            embed_backbone(np.zeros((3, 30, 32)), params)


class TestDecodeEmbedding:
    def _stages(self, rng):
        params = default_stage_params(rng, 3)
        return embed_backbone(rng.uniform(size=(3, 32, 32)), params)

    def test_zero_stages_zero_embedding(self):
        rng = np.random.default_rng(7)
        dec = default_decoder_params(rng)
        stages = StageOutputs(
            stages=[np.zeros((16, 16, 16)), np.zeros((32, 8, 8)),
                    np.zeros((64, 4, 4)), np.zeros((128, 2, 2))]
        )
        np.testing.assert_array_equal(decode_embedding(stages, dec), 0.0)

    def test_shape_contract(self):
        rng = np.random.default_rng(8)
        dec = default_decoder_params(rng, embed_ch=32)
        out = decode_embedding(self._stages(rng), dec)
        assert out.shape == (32, 16, 16)

    def test_single_stage_masking_oracle(self):
        rng = np.random.default_rng(9)
        dec = default_decoder_params(rng)
        stages = self._stages(rng)
        # zero all stages but stage 2; embedding must equal the masked path
        masked = StageOutputs(
            stages=[np.zeros_like(o) if i != 2 else o for i, o in enumerate(stages.stages)]
        )
        out = decode_embedding(masked, dec)
        th, tw = 16, 16
        branches = []
        for i, (o, p) in enumerate(zip(masked.stages, dec.stage_convs)):
            up = resample(o, th, tw, method="bilinear")
            branches.append(conv2d(up, p))
        expected = conv2d(channel_concat(branches), dec.fusion)
        np.testing.assert_allclose(out, expected, atol=1e-12)


class TestAdapt:
    def _spec(self, rng, zero=False):
        spec = default_adaptor_spec(rng, 8, [(4, 12, 12), (6, 6, 6)], hidden=5)
        if not zero:
            for layer in spec.layers:
                layer.convs[1].weight[...] = rng.standard_normal(layer.convs[1].weight.shape)
        return spec

    def test_zero_adaptors_zero_outputs(self):
        rng = np.random.default_rng(10)
        spec = self._spec(rng, zero=True)
        for layer in spec.layers:
            for p in layer.convs:
                p.weight[...] = 0.0
                p.bias[...] = 0.0
        outs = adapt(rng.uniform(size=(8, 8, 8)), spec)
        for o in outs:
            np.testing.assert_array_equal(o, 0.0)

    def test_identity_adaptor(self):
        e = np.random.default_rng(11).uniform(size=(4, 8, 8))
        w = np.zeros((4, 4, 1, 1))
        for i in range(4):
            w[i, i, 0, 0] = 1.0
        layer = AdaptorLayer(
            target_channels=4, target_h=8, target_w=8,
            convs=[ConvParams(weight=w, bias=np.zeros(4))],
        )
        outs = adapt(e, AdaptorSpec(layers=[layer]))
        np.testing.assert_allclose(outs[0], e, atol=1e-12)

    def test_matches_conv_then_resample(self):
        rng = np.random.default_rng(12)
        spec = self._spec(rng)
        e = rng.uniform(size=(8, 8, 8))
        outs = adapt(e, spec)
        for layer, got in zip(spec.layers, outs):
            mid = conv2d(relu(conv2d(e, layer.convs[0])), layer.convs[1])
            expected = resample(mid, layer.target_h, layer.target_w, method="bilinear")
            np.testing.assert_allclose(got, expected, atol=1e-12)
            assert got.shape == (layer.target_channels, layer.target_h, layer.target_w)


class TestInject:
    def test_zero_injection_identity(self):
        x = np.random.default_rng(13).uniform(size=(4, 6, 6))
        out = inject(x, np.zeros_like(x))
        np.testing.assert_array_equal(out, x)

    def test_zero_host_returns_injection(self):
        e = np.random.default_rng(14).uniform(size=(4, 6, 6))
        np.testing.assert_array_equal(inject(np.zeros_like(e), e), e)

    def test_subtraction_recovers_input(self):
        # exact up to one rounding of the intermediate sum (values in [0, 1])
        rng = np.random.default_rng(15)
        x, e = rng.uniform(size=(2, 3, 5, 5))
        np.testing.assert_allclose(inject(x, e) - e, x, rtol=0, atol=1e-15)


class TestSegHead:
    def test_zero_features_half_probabilities(self):
        head = ConvParams(weight=np.zeros((1, 8, 1, 1)), bias=np.zeros(1))
        pred = seg_head(np.zeros((8, 4, 4)), head, 16, 16)
        np.testing.assert_array_equal(pred.probabilities, 0.5)

    def test_large_bias_saturates(self):
        head = ConvParams(weight=np.zeros((1, 8, 1, 1)), bias=np.full(1, 20.0))
        pred = seg_head(np.zeros((8, 4, 4)), head, 8, 8)
        assert (pred.probabilities > 0.999).all()

    def test_probabilities_are_sigmoid_of_logits(self):
        rng = np.random.default_rng(16)
        head = init_conv(rng, 1, 8, 1)
        pred = seg_head(rng.standard_normal((8, 4, 4)), head, 8, 8)
        np.testing.assert_allclose(pred.probabilities, 1 / (1 + np.exp(-pred.logits)), atol=1e-12)


class TestSegLoss:
    def test_confident_correct_prediction_near_zero(self):
        gt = (np.random.default_rng(17).uniform(size=(1, 8, 8)) > 0.5).astype(float)
        logits = np.where(gt == 1.0, 20.0, -20.0)
        pred = SegPrediction(logits=logits, probabilities=sigmoid(logits))
        assert seg_loss(pred, gt) < 1e-8

    def test_zero_logits_ln2(self):
        gt = (np.random.default_rng(18).uniform(size=(1, 6, 6)) > 0.5).astype(float)
        logits = np.zeros((1, 6, 6))
        pred = SegPrediction(logits=logits, probabilities=sigmoid(logits))
        assert abs(seg_loss(pred, gt) - np.log(2.0)) < 1e-12

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(19)
        logits = rng.standard_normal((1, 5, 5)) * 4
        gt = (rng.uniform(size=(1, 5, 5)) > 0.5).astype(float)
        pred = SegPrediction(logits=logits, probabilities=sigmoid(logits))
        p = 1.0 / (1.0 + np.exp(-logits))
        expected = -(gt * np.log(p) + (1 - gt) * np.log(1 - p)).mean()
        assert abs(seg_loss(pred, gt) - expected) < 1e-10

    def test_non_binary_gt_rejected(self):
        pred = SegPrediction(logits=np.zeros((1, 4, 4)), probabilities=np.full((1, 4, 4), 0.5))
        with pytest.raises(ConfigError):
            seg_loss(pred, np.full((1, 4, 4), 0.3))


class TestStageOutputsValidation:
    def test_wrong_count_rejected(self):
        with pytest.raises(ConfigError):
            StageOutputs(stages=[np.zeros((1, 4, 4))])

    def test_non_decreasing_resolution_rejected(self):
        with pytest.raises(ShapeError):
            StageOutputs(
                stages=[np.zeros((1, 8, 8)), np.zeros((1, 8, 8)),
                        np.zeros((1, 4, 4)), np.zeros((1, 2, 2))]
            )
