import numpy as np
import pytest

from histoxai import explain
from histoxai import tensor as T
from histoxai.errors import ContractError, ParameterError
from histoxai.explain import Heatmap, classify, gradcam, render_overlay, smoothgrad, vanilla_saliency
from histoxai.metrics import confusion
from histoxai.network import ModelConfig, build_model
from histoxai.tensor import Tensor

from oracles import numeric_grad
from toy_models import ConvAvgDense, FlatLayerModel, LinearModel, QuadraticModel, loop_conv


@pytest.fixture(scope="module")
def tinyvgg():
    return build_model(ModelConfig(seed=1))


def test_single_channel_uniform_gradient():
    # 1x1 identity conv then sum: dS/dA == 1 everywhere, so alpha == 1 and L == ReLU(A)
    x = np.random.default_rng(0).normal(size=(1, 4, 4))

    class SumModel(ConvAvgDense):
        def logits(self, x, mode="eval", rng=None):
            self.acts = T.conv2d(x, Tensor(np.ones((1, 1, 1, 1))), Tensor(np.zeros(1)))
            return T.reshape(T.tsum(self.acts), (1, 1))

    hm = gradcam(SumModel(None, None, None, None), x, class_index=1, layer_id="conv")
    np.testing.assert_array_equal(hm.values, np.maximum(x[0], 0))


@pytest.mark.parametrize("class_index", [0, 1])
def test_gradcam_matches_hand_derivation(class_index):
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 4, 4))
    kernel = rng.normal(size=(3, 2, 3, 3))
    bias = rng.normal(size=3)
    w = rng.normal(size=3)
    model = ConvAvgDense(kernel, bias, w, 0.3)
    # S_1 = sum_k w_k * mean(A_k) + b, so dS_1/dA_k = w_k / (u*v) everywhere and
    # alpha_k = w_k / (u*v); S_0 = -S_1 flips the sign
    a = loop_conv(x, kernel, bias)
    sign = 1.0 if class_index == 1 else -1.0
    alpha = sign * w / (a.shape[1] * a.shape[2])
    expected = np.zeros(a.shape[1:])
    for k in range(3):
        expected += alpha[k] * a[k]
    expected = np.maximum(expected, 0.0)
    hm = gradcam(model, x, class_index=class_index, layer_id="conv")
    assert np.abs(hm.values - expected).max() <= 1e-10


def test_tinyvgg_gradcam_shape_and_sign(tinyvgg):
    x = np.random.default_rng(0).random((3, 64, 64))
    hm = gradcam(tinyvgg, x)
    assert hm.values.shape == (8, 8)
    assert np.all(hm.values >= 0)
    assert hm.class_index == classify(tinyvgg, x)


def test_gradcam_nonnegative_on_random_pairs():
    rng = np.random.default_rng(0)
    for trial in range(50):
        model = build_model(ModelConfig(input_size=(32, 32, 3), seed=trial))
        x = rng.normal(0.5, 0.3, size=(3, 32, 32))
        layer = ["features", "conv2", "relu3"][trial % 3]
        hm = gradcam(model, x, class_index=trial % 2, layer_id=layer)
        assert np.all(hm.values >= 0)


def test_gradcam_errors(tinyvgg):
    x = np.zeros((3, 64, 64))
    with pytest.raises(ParameterError):
        gradcam(tinyvgg, x, class_index=2)
    model = FlatLayerModel(np.ones((1, 1, 1, 1)), np.zeros(1), np.ones(1), 0.0)
    with pytest.raises(ContractError):
        gradcam(model, np.ones((1, 3, 3)), class_index=1, layer_id="conv")


def test_saliency_of_linear_model_is_abs_weight():
    rng = np.random.default_rng(0)
    w = rng.normal(size=(3, 5, 5))
    hm = vanilla_saliency(LinearModel(w), rng.random((3, 5, 5)), class_index=1)
    np.testing.assert_array_equal(hm.values, np.abs(w).max(axis=0))
    hm0 = vanilla_saliency(LinearModel(w), rng.random((3, 5, 5)), class_index=0)
    np.testing.assert_array_equal(hm0.values, hm.values)


def test_saliency_zero_where_model_ignores_input():
    w = np.ones((3, 6, 6))
    w[:, :3, :] = 0.0
    hm = vanilla_saliency(LinearModel(w), np.random.default_rng(1).random((3, 6, 6)))
    np.testing.assert_array_equal(hm.values[:3], 0.0)
    assert np.all(hm.values[3:] == 1.0)


def test_saliency_matches_finite_differences(tinyvgg):
    rng = np.random.default_rng(3)
    x = rng.random((3, 64, 64))
    hm = vanilla_saliency(tinyvgg, x, class_index=1)

    def z():
        return explain.logit(tinyvgg, x)

    for _ in range(5):
        i, j = rng.integers(0, 64, 2)
        entries = [c * 64 * 64 + i * 64 + j for c in range(3)]
        fd = numeric_grad(z, x, h=1e-6, entries=entries)
        expected = max(abs(v) for v in fd.values())
        assert hm.values[i, j] == pytest.approx(expected, rel=1e-3, abs=1e-9)


def test_smoothgrad_degenerate_case_is_vanilla(tinyvgg):
    x = np.random.default_rng(5).random((3, 64, 64))
    for cls in (0, 1):
        a = smoothgrad(tinyvgg, x, cls, n=1, sigma=0.0).values
        b = vanilla_saliency(tinyvgg, x, cls).values
        assert a.tobytes() == b.tobytes()


def test_smoothgrad_linear_model_is_constant():
    w = np.random.default_rng(0).normal(size=(3, 4, 4))
    hm = smoothgrad(LinearModel(w), np.zeros((3, 4, 4)), n=7, sigma=0.5, seed=3)
    np.testing.assert_allclose(hm.values, np.abs(w).max(axis=0), rtol=1e-12)


def test_smoothgrad_quadratic_expectation():
    hm = smoothgrad(QuadraticModel(), np.ones((1, 1, 1)), n=10_000, sigma=0.1, seed=0, chunk=1000)
    assert abs(hm.values[0, 0] - 2.0) <= 0.01


def test_smoothgrad_chunking_does_not_change_result():
    x = np.ones((1, 1, 1))
    a = smoothgrad(QuadraticModel(), x, n=50, sigma=0.3, seed=1, chunk=7).values
    b = smoothgrad(QuadraticModel(), x, n=50, sigma=0.3, seed=1, chunk=50).values
    np.testing.assert_allclose(a, b, rtol=1e-14)


def test_smoothgrad_variance_shrinks_with_n():
    x = np.ones((1, 1, 1))

    def spread(n):
        return np.std([smoothgrad(QuadraticModel(), x, n=n, sigma=0.5, seed=s).values[0, 0] for s in range(30)])

    assert spread(100) < spread(5)


def test_smoothgrad_rejects_bad_n():
    with pytest.raises(ParameterError):
        smoothgrad(QuadraticModel(), np.ones((1, 1, 1)), n=0)


def constant_model(z):
    return LinearModel(np.zeros(3), b=z)


def test_classify_boundaries():
    x = np.zeros((3, 1, 1))
    assert classify(constant_model(0.0), x) == 1
    assert classify(constant_model(np.log(0.9 / 0.1)), x) == 1
    assert classify(constant_model(np.log(0.2 / 0.8)), x) == 0


def test_classify_agrees_with_metric_threshold():
    rng = np.random.default_rng(0)
    zs = np.concatenate([rng.normal(0, 3, 990), [0.0, -0.0, 1e-20, -1e-20, 5e-324, -5e-324, 40, -40, 1e-9, -1e-9]])
    x = np.zeros((3, 1, 1))
    preds = np.array([classify(constant_model(z), x) for z in zs])
    probs = T.sigmoid(Tensor(zs)).data
    for z, p, pred in zip(zs, probs, preds):
        c = confusion([p], [1])
        assert pred == c.tp, z


def test_overlay_alpha_zero_is_input():
    img = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)
    hm = Heatmap("gradcam", np.random.default_rng(1).random((8, 8)), 1)
    np.testing.assert_array_equal(render_overlay(hm, img, alpha=0.0), img)


def test_overlay_constant_map_blends_zero_colour():
    img = np.full((16, 16, 3), 100, np.uint8)
    hm = Heatmap("gradcam", np.full((4, 4), 3.0), 1)
    out = render_overlay(hm, img, alpha=0.5)
    # the colormap's zero colour is pure blue
    np.testing.assert_array_equal(out[0, 0], [50, 50, 178])
    assert np.all(out == out[0, 0])


def test_overlay_shape_and_range():
    img = np.zeros((64, 64, 3), np.uint8)
    out = render_overlay(Heatmap("gradcam", np.arange(64.0).reshape(8, 8), 1), img)
    assert out.shape == (64, 64, 3) and out.dtype == np.uint8
    with pytest.raises(ParameterError):
        render_overlay(Heatmap("gradcam", np.zeros((2, 2)), 1), img, alpha=1.5)


def test_normalize_degenerate_and_range():
    np.testing.assert_array_equal(explain.normalize(np.full((3, 3), 7.0)), 0.0)
    n = explain.normalize(np.array([[2.0, 4.0], [6.0, 10.0]]))
    assert n.min() == 0.0 and n.max() == 1.0
