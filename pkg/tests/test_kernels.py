import numpy as np
import pytest

from mdbert import kernels
from mdbert._accel import USE_NUMBA

needs_numba = pytest.mark.skipif(not USE_NUMBA, reason="numba backend disabled")


def _brute_midranks(x):
    out = np.empty(len(x))
    for i, v in enumerate(x):
        out[i] = np.sum(x < v) + (np.sum(x == v) + 1) / 2.0
    return out


@pytest.fixture(params=["numpy", "numba"])
def backend(request):
    if request.param == "numba" and not USE_NUMBA:
        pytest.skip("numba backend disabled")
    return kernels.NUMBA if request.param == "numba" else kernels.NUMPY


class TestOracles:
    """Each kernel, on both backends, against a plain float64 reference."""

    def test_matmul3(self, backend, rng):
        a = rng.standard_normal((3, 5, 7))
        b = rng.standard_normal((3, 7, 4))
        np.testing.assert_allclose(backend["matmul3"](a, b), np.einsum("bmk,bkn->bmn", a, b), rtol=1e-12, atol=1e-12)

    def test_rowsum_is_sequential(self, backend):
        x = np.array([[1e16, 1.0, -1e16, 1.0]])
        # left-to-right: ((1e16 + 1) - 1e16) + 1 = 1.0, pairwise would give 2.0 or 0.0 depending on grouping
        assert backend["rowsum"](x)[0] == ((1e16 + 1.0) - 1e16) + 1.0

    def test_softmax_rows(self, backend, rng):
        x = rng.standard_normal((6, 9)) * 5
        ref = np.exp(x - x.max(axis=1, keepdims=True))
        ref /= ref.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(backend["softmax_rows"](x), ref, rtol=1e-13)

    def test_softmax_masked_logits_underflow_to_zero(self, backend):
        x = np.array([[0.3, -1e30, 1.2, -1e30]])
        y = backend["softmax_rows"](x)
        assert y[0, 1] == 0.0 and y[0, 3] == 0.0
        assert abs(y.sum() - 1.0) < 1e-15

    def test_softmax_backward(self, backend, rng):
        x = rng.standard_normal((4, 5))
        dy = rng.standard_normal((4, 5))
        y = backend["softmax_rows"](x)
        jac_ref = np.stack([(np.diag(r) - np.outer(r, r)) @ g for r, g in zip(y, dy)])
        np.testing.assert_allclose(backend["softmax_rows_backward"](y, dy), jac_ref, rtol=1e-12, atol=1e-14)

    def test_layer_norm(self, backend, rng):
        x = rng.standard_normal((5, 8)) * 3 + 1
        g = rng.standard_normal(8)
        b = rng.standard_normal(8)
        y, xhat, rstd = backend["layer_norm_rows"](x, g, b, 1e-12)
        mu = x.mean(axis=1, keepdims=True)
        var = ((x - mu) ** 2).mean(axis=1, keepdims=True)
        np.testing.assert_allclose(y, (x - mu) / np.sqrt(var + 1e-12) * g + b, rtol=1e-12, atol=1e-12)

    def test_gelu(self, backend, rng):
        x = rng.standard_normal(50) * 3
        ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x**3)))
        np.testing.assert_allclose(backend["gelu"](x), ref, rtol=1e-13, atol=1e-15)

    def test_masked_mean(self, backend, rng):
        x = rng.standard_normal((3, 4, 5))
        mask = np.array([[1, 1, 0, 0], [1, 0, 0, 0], [1, 1, 1, 1]], dtype=np.int8)
        ref = np.stack([x[i, mask[i] == 1].mean(axis=0) for i in range(3)])
        np.testing.assert_allclose(backend["masked_mean"](x, mask), ref, rtol=1e-13)

    def test_masked_mean_ignores_nonfinite_padding(self, backend, rng):
        x = rng.standard_normal((1, 3, 2))
        mask = np.array([[1, 1, 0]], dtype=np.int8)
        clean = backend["masked_mean"](x, mask)
        x[0, 2] = np.nan
        assert np.array_equal(backend["masked_mean"](x, mask), clean)

    def test_midranks(self, backend, rng):
        for _ in range(20):
            x = rng.integers(0, 5, size=int(rng.integers(1, 15))).astype(np.float64)
            np.testing.assert_array_equal(backend["midranks"](x), _brute_midranks(x))

    def test_bm25_skips_unknown_terms(self, backend):
        ptr = np.array([0, 1, 2], dtype=np.int64)
        ids = np.array([0, 1], dtype=np.int64)
        tf = np.array([1.0, 2.0])
        doc_len = np.array([1.0, 2.0])
        idf = np.array([0.5, 0.7])
        with_unknown = backend["bm25_scores"](ptr, ids, tf, doc_len, 1.5, np.array([0, -1, 1]), idf, 1.2, 0.75, 2)
        without = backend["bm25_scores"](ptr, ids, tf, doc_len, 1.5, np.array([0, 1]), idf, 1.2, 0.75, 2)
        assert np.array_equal(with_unknown, without)


@needs_numba
class TestBackendAgreement:
    """The compiled and numpy kernels agree; order-defined reductions agree bit for bit."""

    @pytest.mark.parametrize("dtype", [np.float32, np.float64])
    def test_matmul3_bitwise(self, rng, dtype):
        a = rng.standard_normal((4, 6, 11)).astype(dtype)
        b = rng.standard_normal((4, 11, 3)).astype(dtype)
        assert np.array_equal(kernels.NUMBA["matmul3"](a, b), kernels.NUMPY["matmul3"](a, b))

    def test_masked_mean_bitwise(self, rng):
        x = rng.standard_normal((5, 7, 3))
        mask = (rng.random((5, 7)) < 0.6).astype(np.int8)
        mask[:, 0] = 1
        assert np.array_equal(kernels.NUMBA["masked_mean"](x, mask), kernels.NUMPY["masked_mean"](x, mask))

    @pytest.mark.parametrize("name", ["softmax_rows", "gelu"])
    def test_transcendental_close(self, rng, name):
        x = rng.standard_normal((8, 16))
        np.testing.assert_allclose(kernels.NUMBA[name](x), kernels.NUMPY[name](x), rtol=1e-14, atol=1e-16)

    def test_layer_norm_close(self, rng):
        x = rng.standard_normal((8, 16))
        g, b = rng.standard_normal(16), rng.standard_normal(16)
        for u, v in zip(kernels.NUMBA["layer_norm_rows"](x, g, b, 1e-12), kernels.NUMPY["layer_norm_rows"](x, g, b, 1e-12)):
            np.testing.assert_allclose(u, v, rtol=1e-13, atol=1e-14)

    def test_bm25_close(self, rng):
        ptr = np.array([0, 2, 3, 5], dtype=np.int64)
        ids = np.array([0, 2, 1, 0, 1], dtype=np.int64)
        tf = np.array([1.0, 3.0, 1.0, 2.0, 1.0])
        doc_len = np.array([3.0, 2.0, 3.0])
        idf = rng.random(3)
        q = np.array([0, 2, 2, 1])
        np.testing.assert_allclose(kernels.NUMBA["bm25_scores"](ptr, ids, tf, doc_len, 8 / 3, q, idf, 1.2, 0.75, 3),
                                   kernels.NUMPY["bm25_scores"](ptr, ids, tf, doc_len, 8 / 3, q, idf, 1.2, 0.75, 3),
                                   rtol=1e-15)
