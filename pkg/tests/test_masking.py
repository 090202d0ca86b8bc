import numpy as np
from hypothesis import given, strategies as st

from u2asr.masking import FULL, chunk_mask, sample_dynamic_chunk
from u2asr.rng import Rng


def _rows(mask):
    return ["".join("1" if b else "0" for b in row) for row in mask]


def test_examples():
    assert _rows(chunk_mask(4, 2)) == ["1100", "1100", "1111", "1111"]
    assert chunk_mask(3, FULL).all() and chunk_mask(3, FULL).shape == (3, 3)
    assert chunk_mask(5, 5).all()


@given(st.integers(1, 64), st.integers(1, 80))
def test_rule_closure_and_collapse(t, c):
    m = chunk_mask(t, c)
    for i in range(t):
        visible = np.flatnonzero(m[i])
        # prefix-closed and ending at the chunk boundary
        assert list(visible) == list(range(min((i // c + 1) * c, t)))
        if i and i // c == (i - 1) // c:
            assert np.array_equal(m[i], m[i - 1])
    if c >= t:
        assert np.array_equal(m, chunk_mask(t, FULL))


def test_dynamic_chunk_support_and_determinism():
    r = Rng(9)
    assert {sample_dynamic_chunk(1, r) for _ in range(200)} == {1, FULL}
    assert sample_dynamic_chunk(8, Rng(42)) == sample_dynamic_chunk(8, Rng(42))


def test_dynamic_chunk_uniform_chi_square():
    r = Rng(2024)
    n, k = 100_000, 9
    draws = [sample_dynamic_chunk(8, r) for _ in range(n)]
    values = list(range(1, 9)) + [FULL]
    counts = np.array([draws.count(v) for v in values])
    expected = n / k
    sigma = np.sqrt(n * (1 / k) * (1 - 1 / k))
    assert np.all(np.abs(counts - expected) < 5 * sigma)
    chi2 = ((counts - expected) ** 2 / expected).sum()
    assert chi2 < 26.12  # 99.9th percentile of chi-square with 8 dof
