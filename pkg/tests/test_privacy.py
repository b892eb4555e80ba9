import hashlib
import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from uavnft.privacy import (
    NumericSeries,
    PrivacyBudget,
    add_noise,
    calibrate_sigma,
    gaussian_mechanism,
    standard_normals,
)


def reference_stream(seed: int, n: int) -> list[float]:
    """The documented generator, restated with struct instead of int.from_bytes."""
    out = []
    k = 0
    while len(out) < n:
        block = hashlib.sha256(b"uavnft/gauss/v1" + struct.pack(">QQ", seed, k)).digest()
        a, b = struct.unpack(">QQ", block[:16])
        u1 = ((a >> 11) + 0.5) * 2.0 ** -53
        u2 = (b >> 11) * 2.0 ** -53
        r = math.sqrt(-2 * math.log(u1))
        out += [r * math.cos(2 * math.pi * u2), r * math.sin(2 * math.pi * u2)]
        k += 1
    return out[:n]


def test_unit_case_gives_sqrt_two():
    budget = PrivacyBudget(1.0, 1.25 / math.e, 1.0)
    assert calibrate_sigma(budget) == pytest.approx(math.sqrt(2), rel=1e-15)


def test_sigma_linear_in_sensitivity_and_inverse_in_epsilon():
    base = calibrate_sigma(PrivacyBudget(1.0, 1e-5, 1.0))
    assert calibrate_sigma(PrivacyBudget(1.0, 1e-5, 2.0)) == pytest.approx(2 * base, rel=1e-15)
    assert calibrate_sigma(PrivacyBudget(2.0, 1e-5, 1.0)) == pytest.approx(base / 2, rel=1e-15)


def test_sigma_against_independent_evaluation():
    got = calibrate_sigma(PrivacyBudget(0.5, 1e-5, 2.0))
    expected = float(np.float64(2.0) * np.sqrt(-2.0 * np.log(np.float64(1e-5) / 1.25)) / 0.5)
    assert abs(got - expected) / expected < 1e-12


@pytest.mark.parametrize("eps,delta,sens", [(0, 1e-5, 1), (-1, 1e-5, 1), (1, 0, 1), (1, 1, 1),
                                            (1, 1e-5, 0), (1, 1e-5, -2), (math.inf, 0.1, 1)])
def test_invalid_budget(eps, delta, sens):
    with pytest.raises(ValueError):
        PrivacyBudget(eps, delta, sens)


def test_invalid_series_and_sigma():
    with pytest.raises(ValueError):
        NumericSeries((1.0,), 2.0, 2.0)
    with pytest.raises(ValueError):
        NumericSeries((math.nan,), 0.0, 1.0)
    with pytest.raises(ValueError):
        add_noise(NumericSeries((1.0,), 0.0, 2.0), -0.1, 1)
    with pytest.raises(ValueError):
        list(zip(range(1), standard_normals(-1)))


def test_zero_sigma_is_exact_clamp():
    s = NumericSeries((-5.0, 0.25, 1.0, 9.0, math.inf), 0.0, 1.0, "m")
    out = add_noise(s, 0.0, 123)
    assert out.values == (0.0, 0.25, 1.0, 1.0, 1.0)
    assert (out.clamp_lo, out.clamp_hi, out.unit) == (0.0, 1.0, "m")


def test_stream_matches_documented_generator():
    gen = standard_normals(42)
    assert [next(gen) for _ in range(1001)] == reference_stream(42, 1001)


def test_seed_determinism_and_separation():
    s = NumericSeries(tuple(float(i) for i in range(50)), 0.0, 100.0)
    assert add_noise(s, 2.0, 7) == add_noise(s, 2.0, 7)
    assert add_noise(s, 2.0, 7) != add_noise(s, 2.0, 8)


def test_moments_at_sigma_three():
    n = 100_000
    s = NumericSeries((0.0,) * n, -1.0, 1.0)
    noise = np.array(add_noise(s, 3.0, 2024).values)
    assert abs(noise.mean()) <= 0.03
    assert abs(noise.var() - 9.0) <= 0.15


def test_noise_is_normal_shaped():
    gen = standard_normals(5)
    sample = [next(gen) for _ in range(20_000)]
    assert stats.kstest(sample, "norm").pvalue > 0.01
    assert abs(np.corrcoef(sample[:-1], sample[1:])[0, 1]) < 0.03


def test_gaussian_mechanism_uses_clamp_width():
    s = NumericSeries((1.0, 2.0), 0.0, 4.0)
    out, sigma = gaussian_mechanism(s, 1.0, 1e-5, 3)
    assert sigma == calibrate_sigma(PrivacyBudget(1.0, 1e-5, 4.0))
    assert out == add_noise(s, sigma, 3)


@settings(max_examples=60)
@given(st.lists(st.floats(-1e6, 1e6), max_size=50), st.floats(0, 10), st.integers(0, 2**64 - 1))
def test_length_and_index_preserved(values, sigma, seed):
    s = NumericSeries(tuple(values), -100.0, 100.0)
    out = add_noise(s, sigma, seed)
    assert len(out.values) == len(values)
    clean = s.clamped()
    normals = reference_stream(seed, len(values))
    for i, v in enumerate(out.values):
        assert v == clean[i] + sigma * normals[i] if sigma else v == clean[i]
