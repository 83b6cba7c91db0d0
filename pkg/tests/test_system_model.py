import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ota_fedavg.errors import DomainError, EmptyFleetError, ValidationError
from ota_fedavg.system_model import (
    EQUAL_POWER,
    HETEROGENEOUS,
    DeviceProfile,
    compute_channel_vectors,
    infer_mode,
    load_fleet,
    parse_fleet,
    sort_devices,
    theta_max,
)

from conftest import make_params


def test_sort_by_gain():
    devs = [DeviceProfile(1, 1.0), DeviceProfile(2, 0.1), DeviceProfile(3, 0.5)]
    assert [d.channel_gain for d in sort_devices(devs)] == [0.1, 0.5, 1.0]


def test_sort_single_device():
    dev = DeviceProfile(4, 0.3)
    assert sort_devices([dev]) == [dev]


def test_sort_tie_broken_by_id():
    devs = [DeviceProfile(7, 0.5), DeviceProfile(3, 0.5)]
    assert [d.id for d in sort_devices(devs)] == [3, 7]


def test_sort_rejects_empty_and_duplicates():
    with pytest.raises(EmptyFleetError):
        sort_devices([])
    with pytest.raises(ValidationError):
        sort_devices([DeviceProfile(1, 0.5), DeviceProfile(1, 0.6)])


@pytest.mark.parametrize("gain,power", [(0.0, 1.0), (-1.0, 1.0), (1.0, 0.0), (math.nan, 1.0), (math.inf, 1.0)])
def test_device_profile_rejects_bad_values(gain, power):
    with pytest.raises(DomainError):
        DeviceProfile(1, gain, power)


def test_reference_channel_vectors(ref_devices):
    v = compute_channel_vectors(ref_devices, sum_power=3.0, rounds=1)
    np.testing.assert_allclose(v.c, [0.1, 0.5, 1.0], rtol=0, atol=0)
    np.testing.assert_allclose(v.q, [math.sqrt(3 / 105), math.sqrt(3 / 5), math.sqrt(3)], rtol=1e-15)
    np.testing.assert_allclose(v.q, [0.16903, 0.77460, 1.73205], atol=5e-6)
    assert v.mode == EQUAL_POWER


def test_single_device_vectors():
    v = compute_channel_vectors([DeviceProfile(1, 1.0)], sum_power=1.0, rounds=1)
    assert v.c.tolist() == [1.0] and v.q.tolist() == [1.0]


def test_doubling_rounds_scales_q(ref_devices):
    a = compute_channel_vectors(ref_devices, 30.0, 5)
    b = compute_channel_vectors(ref_devices, 30.0, 10)
    np.testing.assert_allclose(b.q, a.q / math.sqrt(2), rtol=1e-14)
    np.testing.assert_array_equal(a.c, b.c)


def test_channel_vectors_domain(ref_devices):
    with pytest.raises(DomainError):
        compute_channel_vectors(ref_devices, 3.0, 0)
    with pytest.raises(EmptyFleetError):
        compute_channel_vectors([], 3.0, 1)
    with pytest.raises(DomainError):
        compute_channel_vectors(list(reversed(ref_devices)), 3.0, 1)


def test_heterogeneous_c_sorted():
    devs = sort_devices([DeviceProfile(1, 0.2, 4.0), DeviceProfile(2, 0.5, 0.1), DeviceProfile(3, 1.0, 1.0)])
    assert infer_mode(devs) == HETEROGENEOUS
    v = compute_channel_vectors(devs, 3.0, 1)
    assert np.all(np.diff(v.c) >= 0)
    assert v.order == (2, 1, 3)
    with pytest.raises(DomainError):
        compute_channel_vectors(devs, 3.0, 1, mode=EQUAL_POWER)


def test_theta_max_examples(ref_devices):
    assert theta_max({2, 3}, 10.0, ref_devices, 3.0, 1) == pytest.approx(0.5, rel=1e-15)
    assert theta_max({2, 3}, 0.01, ref_devices, 3.0, 1) == 0.01
    assert theta_max({1, 2, 3}, 1e9, ref_devices, 3.0, 1) == pytest.approx(0.1)
    with pytest.raises(DomainError):
        theta_max([], 1.0, ref_devices, 3.0, 1)


gains = st.floats(min_value=0.01, max_value=10.0, allow_nan=False)


@settings(max_examples=200, deadline=None)
@given(st.lists(gains, min_size=1, max_size=15), st.floats(0.1, 100.0), st.integers(1, 50))
def test_vector_invariants(gs, sum_power, rounds):
    devs = sort_devices(DeviceProfile(i + 1, g) for i, g in enumerate(gs))
    v = compute_channel_vectors(devs, sum_power, rounds)
    assert np.all(np.diff(v.c) >= 0)
    # removing weaker devices can only loosen the sum-power term
    assert np.all(np.diff(v.q) >= -1e-12 * v.q[1:])
    assert np.all(v.c > 0) and np.all(v.q > 0)


@settings(max_examples=100, deadline=None)
@given(st.lists(gains, min_size=1, max_size=10, unique=True), st.floats(0.001, 10.0))
def test_theta_max_shrinks_with_superset(gs, cap):
    devs = [DeviceProfile(i + 1, g) for i, g in enumerate(gs)]
    ids = [d.id for d in devs]
    for k in range(1, len(ids)):
        assert theta_max(ids[: k + 1], cap, devs, 10.0, 3) <= theta_max(ids[:k], cap, devs, 10.0, 3)


def test_parse_fleet_errors_name_the_entry():
    with pytest.raises(ValidationError, match=r"fleet\[1\]"):
        parse_fleet([{"id": 1, "channel_gain": 0.5}, {"id": 2, "channel_gain": -1}])
    with pytest.raises(ValidationError):
        parse_fleet({"id": 1})


def test_load_fleet_roundtrip(tmp_path):
    path = tmp_path / "fleet.json"
    path.write_text(json.dumps([{"id": 2, "channel_gain": 0.5, "peak_power": 2.0}, {"id": 1, "channel_gain": 0.1}]))
    devs = load_fleet(path)
    assert {d.id: (d.channel_gain, d.peak_power) for d in devs} == {2: (0.5, 2.0), 1: (0.1, 1.0)}
    with pytest.raises(ValidationError):
        load_fleet(tmp_path / "missing.json")


def test_params_validation():
    with pytest.raises(DomainError):
        make_params(strong_convexity=2.0)
    with pytest.raises(DomainError):
        make_params(learning_rate=1.5)
    with pytest.raises(DomainError):
        make_params(noise_std=-1.0)
    with pytest.raises(DomainError):
        make_params(delta=1.0)
    assert not make_params(strong_convexity=0.0).convex
