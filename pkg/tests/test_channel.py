import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import direct_received, single_path
from ddmodem import _kernels
from ddmodem.channel import (
    ChannelSpec,
    apply_channel,
    build_channel_matrix,
    generate_dataset,
    load_dataset,
    sample_channel,
    save_dataset,
)
from ddmodem.errors import ConfigError, FormatError


def test_max_doppler_at_360kmh(paper_spec):
    assert paper_spec.max_doppler_hz == pytest.approx(1334.2, abs=0.1)
    # 4 GHz, 100 m/s, exact c
    assert paper_spec.max_doppler_hz == pytest.approx(100 * 4e9 / 299_792_458)


def test_delay_grid_step(paper_spec):
    assert paper_spec.sample_interval == pytest.approx(0.5208e-6, rel=1e-4)
    assert 10 * paper_spec.sample_interval == pytest.approx(5.21e-6, abs=5e-9)


def test_frame_geometry(paper_spec):
    assert paper_spec.frame_len == 152
    assert paper_spec.frame_duration == pytest.approx(1 / 15e3)


def test_rejects_delay_beyond_prefix():
    with pytest.raises(ConfigError):
        ChannelSpec(num_subcarriers=32, prefix_len=4, max_delay_grid=6)


@pytest.mark.parametrize("bad", [dict(num_paths=0), dict(prefix_len=-1), dict(subcarrier_spacing_hz=0.0)])
def test_rejects_invalid_fields(bad):
    with pytest.raises(ConfigError):
        ChannelSpec(**bad)


def test_sample_bounds(paper_spec):
    for seed in range(200):
        ch = sample_channel(paper_spec, seed)
        assert len(ch.paths) == paper_spec.num_paths
        assert np.all(np.abs(ch.dopplers_hz) <= paper_spec.max_doppler_hz)
        assert np.all((ch.delays >= 0) & (ch.delays <= paper_spec.max_delay_grid))
        np.testing.assert_allclose(ch.normalized_dopplers, ch.dopplers_hz / 15e3)


def test_single_path_unit_energy():
    spec = ChannelSpec.with_speed_kmh(360, num_subcarriers=16, prefix_len=4, num_paths=1, max_delay_grid=4)
    ds = generate_dataset(spec, 20_000, 3)
    assert ds.gains.shape == (20_000, 1)
    assert np.mean(np.abs(ds.gains) ** 2) == pytest.approx(1.0, abs=0.03)


def test_average_channel_energy(paper_spec):
    ds = generate_dataset(paper_spec, 10_000, 11)
    energy = np.sum(np.abs(ds.gains) ** 2, axis=1).mean()
    assert 0.98 <= energy <= 1.02


def test_identity_channel(desk_spec):
    H = build_channel_matrix(single_path(desk_spec))
    np.testing.assert_array_equal(H, np.eye(desk_spec.frame_len))


def test_pure_delay_subdiagonal(desk_spec):
    H = build_channel_matrix(single_path(desk_spec, delay=2))
    np.testing.assert_array_equal(H, np.eye(desk_spec.frame_len, k=-2))


def test_no_wraparound(desk_spec):
    l = 5
    H = build_channel_matrix(single_path(desk_spec, gain=0.3 - 0.2j, delay=l, doppler_hz=900.0))
    assert np.all(H[:l] == 0)
    assert np.all(np.triu(H, k=-l + 1) == 0)


def test_matrix_matches_direct_sum(paper_spec):
    rng = np.random.default_rng(0)
    for seed in range(5):
        ch = sample_channel(paper_spec, seed)
        H = build_channel_matrix(ch)
        for _ in range(5):
            s = rng.standard_normal(152) + 1j * rng.standard_normal(152)
            np.testing.assert_allclose(H @ s, direct_received(ch, s), rtol=0, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 12),
    st.integers(0, 6),
    st.integers(1, 5),
    st.integers(0, 2**32 - 1),
)
def test_matrix_direct_equivalence_property(M, Mp, Np, seed):
    spec = ChannelSpec.with_speed_kmh(500, num_subcarriers=M, prefix_len=Mp, num_paths=Np, max_delay_grid=Mp)
    ch = sample_channel(spec, seed)
    rng = np.random.default_rng(seed)
    s = (rng.standard_normal(M + Mp) + 1j * rng.standard_normal(M + Mp)) * 10 ** rng.uniform(-3, 3)
    ref = direct_received(ch, s)
    tol = 1e-10 * max(1.0, np.max(np.abs(s)))
    assert np.max(np.abs(build_channel_matrix(ch) @ s - ref)) < tol


def test_repeated_delays_accumulate(desk_spec):
    from ddmodem.channel import ChannelRealization, PathComponent

    p = PathComponent(0.5 + 0j, 3, 0.0, 0.0)
    ch = ChannelRealization((p, p), desk_spec)
    np.testing.assert_allclose(build_channel_matrix(ch), np.eye(desk_spec.frame_len, k=-3))


def test_apply_channel_noiseless(desk_spec):
    ch = sample_channel(desk_spec, 4)
    H = build_channel_matrix(ch)
    s = np.random.default_rng(1).standard_normal(40) + 0j
    np.testing.assert_array_equal(apply_channel(H, s, 0.0), H @ s)
    np.testing.assert_array_equal(apply_channel(np.eye(40), s, 0.0), s)


def test_apply_channel_noise_variance():
    sigma2 = 0.37
    out = apply_channel(np.eye(1), np.zeros((1, 100_000)), sigma2, seed=9)
    assert np.var(out) == pytest.approx(sigma2, rel=0.03)
    assert np.var(out.real) == pytest.approx(sigma2 / 2, rel=0.03)


def test_apply_channel_rejects_negative_noise():
    with pytest.raises(ValueError):
        apply_channel(np.eye(2), np.ones(2), -1.0)


def test_dataset_determinism(desk_spec):
    a = generate_dataset(desk_spec, 500, 1)
    b = generate_dataset(desk_spec, 500, 1)
    for f in ("gains", "delays", "dopplers_hz"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_dataset_is_partition_independent(desk_spec):
    full = generate_dataset(desk_spec, 10, [7, 2])
    # sample i depends only on (seed, i)
    one = generate_dataset(desk_spec, 3, [7, 2])
    np.testing.assert_array_equal(full.gains[:3], one.gains)


def test_dataset_cardinality(desk_spec):
    ds = generate_dataset(desk_spec, 3, 0)
    assert len(ds) == 3
    assert all(len(ch.paths) == desk_spec.num_paths for ch in ds)
    assert ds.matrices().shape == (3, 40, 40)


def test_dataset_matrices_match_realizations(desk_spec):
    ds = generate_dataset(desk_spec, 6, 5)
    Hs = ds.matrices()
    for i, ch in enumerate(ds):
        np.testing.assert_allclose(Hs[i], build_channel_matrix(ch), atol=1e-14)


def test_dataset_file_roundtrip(tmp_path, desk_spec):
    ds = generate_dataset(desk_spec, 50, 8)
    path = tmp_path / "x.ddch"
    save_dataset(ds, path, {"config_hash": "abc", "seed": 8})
    back = load_dataset(path)
    assert back.spec == desk_spec
    np.testing.assert_array_equal(back.gains, ds.gains)
    np.testing.assert_array_equal(back.delays, ds.delays)
    np.testing.assert_array_equal(back.dopplers_hz, ds.dopplers_hz)
    assert back.meta["config_hash"] == "abc"
    raw = path.read_bytes()
    assert raw[:4] == b"DDCH"
    # header 28 bytes + 4 spec doubles + 50*4 records of 28 bytes, then metadata
    assert raw[60 + 50 * 4 * 28 : 60 + 50 * 4 * 28 + 4] == b"META"


def test_dataset_file_truncated(tmp_path, desk_spec):
    path = tmp_path / "x.ddch"
    save_dataset(generate_dataset(desk_spec, 5, 0), path)
    path.write_bytes(path.read_bytes()[:100])
    with pytest.raises(FormatError):
        load_dataset(path)


def test_dataset_file_bad_magic(tmp_path):
    path = tmp_path / "x.ddch"
    path.write_bytes(b"NOPE" + bytes(100))
    with pytest.raises(FormatError):
        load_dataset(path)


@pytest.mark.skipif(not _kernels.NUMBA_KERNELS, reason="numba unavailable")
def test_numba_and_numpy_kernels_agree(desk_spec):
    ds = generate_dataset(desk_spec, 20, 2)
    args = (ds.gains, ds.delays, ds.normalized_dopplers, 32, 8)
    np.testing.assert_allclose(
        _kernels.NUMBA_KERNELS["channel_matrices"](*args), _kernels.NUMPY_KERNELS["channel_matrices"](*args), atol=1e-13
    )
