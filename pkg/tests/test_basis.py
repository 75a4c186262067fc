"""Tests for the reduced-order decoders: Fourier, POD/SVD, autoencoder."""

import math

import numpy as np
import pytest

from pgnniv.basis import (
    FrozenDecoder,
    PodBasis,
    SpectralBasis,
    ae_decode,
    ae_encode,
    basis_from_json,
    basis_to_json,
    compute_svd,
    enumerate_fourier_modes,
    fourier_basis,
    load_basis,
    pod_basis,
    pretrain_autoencoder,
    save_basis,
    spectral_decode,
)
from pgnniv.data import batch_arrays, generate_dataset, split_dataset
from pgnniv.rng import Stream, stream


def _random_matrix(rows, cols, seed):
    return stream(seed, 90).normals(rows * cols).reshape(rows, cols)


# ---- Fourier basis -----------------------------------------------------


def test_fourier_constant_mode():
    sb = fourier_basis(10, 1)
    assert sb.basis.shape == (100, 1)
    assert np.allclose(sb.basis, 0.1, atol=1e-14)
    assert sb.mode_order == ((0, 0, "cos"),)


def test_fourier_first_five_modes():
    sb = fourier_basis(10, 5)
    assert sb.mode_order == (
        (0, 0, "cos"),
        (0, 1, "cos"),
        (0, 1, "sin"),
        (1, 0, "cos"),
        (1, 0, "sin"),
    )


def test_fourier_gram_identity_n5():
    sb = fourier_basis(10, 5)
    gram = sb.basis.T @ sb.basis
    assert np.max(np.abs(gram - np.eye(5))) < 1e-10


def test_fourier_full_basis_orthogonal_roundtrip():
    for m in (4, 7, 10):
        sb = fourier_basis(m, m * m)
        gram = sb.basis.T @ sb.basis
        assert np.max(np.abs(gram - np.eye(m * m))) < 1e-10
        u = _random_matrix(m * m, 1, seed=m).reshape(-1)
        rebuilt = sb.basis @ (sb.basis.T @ u)
        assert np.max(np.abs(rebuilt - u)) < 1e-10


def test_fourier_mode_census():
    modes = enumerate_fourier_modes(10)
    assert len(modes) == 100
    have_sin = {(k1, k2) for k1, k2, phase in modes if phase == "sin"}
    have_cos = {(k1, k2) for k1, k2, phase in modes if phase == "cos"}
    assert have_cos - have_sin == {(0, 0), (0, 5), (5, 0), (5, 5)}
    modes5 = enumerate_fourier_modes(5)
    assert len(modes5) == 25
    have_sin5 = {(k1, k2) for k1, k2, phase in modes5 if phase == "sin"}
    have_cos5 = {(k1, k2) for k1, k2, phase in modes5 if phase == "cos"}
    assert have_cos5 - have_sin5 == {(0, 0)}


def test_fourier_columns_match_direct_formula():
    m = 5
    sb = fourier_basis(m, m * m)
    for col, (k1, k2, phase) in enumerate(sb.mode_order):
        raw = np.empty(m * m)
        for i in range(m):
            for j in range(m):
                angle = 2.0 * math.pi * (k1 * i + k2 * j) / m
                raw[i * m + j] = math.cos(angle) if phase == "cos" else math.sin(angle)
        raw /= np.linalg.norm(raw)
        assert np.allclose(sb.basis[:, col], raw, atol=1e-12)


def test_fourier_mode_count_bounds():
    with pytest.raises(ValueError):
        fourier_basis(10, 0)
    with pytest.raises(ValueError):
        fourier_basis(10, 101)
    assert fourier_basis(10, 100).basis.shape == (100, 100)


# ---- spectral decode ---------------------------------------------------


def test_spectral_decode_first_canonical_vector():
    sb = fourier_basis(10, 5)
    z = np.zeros(5)
    z[0] = 1.0
    field = spectral_decode(z, sb)
    assert field.shape == (10, 10)
    assert np.allclose(field, 0.1, atol=1e-14)


def test_spectral_decode_zero_latent():
    sb = fourier_basis(10, 5)
    assert np.array_equal(spectral_decode(np.zeros(5), sb), np.zeros((10, 10)))


def test_spectral_decode_full_roundtrip():
    m = 10
    sb = fourier_basis(m, m * m)
    u = _random_matrix(m * m, 1, seed=3).reshape(-1)
    z = sb.basis.T @ u
    assert np.max(np.abs(spectral_decode(z, sb).reshape(-1) - u)) < 1e-10


def test_spectral_decode_linearity():
    sb = fourier_basis(10, 7)
    z1 = _random_matrix(7, 1, seed=5).reshape(-1)
    z2 = _random_matrix(7, 1, seed=6).reshape(-1)
    mixed = spectral_decode(2.5 * z1 - 0.75 * z2, sb)
    separate = 2.5 * spectral_decode(z1, sb) - 0.75 * spectral_decode(z2, sb)
    assert np.allclose(mixed, separate, rtol=1e-12, atol=1e-13)


def test_spectral_decode_length_mismatch():
    sb = fourier_basis(10, 5)
    with pytest.raises(ValueError):
        spectral_decode(np.zeros(6), sb)


def test_spectral_decode_accepts_pod_basis():
    a = _random_matrix(12, 25, seed=8)
    pb = pod_basis(a, 4)
    field = spectral_decode(np.ones(4), pb)
    assert field.shape == (5, 5)
    assert np.allclose(field.reshape(-1), pb.modes @ np.ones(4))


# ---- SVD ---------------------------------------------------------------


def test_svd_identical_rows_rank_one():
    v = _random_matrix(1, 12, seed=11).reshape(-1)
    a = np.tile(v, (7, 1))
    _, sigma, _ = compute_svd(a)
    assert abs(sigma[0] - math.sqrt(7.0) * np.linalg.norm(v)) < 1e-10
    assert np.all(sigma[1:] < 1e-10)


def test_svd_diagonal_ordering():
    u, sigma, v = compute_svd(np.array([[3.0, 0.0], [0.0, 4.0]]))
    assert np.allclose(sigma, [4.0, 3.0], atol=1e-12)
    rebuilt = u @ np.diag(sigma) @ v.T
    assert np.allclose(rebuilt, [[3.0, 0.0], [0.0, 4.0]], atol=1e-12)


def _check_factorization(a):
    u, sigma, v = compute_svd(a)
    rank = min(a.shape)
    assert u.shape == (a.shape[0], rank)
    assert v.shape == (a.shape[1], rank)
    assert sigma.shape == (rank,)
    assert np.all(np.diff(sigma) <= 1e-12)
    rel = np.linalg.norm(a - u @ np.diag(sigma) @ v.T) / np.linalg.norm(a)
    assert rel < 1e-9
    assert np.max(np.abs(u.T @ u - np.eye(rank))) < 1e-9
    assert np.max(np.abs(v.T @ v - np.eye(rank))) < 1e-9
    reference = np.linalg.svd(a, compute_uv=False)
    assert np.allclose(sigma, reference, rtol=1e-9, atol=1e-9 * reference[0])
    return u, sigma, v


def test_svd_wide_matrix_against_reference():
    a = _random_matrix(20, 100, seed=13)
    _, sigma, v = _check_factorization(a)
    gram = a.T @ a
    rel = np.linalg.norm(gram - v @ np.diag(sigma**2) @ v.T) / np.linalg.norm(gram)
    assert rel < 1e-9


def test_svd_tall_matrix_against_reference():
    _check_factorization(_random_matrix(30, 8, seed=17))


def test_svd_square_matrix_against_reference():
    _check_factorization(_random_matrix(15, 15, seed=19))


def test_svd_input_validation():
    with pytest.raises(ValueError):
        compute_svd(np.zeros((0, 5)))
    with pytest.raises(ValueError):
        compute_svd(np.zeros(7))


# ---- POD ---------------------------------------------------------------


def test_pod_energy_error_two_values():
    pb = pod_basis(np.array([[3.0, 0.0], [0.0, 4.0]]), 1)
    assert abs(pb.energy_error - 0.36) < 1e-12
    assert np.allclose(pb.singular_values, [4.0, 3.0], atol=1e-12)


def test_pod_full_rank_zero_energy_error():
    a = _random_matrix(10, 15, seed=23)
    pb = pod_basis(a, 10)
    assert pb.energy_error <= 1e-12


def test_pod_rank3_exact_reconstruction():
    left = _random_matrix(20, 3, seed=29)
    right = _random_matrix(3, 36, seed=31)
    a = left @ right
    pb = pod_basis(a, 3)
    rebuilt = a @ pb.modes @ pb.modes.T
    assert np.linalg.norm(rebuilt - a) / np.linalg.norm(a) < 1e-9


def test_pod_mode_count_bounds():
    a = _random_matrix(5, 8, seed=37)
    with pytest.raises(ValueError):
        pod_basis(a, 6)
    with pytest.raises(ValueError):
        pod_basis(a, 0)


def test_pod_modes_orthonormal_and_values_sorted():
    a = _random_matrix(8, 12, seed=41)
    pb = pod_basis(a, 5)
    assert np.max(np.abs(pb.modes.T @ pb.modes - np.eye(5))) < 1e-10
    assert np.all(np.diff(pb.singular_values) <= 1e-12)


def test_pod_energy_error_matches_reconstruction_error():
    a = _random_matrix(12, 25, seed=43)
    for n in (2, 5, 9):
        pb = pod_basis(a, n)
        residual = a - a @ pb.modes @ pb.modes.T
        rel_sq = np.linalg.norm(residual) ** 2 / np.linalg.norm(a) ** 2
        assert abs(rel_sq - pb.energy_error) < 1e-9


def test_pod_truncation_beats_random_directions():
    for trial in range(20):
        draws = stream(4000 + trial, 91)
        left = draws.normals(16 * 3).reshape(16, 3)
        right = draws.normals(3 * 30).reshape(3, 30)
        noise = draws.normals(16 * 30).reshape(16, 30)
        a = left @ right + 0.01 * noise
        pb = pod_basis(a, 3)
        pod_err = np.linalg.norm(a - a @ pb.modes @ pb.modes.T)
        q, _ = np.linalg.qr(draws.normals(30 * 3).reshape(30, 3))
        random_err = np.linalg.norm(a - a @ q @ q.T)
        assert pod_err <= random_err + 1e-12


# ---- autoencoder -------------------------------------------------------


def _smooth_fields(count, m, seed):
    """Low-frequency random fields, flattened, for quick autoencoder runs."""
    sb = fourier_basis(m, 4)
    draws = stream(seed, 92)
    coeffs = draws.normals(count * 4).reshape(count, 4)
    return coeffs @ sb.basis.T


def test_ae_determinism_and_shapes():
    fields = _smooth_fields(12, 4, seed=51)
    enc_a, dec_a = pretrain_autoencoder(fields, n=3, epochs=40, learning_rate=3e-3, seed=7)
    enc_b, dec_b = pretrain_autoencoder(fields, n=3, epochs=40, learning_rate=3e-3, seed=7)
    enc_c, _ = pretrain_autoencoder(fields, n=3, epochs=40, learning_rate=3e-3, seed=8)
    assert [layer.weights.shape for layer in enc_a] == [(16, 20), (20, 10), (10, 3)]
    assert [layer.weights.shape for layer in dec_a.layers] == [(3, 10), (10, 20), (20, 16)]
    assert dec_a.trainable is False
    for la, lb in zip(enc_a + dec_a.layers, enc_b + dec_b.layers):
        assert np.array_equal(la.weights, lb.weights)
        assert np.array_equal(la.bias, lb.bias)
    assert not np.array_equal(enc_a[0].weights, enc_c[0].weights)


def test_ae_beats_zero_latent_on_training_data():
    fields = _smooth_fields(10, 4, seed=53)
    enc, dec = pretrain_autoencoder(fields, n=3, epochs=800, learning_rate=3e-3, seed=9)
    zero_field = ae_decode(np.zeros(3), dec).reshape(-1)
    trained_errs = []
    zero_errs = []
    for row in fields:
        rebuilt = ae_decode(ae_encode(row, enc), dec).reshape(-1)
        denom = np.linalg.norm(row)
        trained_errs.append(np.linalg.norm(rebuilt - row) / denom)
        zero_errs.append(np.linalg.norm(zero_field - row) / denom)
    assert float(np.median(trained_errs)) < float(np.median(zero_errs))


def test_ae_divergence_reports_epoch():
    fields = _smooth_fields(6, 4, seed=55)
    with pytest.raises(RuntimeError, match="epoch"):
        pretrain_autoencoder(fields, n=2, epochs=50, learning_rate=1e160, seed=3)


def test_ae_decode_contracts():
    fields = _smooth_fields(6, 4, seed=57)
    _, dec = pretrain_autoencoder(fields, n=2, epochs=30, learning_rate=3e-3, seed=4)
    with pytest.raises(ValueError):
        ae_decode(np.zeros(3), dec)
    out1 = ae_decode(np.zeros(2), dec)
    out2 = ae_decode(np.zeros(2), dec)
    assert out1.shape == (4, 4)
    assert np.array_equal(out1, out2)


def test_ae_decode_lipschitz_bound():
    fields = _smooth_fields(8, 4, seed=59)
    _, dec = pretrain_autoencoder(fields, n=3, epochs=100, learning_rate=3e-3, seed=5)
    bound = 1.0
    for layer in dec.layers:
        bound *= np.linalg.svd(layer.weights, compute_uv=False)[0]
    draws = stream(61, 93)
    z = draws.normals(3)
    delta = 1e-3 * draws.normals(3)
    diff = ae_decode(z + delta, dec) - ae_decode(z, dec)
    assert np.linalg.norm(diff) <= bound * np.linalg.norm(delta) * (1.0 + 1e-9)


def test_ae_heldout_reconstruction_quality():
    dataset = generate_dataset(material=1, count=100, mu=0.0, m=10, seed=321)
    splits = split_dataset(dataset, "autoencoder", seed=321)
    train_u = batch_arrays(dataset, splits.ae_train_train)["u"]
    heldout_u = batch_arrays(dataset, splits.ae_train_test)["u"]
    enc, dec = pretrain_autoencoder(train_u, n=10, epochs=20000, learning_rate=3e-3, seed=321)
    errs = []
    for row in heldout_u:
        rebuilt = ae_decode(ae_encode(row, enc), dec).reshape(-1)
        errs.append(np.linalg.norm(rebuilt - row) / np.linalg.norm(row))
    assert float(np.median(errs)) < 5e-2


# ---- persistence -------------------------------------------------------


def test_fourier_basis_json_roundtrip(tmp_path):
    sb = fourier_basis(6, 9)
    path = tmp_path / "fourier.json"
    save_basis(sb, str(path))
    loaded = load_basis(str(path))
    assert isinstance(loaded, SpectralBasis)
    assert loaded.m == 6 and loaded.n == 9
    assert loaded.mode_order == sb.mode_order
    assert np.array_equal(loaded.basis, sb.basis)


def test_pod_basis_json_roundtrip(tmp_path):
    a = _random_matrix(9, 16, seed=67)
    pb = pod_basis(a, 4)
    path = tmp_path / "pod.json"
    save_basis(pb, str(path))
    loaded = load_basis(str(path))
    assert isinstance(loaded, PodBasis)
    assert np.array_equal(loaded.modes, pb.modes)
    assert np.array_equal(loaded.singular_values, pb.singular_values)
    assert loaded.energy_error == pb.energy_error


def test_basis_json_unknown_kind():
    with pytest.raises(ValueError):
        basis_from_json({"kind": "wavelet", "m": 4, "n": 2, "matrix": [0.0] * 32})


def test_basis_to_json_shapes():
    sb = fourier_basis(4, 6)
    payload = basis_to_json(sb)
    assert payload["kind"] == "fourier"
    assert len(payload["matrix"]) == 16 * 6
    rebuilt = basis_from_json(payload)
    assert np.array_equal(rebuilt.basis, sb.basis)
