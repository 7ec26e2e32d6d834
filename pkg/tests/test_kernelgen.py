"""Kernel synthesis tests against direct density-formula oracles."""

import numpy as np
import pytest

from fkprior import kernelgen as kg


def oracle_render(sigma1, sigma2, angle, offset, side):
    """Nested-loop evaluation of the rotated bivariate normal, normalized."""
    rot = np.array(
        [[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]]
    )
    cov = rot @ np.diag([sigma1**2, sigma2**2]) @ rot.T
    inv = np.linalg.inv(cov)
    cy = (side - 1) / 2.0 + offset[0]
    cx = (side - 1) / 2.0 + offset[1]
    w = np.zeros((side, side))
    for i in range(side):
        for j in range(side):
            d = np.array([i - cy, j - cx])
            w[i, j] = np.exp(-0.5 * d @ inv @ d)
    return w / w.sum()


def test_render_matches_direct_density_evaluation():
    k = kg.render_kernel(kg.GaussianKernelParams(1.0, 1.0, 0.0), 11)
    ref = oracle_render(1.0, 1.0, 0.0, (0.0, 0.0), 11)
    assert abs(k[5, 5] - ref[5, 5]) < 1e-12
    np.testing.assert_allclose(k, ref, atol=1e-12)
    rng = np.random.default_rng(17)
    for _ in range(10):
        s1, s2 = rng.uniform(0.35, 5.0, size=2)
        ang = rng.uniform(0.0, np.pi)
        off = tuple(rng.uniform(-1.5, 0.5, size=2))
        k = kg.render_kernel(kg.GaussianKernelParams(s1, s2, ang, off), 11)
        np.testing.assert_allclose(
            k, oracle_render(s1, s2, ang, off, 11), atol=1e-12
        )


def test_isotropic_kernel_ignores_angle():
    base = kg.render_kernel(kg.GaussianKernelParams(1.3, 1.3, 0.0), 11)
    for ang in np.linspace(0.0, np.pi, 7):
        k = kg.render_kernel(kg.GaussianKernelParams(1.3, 1.3, ang), 11)
        assert np.abs(k - base).max() < 1e-12


def test_sigma_swap_with_quarter_turn_is_symmetric():
    rng = np.random.default_rng(23)
    for _ in range(20):
        s1, s2 = rng.uniform(0.35, 5.0, size=2)
        ang = rng.uniform(0.0, np.pi)
        off = tuple(rng.uniform(-1.5, 0.0, size=2))
        a = kg.render_kernel(kg.GaussianKernelParams(s1, s2, ang, off), 11)
        b = kg.render_kernel(
            kg.GaussianKernelParams(s2, s1, (ang + np.pi / 2) % np.pi, off), 11
        )
        assert np.abs(a - b).max() < 1e-10


def test_rendered_kernels_are_normalized_and_nonnegative():
    rng = np.random.default_rng(5)
    for scale in (2, 3, 4):
        lo, hi = kg.sigma_range(scale)
        for _ in range(30):
            params = kg.GaussianKernelParams(
                rng.uniform(lo, hi),
                rng.uniform(lo, hi),
                rng.uniform(0.0, np.pi),
                kg.shift_for_scale(scale),
            )
            k = kg.render_kernel(params, kg.kernel_side(scale))
            assert abs(k.sum() - 1.0) < 1e-9
            assert (k >= 0.0).all()
            assert np.isfinite(k).all()


def test_shift_for_scale_values():
    assert kg.shift_for_scale(1) == (0.0, 0.0)
    assert kg.shift_for_scale(2) == (-0.5, -0.5)
    assert kg.shift_for_scale(4) == (-1.5, -1.5)


def test_sample_params_ranges_and_determinism():
    lo, hi = kg.sigma_range(2)
    assert (lo, hi) == (0.35, 5.0)
    assert kg.kernel_side(2) == 11
    assert kg.kernel_side(4) == 19
    for seed in range(5):
        p1 = kg.sample_params(2, np.random.default_rng(seed))
        p2 = kg.sample_params(2, np.random.default_rng(seed))
        assert (p1.sigma1, p1.sigma2, p1.angle) == (p2.sigma1, p2.sigma2, p2.angle)
        assert lo <= p1.sigma1 <= hi and lo <= p1.sigma2 <= hi
        assert 0.0 <= p1.angle < np.pi
        assert p1.center_offset == (-0.5, -0.5)
    unshifted = kg.sample_params(2, np.random.default_rng(0), shifted=False)
    assert unshifted.center_offset == (0.0, 0.0)
    with pytest.raises(kg.ConfigurationError):
        kg.sample_params(5, np.random.default_rng(0))


def test_sampled_sigma_means_match_uniform_mean():
    for scale in (2, 3):
        rng = np.random.default_rng(100 + scale)
        sigmas = np.array(
            [
                (p.sigma1, p.sigma2)
                for p in (kg.sample_params(scale, rng) for _ in range(10000))
            ]
        )
        want = 0.5 * (0.175 * scale + 2.5 * scale)
        assert abs(sigmas[:, 0].mean() - want) / want < 0.02
        assert abs(sigmas[:, 1].mean() - want) / want < 0.02


def test_perturb_kernel_matches_reference_script():
    rng = np.random.default_rng(9)
    k = kg.sample_kernel(2, rng)
    out = kg.perturb_kernel(k, 0.4, np.random.default_rng(77))
    ref_rng = np.random.default_rng(77)
    u = ref_rng.uniform(-0.4, 0.4, size=k.shape)
    ref = np.maximum(k * (1.0 + u), 0.0)
    ref = ref / ref.sum()
    np.testing.assert_allclose(out, ref, atol=1e-15)
    assert abs(out.sum() - 1.0) < 1e-9


def test_perturb_kernel_amplitude_zero_is_identity():
    k = kg.sample_kernel(3, np.random.default_rng(1))
    out = kg.perturb_kernel(k, 0.0, np.random.default_rng(2))
    np.testing.assert_allclose(out, k, atol=1e-15)


def test_perturb_kernel_errors():
    k = kg.sample_kernel(2, np.random.default_rng(4))
    with pytest.raises(kg.ParameterError):
        kg.perturb_kernel(k, 1.5, np.random.default_rng(0))
    negative = -np.ones((5, 5)) / 25.0
    with pytest.raises(kg.DegenerateKernelError):
        kg.perturb_kernel(negative, 0.0, np.random.default_rng(0))


def test_render_kernel_errors():
    with pytest.raises(kg.ParameterError):
        kg.render_kernel(kg.GaussianKernelParams(1e-7, 1.0, 0.0), 11)
    with pytest.raises(kg.ParameterError):
        kg.render_kernel(kg.GaussianKernelParams(1.0, 1.0, 0.0), 10)


def test_kernel_text_round_trip(tmp_path):
    rng = np.random.default_rng(31)
    k = kg.sample_kernel(2, rng)
    k[0, 0] = -1.25e-13  # flow-sampled kernels may carry tiny negatives
    path = tmp_path / "k.txt"
    kg.save_kernel_text(path, k)
    back = kg.load_kernel_text(path)
    assert back.shape == k.shape
    assert back.tobytes() == k.tobytes()
    text = path.read_text()
    assert text.splitlines()[0] == "FKPK 11"


def test_kernel_text_accepts_exponent_notation(tmp_path):
    path = tmp_path / "k.txt"
    path.write_text("FKPK 2\n2.5e-1 2.5E-1\n0.25 2.5e-001\n")
    k = kg.load_kernel_text(path)
    np.testing.assert_allclose(k, 0.25)


def test_kernel_text_rejects_malformed(tmp_path):
    path = tmp_path / "bad.txt"
    for body in (
        "",
        "FKPX 2\n1 0\n0 0\n",
        "FKPK two\n1 0\n0 0\n",
        "FKPK 2\n1 0\n",
        "FKPK 2\n1 0 0\n0 0\n",
        "FKPK 2\n1 zero\n0 0\n",
    ):
        path.write_text(body)
        with pytest.raises(kg.FormatError):
            kg.load_kernel_text(path)
