import numpy as np

from skpd_mcca.errors import GenerationError
from skpd_mcca.simgen import (
    SimConfig,
    build_joint_covariance,
    family_covariance,
    generate_dataset,
    generate_y,
    make_theta,
    make_truth,
)


def test_sim_config_defaults_and_validation():
    cfg = SimConfig()
    assert (cfg.n, cfg.image_dims, cfg.q, cfg.theta_sparsity) == (1000, (32, 32), 100, 5)
    for bad in ({"rho1": 1.0}, {"rho2": 0.0}, {"cov_family": "ar1"}, {"theta_sparsity": 0}):
        try:
            SimConfig(**bad)
            assert False, "expected rejection"
        except GenerationError:
            pass


def test_sim_config_dict_form():
    cfg = SimConfig(n=50, image_dims=(16, 16), q=10, shape="three_block", seed=4)
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    try:
        SimConfig.from_dict({"n": 50, "noise": 1.0})
        assert False, "expected rejection"
    except GenerationError as exc:
        assert "unknown simulation keys" in str(exc)


def test_custom_shape_needs_mask_file():
    try:
        SimConfig(shape="custom")
        assert False, "expected rejection"
    except GenerationError as exc:
        assert "mask_file" in str(exc)


def test_toeplitz_family():
    cov = family_covariance("toeplitz", 4, 0.9)
    assert abs(cov[0, 3] - 0.9**3) < 1e-15
    np.testing.assert_array_equal(cov, cov.T)


def test_make_theta_is_unit_and_sparse():
    theta = make_theta(100, 5, 0)
    assert np.count_nonzero(theta) == 5
    assert abs(np.linalg.norm(theta) - 1.0) < 1e-12


def test_truth_has_unit_population_variance():
    cfg = SimConfig(n=10, image_dims=(16, 16), q=20, cov_family="toeplitz")
    truth = make_truth(cfg, 0)
    c = truth.C_true.reshape(-1)
    sigma_x = family_covariance("toeplitz", c.size)
    sigma_z = family_covariance("toeplitz", 20)
    assert abs(c @ sigma_x @ c - 1.0) < 1e-10
    assert abs(truth.theta_true @ sigma_z @ truth.theta_true - 1.0) < 1e-10
    np.testing.assert_array_equal(truth.support_C, np.flatnonzero(truth.mask))


def test_generate_y_hits_target_correlation_exactly():
    cfg = SimConfig(n=10, image_dims=(8, 8), q=5, block_dims=(4, 4))
    truth = make_truth(cfg, 1)
    rng = np.random.default_rng(2)
    for k in range(50):
        rho2 = 0.05 + 0.9 * k / 49
        images = rng.standard_normal((30 + k, 8, 8))
        y = generate_y(images, truth, rho2, k)
        x_star = images.reshape(len(images), -1) @ truth.C_true.reshape(-1)
        assert abs(np.corrcoef(y, x_star)[0, 1] - rho2) < 1e-10


def test_generate_y_boundary_correlations():
    cfg = SimConfig(n=10, image_dims=(8, 8), q=5, block_dims=(4, 4))
    truth = make_truth(cfg, 1)
    images = np.random.default_rng(3).standard_normal((40, 8, 8))
    x_star = images.reshape(40, -1) @ truth.C_true.reshape(-1)

    y0 = generate_y(images, truth, 0.0, 4)
    assert abs(np.corrcoef(y0, x_star)[0, 1]) < 1e-10
    assert np.std(y0) > 0

    y1 = generate_y(images, truth, 1.0, 4)
    assert abs(np.corrcoef(y1, x_star)[0, 1] - 1.0) < 1e-10

    for bad in (-0.1, 1.1):
        try:
            generate_y(images, truth, bad, 4)
            assert False, "expected rejection"
        except GenerationError as exc:
            assert "rho2" in str(exc)


def test_generate_y_rejects_constant_projection():
    cfg = SimConfig(n=10, image_dims=(8, 8), q=5, block_dims=(4, 4))
    truth = make_truth(cfg, 1)
    try:
        generate_y(np.ones((10, 8, 8)), truth, 0.5, 0)
        assert False, "expected rejection"
    except GenerationError as exc:
        assert "constant" in str(exc)


def test_generate_dataset_is_deterministic(small_sim_config):
    a, truth_a = generate_dataset(small_sim_config)
    b, truth_b = generate_dataset(small_sim_config)
    np.testing.assert_array_equal(a.images, b.images)
    np.testing.assert_array_equal(a.genetics, b.genetics)
    np.testing.assert_array_equal(a.outcome, b.outcome)
    np.testing.assert_array_equal(truth_a.theta_true, truth_b.theta_true)
    assert a.images.shape == (200, 16, 16)
    assert a.genetics.shape == (200, 20)


def test_generated_image_genetic_correlation_is_near_rho1():
    for family in ("identity", "toeplitz"):
        cfg = SimConfig(n=4000, image_dims=(16, 16), q=20, rho1=0.7, cov_family=family, seed=5)
        data, truth = generate_dataset(cfg)
        xc = data.images.reshape(cfg.n, -1) @ truth.C_true.reshape(-1)
        zt = data.genetics @ truth.theta_true
        assert abs(np.corrcoef(xc, zt)[0, 1] - 0.7) < 0.04
        assert abs(np.corrcoef(xc, data.outcome)[0, 1] - cfg.rho2) < 1e-10


def test_custom_shape_needs_mask_at_generation(tmp_path):
    cfg = SimConfig(n=20, image_dims=(8, 8), q=5, shape="custom", mask_file=str(tmp_path / "m"))
    try:
        generate_dataset(cfg)
        assert False, "expected rejection"
    except GenerationError as exc:
        assert "load the mask" in str(exc)

    mask = np.zeros((8, 8))
    mask[1:3, 1:3] = 1.0
    data, truth = generate_dataset(cfg, mask=mask)
    np.testing.assert_array_equal(truth.mask, mask)
    assert data.n == 20


def test_joint_covariance_embeds_rho1_along_the_true_directions():
    for family in ("identity", "toeplitz"):
        cfg = SimConfig(n=10, image_dims=(16, 16), q=20, rho1=0.7, cov_family=family)
        truth = make_truth(cfg, 2)
        joint = build_joint_covariance(cfg, truth)
        dx = cfg.image_size
        sigma_x = family_covariance(family, dx)
        sigma_z = family_covariance(family, cfg.q)

        np.testing.assert_array_equal(joint, joint.T)
        np.testing.assert_array_equal(joint[:dx, :dx], sigma_x)
        np.testing.assert_array_equal(joint[dx:, dx:], sigma_z)
        c = truth.C_true.reshape(-1)
        assert abs(c @ joint[:dx, dx:] @ truth.theta_true - 0.7) < 1e-10


def test_joint_covariance_without_correlation_is_block_diagonal():
    cfg = SimConfig(n=10, image_dims=(8, 8), q=6, block_dims=(4, 4), cov_family="toeplitz")
    truth = make_truth(cfg, 0)
    joint = build_joint_covariance(cfg, truth, rho1=0.0)
    dx = cfg.image_size
    assert not joint[:dx, dx:].any()
    assert not joint[dx:, :dx].any()
    try:
        build_joint_covariance(cfg, truth, rho1=1.0)
        assert False, "expected rejection"
    except GenerationError as exc:
        assert "rho1" in str(exc)
