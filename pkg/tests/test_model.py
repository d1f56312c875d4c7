import numpy as np
import pytest

from lpvdelay.iqc import make_multiplier, realize_filter, select_multipliers
from lpvdelay.model import (DelaySpec, DelayedLpvPlant, build_augmented, close_loop, example_plant,
                            nominal_interconnection)
from lpvdelay.params import ParameterDomain, ParamMatrixFunction


def test_delay_spec_invariants():
    with pytest.raises(ValueError):
        DelaySpec(0.0, 0.1)
    with pytest.raises(ValueError):
        DelaySpec(1.0, -0.1)


def test_plant_shape_mismatch():
    p = example_plant()
    with pytest.raises(ValueError, match="shape"):
        DelayedLpvPlant(p.A_p, p.A_d, np.zeros((3, 1)), p.B_p2, p.C_p1, p.C_d1, p.D_p11, p.D_p12,
                        delay=p.delay, domain=p.domain)


def test_nominal_state_matrix_at_zero():
    nom = nominal_interconnection(example_plant())
    np.testing.assert_allclose(nom.A([0.0]), [[0, 1.1], [-2.2, -3.3]])


def test_nominal_w_channel_at_one():
    nom = nominal_interconnection(example_plant())
    np.testing.assert_allclose(nom.B_w([1.0]), -np.array([[0.2, 0.1], [-0.1, -0.3]]))


def test_zero_delay_matrix_gives_zero_w_channel():
    p = example_plant()
    q = DelayedLpvPlant(p.A_p, np.zeros((2, 2)), p.B_p1, p.B_p2, p.C_p1, p.C_d1, p.D_p11, p.D_p12,
                        delay=p.delay, domain=p.domain)
    nom = nominal_interconnection(q)
    np.testing.assert_array_equal(nom.B_w([0.3]), np.zeros((2, 2)))
    np.testing.assert_allclose(nom.A([0.3]), p.A_p([0.3]))


def test_rewritten_dynamics_reproduce_plant(rng):
    p = example_plant()
    nom = nominal_interconnection(p)
    for _ in range(20):
        rho = rng.uniform(-1, 1, 1)
        x, xd, d, u = rng.normal(size=2), rng.normal(size=2), rng.normal(size=1), rng.normal(size=1)
        w = x - xd
        direct = p.state_derivative(rho, x, xd, d, u)
        rewritten = nom.A(rho) @ x + nom.B_w(rho) @ w + nom.B_d(rho) @ d + nom.B_u(rho) @ u
        np.testing.assert_allclose(direct, rewritten, atol=1e-14)
        e_direct = p.output(rho, x, xd, d, u)
        e_rew = nom.C(rho) @ x + nom.D_w(rho) @ w + nom.D_d(rho) @ d + nom.D_u(rho) @ u
        np.testing.assert_allclose(e_direct, e_rew, atol=1e-14)


def test_augmented_dims_both_multipliers():
    p = example_plant(tau_bar=10.0, r=0.0)
    aug = build_augmented(p, realize_filter(select_multipliers(p.delay), 2))
    assert aug.n_psi == 8
    assert aug.A_aug([0.0]).shape == (10, 10)


def test_augmented_dims_pi2_only():
    p = example_plant(tau_bar=2.0, r=1.2)
    aug = build_augmented(p, realize_filter(select_multipliers(p.delay), 2))
    assert aug.n_psi == 4


def test_augmented_constant_filter_outputs():
    p = example_plant(tau_bar=10.0, r=0.0)
    aug = build_augmented(p, realize_filter(select_multipliers(p.delay), 2))
    assert isinstance(aug.C_aug0, np.ndarray) and isinstance(aug.D_aug00, np.ndarray)
    # B_psi2 = 0 and D_psi2 = 0 in the top rows: no direct w path into z-bar
    np.testing.assert_array_equal(aug.D_aug00, 0.0)


def test_zero_controller_closed_loop():
    p = example_plant(tau_bar=2.0, r=1.2)
    aug = build_augmented(p, realize_filter(select_multipliers(p.delay), 2))
    cl = close_loop(aug, np.zeros((1, aug.n_cl)), np.zeros((1, 2)), [0.4])
    m = aug.at([0.4])
    np.testing.assert_array_equal(cl.A_cl, m["A_aug"])
    np.testing.assert_array_equal(cl.B_cl1, m["B_aug0"])
    np.testing.assert_array_equal(cl.B_cl2, m["B_aug1"])


def test_closed_loop_structure_and_affine_identity(rng):
    p = example_plant(tau_bar=10.0, r=0.0)
    aug = build_augmented(p, realize_filter(select_multipliers(p.delay), 2))
    for _ in range(10):
        rho = rng.uniform(-1, 1, 1)
        F, H = rng.normal(size=(1, aug.n_cl)), rng.normal(size=(1, 2))
        cl = close_loop(aug, F, H, rho)
        m = aug.at(rho)
        np.testing.assert_allclose(cl.A_cl - m["A_aug"], m["B_aug2"] @ F, atol=1e-14)
        np.testing.assert_allclose(cl.B_cl1 - m["B_aug0"], m["B_aug2"] @ H, atol=1e-14)
        np.testing.assert_allclose(cl.C_cl2 - m["C_aug1"], m["D_aug12"] @ F, atol=1e-14)
        for k in range(aug.n_mult):
            np.testing.assert_array_equal(cl.D_cl11[k][2:], np.eye(2))
            np.testing.assert_array_equal(cl.D_cl12[k][2:], 0.0)
            np.testing.assert_array_equal(cl.C_cl1[k][2:], 0.0)


def test_scalar_rank_one_update():
    dom = ParameterDomain.symmetric([(-1.0, 1.0)], 0.0)
    a, f = -0.7, 2.5
    p = DelayedLpvPlant(A_p=[[a]], A_d=[[0.0]], B_p1=[[1.0]], B_p2=[[1.0]], C_p1=[[1.0]], C_d1=[[0.0]],
                        D_p11=[[0.0]], D_p12=[[0.0]], delay=DelaySpec(1.0, 0.0), domain=dom)
    real = realize_filter([make_multiplier("pi2", p.delay)], 1)
    aug = build_augmented(p, real)
    F = np.zeros((1, aug.n_cl))
    F[0, 0] = f
    cl = close_loop(aug, F, np.zeros((1, 1)), [0.0])
    assert cl.A_cl[0, 0] == pytest.approx(a + f)


def test_close_loop_rejects_bad_shapes():
    p = example_plant()
    aug = build_augmented(p, realize_filter(select_multipliers(p.delay), 2))
    with pytest.raises(ValueError, match="F_c"):
        close_loop(aug, np.zeros((1, 3)), np.zeros((1, 2)), [0.0])


def test_block_pmf_json_export():
    p = example_plant()
    aug = build_augmented(p, realize_filter(select_multipliers(p.delay), 2))
    data = aug.to_json([0.0])
    assert np.asarray(data["A_aug"]).shape == (aug.n_cl, aug.n_cl)
    assert isinstance(p.A_p, ParamMatrixFunction)
