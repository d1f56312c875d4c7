import json

import numpy as np
import pytest

from lpvdelay.iqc import make_multiplier, realize_filter, select_multipliers
from lpvdelay.model import DelaySpec, DelayedLpvPlant, build_augmented, example_plant
from lpvdelay.params import BasisFunction, ParameterDomain, make_grid
from lpvdelay.synthesis import (SynthesisConfig, SynthesisError, SynthesisResult, _lmi1_matrix,
                                assemble_synthesis_sdp, minimize_gamma, nullspace_basis, temp_residuals,
                                verify_analysis)

CONST = (BasisFunction((0,)),)


def closed_loop_hinf(plant, realization, gains, rho, tau, omegas):
    """Sup over omegas of the d -> e gain with frozen rho and constant delay tau.

    Built directly from the plant equations and the controller law, with
    x(t - tau) -> exp(-s tau) X(s); independent of the LMI machinery.
    """
    m = plant.at(rho)
    F, H = gains(rho)
    n = plant.n_x
    Fp, Fpsi = F[:, :n], F[:, n:]
    A, Ad, B1, B2 = m["A_p"], m["A_d"], m["B_p1"], m["B_p2"]
    C1, Cd, D11, D12 = m["C_p1"], m["C_d1"], m["D_p11"], m["D_p12"]
    Apsi, Bpsi = realization.A, realization.B1
    npsi = Apsi.shape[0]
    worst = 0.0
    for w in omegas:
        s = 1j * w
        D = np.exp(-s * tau)
        # u = (Fp + H) x - H D x + Fpsi xpsi
        Kx = Fp + H - H * D
        top = np.hstack([s * np.eye(n) - A - Ad * D - B2 @ Kx, -B2 @ Fpsi])
        bot = np.hstack([-Bpsi, s * np.eye(npsi) - Apsi])
        X = np.linalg.solve(np.vstack([top, bot]), np.vstack([B1, np.zeros((npsi, B1.shape[1]))]))
        Ce = np.hstack([C1 + Cd * D + D12 @ Kx, D12 @ Fpsi])
        G = Ce @ X + D11
        worst = max(worst, np.linalg.norm(G, 2))
    return worst


def scalar_plant(a, with_control=False):
    dom = ParameterDomain(((0.0, 0.0),), ((0.0, 0.0),))
    return DelayedLpvPlant(A_p=[[a]], A_d=[[0.0]], B_p1=[[1.0]], B_p2=[[1.0 if with_control else 0.0]],
                           C_p1=[[1.0]], C_d1=[[0.0]], D_p11=[[0.0]], D_p12=[[0.0]],
                           delay=DelaySpec(1.0, 0.0), domain=dom)


def zero_gains(aug):
    return lambda rho: (np.zeros((aug.n_u, aug.n_cl)), np.zeros((aug.n_u, aug.n_x)))


# ---------------------------------------------------------------- nullspace

def test_nullspace_row_vector():
    N = nullspace_basis([[1.0, 0.0]])
    assert N.shape == (2, 1)
    np.testing.assert_allclose(np.abs(N[:, 0]), [0.0, 1.0], atol=1e-15)


def test_nullspace_of_zero_is_identity():
    N = nullspace_basis(np.zeros((1, 3)))
    np.testing.assert_allclose(N.T @ N, np.eye(3), atol=1e-15)
    assert N.shape == (3, 3)


def test_nullspace_example_plant_residuals():
    p = example_plant(tau_bar=10.0, r=0.0)
    real = realize_filter(select_multipliers(p.delay), 2)
    aug = build_augmented(p, real)
    m = aug.at([0.3])
    G = np.vstack([m["B_aug2"], np.zeros((aug.n_x + aug.n_d + aug.n_mult * aug.n_x, aug.n_u)),
                   m["D_aug12"]])
    N = nullspace_basis(G.T)
    assert np.linalg.norm(G.T @ N) <= 1e-12
    assert np.linalg.norm(N.T @ N - np.eye(N.shape[1])) <= 1e-12
    assert N.shape[1] == G.shape[0] - 1


def test_nullspace_rank_tolerance():
    M = np.array([[1.0, 0.0, 0.0], [0.0, 1e-12, 0.0]])
    assert nullspace_basis(M).shape[1] == 2


# ---------------------------------------------------------------- assembly

def test_block_counts(sched_plant, sched_realization):
    sp = assemble_synthesis_sdp(sched_plant, sched_realization, SynthesisConfig.quadratic())
    assert sp.counts["lmi1"] == 22
    assert sp.counts["lmi2"] == 11
    assert sp.counts["positivity"] == 11 * 3
    assert len(sp.problem.blocks) == 22 + 11 + 33


def test_constant_basis_has_no_rate_term(sched_realization):
    base = example_plant(tau_bar=2.0, r=1.2)
    frozen = ParameterDomain(((0.4, 0.4),), ((-5.0, 5.0),))
    p = DelayedLpvPlant(base.A_p, base.A_d, base.B_p1, base.B_p2, base.C_p1, base.C_d1, base.D_p11,
                        base.D_p12, delay=base.delay, domain=frozen)
    sp = assemble_synthesis_sdp(p, sched_realization, SynthesisConfig.quadratic(grid_counts=1))
    lmi1 = [b for b in sp.problem.blocks if b.name.startswith("lmi1")]
    assert len(lmi1) == 2
    np.testing.assert_array_equal(lmi1[0].F.coef, lmi1[1].F.coef)
    pd = assemble_synthesis_sdp(p, sched_realization, SynthesisConfig.parameter_dependent(grid_counts=1))
    lmi1 = [b for b in pd.problem.blocks if b.name.startswith("lmi1")]
    assert np.abs(lmi1[0].F.coef - lmi1[1].F.coef).max() > 0


def test_upsilon_blocks(rng):
    p = example_plant(tau_bar=10.0, r=0.0)
    real = realize_filter(select_multipliers(p.delay), 2)
    aug = build_augmented(p, real)
    m = aug.at([0.2])
    R = rng.normal(size=(aug.n_cl, aug.n_cl))
    R = R @ R.T + np.eye(aug.n_cl)
    Xh = rng.normal(size=(2, 2)) + 3 * np.eye(2)
    Xk = [np.eye(2), 2 * np.eye(2)]
    Q = _lmi1_matrix(aug, m, R, None, Xh, Xk, 1.5)
    r0 = aug.n_cl + aug.n_x + aug.n_d
    np.testing.assert_allclose(Q[r0:r0 + 4, : aug.n_cl], m["C_aug0"] @ R)
    np.testing.assert_allclose(Q[r0:r0 + 4, aug.n_cl: aug.n_cl + 2], m["D_aug00"] @ Xh)


# ---------------------------------------------------------------- scheduled example

def test_scheduled_gamma(sched_result):
    assert sched_result.gamma == pytest.approx(2.0953, rel=0.10)


def test_recovery_residuals(sched_result):
    res = sched_result.diagnostics["recovery_residuals"]
    assert len(res) == 11
    assert max(res) <= -1e-8


def test_gain_shapes(sched_result, sched_plant, sched_realization):
    n_cl = sched_plant.n_x + sched_realization.n_psi
    for F, H in zip(sched_result.gains.F_c, sched_result.gains.H_c):
        assert F.shape == (1, n_cl)
        assert H.shape == (1, 2)


def test_gain_interpolation_hits_grid(sched_result):
    g = sched_result.gains
    F, H = g(g.points[3])
    np.testing.assert_allclose(F, g.F_c[3])
    F_mid, _ = g(0.5 * (g.points[3] + g.points[4]))
    np.testing.assert_allclose(F_mid, 0.5 * (g.F_c[3] + g.F_c[4]))
    Fs, Hs = g.evaluate_many(np.array([[-0.35], [0.9]]))
    np.testing.assert_allclose(Fs[1], g(0.9)[0])


@pytest.mark.parametrize("form", ["primal", "dual"])
def test_analysis_accepts_recovered_gains(sched_result, sched_plant, sched_realization, form):
    aug = build_augmented(sched_plant, sched_realization)
    cert = verify_analysis(aug, sched_result.gains, sched_result.grid, sched_plant.domain,
                           sched_result.r_basis, sched_result.x_basis, 1.02 * sched_result.gamma, form=form)
    assert cert is not None
    assert max(cert.margins.values()) <= 1e-6
    P = cert.P_at([0.1])
    assert np.linalg.eigvalsh(P).min() > 0


def test_analysis_rejects_tight_gamma(sched_result, sched_plant, sched_realization):
    aug = build_augmented(sched_plant, sched_realization)
    cert = verify_analysis(aug, sched_result.gains, sched_result.grid, sched_plant.domain,
                           sched_result.r_basis, sched_result.x_basis, 0.1 * sched_result.gamma)
    assert cert is None


def test_frequency_sweep_below_certificate(sched_result, sched_plant, sched_realization):
    omegas = np.logspace(-3, 2, 400)
    worst = 0.0
    for rho in (-1.0, -0.4, 0.0, 0.6, 1.0):
        for tau in (0.0, 0.8, 2.0):
            worst = max(worst, closed_loop_hinf(sched_plant, sched_realization, sched_result.gains,
                                                np.array([rho]), tau, omegas))
    assert worst <= sched_result.gamma


def test_result_json_round_trip(sched_result):
    data = json.loads(json.dumps(sched_result.to_json()))
    back = SynthesisResult.from_json(data)
    assert back.gamma == sched_result.gamma
    for a, b in zip(back.gains.F_c, sched_result.gains.F_c):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(back.R_at([0.3]), sched_result.R_at([0.3]))


# ---------------------------------------------------------------- scalar oracles

def test_scalar_stable_analysis_matches_hinf():
    p = scalar_plant(-1.0)
    real = realize_filter([make_multiplier("pi2", p.delay)], 1)
    aug = build_augmented(p, real)
    grid = make_grid(p.domain, 1)
    args = (aug, zero_gains(aug), grid, p.domain, CONST, CONST)
    assert verify_analysis(*args, 1.01) is not None
    assert verify_analysis(*args, 0.5) is None
    best = verify_analysis(*args, None)
    hinf = max(abs(1.0 / (1j * w + 1.0)) for w in np.concatenate([[0.0], np.logspace(-4, 4, 2000)]))
    assert best.gamma == pytest.approx(hinf, rel=0.02)


@pytest.mark.parametrize("gamma", [1.0, 10.0, 100.0])
def test_scalar_unstable_never_certified(gamma):
    p = scalar_plant(1.0)
    real = realize_filter([make_multiplier("pi2", p.delay)], 1)
    aug = build_augmented(p, real)
    cert = verify_analysis(aug, zero_gains(aug), make_grid(p.domain, 1), p.domain, CONST, CONST, gamma)
    assert cert is None


def test_scalar_synthesis_with_control_stabilizes():
    p = scalar_plant(1.0, with_control=True)
    real = realize_filter([make_multiplier("pi2", p.delay)], 1)
    res = minimize_gamma(p, real, SynthesisConfig.quadratic(grid_counts=1))
    # the output e = x is not penalized in u, so high gain drives gamma toward zero
    assert res.gamma < 0.1


def test_infeasible_synthesis_reports_delay_pair():
    p = scalar_plant(1.0)
    real = realize_filter([make_multiplier("pi2", p.delay)], 1)
    with pytest.raises(SynthesisError, match=r"\(r, tau_bar\) = \(0.0, 1.0\)"):
        minimize_gamma(p, real, SynthesisConfig.quadratic(grid_counts=1))


# ---------------------------------------------------------------- invariants

def _gamma(r, tb, nu, config):
    p = example_plant(tau_bar=tb, r=r, rate=nu)
    real = realize_filter(select_multipliers(p.delay), 2)
    return minimize_gamma(p, real, config).gamma


def test_monotone_in_rate_bound():
    cfg = SynthesisConfig.parameter_dependent(grid_counts=7, condition=False)
    values = [_gamma(1.7, 2.5, nu, cfg) for nu in (0.1, 1.0, 10.0)]
    values.append(_gamma(1.7, 2.5, 10.0, SynthesisConfig.quadratic(grid_counts=7, condition=False)))
    assert all(b - a >= -1e-4 for a, b in zip(values, values[1:]))


def test_basis_enrichment_never_hurts():
    quad = _gamma(1.5, 1.0, 0.5, SynthesisConfig.quadratic(grid_counts=7, condition=False))
    pd = _gamma(1.5, 1.0, 0.5, SynthesisConfig.parameter_dependent(grid_counts=7, condition=False))
    assert pd <= quad + 1e-6


def test_grid_doubling_changes_gamma_little():
    g11 = _gamma(0.9, 1.0, 0.0, SynthesisConfig.quadratic(grid_counts=11, condition=False))
    g21 = _gamma(0.9, 1.0, 0.0, SynthesisConfig.quadratic(grid_counts=21, condition=False))
    assert abs(g21 - g11) <= 0.02 * g11


def test_fixed_gamma_mode(sched_plant, sched_realization):
    res = minimize_gamma(sched_plant, sched_realization, SynthesisConfig.quadratic(gamma_mode="fixed", gamma=5.0))
    assert res.gamma == 5.0
    assert res.diagnostics["worst_margin"] <= 1e-6
    assert res.diagnostics["r_floor"] > 0


def test_recovery_residual_recomputation(sched_result, sched_plant, sched_realization):
    again = temp_residuals(sched_plant, sched_realization, sched_result)
    np.testing.assert_allclose(again, sched_result.diagnostics["recovery_residuals"])
