import numpy as np
import pytest

from coneflow.capillary import b_residual
from coneflow.errors import ConvergenceTimeout, DataError
from coneflow.expander import (
    EXPANDER_TOL,
    ShootingFailure,
    angular_asymmetry,
    compare_oracle,
    radial_expander_ode,
    relax_to_expander,
    stationary_residual,
)
from coneflow.flow import FlowConfig, GraphField, make_initial_data
from coneflow.geometry import frame_from_field, hyperboloid_field

from conftest import round_mesh


@pytest.mark.parametrize("R", [0.5, 0.8])
def test_alpha0_relaxes_to_hyperboloid(R):
    errs = []
    for nr, ns in ((17, 32), (33, 64)):
        d, m = round_mesh(R, nr, ns)
        st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05, 0.5)
        prof = relax_to_expander(m, d, FlowConfig(alpha=0.0), st)
        assert prof.reason == "stationary"
        assert prof.residual_sup < EXPANDER_TOL
        u_ex = np.exp(hyperboloid_field(m.xi))
        errs.append(np.max(np.abs(np.exp(prof.rho_tilde_inf) / u_ex - 1)))
        assert errs[-1] < 5 * m.h**2
    assert np.log2(errs[0] / errs[1]) > 1.5


def test_expander_start_returns_immediately():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.0)
    # the analytic expander is stationary up to discretization error
    assert stationary_residual(m, st.rho_tilde) < 5 * m.h**2
    prof = relax_to_expander(m, d, FlowConfig(alpha=0.0), st)
    again = relax_to_expander(m, d, FlowConfig(alpha=0.0), GraphField(prof.rho_tilde_inf, 0.0, 0))
    assert again.steps == 0
    assert np.array_equal(again.rho_tilde_inf, prof.rho_tilde_inf)


def test_asymmetric_start_has_symmetric_limit():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05, 0.5)
    assert angular_asymmetry(m, st.rho_tilde) > 1e-3
    prof = relax_to_expander(m, d, FlowConfig(alpha=0.0), st)
    assert angular_asymmetry(m, prof.rho_tilde_inf) < 1e-6


def test_returned_profile_rechecks_from_scratch():
    d, m = round_mesh(2.0, 17, 32)
    st, _ = make_initial_data(m, d, 1.1, "radial-profile")
    prof = relax_to_expander(m, d, FlowConfig(alpha=1.1), st)
    assert stationary_residual(m, prof.rho_tilde_inf.copy()) < EXPANDER_TOL
    fr = frame_from_field(m, prof.rho_tilde_inf, 0.0)
    assert np.all(fr.S > 0)
    bres = b_residual(m.bz, m.bN, fr.Drho[m.boundary_index], 1.1)
    assert np.max(np.abs(bres)) < 1e-10


def test_timeout_reports_residual():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05, 0.5)
    with pytest.raises(ConvergenceTimeout) as info:
        relax_to_expander(m, d, FlowConfig(alpha=0.0), st, tau_max=0.5)
    assert info.value.residual > EXPANDER_TOL


@pytest.mark.parametrize("R", [0.3, 0.5, 0.8])
def test_ode_alpha0_is_hyperboloid(R):
    ode = radial_expander_ode(R, 0.0)
    assert ode.f0 == pytest.approx(2.0, abs=1e-9)
    r = np.linspace(0, 1, 201)
    assert np.max(np.abs(ode.f(r) - 2 / np.sqrt(1 - (r * R) ** 2))) < 1e-8


def test_ode_self_comparison_is_zero():
    ode = radial_expander_ode(0.5, -1.0)
    assert compare_oracle(ode, ode) == (0.0, 0.0)


@pytest.mark.parametrize("R,alpha", [(2.0, 1.1), (0.5, -1.0)])
def test_ode_profile_satisfies_discrete_equations(R, alpha):
    ode = radial_expander_ode(R, alpha)
    assert ode.bc_residual < 1e-10
    res = []
    for nr, ns in ((17, 32), (33, 64), (65, 128)):
        d, m = round_mesh(R, nr, ns)
        rho = ode.on_mesh(m)
        res.append(stationary_residual(m, rho))
        fr = frame_from_field(m, rho, 0.0)
        bres = b_residual(m.bz, m.bN, fr.Drho[m.boundary_index], alpha)
        assert np.max(np.abs(bres)) < 5 * m.h**2
    res = np.array(res)
    assert np.all(np.log2(res[:-1] / res[1:]) >= 1.5), res


def test_ode_rejects_alpha_without_radial_expander():
    with pytest.raises(ShootingFailure, match="no rotationally symmetric expander"):
        radial_expander_ode(2.0, 1.5)


@pytest.mark.xfail(strict=True, raises=ShootingFailure, reason="alpha = 1.5 on R = 2 admits no radial expander")
def test_ode_literal_riemannian_example():
    radial_expander_ode(2.0, 1.5)


def test_ode_rejects_null_wall():
    with pytest.raises(DataError):
        radial_expander_ode(1.0, 0.0)


def test_compare_oracle_needs_mesh_for_fields():
    d, m = round_mesh(0.5, 17, 32)
    with pytest.raises(ValueError):
        compare_oracle(np.zeros(m.n_nodes), np.zeros(m.n_nodes))
    ode = radial_expander_ode(0.5, 0.0)
    diff, asym = compare_oracle(hyperboloid_field(m.xi), ode, m)
    assert diff < 1e-9 and asym < 1e-12


def test_relaxation_reuses_nonzero_tau_state():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05, 0.5)
    a = relax_to_expander(m, d, FlowConfig(alpha=0.0), st)
    b = relax_to_expander(m, d, FlowConfig(alpha=0.0), GraphField(st.rho_tilde, 3.0, 7))
    assert np.array_equal(a.rho_tilde_inf, b.rho_tilde_inf)
