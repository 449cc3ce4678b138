import dataclasses

import numpy as np
import pytest

from coneflow.flow import FlowConfig, GraphField, make_initial_data, run
from coneflow.geometry import frame_from_field, hyperboloid_field
from coneflow.monitors import (
    COLUMNS,
    FAIL_MASK,
    NA_LORENTZ,
    NA_MEAN_CONVEX,
    NA_RIEMANN,
    MonitorRecord,
    MonitorSeries,
    boundary_identity_residuals,
    phi_decay_fit,
    wall_v_bound,
)
from coneflow.capillary import boundary_frame, enforce_boundary

from conftest import round_mesh

RESIDUAL_FLOOR = 1e-10


def series_for(R, nr, ns, alpha, state, dt=0.05):
    d, m = round_mesh(R, nr, ns)
    return MonitorSeries.from_initial(m, d, alpha, state, dt)


def test_columns_exact():
    assert COLUMNS == tuple(f.name for f in dataclasses.fields(MonitorRecord))
    assert ",".join(COLUMNS) == (
        "tau,t,minH,minS,maxV,shMin,shMax,shLoBand,shHiBand,rhoMin,rhoMax,graphicality,"
        "supportRatio,xnormLo,xnormHi,phiSup,bcResidual,lemma33Res,lemma34Res,verdictBits"
    )


def test_bands_at_start_equal_extremes():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05, 0.5)
    ser = MonitorSeries.from_initial(m, d, 0.0, st, 0.05)
    rec = ser.record(st)
    assert rec.shLoBand == pytest.approx(rec.shMin, rel=1e-14)
    assert rec.shHiBand == pytest.approx(rec.shMax, rel=1e-14)
    assert rec.verdictBits & FAIL_MASK == 0


def test_hyperboloid_physical_band_coincides():
    d, m = round_mesh(0.5, 33, 64)
    f = enforce_boundary(m, hyperboloid_field(m.xi), 0.0, 1)
    st = GraphField(f)
    ser = MonitorSeries.from_initial(m, d, 0.0, st, 0.05)
    run(m, d, FlowConfig(0.0, mode="physical", tau_end=np.log(2.0), dt=0.05), st, series=ser)
    slack = ser.constants["slack"]
    for r in ser.records:
        # S/H = 2 (1 + t) for the exact solution; bands collapse onto it
        assert r.shLoBand == pytest.approx(2 * (1 + r.t), abs=slack * (1 + r.t))
        assert r.shHiBand == pytest.approx(2 * (1 + r.t), abs=slack * (1 + r.t))
        assert r.verdictBits & FAIL_MASK == 0
        assert r.supportRatio == pytest.approx(1.0, abs=5 * m.h**2)
    assert ser.column("rhoMax").max() - ser.column("rhoMax").min() < 5 * m.h**2


def test_flat_disc_hypothesis_not_applicable():
    d, m = round_mesh(0.5, 17, 32)
    alpha = 0.5 / np.sqrt(0.75)
    st = GraphField(np.zeros(m.n_nodes))
    ser = MonitorSeries.from_initial(m, d, alpha, st, 0.05)
    res = run(m, d, FlowConfig(alpha, tau_end=1.0, dt=0.05), st, series=ser)
    bits = np.array([r.verdictBits for r in ser.records])
    assert np.all(bits >> NA_MEAN_CONVEX & 1)
    np.testing.assert_allclose(res.state.rho_tilde, -0.5 * res.state.tau, atol=1e-9)
    np.testing.assert_allclose(ser.column("phiSup"), 0.5, atol=1e-8)
    slope, _, ok = phi_decay_fit(ser)
    assert not ok
    assert ser.verdict_table()["speed-lo"]["n/a"] == len(ser.records)


def test_signature_markers():
    d, m = round_mesh(2.0, 17, 32)
    st = GraphField(np.zeros(m.n_nodes))
    rec = MonitorSeries.from_initial(m, d, 2 / np.sqrt(3), st, 0.05).evaluate(st)
    assert rec.maxV == pytest.approx(1.0)
    assert rec.verdictBits >> NA_RIEMANN & 1 and not rec.verdictBits >> NA_LORENTZ & 1
    assert not rec.verdictBits & (0b111 << 6)
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.0)
    rec = MonitorSeries.from_initial(m, d, 0.0, st, 0.05).evaluate(st)
    assert rec.verdictBits >> NA_LORENTZ & 1


def test_wall_v_bound_holds_on_riemannian_states():
    d, m = round_mesh(2.0, 33, 64)
    for alpha in (1.05, 1.1, 1.15):
        st, _ = make_initial_data(m, d, alpha, "radial-profile")
        fr = frame_from_field(m, st.rho_tilde)
        bf = boundary_frame(m, fr, alpha, -1)
        assert np.all(fr.v[m.boundary_index] <= wall_v_bound(alpha, bf.mu))


def test_record_is_pure():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05, 0.5)
    ser = MonitorSeries.from_initial(m, d, 0.0, st, 0.05)
    a, b = ser.evaluate(st), ser.evaluate(GraphField(st.rho_tilde.copy(), st.tau))
    assert a.row() == b.row()
    assert MonitorRecord.from_row(a.row()).row() == a.row()
    ser2 = MonitorSeries.from_dict(m, ser.to_dict(), st.rho_tilde)
    assert ser2.evaluate(st).row() == a.row()


def test_verdicts_monotone_in_slack():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05, 0.5)
    ser = MonitorSeries.from_initial(m, d, 0.0, st, 0.05)
    bumped = GraphField(st.rho_tilde + 0.01 * np.linspace(-1, 1, m.n_nodes), 0.3)
    prev = None
    for slack in (0.0, 1e-4, 1e-2, 1.0):
        ser.constants["slack"] = slack
        bits = ser.evaluate(bumped).verdictBits & FAIL_MASK
        if prev is not None:
            assert bits & ~prev == 0  # a larger slack never adds failures
        prev = bits


def test_phi_decay_on_perturbed_run():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.05)
    ser = MonitorSeries.from_initial(m, d, 0.0, st, 0.05)
    run(m, d, FlowConfig(0.0, tau_end=8.0), st, series=ser)
    slope, _, ok = phi_decay_fit(ser)
    assert -1.3 <= slope <= -0.8 and ok


def test_phi_small_from_expander_start():
    d, m = round_mesh(0.5, 17, 32)
    st, _ = make_initial_data(m, d, 0.0, "perturbed-expander", 0.0)
    ser = MonitorSeries.from_initial(m, d, 0.0, st, 0.05)
    run(m, d, FlowConfig(0.0, tau_end=2.0), st, series=ser)
    assert np.all(ser.column("phiSup") < 5 * m.h**2)


def test_identity_residuals_closed_form_states():
    for nr, ns in ((17, 32), (33, 64)):
        d, m = round_mesh(0.5, nr, ns)
        fr = frame_from_field(m, hyperboloid_field(m.xi))
        assert max(boundary_identity_residuals(m, fr, 0.0, 1)) < 5 * m.h
        d, m = round_mesh(2.0, nr, ns)
        fr = frame_from_field(m, np.full(m.n_nodes, 0.2))
        assert max(boundary_identity_residuals(m, fr, 2 / np.sqrt(3), -1)) < 5 * m.h


@pytest.mark.parametrize("R,alpha,family,eps", [(0.5, 0.0, "perturbed-expander", 0.05), (2.0, 1.1, "radial-profile", 0.0)])
def test_identity_residuals_refine(R, alpha, family, eps):
    res = []
    for nr, ns in ((17, 32), (33, 64), (65, 128)):
        d, m = round_mesh(R, nr, ns)
        st, _ = make_initial_data(m, d, alpha, family, eps, 0.5)
        res.append(boundary_identity_residuals(m, frame_from_field(m, st.rho_tilde), alpha, d.sigma))
    res = np.array(res)
    orders = np.log2(res[:-1] / res[1:])
    # a pair whose finer residual is already at roundoff has nothing left to refine
    assert np.all((orders >= 1.0) | (res[1:] < RESIDUAL_FLOOR)), (res, orders)
    assert np.all(res[-1] < 1e-6)
