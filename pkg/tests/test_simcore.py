import numpy as np
import pytest
import scipy.linalg as sla

from predeso import scenario as sc
from predeso import simcore
from predeso import sysmodel as sm
from predeso.errors import ConfigError


def zero_init(cfg):
    N, n, s = cfg.topology.followers, cfg.plant.n, cfg.plant.s
    return {"x": np.zeros((N, n)), "w": np.zeros((N, s)), "c": np.ones(N),
            "x0": np.zeros(n), "w0": np.zeros(s), "v": np.zeros((N, n)),
            "what": np.zeros((N, s))}


def leader_closed_form(plant, x0, w0, t):
    n, s = plant.n, plant.s
    M = np.block([[plant.A, plant.E], [np.zeros((s, n)), plant.S]])
    return (sla.expm(M * t) @ np.concatenate([x0, w0]))[:n]


@pytest.fixture(scope="module")
def short_cfg():
    return sc.preset("example1").with_sim(horizon=1.0)


def test_zero_equilibrium(short_cfg, gains1):
    tr = simcore.run(short_cfg, gains1, init=zero_init(short_cfg))
    for arr in (tr.err, tr.rho, tr.vtil, tr.wtil, tr.u):
        assert np.all(arr == 0.0)
    assert np.all(tr.c == 1.0)


def test_leader_alone_matches_closed_form(short_cfg, gains1):
    ini = sc.draw_initial(short_cfg)
    tr = simcore.run(short_cfg, gains1, init=ini, record_full=True)
    st = tr.diagnostics["final_state"]
    ref = leader_closed_form(short_cfg.plant, ini["x0"], ini["w0"], 1.0)
    assert np.abs(st.x0 - ref).max() < 1e-6


def test_leader_rk4_order(short_cfg, gains1):
    ini = sc.draw_initial(short_cfg)
    ref = leader_closed_form(short_cfg.plant, ini["x0"], ini["w0"], 1.0)
    errs = []
    for k in (10, 20):  # dt = tau/k
        cfg = short_cfg.with_sim(dt=0.09 / k)
        st = simcore.run(cfg, gains1, init=ini, record_full=True).diagnostics["final_state"]
        errs.append(np.abs(st.x0 - ref).max())
    assert errs[0] / errs[1] > 12


def test_closed_loop_first_order(short_cfg, gains1):
    """Sampled (ZOH) control makes the coupled system first order in dt."""
    ini = sc.draw_initial(short_cfg)
    fin = {}
    for k in (36, 72, 576):
        cfg = short_cfg.with_sim(dt=0.09 / k)
        st = simcore.run(cfg, gains1, init=ini, record_full=True).diagnostics["final_state"]
        fin[k] = np.concatenate([st.x.ravel(), st.v.ravel(), st.what.ravel(), st.c])
    e1 = np.abs(fin[36] - fin[576]).max()
    e2 = np.abs(fin[72] - fin[576]).max()
    assert e1 / e2 > 1.8


def test_exosystem_norm_conserved(gains1):
    cfg = sc.preset("example1").with_sim(dt=0.09 / 36)
    ini = sc.draw_initial(cfg)
    tr = simcore.run(cfg, gains1, init=ini, record_full=True)
    st = tr.diagnostics["final_state"]
    w_init = np.vstack([ini["w0"], ini["w"]])
    assert st.t == pytest.approx(10.0)
    assert np.abs(np.linalg.norm(st.w, axis=1) - np.linalg.norm(w_init, axis=1)).max() < 1e-9


def test_row_count_and_columns(short_cfg, gains1):
    tr = simcore.run(short_cfg.with_sim(sample_every=7), gains1)
    assert tr.t.size == 1000 // 7 + 1
    cols = tr.columns()
    assert cols[:2] == ["t", "err_1"] and cols[-1] == "u_4_2"
    assert len(cols) == 1 + 5 * 4 + 4 * 2
    assert np.allclose(np.diff(tr.t), 7e-3)


def test_csv_deterministic(short_cfg, gains1, tmp_path):
    a = simcore.run(short_cfg, gains1).to_csv()
    b = simcore.run(short_cfg, gains1).to_csv()
    assert a == b
    c = simcore.run(short_cfg.with_seed(2), gains1).to_csv()
    assert a != c
    p = tmp_path / "t.csv"
    simcore.run(short_cfg, gains1).to_csv(p)
    assert p.read_text() == a


def test_divergence_truncates(short_cfg, gains1):
    tr = simcore.run(short_cfg.with_sim(dt=0.09 / 9), gains1)
    assert tr.error is not None
    assert 1 <= tr.error["agent"] <= 4 or tr.error["agent"] == 0
    assert tr.t.size < 101
    assert np.all(np.isfinite(tr.table()))
    assert not simcore.metrics(tr).complete


def test_horizon_shorter_than_delay():
    with pytest.raises(ConfigError):
        sc.preset("example1").with_sim(horizon=0.05).validate()


def test_metrics_zero_trajectory():
    z = np.zeros((11, 3))
    tr = simcore.Trajectory(t=np.linspace(0, 10, 11), err=z, c=z, rho=z, vtil=z, wtil=z,
                            u=np.zeros((11, 3, 2)))
    r = simcore.metrics(tr)
    assert r.tail_sup_err == [0.0] * 3 and r.c_last_change == 0.0
    assert r.monotone_violations == [0] * 3


def test_metrics_window():
    t = np.linspace(0, 10, 101)
    err = np.exp(-t)[:, None]
    c = np.minimum(t, 9.5)[:, None]
    z = np.zeros_like(err)
    tr = simcore.Trajectory(t=t, err=err, c=c, rho=z, vtil=z, wtil=z, u=np.zeros((101, 1, 1)))
    r = simcore.metrics(tr)
    assert r.tail_sup_err[0] == pytest.approx(np.exp(-8))
    assert r.c_last_change == pytest.approx(0.5)


def test_tail_decreases_with_horizon(gains1):
    # the held input leaves an O(dt) floor (about 1.5e-3 at dt=1e-3), so the
    # tail sup decreases until it reaches the floor and then stays there
    cfg = sc.preset("example1").with_sim(horizon=20.0)
    tr = simcore.run(cfg, gains1)
    sups = []
    for T in (5.0, 10.0, 20.0):
        mask = (tr.t >= 0.8 * T - 1e-12) & (tr.t <= T + 1e-12)
        sups.append(tr.err[mask].max())
    assert sups[0] > 2 * sups[1]
    assert sups[2] <= 1.01 * sups[1]


def test_floor_scales_with_dt(gains1):
    tails = []
    for k in (45, 90):
        cfg = sc.preset("example1").with_sim(horizon=12.0, dt=0.09 / k)
        tr = simcore.run(cfg, gains1)
        tails.append(tr.err[tr.t >= 10.0].max())
    assert 1.6 < tails[0] / tails[1] < 2.5


def test_thm2_short_run_contained(gains2):
    cfg = sc.preset("example2").with_sim(horizon=2.0)
    tr = simcore.run(cfg, gains2)
    cert = sm.compute_certificate(gains2, cfg.topology, cfg.plant)
    r = simcore.metrics(tr, cert, mode="thm2")
    assert r.containment == [1.0] * 4
    assert r.monotone_violations is None


def test_delay_gap_metric():
    t = np.linspace(0, 10, 101)
    c = np.minimum(t, 5.0)[:, None]
    z = np.zeros_like(c)
    tr = simcore.Trajectory(t=t, err=z, c=c, rho=z, vtil=z, wtil=z, u=np.zeros((101, 1, 1)),
                            dt=0.01, stride=10)
    r = simcore.metrics(tr, tau=0.3)
    assert r.delay_gap_c == 0.0 and r.delay_gap_rho == 0.0
    r = simcore.metrics(tr, tau=0.3, tail_fraction=0.0)
    assert r.delay_gap_c == pytest.approx(0.3)
    assert simcore.metrics(tr, tau=0.25).delay_gap_c is None
