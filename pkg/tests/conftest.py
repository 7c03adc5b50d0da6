import time
from types import SimpleNamespace

import numpy as np
import pytest

from dslr import model as M
from dslr.pairing import PairThreshold, pair_runs, split_manifest
from dslr.scan import SensorSpec, to_vector
from dslr.sim import generate_paired_runs, loop_path, make_world

from report import ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {number:>2}. {title}: {detail}")


def _arrays(manifest, dynamic):
    s = np.array([to_vector(p.transformed) for p in manifest.pairs])
    d = np.array([to_vector(dynamic.scans[p.dynamic_index]) for p in manifest.pairs])
    return s, d


def _unique_rows(manifest, dynamic):
    """Every aligned static scan and every dynamic scan of a split, once each."""
    rows, seen_s, seen_d = [], set(), set()
    for p in manifest.pairs:
        if (p.dynamic_index, p.static_index) not in seen_s:
            seen_s.add((p.dynamic_index, p.static_index))
            rows.append(to_vector(p.transformed))
        if p.dynamic_index not in seen_d:
            seen_d.add(p.dynamic_index)
            rows.append(to_vector(dynamic.scans[p.dynamic_index]))
    return np.array(rows)


@pytest.fixture(scope="session")
def desk():
    """Desk-scale simulator data: 300 poses, pairs at 0.1 m / 5 deg, 80/10/10 split."""
    t0 = time.perf_counter()
    spec = SensorSpec()
    world = make_world(seed=0)
    static, dynamic = generate_paired_runs(world, loop_path(300), spec)
    manifest = pair_runs(dynamic, static, PairThreshold(0.1, 5.0))
    train, val, test = split_manifest(manifest, (0.8, 0.1, 0.1), seed=0)
    S, D = _arrays(train, dynamic)
    Sv, Dv = _arrays(val, dynamic)
    return SimpleNamespace(spec=spec, world=world, static=static, dynamic=dynamic, manifest=manifest,
                           train=train, val=val, test=test, S=S, D=D, Sv=Sv, Dv=Dv,
                           ae_rows=_unique_rows(train, dynamic), seconds=time.perf_counter() - t0)


def _copy(state):
    return M.state_from_bytes(M.state_to_bytes(state))


@pytest.fixture(scope="session")
def trained(desk):
    """AE -> DI -> ADV on the desk training split with default settings.

    Digests of every group are captured before the adversarial phase and
    after each of its epochs.
    """
    t0 = time.perf_counter()
    state = M.DslrState.create(M.DslrConfig(seed=0))
    M.train_autoencoder(state, desk.ae_rows)
    ae_done = _copy(state)
    M.train_discriminator(state, desk.S, desk.D)
    di_done = _copy(state)
    before = {"phi1": state.enc1.group.digest(), "theta1": state.dec1.group.digest(),
              "gamma": state.disc.group.digest(), "theta2": state.dec1.group.digest(),
              "phi2": state.enc1.group.digest()}
    per_epoch = []
    M.train_adversarial(state, desk.S, desk.D, callback=lambda phase, epoch, st: per_epoch.append(st.digests()))
    return SimpleNamespace(state=state, ae_state=ae_done, di_state=di_done, adv_before=before,
                           adv_epochs=per_epoch, seconds=time.perf_counter() - t0 + desk.seconds,
                           copy=lambda: _copy(state))


@pytest.fixture(scope="session")
def target_domain(desk):
    """Dynamic scans from a different world (other layout, more boxes, another loop)."""
    world = make_world(seed=7, n_boxes=6)
    _, dynamic = generate_paired_runs(world, loop_path(200, a=10.5, b=6.2), desk.spec)
    return np.array([to_vector(s) for s in dynamic.scans])
