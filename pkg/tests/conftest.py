import numpy as np
import pytest

from regilqr import config as cfgmod
from regilqr.dyn import AffinePsi, ChainSystem, LinearDynamics, Pendulum, TanhMarginPsi, deadbeat_gains, multirate
from regilqr.solver import LinQuadModel


def random_psd(rng, n, rank=None, shift=0.0):
    rank = n if rank is None else rank
    F = rng.standard_normal((n, rank))
    return F @ F.T / max(rank, 1) + shift * np.eye(n)


def random_linquad(rng, tau, n_x, n_u, psd_rank=None, scale=1.0):
    """Random LinQuadModel with PSD cost blocks."""
    A = scale * rng.standard_normal((tau, n_x, n_x)) / np.sqrt(n_x)
    B = rng.standard_normal((tau, n_x, n_u))
    P = np.stack([random_psd(rng, n_x, psd_rank) for _ in range(tau)])
    p = rng.standard_normal((tau, n_x))
    return LinQuadModel(A, B, P, p)


def dense_direction(model, nu):
    """Dense GGN step assembled directly from a LinQuadModel."""
    from regilqr.dense_ref import dense_ggn_step

    tau, n_x, n_u = model.B.shape
    Jac = np.zeros((tau * n_x, tau * n_u))
    for s in range(tau):
        M = model.B[s]
        for t in range(s, tau):
            if t > s:
                M = model.A[t] @ M
            Jac[t * n_x:(t + 1) * n_x, s * n_u:(s + 1) * n_u] = M
    return dense_ggn_step(Jac.T, model.P, model.p.ravel(), nu)


def tanh_chain(n_x, delta=0.5, amp_y=0.1, amp_v=0.05):
    k = deadbeat_gains(n_x, delta)
    return ChainSystem(n_x, delta, TanhMarginPsi(n_x, amp_y=amp_y, amp_v=amp_v, k=k))


def zoo_models():
    """Named dynamic models used by the property checks."""
    rng = np.random.default_rng(7)
    return {
        "linear": LinearDynamics(0.5 * rng.standard_normal((3, 3)), rng.standard_normal((3, 2))),
        "chain_identity": ChainSystem(2, 0.1, AffinePsi(2)),
        "chain_tanh": tanh_chain(2),
        "chain3_tanh": tanh_chain(3),
        "pendulum": Pendulum(),
        "multirate_chain": multirate(tanh_chain(2), 2),
    }


@pytest.fixture(scope="session")
def chain_fixture():
    return cfgmod.build(cfgmod.load(cfgmod.fixture_path("chain_k2_strongly_convex.json")))


@pytest.fixture(scope="session")
def chain_doc():
    return cfgmod.load(cfgmod.fixture_path("chain_k2_strongly_convex.json"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
