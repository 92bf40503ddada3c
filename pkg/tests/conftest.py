import numpy as np
import pytest

import simmia
from simmia import attacks

ACCEPTANCE_LINES = []


def record_acceptance(line: str) -> None:
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def finite_diff_grads(loss_fn, params, h=1e-5, order=2):
    """Central-difference gradient of loss_fn() w.r.t. each array in params.

    loss_fn must be a pure function of the current parameter values (forward
    evaluation only), so this stays independent of any backward code path.
    order=4 uses the five-point stencil, which tolerates a larger h and so
    has a much lower roundoff floor for tiny gradients.
    """
    grads = []
    for p in params:
        g = np.zeros_like(p)
        flat_p = p.ravel()
        flat_g = g.ravel()
        for i in range(flat_p.size):
            orig = flat_p[i]

            def at(delta):
                flat_p[i] = orig + delta
                value = loss_fn()
                flat_p[i] = orig
                return value

            if order == 2:
                flat_g[i] = (at(h) - at(-h)) / (2.0 * h)
            else:
                flat_g[i] = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12.0 * h)
        grads.append(g)
    return grads


def relative_errors(analytic, numeric, floor=1e-10):
    out = []
    for a, f in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(f)), floor)
        out.append(np.abs(a - f) / denom)
    return out


@pytest.fixture(scope="session")
def small_gap_dataset():
    """A fast mixed-layout dataset with a clear member/non-member gap."""
    cfg = simmia.SynthConfig(
        k=20, dim=16, per_identity_members=40, per_identity_nonmembers=40,
        sigma_train=0.1, sigma_test=0.3, center_scale=2.0, seed=101,
    )
    ds, gt = simmia.generate(cfg)
    ds = simmia.assign_splits(
        ds, simmia.SplitCounts(200, 200, 200, 200, 300), seed=102
    )
    return ds, gt


@pytest.fixture(scope="session")
def small_refs(small_gap_dataset):
    ds, _ = small_gap_dataset
    return simmia.sample_reference_set(ds, 0.2, seed=103)


def quick_attack_config(seed=0, epochs=10, width=16):
    return simmia.AttackConfig(
        train=simmia.TrainConfig(epochs=epochs, seed=seed, batch_size=64),
        hidden_width=width,
        hidden_layers=4,
    ).with_seed(seed)
