from dataclasses import replace

import pytest

from gfdelay.config import reference_config


@pytest.fixture(scope="session")
def ref_cfg():
    """The shipped reference scenario (K=20, q_th=5, 1 MHz, -90 dBm)."""
    return reference_config()


@pytest.fixture()
def small_cfg(ref_cfg):
    """Reduced scenario for fast optimizer/simulator unit tests."""
    return replace(
        ref_cfg,
        k_users=4,
        q_th=2,
        sim=replace(ref_cfg.sim, horizon=4000),
    )
