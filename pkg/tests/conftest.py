# -*- coding: utf-8 -*-
"""
共用 fixture
"""
import json
import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
sys.path.insert(0, ROOT)

from navfilter.config import CONFIG_FILE, config_from_dict, load_config  # noqa: E402
from navfilter.frames import TitanConstants, euler_to_dcm, dcm_to_quat  # noqa: E402
from navfilter.state import STATE_DIM, STATE_INDEX as IDX  # noqa: E402
from navfilter.strapdown import NavState  # noqa: E402


@pytest.fixture(scope="session")
def config_tree():
    with open(CONFIG_FILE, 'r', encoding='utf-8') as f:
        return json.load(f)


@pytest.fixture
def config():
    return load_config()


@pytest.fixture
def make_config(config_tree):
    """以深拷貝的設定樹加上修改建立 NavConfig"""
    def _make(**sections):
        tree = json.loads(json.dumps(config_tree))
        for section, values in sections.items():
            tree.setdefault(section, {}).update(values)
        return config_from_dict(tree)
    return _make


@pytest.fixture
def constants():
    return TitanConstants()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def nav_state(rng):
    attitude = euler_to_dcm(*rng.uniform(-0.3, 0.3, 2), rng.uniform(-np.pi, np.pi))
    return NavState(r=rng.normal(0.0, 50.0, 3) + np.array([0.0, 0.0, -120.0]),
                    v=rng.normal(0.0, 3.0, 3), q=dcm_to_quat(attitude), t=10.0)


@pytest.fixture
def covariance(rng):
    """隨機的正定 47×47 共變異數"""
    A = rng.normal(size=(STATE_DIM, STATE_DIM)) * 0.1
    P = A @ A.T + np.eye(STATE_DIM)
    return 0.5 * (P + P.T)


@pytest.fixture
def diagonal_covariance():
    sig = np.full(STATE_DIM, 0.1)
    sig[IDX.r] = 3.0
    sig[IDX.v] = 0.1
    sig[IDX.psi] = 1e-3
    return np.diag(sig ** 2)
