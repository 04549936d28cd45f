"""
共享测试夹具: 标准线性固体基准参数模型、随机数发生器、配置文件写入
"""

from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from frbd.models.friction import (
    GKVParams,
    GMParams,
    Regularization,
    SLSCanonical,
    StribeckLaw,
    canonical_sls_to_gkv,
    canonical_sls_to_gm,
    canonical_sls_to_gm_stated,
)
from frbd.models.viscoelastic import FrBDModel

# 基准: σ₀ = 1e4, σ₁ = 64.5, γ₁ = 1e-3, μ_d = 1, μ_s = 1.5, v_S = 0.01, δ = 2, ε = 0
TABLE1_CANONICAL = SLSCanonical(sigma0=1e4, sigma1=64.5, gamma1=1e-3)
TABLE1_LAW = StribeckLaw(mu_d=1.0, mu_s=1.5, v_s=0.01, delta=2.0)

MODEL_BLOCK = """\
model.rheology = canonical
model.sigma0 = 1e4
model.sigma1 = 64.5
model.gamma1 = 0.001
model.mu_d = 1.0
model.mu_s = 1.5
model.v_s = 0.01
model.delta = 2
model.epsilon = 0
model.p = 1.0
"""


@pytest.fixture
def stribeck() -> StribeckLaw:
    return TABLE1_LAW


@pytest.fixture
def table1_gm() -> FrBDModel:
    return FrBDModel(rheology=canonical_sls_to_gm(TABLE1_CANONICAL), law=TABLE1_LAW)


@pytest.fixture
def table1_stated() -> FrBDModel:
    return FrBDModel(rheology=canonical_sls_to_gm_stated(TABLE1_CANONICAL), law=TABLE1_LAW)


@pytest.fixture
def table1_gkv() -> FrBDModel:
    return FrBDModel(rheology=canonical_sls_to_gkv(TABLE1_CANONICAL), law=TABLE1_LAW)


@pytest.fixture
def soft_gm() -> FrBDModel:
    """低刚度两分支 GM 模型, 用于快速的性质测试"""
    return FrBDModel(
        rheology=GMParams(k0=20.0, k=(10.0, 5.0), tau=(0.2, 0.5)),
        law=StribeckLaw(mu_d=0.8, mu_s=1.2, v_s=0.1, delta=2.0),
        reg=Regularization(epsilon=1e-6),
        p=2.0,
    )


@pytest.fixture
def soft_gkv() -> FrBDModel:
    return FrBDModel(
        rheology=GKVParams(k0=20.0, k=(10.0, 5.0), c=(2.0, 2.5)),
        law=StribeckLaw(mu_d=0.8, mu_s=1.2, v_s=0.1, delta=2.0),
        reg=Regularization(epsilon=1e-6),
        p=2.0,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(42)


@pytest.fixture
def write_config(tmp_path: Path) -> Callable[[str, str], Path]:
    """把配置文本写入临时目录, 返回路径"""

    def _write(text: str, name: str = "run.cfg") -> Path:
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return path

    return _write
