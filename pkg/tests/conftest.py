from __future__ import annotations

import pytest

from dic.denoiser import AnalyticGaussianModel, TinyAttentionModel
from dic.schedule import make_schedule


@pytest.fixture(scope="session")
def sched200():
    return make_schedule(200)


@pytest.fixture(scope="session")
def analytic200(sched200):
    return AnalyticGaussianModel(sched200, sigma0=1.0)


@pytest.fixture(scope="session")
def tiny_model():
    return TinyAttentionModel(n_layers=4, model_seed=0)
