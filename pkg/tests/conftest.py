"""Shared fixtures for the acceptance suite.

The trained models are expensive (minutes of CPU), so they are built once
per session and shared across criteria.
"""

import numpy as np
import pytest

from mulde import (EnergyNet, NoiseSchedule, Rng, Standardizer, TrainConfig,
                   build_multiscale_vectors, fit_em, sample_toy_anomalies,
                   synth_mixture, toy_mixture_spec, train)

# single-Gaussian run (criterion 4): default optimizer config, beta = 0
GAUSS_N = 30_000
GAUSS_EPOCHS = 400
GAUSS_TAIL = 75
GAUSS_WIDTHS = (128, 128)
GAUSS_SEED = 7

# toy 4-mode benchmark runs (criteria 5-8, 11)
TOY_TRAIN_N = 20_000
TOY_EPOCHS = 300
TOY_TAIL = 50
TOY_WIDTHS = (128, 128)
TOY_SEED = 9
TOY_TEST_NORMAL = 4_000
TOY_TEST_ANOM = 1_000


@pytest.fixture(scope="session")
def gauss_fit():
    """EnergyNet trained on standardized 2-D N(0, I) draws with beta=0."""
    rng = Rng(42)
    X = rng.normal((GAUSS_N, 2))
    standardizer = Standardizer().fit(X)
    Z = standardizer.transform(X)
    config = TrainConfig(beta_reg=0.0, hidden_widths=GAUSS_WIDTHS,
                         max_epochs=GAUSS_EPOCHS, seed=GAUSS_SEED)
    net0 = EnergyNet.initialize(2, config.hidden_widths, config.sigma_low,
                                config.sigma_high, seed=config.seed)
    checkpoints = {}
    marks = {40, 120, 240, GAUSS_EPOCHS}

    def snap(epoch, net, loss):
        if epoch in marks:
            checkpoints[epoch] = net

    net, history = train(Z, net0, config, average_tail=GAUSS_TAIL, on_epoch_end=snap)
    return {"net": net, "history": history, "standardizer": standardizer,
            "config": config, "checkpoints": checkpoints}


def _fit_toy(beta):
    spec = toy_mixture_spec()
    fs = synth_mixture(spec, TOY_TRAIN_N, seed=101)
    standardizer = Standardizer().fit(fs.X)
    Z = standardizer.transform(fs.X)
    config = TrainConfig(beta_reg=beta, hidden_widths=TOY_WIDTHS,
                         max_epochs=TOY_EPOCHS, seed=TOY_SEED)
    net0 = EnergyNet.initialize(2, config.hidden_widths, config.sigma_low,
                                config.sigma_high, seed=config.seed)
    net, history = train(Z, net0, config, average_tail=TOY_TAIL)
    schedule = NoiseSchedule.for_net(net, 16)
    train_vectors = build_multiscale_vectors(net, Z, schedule)
    gmm, _ = fit_em(train_vectors, 5, seed=404)
    return {"spec": spec, "net": net, "history": history,
            "standardizer": standardizer, "schedule": schedule,
            "train_std": Z, "train_vectors": train_vectors, "gmm": gmm,
            "config": config}


@pytest.fixture(scope="session")
def toy_fit():
    """Regularized (beta=0.1) model of the 4-mode benchmark plus its mixture."""
    return _fit_toy(0.1)


@pytest.fixture(scope="session")
def toy_fit_beta0():
    """Same data and seeds with the energy penalty disabled."""
    return _fit_toy(0.0)


@pytest.fixture(scope="session")
def toy_test_set(toy_fit):
    """Held-out normal draws plus uniform anomalies, standardized."""
    spec = toy_fit["spec"]
    standardizer = toy_fit["standardizer"]
    normal = standardizer.transform(synth_mixture(spec, TOY_TEST_NORMAL, seed=202).X)
    anomalies = standardizer.transform(sample_toy_anomalies(TOY_TEST_ANOM, seed=303))
    X = np.vstack([normal, anomalies])
    labels = np.concatenate([np.zeros(TOY_TEST_NORMAL, dtype=int),
                             np.ones(TOY_TEST_ANOM, dtype=int)])
    return X, labels
