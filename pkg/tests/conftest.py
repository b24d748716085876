import pytest

from earexg.afe import AfeConfig
from earexg.pipeline import simulate_to_session
from earexg.sim import (
    Epoch,
    NoiseModel,
    PursuitGeometry,
    ScenarioConfig,
    StimulusProtocol,
)


def eeg_scenario(open_s=30.0, closed_s=30.0, seed=0, noise=None, afe=None, params=None):
    proto = StimulusProtocol(
        epochs=(Epoch("eyes-open", 0, open_s), Epoch("eyes-closed", open_s, closed_s)),
        seed=seed,
    )
    return ScenarioConfig(kind="eeg", protocol=proto, seed=seed,
                          noise=noise or NoiseModel(), afe=afe or AfeConfig(),
                          params=params or {})


def emg_scenario(rest_s=15.0, clench_s=10.0, seed=0, noise=None, params=None):
    proto = StimulusProtocol(
        epochs=(
            Epoch("rest", 0, rest_s),
            Epoch("clench", rest_s, clench_s),
            Epoch("rest", rest_s + clench_s, rest_s),
        ),
        seed=seed,
    )
    return ScenarioConfig(kind="emg", protocol=proto, seed=seed,
                          noise=noise or NoiseModel(), params=params or {})


def eog_scenario(reps=15, seed=0, noise=None, params=None):
    return ScenarioConfig(kind="eog", geometry=PursuitGeometry(reps_per_side=reps),
                          seed=seed, noise=noise or NoiseModel.silent(),
                          params=params or {})


@pytest.fixture(scope="session")
def sessions_root(tmp_path_factory):
    return tmp_path_factory.mktemp("sessions")


@pytest.fixture(scope="session")
def eeg_session(sessions_root):
    return simulate_to_session(eeg_scenario(seed=101), sessions_root / "eeg-default")


@pytest.fixture(scope="session")
def emg_session(sessions_root):
    return simulate_to_session(emg_scenario(seed=102), sessions_root / "emg-default")


@pytest.fixture(scope="session")
def eog_session(sessions_root):
    return simulate_to_session(eog_scenario(seed=103), sessions_root / "eog-default")
