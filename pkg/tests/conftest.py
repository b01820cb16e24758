import numpy as np
import pytest

import dialrl
from dialrl.core import Schema
from dialrl.db import load_database
from dialrl.neural.model import ModelConfig
from dialrl.neural.vocab import Vocabulary
from dialrl.simulator import RewardConfig


@pytest.fixture(scope="session")
def schema():
    return Schema.load(dialrl.toy_schema_path())


@pytest.fixture(scope="session")
def database(schema):
    return load_database(dialrl.toy_database_path(), schema)


@pytest.fixture(scope="session")
def vocab(schema):
    return Vocabulary.from_schema(schema)


@pytest.fixture()
def reward_config():
    return RewardConfig()


@pytest.fixture(scope="session")
def tiny_config():
    # Small enough for fast forward passes, big enough to be a real stack.
    return ModelConfig(hidden_size=16, layers=1, heads=2, ff_size=32, max_state_len=24, max_action_len=16)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


# A minimal second schema used by parser brute-force tests and the goal
# examples that need a travel-style domain.
FLIGHT_SCHEMA = {
    "domains": ["flight", "hotel"],
    "intents": ["inform", "request"],
    "slots": {
        "flight": {
            "destination": ["seattle", "boston"],
            "day": ["today", "tomorrow"],
            "price": ["p100", "p200"],
            "time": ["morning", "night"],
        },
        "hotel": {
            "price": ["cheap", "expensive"],
            "area": ["north", "south"],
            "name": ["alpha", "beta"],
        },
    },
    "requestable": {"flight": ["price", "time"], "hotel": ["name"]},
    "informable": {"flight": ["destination", "day"], "hotel": ["price", "area"]},
    "goal_slot_weights": {
        "flight": {"destination": 1.0, "day": 0.5, "price": 1.0, "time": 0.5},
        "hotel": {"price": 1.0, "area": 0.5, "name": 1.0},
    },
}


@pytest.fixture(scope="session")
def flight_schema():
    return Schema.from_dict(FLIGHT_SCHEMA)
