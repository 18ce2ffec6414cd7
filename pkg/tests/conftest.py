import contextlib
import threading
import time

import numpy as np
import pytest

from remap.arch import Architecture, Activation, Conv2D, Dense, Dropout, MaxPool
from remap.data import halves_dataset
from remap.sampler import TransitionModel, sample_batch


def arch_of(layers, input_shape=(14, 14, 1), num_classes=10, provenance="handcrafted",
            parent_id=None):
    return Architecture(layers=tuple(layers), input_shape=input_shape,
                        num_classes=num_classes, provenance=provenance,
                        parent_id=parent_id)


@pytest.fixture(scope="session")
def default_model():
    return TransitionModel()


@pytest.fixture(scope="session")
def corpus(default_model):
    """A reusable batch of sampled architectures."""
    return sample_batch(default_model, 40, base_seed=1234)


@pytest.fixture(scope="session")
def halves():
    return halves_dataset(n_train=200, n_val=80, seed=3)


@pytest.fixture()
def conv_arch():
    return arch_of([Conv2D(8, 3, 1), Activation("relu"), MaxPool(2), Dense(16)])


def random_predictions(rng: np.random.Generator, n: int = 50, k: int = 10) -> np.ndarray:
    return rng.integers(0, k, size=n)


@contextlib.contextmanager
def live_server(app):
    """Serve an ASGI app on an OS-assigned port in a daemon thread.

    The in-process TestClient buffers whole responses, so anything reading
    the live event stream must go through a real server.
    """
    import uvicorn

    config = uvicorn.Config(app, host="127.0.0.1", port=0, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    deadline = time.time() + 10
    while not server.started:
        if time.time() > deadline:
            raise RuntimeError("server failed to start")
        time.sleep(0.01)
    port = server.servers[0].sockets[0].getsockname()[1]
    try:
        yield f"http://127.0.0.1:{port}"
    finally:
        server.should_exit = True
        thread.join(timeout=10)
