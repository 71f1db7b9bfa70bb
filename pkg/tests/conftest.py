import numpy as np
import pytest

from deskstereo import autograd as ag
from deskstereo.config import Config
from deskstereo.model import StereoModel
from deskstereo.training import Trainer, save_checkpoint

# Settings for the shared overfit run (criteria 5-7 and trained-model properties).
OVERFIT = dict(train_samples=8, steps=600, lr_max=1e-3, iterations_train=16, warm_start_max=16, seed=0)


def t64(a, grad=True):
    return ag.Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


def rand64(rng, *shape, grad=True, scale=1.0):
    return t64(rng.standard_normal(shape) * scale, grad)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(autouse=True)
def _fresh_tape():
    ag.current_tape().clear()
    yield
    ag.current_tape().clear()


def tiny_config(**kw):
    base = dict(max_disp=16, radius=2, levels=2, hidden_channels=8, prompt_channels=8, groups=4, crop_h=32, crop_w=32,
                data_max_disp=8.0)
    base.update(kw)
    return Config(**base)


@pytest.fixture(scope="session")
def overfit_run(tmp_path_factory):
    """Trains the desk-scale overfit model once per session; returns (trainer, records, checkpoint, seconds)."""
    import time

    cfg = Config(**OVERFIT)
    trainer = Trainer(cfg)
    t0 = time.perf_counter()
    records = trainer.run()
    seconds = time.perf_counter() - t0
    path = tmp_path_factory.mktemp("overfit") / "model.ckpt"
    save_checkpoint(path, trainer.model, cfg, trainer.step, trainer.optim)
    return trainer, records, path, seconds


@pytest.fixture(scope="session")
def overfit_model(overfit_run) -> StereoModel:
    return overfit_run[0].model
