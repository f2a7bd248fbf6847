import time

import numpy as np
import pytest

from ambipose.cli import cmd_evaluate, cmd_generate, cmd_train
from ambipose.config import RunConfig

# criterion id -> (passed, detail); filled in by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def default_run(tmp_path_factory):
    """One generate -> train -> evaluate pass with the default configuration.

    Shared by the acceptance and integration tests; takes several minutes.
    """
    out = tmp_path_factory.mktemp("default_run")
    cfg = RunConfig(output_dir=str(out))
    files = cmd_generate(cfg)
    t0 = time.perf_counter()
    trained = cmd_train(cfg, files["train"])
    seconds = time.perf_counter() - t0
    summary = cmd_evaluate(cfg, trained["checkpoint"], files["test"], str(out / "scene.json"))
    return {"config": cfg, "dir": out, "checkpoint": trained["checkpoint"], "test": files["test"],
            "summary": summary, "train_seconds": seconds}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}  {detail}")
