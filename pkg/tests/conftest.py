import numpy as np
import pytest

from fewshot_vdm.denoiser import ModelConfig, init_params


@pytest.fixture
def tiny_config():
    return ModelConfig(num_frames=3, height=8, width=8, patch=4, dim=16, heads=2, blocks=1, timesteps=10)


@pytest.fixture
def tiny_params(tiny_config):
    """float64 params with every tensor perturbed away from its init value."""
    p = init_params(tiny_config, seed=0).astype(np.float64)
    rng = np.random.default_rng(1)
    for k, v in p.tensors.items():
        p.tensors[k] = v + 0.1 * rng.standard_normal(v.shape)
    return p


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
