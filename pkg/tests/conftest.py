import pytest

from advbv.harness import preset_configs, run_sweep


@pytest.fixture(scope="session")
def preset_runner(tmp_path_factory):
    """Run a named preset sweep once per session and cache the result."""
    cache = {}

    def run(name):
        if name not in cache:
            cfg = preset_configs()[name]
            out = tmp_path_factory.mktemp(f"sweep-{name}")
            cache[name] = (run_sweep(cfg, out_dir=out), out)
        return cache[name]

    return run


@pytest.fixture(scope="session")
def mog_sweep(preset_runner):
    return preset_runner("mog-logistic")


@pytest.fixture(scope="session")
def planted_sweep(preset_runner):
    return preset_runner("planted-logistic")


@pytest.fixture(scope="session")
def box2d_sweep(preset_runner):
    return preset_runner("box-2d")


@pytest.fixture(scope="session")
def boxhd_sweep(preset_runner):
    return preset_runner("box-highd")


@pytest.fixture(scope="session")
def smoothing_sweep(preset_runner):
    return preset_runner("smoothing")


@pytest.fixture(scope="session")
def fixed_noise_sweep(preset_runner):
    return preset_runner("fixed-noise")
