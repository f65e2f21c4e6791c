import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=40, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "repo"))


@pytest.fixture(scope="session")
def head():
    from avatarsplat.geometry import build_toy_head

    return build_toy_head(0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x, h):
    """Central finite differences of scalar f over every entry of array x (in place, restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b):
    """Max abs difference normalized by the larger of the two max magnitudes."""
    a, b = np.asarray(a), np.asarray(b)
    scale = max(np.abs(a).max(), np.abs(b).max(), 1e-12)
    return float(np.abs(a - b).max() / scale)


# ---------------------------------------------------------------------------
# acceptance reporting: one line per criterion in the terminal summary

CRITERIA_LINES = []


def record_criterion(number, title, passed, detail=""):
    line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
    CRITERIA_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(CRITERIA_LINES, key=lambda x: x[0]):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_prior_run():
    """The 20-identity, 64 px toy prior shared by the end-to-end checks (about 7 minutes on one core)."""
    import time

    from avatarsplat.pipelines import TrainConfig, train_prior
    from avatarsplat.synthdata import DatasetConfig, in_memory_dataset

    t0 = time.perf_counter()
    ds = in_memory_dataset(DatasetConfig(n_identities=20, images_per_identity=20, image_size=64, seed=0))
    prior, hist = train_prior(ds, TrainConfig(epochs=10, seed=0))
    return {"dataset": ds, "prior": prior, "history": hist, "seconds": time.perf_counter() - t0}


HELD_OUT_VIEWS = [(130.0, 10.0), (-130.0, 10.0), (160.0, 10.0), (-160.0, 10.0)]


@pytest.fixture(scope="session")
def frontal_subjects(toy_prior_run):
    """Three new subjects enrolled from one frontal view, each fitted with the full pipeline."""
    import time

    from avatarsplat.pipelines import FitConfig, fit
    from avatarsplat.synthdata import DatasetConfig, make_enrollment, sample_identity

    prior, model = toy_prior_run["prior"], toy_prior_run["dataset"].model
    cfg = DatasetConfig(image_size=64)
    out = []
    for subject in range(3):
        ident = sample_identity((subject, 99), model)
        enr = make_enrollment(model, ident, [(0.0, 0.0)], cfg)
        held = make_enrollment(model, ident, HELD_OUT_VIEWS, cfg, prefix="held")
        t0 = time.perf_counter()
        avatar = fit(prior, enr, FitConfig(), model)
        out.append({"enrollment": enr, "heldout": held, "full": avatar, "seconds": time.perf_counter() - t0})
    return out
