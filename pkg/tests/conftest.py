import numpy as np
import pytest
import torch

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def dense_affinity_oracle(img, sigma_i, sigma_x, radius):
    """All-pairs weight matrix evaluated straight from the formula."""
    img = np.asarray(img, dtype=np.float64)
    coords = np.argwhere(np.ones(img.shape, bool)).astype(np.float64)
    f = img.reshape(-1)
    n = f.size
    W = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            d2 = ((coords[i] - coords[j]) ** 2).sum()
            if d2 <= radius ** 2:
                W[i, j] = np.exp(-(f[i] - f[j]) ** 2 / sigma_i ** 2) * np.exp(-d2 / sigma_x ** 2)
    return W


def random_assignment(rng, K, dims):
    logits = rng.normal(size=(K,) + tuple(dims))
    e = np.exp(logits - logits.max(axis=0))
    return e / e.sum(axis=0)


# criterion number -> (title, passed, detail), filled in as acceptance tests report
CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    item_crit = dict(report.user_properties).get("criterion")
    if item_crit is None:
        return
    number, title = item_crit
    _, ok, detail = CRITERIA.get(number, (title, True, ""))
    # a criterion split over several tests passes only if every phase of every test does
    ok = ok and not report.failed
    new = dict(report.user_properties).get("detail")
    if new and report.when == "call":
        detail = f"{detail}; {new}" if detail else new
    CRITERIA[number] = (title, ok, detail)


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    mark = request.node.get_closest_marker("criterion")
    if mark is not None:
        record_property("criterion", tuple(mark.args))


def pytest_terminal_summary(terminalreporter, config):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        title, ok, detail = CRITERIA[number]
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
