import numpy as np
import pytest
import torch

from semguide.dataset import SceneConfig, generate_dataset, split_dataset, write_manifest


def central_difference_check(fn, tensors, h=1e-6, rel_floor=1e-6):
    """Largest elementwise relative error between autograd and central differences.

    ``fn`` maps the (float64, requires_grad) ``tensors`` to a scalar.  Relative
    error is ``|a - n| / max(|a|, |n|, floor)`` with ``floor = rel_floor * max|a|``.
    The floor sits at the round-off level of the differences, so structurally
    zero gradients (a bias feeding a normalisation) do not read as failures.
    A small step keeps perturbations clear of ReLU kinks.
    """
    out = fn(*tensors)
    analytic = [torch.zeros_like(t) if g is None else g for t, g in zip(tensors, torch.autograd.grad(out, tensors, allow_unused=True))]
    floor = max(rel_floor * max(g.abs().max().item() for g in analytic), 1e-12)
    worst = 0.0
    for t, g in zip(tensors, analytic):
        flat = t.data.view(-1)
        gflat = g.reshape(-1)
        for i in range(flat.numel()):
            old = flat[i].item()
            flat[i] = old + h
            with torch.no_grad():
                up = fn(*tensors).item()
            flat[i] = old - h
            with torch.no_grad():
                down = fn(*tensors).item()
            flat[i] = old
            num = (up - down) / (2 * h)
            a = gflat[i].item()
            worst = max(worst, abs(a - num) / max(abs(a), abs(num), floor))
    return worst


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """40 samples at 64 px, split 70/30."""
    out = tmp_path_factory.mktemp("tiny")
    m = generate_dataset(SceneConfig(image_size=64, seed=3), 40, out)
    m = split_dataset(m, 0.7)
    write_manifest(m)
    return m


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion: int, ok: bool, detail: str) -> bool:
        line = f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
