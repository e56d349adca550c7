import numpy as np
import pytest

from dpmpn.graph import build_graph, triples_from_lists


def write_triples(path, rows):
    path.write_text("".join(f"{h}\t{r}\t{t}\n" for h, r, t in rows), encoding="utf-8")
    return path


def write_split_dir(directory, dataset):
    """Write a ToyDataset as train/valid/test .txt files."""
    for name in ("train", "valid", "test"):
        ts = getattr(dataset, name)
        rows = [(ts.entity_names[h], ts.relation_names[r], ts.entity_names[t])
                for h, r, t in ts.triples.tolist()]
        write_triples(directory / f"{name}.txt", rows)
    return directory


@pytest.fixture
def chain_graph():
    # a -r-> b -r-> c
    return build_graph(triples_from_lists([("a", "r", "b"), ("b", "r", "c")]))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}


def report(criterion: int, passed: bool | None, detail: str) -> str:
    """``passed=None`` marks a skipped criterion."""
    status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
    line = f"criterion {criterion:>2}: {status}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
