import re
from pathlib import Path

import numpy as np
import pytest

from numeasure.errors import PreconditionError
from numeasure.fixtures import FIXTURES, get_fixture

ACCEPTANCE = Path(__file__).with_name("test_acceptance.py")
# fixtures whose truth set depends on parameters are covered at these values
COVERED_AS = {"reducible": "reducible(2)"}


def test_printed_matrices():
    assert np.array_equal(get_fixture("a2_jordan").matrix.entries, [[0, 2], [0, 0]])
    assert np.array_equal(get_fixture("generic3").matrix.entries, [[-1.5, 1, 0], [-1, 1, 1], [0, -1, 0.5]])
    assert np.array_equal(get_fixture("cardioid").matrix.entries, [[0, 1, 1], [0, 0, 1], [0, 0, 0]])
    assert np.array_equal(get_fixture("reducible(2)").matrix.entries, [[0, 2, 0], [0, 0, 0], [0, 0, 2]])
    assert np.array_equal(get_fixture("ellipse(1,1)").matrix.entries, [[-1, 2], [0, 1]])
    assert np.array_equal(get_fixture("normal3").matrix.entries, np.diag([0, 1, 1j]))
    A = get_fixture("a3_shift(0,2)").matrix.entries
    assert np.array_equal(A, [[0, 0, 0], [0, 0, 2], [0, 0, 0]])


def test_truth_examples():
    assert get_fixture("a2_jordan").truths["f0"]() == pytest.approx(1 / (2 * np.pi))
    lam = get_fixture("cardioid").truths["lambda_max"]
    assert lam(np.pi / 2) == pytest.approx(np.cos(np.pi / 6))
    assert get_fixture("generic3").truths["region_values"]() == {1, 3}
    assert get_fixture("reducible(2)").truths["plateau"]() == pytest.approx(1 / np.sqrt(3))
    assert get_fixture("normal3").truths["density_inside"]() == pytest.approx(2.0)
    assert "plateau" not in get_fixture("reducible(0.5)").truths


def test_parsing_and_errors():
    assert get_fixture("reducible(2)").params == {"a": 2.0}
    assert get_fixture("reducible", a=3.0).params == {"a": 3.0}
    assert get_fixture("normal3(0, 2, 1i)").params["mu"][2] == 1j
    for bad in ("nope", "reducible(", "reducible(x)", "ellipse(1,2,3)", "a3_shift(1,1)", "normal3(0,1,2)", "ellipse(-1,0)", "reducible(-1)"):
        with pytest.raises(PreconditionError):
            get_fixture(bad)


def test_every_truth_has_a_source():
    for name in FIXTURES:
        f = get_fixture(COVERED_AS.get(name, name))
        d = f.describe()
        assert d["name"] == name and d["n"] == f.matrix.n
        assert d["truths"] and all(isinstance(s, str) and s for s in d["truths"].values())


def test_every_truth_is_used_by_an_acceptance_test():
    src = ACCEPTANCE.read_text()
    used = set()
    for fx, key in re.findall(r'truth\(\s*"([^"]+)"\s*,\s*"([^"]+)"', src):
        used.add((fx.split("(")[0], key))
    missing = []
    for name in FIXTURES:
        for key in get_fixture(COVERED_AS.get(name, name)).truths:
            if (name, key) not in used:
                missing.append(f"{name}.{key}")
    assert not missing, f"truths not consumed by any acceptance test: {missing}"
