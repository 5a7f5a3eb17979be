"""Reference matrices and the quantities known exactly for them.

Truths are closures so that each test applies its own tolerance; every truth
carries a short ``source`` string describing where the value comes from.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import PreconditionError
from .linalg import SquareMatrix


@dataclass(frozen=True)
class Truth:
    value: Callable
    source: str

    def __call__(self, *args, **kwargs):
        return self.value(*args, **kwargs)


@dataclass(frozen=True)
class Fixture:
    name: str
    matrix: SquareMatrix
    params: dict = field(default_factory=dict)
    truths: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.matrix.n

    def describe(self) -> dict:
        return {
            "name": self.name,
            "params": self.params,
            "n": self.n,
            "truths": {k: t.source for k, t in sorted(self.truths.items())},
        }


def _density(case, params=None):
    from .density import closed_form_density

    return lambda z: closed_form_density(case, params, z)


def a2_jordan() -> Fixture:
    A = SquareMatrix(np.array([[0, 2], [0, 0]], dtype=complex))
    return Fixture(
        "a2_jordan",
        A,
        {},
        {
            "density": Truth(_density("jordan2"), "1/(2 pi sqrt(1 - |z|^2)) on the unit disk"),
            "f0": Truth(lambda: 1.0 / (2.0 * np.pi), "value of the disk density at the centre"),
            "support_radius": Truth(lambda: 1.0, "W(A) is the closed unit disk"),
            "tangent_count": Truth(lambda z: np.where(np.abs(z) < 1.0, 0, 2), "no real tangents inside the disk, two outside"),
            "variance": Truth(lambda: 2.0 / 3.0, "(Tr(A*A)/n - |Tr A/n|^2)/(n+1) with Tr(A*A) = 4"),
            "polynomial_region": Truth(lambda z: np.abs(z) > 1.0, "the exterior of the disk"),
        },
    )


def a3_shift(a: complex = np.sqrt(2.0), b: complex = np.sqrt(2.0)) -> Fixture:
    if abs(abs(a) ** 2 + abs(b) ** 2 - 4.0) > 1e-12:
        raise PreconditionError("a3_shift needs |a|^2 + |b|^2 = 4")
    A = SquareMatrix(np.array([[0, a, 0], [0, 0, b], [0, 0, 0]], dtype=complex))
    return Fixture(
        "a3_shift",
        A,
        {"a": a, "b": b},
        {
            "density": Truth(_density("a3_radial"), "(1/pi) log((1 + sqrt(1 - r^2))/r) on the unit disk, the same for every (a, b)"),
        },
    )


def ellipse(b: float = 1.0, c: float = 1.0) -> Fixture:
    if b <= 0 or c < 0:
        raise PreconditionError("ellipse needs b > 0 and c >= 0")
    A = SquareMatrix(np.array([[-c, 2 * b], [0, c]], dtype=complex))
    a = np.hypot(b, c)
    return Fixture(
        "ellipse",
        A,
        {"b": b, "c": c},
        {
            "density": Truth(_density("ellipse2x2", {"b": b, "c": c}), "inverse square root of the quadratic vanishing on the ellipse x^2/a^2 + y^2/b^2 = 1"),
            "semi_axes": Truth(lambda: (float(a), float(b)), "semi-axes sqrt(b^2 + c^2) and b, foci at -c and c"),
        },
    )


GENERIC3 = np.array([[-1.5, 1, 0], [-1, 1, 1], [0, -1, 0.5]], dtype=complex)


def generic3() -> Fixture:
    return Fixture(
        "generic3",
        SquareMatrix(GENERIC3),
        {},
        {
            "region_values": Truth(lambda: {1, 3}, "N = 3 outside the oval and inside the cuspidal triangle, N = 1 between"),
            "exterior_count": Truth(lambda: 3, "N = 3 on the unbounded component"),
            "triangle_count": Truth(lambda: 3, "N = 3 at the centroid of the three cusps"),
            "n_curves": Truth(lambda: 2, "an oval from the extreme branches and a three-cusped curve from the middle one"),
            "polynomial_region": Truth(lambda: "triangle", "f is polynomial (here constant) inside the cuspidal triangle"),
        },
    )


def cardioid() -> Fixture:
    A = SquareMatrix(np.array([[0, 1, 1], [0, 0, 1], [0, 0, 0]], dtype=complex))
    return Fixture(
        "cardioid",
        A,
        {},
        {
            "lambda_max": Truth(lambda theta: np.cos(np.asarray(theta) / 3.0), "largest eigenvalue of H(theta) is cos(theta/3) for theta in [0, pi]"),
            "eigenvalues": Truth(lambda theta: np.sort(np.cos((np.asarray(theta)[..., None] + 2 * np.pi * np.arange(3)) / 3.0), axis=-1), "eigenvalues cos((theta + 2 pi k)/3)"),
            "curve": Truth(lambda phi: (2.0 * np.exp(1j * np.asarray(phi)) + np.exp(2j * np.asarray(phi))) / 3.0, "critical curve (2 e^{i phi} + e^{2 i phi})/3"),
            "segment": Truth(lambda: (-0.5 - 0.5j / np.sqrt(3.0), -0.5 + 0.5j / np.sqrt(3.0)), "one bitangent segment, endpoints -1/2 -+ i/(2 sqrt 3)"),
            "polynomial_region": Truth(lambda z: ~_inside_cardioid(np.asarray(z, dtype=complex)), "the exterior of the convex hull is a polynomial region"),
        },
    )


def _inside_cardioid(z: np.ndarray) -> np.ndarray:
    # support function of the hull is cos(theta/3) on [-pi, pi]
    th = np.linspace(-np.pi, np.pi, 4097)
    h = np.cos(th / 3.0)
    return np.all(z.real[..., None] * np.cos(th) + z.imag[..., None] * np.sin(th) <= h + 1e-12, axis=-1)


def reducible(a: float = 2.0) -> Fixture:
    if a < 0:
        raise PreconditionError("reducible needs a >= 0")
    A = SquareMatrix(np.array([[0, 2, 0], [0, 0, 0], [0, 0, a]], dtype=complex))
    truths = {
        "density": Truth(_density("reducible3", {"a": a}), "disk part plus, for a > 1, the constant 1/sqrt(a^2 - 1) on the hull minus the disk"),
    }
    if a > 1:
        truths["plateau"] = Truth(lambda: 1.0 / np.sqrt(a * a - 1.0), "density on the triangle outside the unit disk")
        truths["plateau_count"] = Truth(lambda: 3, "N = 3 on the triangle outside the unit disk")
        truths["pi_region"] = Truth(lambda z: (np.abs(np.asarray(z)) > 1.0) & _in_triangle(a, np.asarray(z, dtype=complex)), "between the unit circle and the hull boundary")
    return Fixture("reducible", A, {"a": a}, truths)


def _in_triangle(a: float, z: np.ndarray) -> np.ndarray:
    c = 1.0 / a
    s = np.sqrt(1.0 - c * c)
    return (z.real >= c) & (np.abs(z.imag) * (a - c) <= s * (a - z.real))


def normal3(mu1: complex = 0.0, mu2: complex = 1.0, mu3: complex = 1j) -> Fixture:
    mu = np.array([mu1, mu2, mu3], dtype=complex)
    area = 0.5 * abs(((mu[1] - mu[0]).conjugate() * (mu[2] - mu[0])).imag)
    if area <= 1e-12:
        raise PreconditionError("normal3 needs non-collinear eigenvalues")
    return Fixture(
        "normal3",
        SquareMatrix(np.diag(mu)),
        {"mu": [complex(m) for m in mu]},
        {
            "points": Truth(lambda: mu.copy(), "critical curves collapse to the eigenvalues"),
            "density_inside": Truth(lambda: 1.0 / area, "uniform on the triangle of eigenvalues"),
        },
    )


FIXTURES = {
    "a2_jordan": a2_jordan,
    "a3_shift": a3_shift,
    "ellipse": ellipse,
    "generic3": generic3,
    "cardioid": cardioid,
    "reducible": reducible,
    "normal3": normal3,
}


def get_fixture(name: str, **params) -> Fixture:
    """Look up a fixture; ``name`` may carry parameters, e.g. ``reducible(2)`` or ``ellipse(1,1)``."""
    name, params = _parse_name(name, params)
    if name not in FIXTURES:
        raise PreconditionError(f"unknown fixture {name!r}; expected one of {sorted(FIXTURES)}")
    try:
        return FIXTURES[name](**params)
    except TypeError as exc:
        raise PreconditionError(f"bad parameters for {name}: {exc}") from exc


def _parse_name(name: str, params: dict):
    name = name.strip()
    if "(" not in name:
        return name, params
    if not name.endswith(")"):
        raise PreconditionError(f"cannot parse fixture {name!r}")
    base, args = name[:-1].split("(", 1)
    values = []
    for tok in filter(None, (t.strip() for t in args.split(","))):
        try:
            values.append(complex(tok.replace("i", "j")) if ("j" in tok or "i" in tok) else float(tok))
        except ValueError as exc:
            raise PreconditionError(f"bad fixture argument {tok!r}") from exc
    base = base.strip()
    fn = FIXTURES.get(base)
    if fn is None:
        raise PreconditionError(f"unknown fixture {base!r}; expected one of {sorted(FIXTURES)}")
    names = fn.__code__.co_varnames[: fn.__code__.co_argcount]
    if len(values) > len(names):
        raise PreconditionError(f"{base} takes at most {len(names)} arguments")
    return base, {**dict(zip(names, values)), **params}
