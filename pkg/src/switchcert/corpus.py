"""Bundled benchmark systems.

``ando_shih_g<gamma>``
    ``{gamma*A1, gamma*A2}`` with ``A1 = [[1,0],[1,0]]``, ``A2 = [[0,1],[0,-1]]``;
    JSR ``gamma``, best common quadratic bound ``sqrt(2)*gamma``.
``product_maps``
    ``f1 = (x1 x2, 0)``, ``f2 = (0, x1 x2)``: ``x1^2 x2^2 + x1^2 + x2^2`` decreases
    along both vertices, yet the hull contains the unstable map ``(x1 x2/2, x1 x2/2)``.
``product_maps_box``
    Same maps; ``meta`` records the invariant box ``[-1, 1]^2`` and ``W = x1^2 + x2^2``.
``two_mode_quadratic``
    Two quadratic maps whose linearizations have JSR < 1 but need a quartic
    sos-convex Lyapunov function.
``decoupled_pair``
    ``(0.5 x1 + x1^2, 0.5 x2)`` and ``(0.5 x1, 0.5 x2 + x2^2)``.
"""

from __future__ import annotations

import json
from fractions import Fraction
from importlib import resources

from .poly import Polynomial, PolynomialMap, SwitchedSystem, dumps

ANDO_SHIH_GAMMAS = ("0.5", "0.7", "0.8", "0.9", "0.99")


def _vars():
    return Polynomial.variables(2)


def ando_shih(gamma: str | float = "1") -> SwitchedSystem:
    g = Fraction(str(gamma))
    A1 = [[g, 0], [g, 0]]
    A2 = [[0, g], [0, -g]]
    return SwitchedSystem.from_matrices([A1, A2], {"name": f"ando_shih_g{gamma}", "gamma": str(gamma)})


def product_maps(box: bool = False) -> SwitchedSystem:
    x1, x2 = _vars()
    zero = Polynomial.zero(2)
    meta = {"name": "product_maps_box" if box else "product_maps",
            "nonconvex_V": (x1 ** 2 * x2 ** 2 + x1 ** 2 + x2 ** 2).to_json()}
    if box:
        meta.update({"box": [[-1, 1], [-1, 1]], "W": (x1 ** 2 + x2 ** 2).to_json()})
    return SwitchedSystem([PolynomialMap([x1 * x2, zero]), PolynomialMap([zero, x1 * x2])], meta)


def two_mode_quadratic() -> SwitchedSystem:
    x1, x2 = _vars()
    F = Fraction
    f1 = PolynomialMap([-F(1, 4) * x1 - F(1, 4) * x2 + F(1, 5) * x1 ** 2, -x1 + F(1, 10) * x1 * x2])
    f2 = PolynomialMap([F(3, 4) * x1 + F(3, 4) * x2 - F(1, 10) * x1 * x2, -F(1, 2) * x1 + F(1, 4) * x2])
    return SwitchedSystem([f1, f2], {"name": "two_mode_quadratic", "reference_V": reference_quartic().to_json()})


def reference_quartic() -> Polynomial:
    """Published sos-convex quartic for ``two_mode_quadratic`` (two-decimal coefficients)."""
    F = Fraction
    return Polynomial(2, {(4, 0): F("19.14"), (3, 1): F("10.57"), (2, 2): F("47.88"),
                          (1, 3): F("16.47"), (0, 4): F("10.49")})


def decoupled_pair() -> SwitchedSystem:
    x1, x2 = _vars()
    h = Fraction(1, 2)
    return SwitchedSystem([PolynomialMap([h * x1 + x1 ** 2, h * x2]), PolynomialMap([h * x1, h * x2 + x2 ** 2])],
                          {"name": "decoupled_pair"})


def build_all() -> dict[str, SwitchedSystem]:
    out = {f"ando_shih_g{g}": ando_shih(g) for g in ANDO_SHIH_GAMMAS}
    out["product_maps"] = product_maps()
    out["product_maps_box"] = product_maps(box=True)
    out["two_mode_quadratic"] = two_mode_quadratic()
    out["decoupled_pair"] = decoupled_pair()
    return out


def names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__package__).joinpath("corpus").iterdir()
                  if p.name.endswith(".json"))


def path(name: str):
    return resources.files(__package__).joinpath("corpus").joinpath(f"{name}.json")


def load_json(name: str) -> dict:
    return json.loads(path(name).read_text())


def load(name: str) -> SwitchedSystem:
    return SwitchedSystem.from_json(load_json(name))


SHIPPED_ROA_BETA = 0.005


def certificate_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files(__package__).joinpath("certificates").iterdir()
                  if p.name.endswith(".json"))


def certificate_path(name: str):
    return resources.files(__package__).joinpath("certificates").joinpath(f"{name}.json")


def load_certificate(name: str) -> dict:
    return json.loads(certificate_path(name).read_text())


def write_certificates(directory) -> None:
    """Regenerate the bundled certificates (needs the SDP solver)."""
    from pathlib import Path

    from .roa import roa_certify

    cert = roa_certify(two_mode_quadratic(), reference_quartic(), SHIPPED_ROA_BETA, 2, method="sprocedure")
    if not cert.feasible:
        raise RuntimeError(f"could not regenerate the shipped certificate: {cert}")
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    (d / "two_mode_quadratic_roa.json").write_text(dumps(cert.to_json()))


def write_all(directory) -> None:
    """Regenerate the bundled system files."""
    from pathlib import Path

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, sys in build_all().items():
        (d / f"{name}.json").write_text(dumps(sys.to_json()))
