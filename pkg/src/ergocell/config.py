"""Run configuration: canonical JSON blocks, validation, object construction.

One config file drives one experiment.  All numerics are decimal text in
JSON; serialization is canonical (sorted keys, two-space indent), so a
round-trip through parse/serialize is the identity on parsed content and the
manifest echo reproduces the run exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field as dfield
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .domain import BoundaryFn, GSpec
from .fields import FieldSpec, SiteLaw
from .grids import DomainSpec
from .operators import (OperatorSpec, check_family_bounds, classify_convexity,
                        hjb, isaacs, linear_trace, pucci)
from .solver import SolverConfig

EXPERIMENTS = ("cell_concentration", "lipschitz_probe", "beta_estimate",
               "continuity_sweep", "dyadic_cauchy", "domain_sweep", "oracle_check")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    raw: Dict[str, Any]

    @property
    def experiment(self) -> str:
        return self.raw.get("experiment", "")

    @property
    def experiment_id(self) -> str:
        return self.raw.get("experiment_id", self.experiment)

    @property
    def master_seed(self) -> int:
        return int(self.raw.get("master_seed", 0))

    @property
    def threads(self) -> int:
        return int(self.raw.get("threads", 1))

    def block(self, name: str) -> Dict[str, Any]:
        v = self.raw.get(name, {})
        if not isinstance(v, dict):
            raise ConfigError(f"config block {name!r} must be an object")
        return v


def parse_config(text: str) -> RunConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"unparseable config: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return RunConfig(raw)


def serialize_config(cfg: RunConfig) -> str:
    return json.dumps(cfg.raw, sort_keys=True, indent=2) + "\n"


def load_config(path: str) -> RunConfig:
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())


# -- object construction ----------------------------------------------------

def build_operator(block: Dict[str, Any]) -> OperatorSpec:
    kind = block.get("kind", "linear_trace")
    lam = float(block.get("lam", 1.0))
    Lam = float(block.get("Lam", 1.0))
    d = int(block.get("dim", 2))
    if kind == "linear_trace":
        A = np.asarray(block["matrix"], dtype=float) if "matrix" in block else np.eye(d)
        return linear_trace(A, d=d, lam=lam if "lam" in block else None,
                            Lam=Lam if "Lam" in block else None)
    if kind in ("pucci_plus", "pucci_minus"):
        return pucci(lam, Lam, d=d, plus=(kind == "pucci_plus"))
    if kind == "hjb":
        return hjb([np.asarray(m, dtype=float) for m in block["matrices"]], lam, Lam)
    if kind == "isaacs":
        table = [[np.asarray(m, dtype=float) for m in row] for row in block["matrix_table"]]
        return isaacs(table, lam, Lam)
    raise ConfigError(f"unknown operator kind {kind!r}")


def build_field(block: Dict[str, Any]) -> FieldSpec:
    lb = block.get("law", {})
    law = SiteLaw(kind=lb.get("kind", "bernoulli"), p=float(lb.get("p", 0.5)),
                  a=float(lb.get("a", 0.0)), b=float(lb.get("b", 1.0)),
                  mean=float(lb.get("mean", 0.0)), sd=float(lb.get("sd", 1.0)),
                  clip=float(lb["clip"]) if "clip" in lb else None)
    return FieldSpec(lattice_dim=int(block.get("lattice_dim", 1)), law=law,
                     construction=block.get("construction", "iid_checkerboard"),
                     width=float(block.get("width", 1.0)),
                     m=int(block.get("m", 0)),
                     weights=tuple(float(w) for w in block.get("weights", [])))


def build_nu(block: Dict[str, Any], d: int) -> Tuple[float, ...]:
    if "nu" in block:
        nu = np.asarray(block["nu"], dtype=float)
    elif "nu_angle_deg" in block:
        th = math.radians(float(block["nu_angle_deg"]))
        nu = np.array([math.cos(th), math.sin(th)])
    else:
        nu = np.array([0.0] * (d - 1) + [1.0])
    return tuple(nu / np.linalg.norm(nu))


def build_solver(block: Dict[str, Any]) -> SolverConfig:
    return SolverConfig(
        tol_res=float(block["tol_res"]) if block.get("tol_res") is not None else None,
        max_iters=int(block.get("max_iters", 200_000)),
        safety=float(block.get("safety", 1.0)),
        accelerator=block.get("accelerator", "auto"),
        max_policy_iters=int(block.get("max_policy_iters", 80)),
    )


def build_gspec(block: Dict[str, Any], field_spec: FieldSpec) -> GSpec:
    def fn(b):
        return BoundaryFn(kind=b.get("kind", "const"),
                          amplitude=float(b.get("amplitude", 1.0)),
                          frequency=int(b.get("frequency", 1)),
                          offset=float(b.get("offset", 0.0)))
    return GSpec(a=fn(block.get("a", {})), b=fn(block.get("b", {"amplitude": 0.0})),
                 field_spec=field_spec)


def build_domain(block: Dict[str, Any]) -> DomainSpec:
    kind = block.get("domain", "disk")
    if kind == "disk":
        return DomainSpec("disk", d=2, radius=float(block.get("radius", 1.0)))
    if kind == "annulus":
        return DomainSpec("annulus", d=2, r_in=float(block.get("r_in", 0.5)),
                          r_out=float(block.get("r_out", 1.0)))
    raise ConfigError(f"unknown domain {kind!r}")


# -- validation ---------------------------------------------------------------

def validate(cfg: RunConfig) -> Tuple[List[str], List[str]]:
    """Hard errors and theory warnings, per the admissibility rules."""
    errors: List[str] = []
    warnings: List[str] = []
    if cfg.experiment not in EXPERIMENTS:
        errors.append(f"unknown experiment {cfg.experiment!r}")
        return errors, warnings

    ob = cfg.block("operator")
    try:
        op = build_operator(ob)
    except (ConfigError, ValueError, KeyError) as e:
        errors.append(f"operator: {e}")
        return errors, warnings
    if "lam" in ob and "Lam" in ob and float(ob["lam"]) > float(ob["Lam"]):
        errors.append("operator: lam > Lam")
    if not check_family_bounds(op):
        errors.append("operator: family matrix outside [lam*I, Lam*I]")

    try:
        fs = build_field(cfg.block("field"))
    except (ConfigError, ValueError) as e:
        errors.append(f"field: {e}")
        fs = None

    geo = cfg.block("geometry")
    cell_kind = geo.get("cell_kind", "dirichlet")
    R_list = [float(r) for r in geo.get("R_list", [])]
    if cfg.experiment in ("cell_concentration", "dyadic_cauchy", "beta_estimate"):
        for R in R_list:
            if R <= 0 or abs(math.log2(R) - round(math.log2(R))) > 1e-9:
                errors.append(f"geometry: R={R} not dyadic")
        if cfg.experiment == "dyadic_cauchy":
            if any(abs(b - 2 * a) > 1e-9 for a, b in zip(R_list, R_list[1:])):
                errors.append("geometry: dyadic_cauchy needs consecutive dyadic R")
    h_rule = float(geo.get("h_rule", 16.0))
    if h_rule < 4.0:
        errors.append("geometry: h rule violates R >= 4h")
    L_rule = float(geo.get("L_rule", 4.0))
    L_floor = 2.0 if geo.get("allow_narrow") else 4.0
    if L_rule < L_floor:
        errors.append(f"geometry: L rule violates L >= {L_floor:g}R")
    if cfg.experiment == "domain_sweep":
        db = cfg.block("domain")
        if float(db.get("h_rule", 8.0)) < 8.0:
            errors.append("domain: oscillation resolution needs h <= eps/8")
        eps = [float(e) for e in db.get("eps_list", [])]
        if any(b >= a for a, b in zip(eps, eps[1:])):
            errors.append("domain: eps_list must be decreasing")
        if int(db.get("M", 20)) < 20:
            errors.append("domain: M >= 20 required")

    # theory admissibility
    conv = classify_convexity(op)
    d = op.dim
    ratio = op.lam / op.Lam
    if conv == "neither":
        if cell_kind == "dirichlet" and ratio <= 0.5 * (d + 1) / d:
            warnings.append(
                f"nonconvex Dirichlet with lam/Lam={ratio:.3f} <= {(0.5*(d+1)/d):.3f}: "
                "concentration theory inadmissible (needs lam/Lam > (d+1)/(2d))")
        if cell_kind == "neumann" and ratio <= 0.5:
            warnings.append("nonconvex Neumann needs lam/Lam > 1/2: theory inadmissible")
    if cell_kind == "neumann" and d == 2 and abs(ratio - 1.0) < 1e-12:
        warnings.append("Neumann beta_N = 0 degeneracy (d=2, lam=Lam): rates are vacuous")
    if fs is not None and cfg.experiment == "cell_concentration":
        M = int(cfg.block("statistics").get("samples", 0))
        if M < 50:
            errors.append("statistics: concentration needs samples >= 50")
    return errors, warnings
