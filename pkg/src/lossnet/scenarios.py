"""Scenario documents and the built-in scenario library."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import PreconditionError
from .model import (
    AdmissionPolicy,
    NetworkSpec,
    Uncontrolled,
    hunt_network,
    hunt_policy,
    network_document,
    policy_from_dict,
    spec_from_dict,
    validate,
)
from .sim import (
    DAR,
    Fixed,
    FullyConnected,
    Generic,
    HoldingTimeDist,
    Star,
    holding_from_dict,
    routing_from_dict,
)

METHODS = ("exact", "kdr", "efpa", "reduced-load", "kelly", "lp", "fluid", "simulate")


def topology_from_dict(d, spec):
    if d is None or d.get("type", "generic") == "generic":
        if spec is None:
            raise PreconditionError("a generic topology needs classes, capacities and requirements")
        return Generic(spec)
    kind = d["type"]
    if kind == "fully_connected":
        nu = d.get("nu", 1.0)
        return FullyConnected(int(d["N"]), int(d["C"]), tuple(nu) if isinstance(nu, list) else float(nu), float(d.get("mu", 1.0)))
    if kind == "star":
        profile = {int(k): float(v) for k, v in d["profile"].items()}
        return Star(int(d["K"]), int(d["C"]), profile, float(d.get("mu", 1.0)))
    raise PreconditionError(f"unknown topology type {kind!r}")


def topology_to_dict(t):
    if isinstance(t, Generic):
        return {"type": "generic"}
    if isinstance(t, FullyConnected):
        nu = list(t.nu) if isinstance(t.nu, tuple) else t.nu
        return {"type": "fully_connected", "N": t.N, "C": t.C, "nu": nu, "mu": t.mu}
    return {"type": "star", "K": t.K, "C": t.C, "profile": {str(k): v for k, v in sorted(t.profile.items())}, "mu": t.mu}


@dataclass
class Scenario:
    """A network with its controls and run settings.

    ``scale`` multiplies arrival rates and capacities of a generic network for
    every method except ``fluid``, which works on the unscaled network.
    """

    name: str
    topology: object
    policy: AdmissionPolicy = field(default_factory=Uncontrolled)
    routing: object = field(default_factory=Fixed)
    holding: HoldingTimeDist = field(default_factory=HoldingTimeDist)
    sim: dict = field(default_factory=dict)
    fluid: dict = field(default_factory=dict)
    methods: list = field(default_factory=list)
    scale: float = 1
    description: str = ""

    @property
    def base_spec(self) -> NetworkSpec:
        return self.topology.network()

    @property
    def spec(self) -> NetworkSpec:
        spec = self.base_spec
        return spec if self.scale == 1 else spec.scaled(self.scale)

    @property
    def scaled_topology(self):
        if self.scale == 1:
            return self.topology
        if not isinstance(self.topology, Generic):
            raise PreconditionError("scale applies to generic topologies only")
        return Generic(self.spec)

    def to_dict(self) -> dict:
        if isinstance(self.topology, Generic):
            d = network_document(self.topology.spec, self.policy)
        else:
            d = {"policy": self.policy.to_dict()}
        d = {"name": self.name, "description": self.description, **d}
        d["topology"] = topology_to_dict(self.topology)
        d["scale"] = self.scale
        d["routing"] = self.routing.to_dict()
        d["holding"] = self.holding.to_dict()
        d["sim"] = copy.deepcopy(self.sim)
        d["fluid"] = copy.deepcopy(self.fluid)
        d["methods"] = list(self.methods)
        return d

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            spec = spec_from_dict(d) if "classes" in d else None
            if spec is not None:
                validate(spec)
            topology = topology_from_dict(d.get("topology"), spec)
            methods = list(d.get("methods", []))
            unknown = [m for m in methods if m not in METHODS]
            if unknown:
                raise PreconditionError(f"unknown methods {unknown}")
            scale = d.get("scale", 1)
            if not (isinstance(scale, (int, float)) and scale > 0):
                raise PreconditionError("scale must be a positive number")
            return cls(
                name=d.get("name", "scenario"),
                topology=topology,
                policy=policy_from_dict(d.get("policy")),
                routing=routing_from_dict(d.get("routing")),
                holding=holding_from_dict(d.get("holding")),
                sim=dict(d.get("sim", {})),
                fluid=dict(d.get("fluid", {})),
                methods=methods,
                scale=scale,
                description=d.get("description", ""),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PreconditionError(f"malformed scenario document: {exc!r}") from exc

    @classmethod
    def from_json(cls, text: str) -> "Scenario":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise PreconditionError(f"scenario is not valid JSON: {exc}") from exc
        return cls.from_dict(d)


def _generic(nu, A, C, mu=None, weights=None):
    return Generic(NetworkSpec.build(nu, A, C, mu=mu, weights=weights))


def _library() -> dict:
    lib = {}
    lib["single_link"] = Scenario(
        "single_link",
        _generic([8.0], [[1]], [10]),
        sim={"seed": 11, "horizon": 2000.0, "replications": 10},
        methods=["exact", "kdr", "efpa", "reduced-load", "kelly", "lp", "simulate"],
        description="One link of 10 circuits offered 8 erlangs.",
    )
    lib["two_class_reservation"] = Scenario(
        "two_class_reservation",
        _generic([12.0, 12.0], [[1, 1]], [20], weights=[2.0, 1.0]),
        policy=policy_from_dict({"type": "reservation", "thresholds": [0, 4]}),
        sim={"seed": 12, "horizon": 2000.0, "replications": 10},
        methods=["exact", "lp", "fluid", "simulate"],
        fluid={"x0": [[0.0, 0.0]], "horizon": 30.0},
        description="Overloaded link; the low-value class is admitted only with 4 spare circuits.",
    )
    lib["triangle_repacking"] = Scenario(
        "triangle_repacking",
        # links of capacity 3; with repacking each pair of call types is limited by the two links' total
        _generic([4.0, 4.0, 4.0], [[1, 1, 0], [1, 0, 1], [0, 1, 1]], [6, 6, 6]),
        sim={"seed": 13, "horizon": 2000.0, "replications": 10},
        methods=["exact", "kdr", "efpa", "reduced-load", "kelly", "lp", "simulate"],
        description="Three links with repacking, written as pairwise constraints on call counts.",
    )
    hunt_sim = {
        "seed": 2026,
        "horizon": 200.0,
        "replications": 4,
        "histogram": {"statistic": "class", "index": 0, "bin_width": 2},
    }
    lib["hunt_underload"] = Scenario(
        "hunt_underload",
        Generic(hunt_network([4.0, 4.0, 1.5], 2)),
        policy=hunt_policy(4, 4),
        scale=50,
        sim={**hunt_sim, "initial_state": [25, 0, 0]},
        fluid={"x0": [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]], "horizon": 40.0},
        methods=["fluid", "simulate"],
        description="Two-link bistability example with light two-link traffic: a single fixed point.",
    )
    lib["hunt_overload"] = Scenario(
        "hunt_overload",
        Generic(hunt_network([4.0, 4.0, 3.0], 2)),
        policy=hunt_policy(4, 4),
        scale=50,
        sim={**hunt_sim, "initial_state": [25, 0, 0]},
        fluid={"x0": [[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]], "horizon": 40.0},
        methods=["fluid", "simulate"],
        description="Two-link bistability example with heavy two-link traffic: two fixed points.",
    )
    lib["fully_connected_dar"] = Scenario(
        "fully_connected_dar",
        FullyConnected(6, 20, 18.0),
        routing=DAR(2),
        sim={"seed": 14, "horizon": 200.0, "replications": 5},
        methods=["simulate"],
        description="Six nodes, 20 circuits per link, dynamic alternative routing with reservation 2.",
    )
    lib["star_k_links"] = Scenario(
        "star_k_links",
        Star(4, 20, {1: 10.0, 2: 4.0}),
        sim={"seed": 15, "horizon": 1000.0, "replications": 5},
        methods=["efpa", "reduced-load", "kelly", "simulate"],
        description="Hub with 4 links of 20 circuits; single-link and two-link calls.",
    )
    return lib


LIBRARY_NAMES = tuple(_library())


def library() -> dict:
    """Fresh copies of the built-in scenarios, keyed by name."""
    return _library()


def get_scenario(name: str) -> Scenario:
    lib = _library()
    if name not in lib:
        raise PreconditionError(f"no library scenario named {name!r} (have {', '.join(lib)})")
    return lib[name]


def load_scenario(ref: str) -> Scenario:
    """A library name or a path to a scenario JSON file."""
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise PreconditionError(f"cannot read scenario file {ref}: {exc}") from exc
        return Scenario.from_json(text)
    return get_scenario(ref)


__all__ = ["LIBRARY_NAMES", "METHODS", "Scenario", "get_scenario", "library", "load_scenario"]
