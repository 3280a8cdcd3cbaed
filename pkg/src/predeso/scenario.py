"""Scenario configuration: plant, topology, gain options, simulation settings.

A scenario is one JSON document with sections ``plant``, ``topology``,
``gains``, ``sim``, ``leader_input`` and ``init``. See README for the
schema; ``example1`` and ``example2`` are built-in presets.
"""

from dataclasses import dataclass, field, replace
import hashlib
import json

import numpy as np

from .errors import ConfigError
from .netgraph import Topology, default_topology
from .sysmodel import Plant

EXAMPLE_A = [[-4.0, 1.0], [1.0, 0.0]]
EXAMPLE_B = [[1.0, 2.0], [2.0, 1.0]]
EXAMPLE_S = [[0.0, 1.0], [-1.0, 0.0]]
EXAMPLE_F = [[1.0, 0.0], [0.0, 1.0]]
EXAMPLE_TAU = 0.09

# Reference solutions for the worked examples, used for verification only.
REF_K1 = [[-0.3333, -6.3333], [-0.3333, 2.6667]]
REF_P_EX1 = [
    [0.3554, 0.0230, -0.1985, -0.0195],
    [0.0230, 0.5864, -0.7986, 0.0854],
    [-0.1985, -0.7986, 3.5022, -0.7468],
    [-0.0195, 0.0854, -0.7468, 2.4724],
]
REF_P_NODELAY = [
    [0.3337, 0.0200, -0.2022, -0.0351],
    [0.0200, 0.6059, -0.7971, 0.1013],
    [-0.2022, -0.7971, 3.4524, -0.7308],
    [-0.0351, 0.1013, -0.7308, 2.4451],
]
REF_P_EX2 = [
    [0.2220, 0.1066, -0.1335, -0.1098],
    [0.1066, 0.5897, -0.6273, -0.1022],
    [-0.1335, -0.6273, 1.2235, 0.0287],
    [-0.1098, -0.1022, 0.0287, 0.1399],
]
REF_Q_EX2 = [[4.0340, -0.0], [-0.0, 2.4367]]


def _eval_expr(expr, t):
    """Evaluate one scalar leader-input expression at times ``t``."""
    t = np.asarray(t, dtype=float)
    if isinstance(expr, (int, float)):
        return np.full_like(t, float(expr))
    if not isinstance(expr, dict) or len(expr) != 1:
        raise ConfigError(f"bad leader input expression: {expr!r}")
    (kind, arg), = expr.items()
    if kind == "constant":
        return np.full_like(t, float(arg))
    if kind == "exp_decay":
        return float(arg.get("amp", 1.0)) * np.exp(-float(arg.get("rate", 1.0)) * t)
    if kind == "sinusoid":
        return float(arg.get("amp", 1.0)) * np.sin(
            float(arg.get("freq", 1.0)) * t + float(arg.get("phase", 0.0)))
    if kind == "sum":
        out = np.zeros_like(t)
        for term in arg:
            out = out + _eval_expr(term, t)
        return out
    raise ConfigError(f"unknown leader input kind {kind!r}")


@dataclass(frozen=True)
class LeaderInput:
    """Per-component expressions; an empty tuple means ``u0 = 0``."""

    components: tuple = ()

    def __call__(self, t, p):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if not self.components:
            return np.zeros((t.size, p))
        if len(self.components) != p:
            raise ConfigError(f"leader input has {len(self.components)} components, plant has {p}")
        return np.stack([_eval_expr(c, t) for c in self.components], axis=1)

    def sup_norm(self, horizon, p, samples=200001):
        """Numerical ``sup_t |u0(t)|`` over ``[0, horizon]``."""
        if not self.components:
            return 0.0
        t = np.linspace(0.0, horizon, samples)
        return float(np.linalg.norm(self(t, p), axis=1).max())

    @property
    def active(self):
        return bool(self.components)


def example2_leader():
    """``u0 = [exp(-t) + 1, 2 + sin(t/2)]``."""
    return LeaderInput((
        {"sum": [{"exp_decay": {"amp": 1.0, "rate": 1.0}}, {"constant": 1.0}]},
        {"sum": [{"constant": 2.0}, {"sinusoid": {"amp": 1.0, "freq": 0.5}}]},
    ))


@dataclass(frozen=True)
class InitSpec:
    """Affine transforms ``scale * delta + offset`` of uniform draws."""

    x: tuple = (4.0, 1.0)
    w: tuple = (10.0, -5.0)
    c: tuple = (4.0, 1.0)
    x0: tuple = (3.0, 5.0)
    w0: tuple = (3.0, 1.0)
    v: float = 0.0
    what: float = 0.0


@dataclass(frozen=True)
class GainOptions:
    theorem: int = 1
    poles: tuple = (-5.0, -10.0)
    decay: float = 1.0
    mu: float = 2.0
    alpha: float = 4.0
    beta1: float = 1.0
    eps: tuple = (0.1,)
    sigma: tuple = (0.005,)
    q_min_eig: float = 2.0
    K1: tuple = None


@dataclass(frozen=True)
class SimParams:
    dt: float = 1e-3
    horizon: float = 10.0
    seed: int = 1
    sample_every: int = 10


@dataclass(frozen=True)
class ScenarioConfig:
    plant: Plant
    topology: Topology
    gains: GainOptions = field(default_factory=GainOptions)
    sim: SimParams = field(default_factory=SimParams)
    leader_input: LeaderInput = field(default_factory=LeaderInput)
    init: InitSpec = field(default_factory=InitSpec)
    name: str = "custom"

    def validate(self):
        dt, T = self.sim.dt, self.sim.horizon
        if not dt > 0:
            raise ConfigError("sim.dt must be positive")
        if T < self.plant.tau:
            raise ConfigError(f"horizon {T:g} is shorter than the delay {self.plant.tau:g}")
        m = round(self.plant.tau / dt)
        if abs(m * dt - self.plant.tau) > 1e-9:
            raise ConfigError(f"dt={dt:g} does not divide tau={self.plant.tau:g}")
        if self.sim.sample_every < 1:
            raise ConfigError("sim.sample_every must be at least 1")
        if self.gains.theorem not in (1, 2):
            raise ConfigError("gains.theorem must be 1 or 2")
        return self

    @property
    def mode(self):
        if self.gains.theorem == 2:
            return "thm2"
        return "thm1" if self.plant.tau > 0 else "nodelay"

    @property
    def steps(self):
        return int(round(self.sim.horizon / self.sim.dt))

    def leader_bound(self):
        return self.leader_input.sup_norm(self.sim.horizon, self.plant.p)

    def with_seed(self, seed):
        return replace(self, sim=replace(self.sim, seed=int(seed)))

    def with_sim(self, **kw):
        return replace(self, sim=replace(self.sim, **kw))

    def to_json(self):
        g = self.gains
        return {
            "name": self.name,
            "plant": self.plant.to_json(),
            "topology": self.topology.to_json(),
            "gains": {
                "theorem": g.theorem, "poles": list(g.poles), "decay": g.decay, "mu": g.mu, "alpha": g.alpha,
                "beta1": g.beta1, "eps": list(g.eps), "sigma": list(g.sigma),
                "q_min_eig": g.q_min_eig,
                "K1": None if g.K1 is None else [list(r) for r in g.K1],
            },
            "sim": {"dt": self.sim.dt, "horizon": self.sim.horizon, "seed": self.sim.seed,
                    "sample_every": self.sim.sample_every},
            "leader_input": list(self.leader_input.components),
            "init": {k: list(v) if isinstance(v, tuple) else v
                     for k, v in self.init.__dict__.items()},
        }

    def digest(self):
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _tuple(v):
    if v is None:
        return None
    if isinstance(v, (list, tuple)):
        return tuple(_tuple(x) if isinstance(x, (list, tuple)) else float(x) for x in v)
    return (float(v),)


def from_json(doc):
    """Build a validated scenario from a parsed JSON document."""
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a JSON object")
    try:
        plant = Plant.from_json(doc["plant"])
    except KeyError as exc:
        raise ConfigError(f"plant: missing field {exc}") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"plant: {exc}") from exc
    topo = Topology.from_json(doc["topology"]) if "topology" in doc else default_topology()
    g = dict(doc.get("gains", {}))
    known = GainOptions.__dataclass_fields__
    unknown = set(g) - set(known)
    if unknown:
        raise ConfigError(f"gains: unknown fields {sorted(unknown)}")
    for k in ("poles", "eps", "sigma", "K1"):
        if k in g:
            g[k] = _tuple(g[k])
    try:
        gains = GainOptions(**g)
        sim = SimParams(**doc.get("sim", {}))
        init_doc = {k: tuple(v) if isinstance(v, list) else v
                    for k, v in doc.get("init", {}).items()}
        init = InitSpec(**init_doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    leader = LeaderInput(tuple(doc.get("leader_input", ())))
    return ScenarioConfig(plant, topo, gains, sim, leader, init,
                          name=doc.get("name", "custom")).validate()


def load(path):
    """Read a scenario file; JSON errors carry line and column."""
    with open(path) as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} col {exc.colno}: {exc.msg}") from exc
    return from_json(doc)


def example_plant(tau=EXAMPLE_TAU):
    B = np.array(EXAMPLE_B)
    F = np.array(EXAMPLE_F)
    return Plant(EXAMPLE_A, B, B @ F, EXAMPLE_S, F, tau)


def preset(name):
    if name == "example1":
        return ScenarioConfig(example_plant(), default_topology(), GainOptions(theorem=1),
                              name="example1").validate()
    if name == "example1-nodelay":
        return ScenarioConfig(example_plant(0.0), default_topology(), GainOptions(theorem=1),
                              name="example1-nodelay").validate()
    if name == "example2":
        return ScenarioConfig(example_plant(), default_topology(), GainOptions(theorem=2),
                              leader_input=example2_leader(), name="example2").validate()
    raise ConfigError(f"unknown preset {name!r} (example1, example1-nodelay, example2)")


PRESETS = ("example1", "example1-nodelay", "example2")


def draw_initial(cfg):
    """Seeded initial conditions; draw order is x, w, c, x0, w0."""
    rng = np.random.default_rng(cfg.sim.seed)
    N, n, s = cfg.topology.followers, cfg.plant.n, cfg.plant.s
    ini = cfg.init

    def aff(spec, shape):
        a, b = spec
        return a * rng.random(shape) + b

    x = aff(ini.x, (N, n))
    w = aff(ini.w, (N, s))
    c = aff(ini.c, N)
    x0 = aff(ini.x0, n)
    w0 = aff(ini.w0, s)
    return {
        "x": x, "w": w, "c": c, "x0": x0, "w0": w0,
        "v": np.full((N, n), float(ini.v)), "what": np.full((N, s), float(ini.what)),
    }

