"""Scenario configuration: one flat, YAML-backed settings object.

Every field can come from a config file and be overridden by a command line
flag of the same name; the builders translate it into the typed settings of
each module, whose own validation runs on construction.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import yaml

from .errors import ConfigError
from .planner import PidGains, PlannerSettings, PolicySettings
from .rnn import RnnConfig
from .road import RoadModel, build_straight_highway
from .vehicle import VehiclePhysicsParams
from .world import WorldSettings


@dataclass(frozen=True)
class ScenarioConfig:
    # road
    scene: str = "highway"
    num_lane_right: int = 3
    num_lane_left: int = 3
    lane_width: float = 6.5
    road_length: float = 1000.0
    # traffic
    agents: int = 8
    seed: int = 1
    test_seed: int = 2
    transition_rate: float = 0.12
    max_duration: float = 150.0
    # physics
    traction: float = 0.5
    forward_slip_limit: float = 0.1
    sideway_slip_limit: float = 0.1
    mass: float = 50.0
    engine_torque: float = 590.0
    brake_torque: float = 1475.0
    max_speed: float = 30.0
    # controller and planner
    kp: float = 0.3
    ki: float = 0.01
    kd: float = 0.8
    integral_clamp: float = 5.0
    lane_change_distance: float = 35.0
    acceleration: float = 2.0
    follow_gap: float = 20.0
    # recording
    feature_variant: str = "A3"
    T: int = 12
    log_frequency: int = 20
    train_sequences: int = 5000
    test_sequences: int = 1000
    stop_as: str = "drop"
    # model and training
    cell: str = "lstm"
    embed_dim: int = 32
    hidden_dim: int = 128
    embed_layers: int = 1
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    # inference
    horizon: float = 3.0
    cell_length: float = 5.0
    padding: float = 0.5
    # io
    dataset: str = "data/highway.seerseq"
    model: str = "models/model.seernet"
    report: str = "reports/report.json"
    log_port: int = 7100
    control_port: int = 0
    batchmode: bool = False

    def __post_init__(self):
        if self.feature_variant not in ("A2", "A3"):
            raise ConfigError("feature_variant", "must be A2 or A3")
        if self.T not in (6, 12):
            raise ConfigError("T", "must be 6 or 12")
        if self.log_frequency != 20:
            # windows are defined at the 5 Hz readout
            raise ConfigError("log_frequency", "only 20 (x 10 ms, 5 Hz) is supported for recording")
        if self.stop_as not in ("drop", "decelerate"):
            raise ConfigError("stop_as", "must be drop or decelerate")
        if self.train_sequences < 1 or self.test_sequences < 1:
            raise ConfigError("train_sequences", "sequence counts must be >= 1")
        for name in ("log_port", "control_port"):
            if not 0 <= getattr(self, name) <= 65535:
                raise ConfigError(name, "must be a TCP port number")

    # -- builders -------------------------------------------------------------------

    def road(self) -> RoadModel:
        return build_straight_highway(self.num_lane_right, self.num_lane_left, self.lane_width,
                                      self.road_length)

    def physics(self) -> VehiclePhysicsParams:
        return VehiclePhysicsParams(engine_torque=self.engine_torque, brake_torque=self.brake_torque,
                                    mass=self.mass, forward_slip_limit=self.forward_slip_limit,
                                    sideway_slip_limit=self.sideway_slip_limit, traction=self.traction,
                                    max_speed=self.max_speed)

    def gains(self) -> PidGains:
        return PidGains(self.kp, self.ki, self.kd, self.integral_clamp)

    def planner(self) -> PlannerSettings:
        return PlannerSettings(lane_change_distance=self.lane_change_distance,
                               acceleration=self.acceleration, follow_gap=self.follow_gap)

    def policy(self) -> PolicySettings:
        return PolicySettings(transition_rate=self.transition_rate)

    def world(self) -> WorldSettings:
        return WorldSettings(scene=self.scene, agents=self.agents, log_frequency=self.log_frequency,
                             max_duration=self.max_duration)

    def world_kwargs(self) -> dict:
        return {"physics": self.physics(), "gains": self.gains(), "planner": self.planner(),
                "policy": self.policy()}

    def rnn(self, cell: str | None = None, variant: str | None = None, T: int | None = None) -> RnnConfig:
        variant = variant or self.feature_variant
        return RnnConfig(cell=cell or self.cell, input_dim=2 if variant == "A2" else 3,
                         embed_dim=self.embed_dim, hidden_dim=self.hidden_dim,
                         T=T or self.T, embed_layers=self.embed_layers,
                         learning_rate=self.learning_rate, batch_size=self.batch_size,
                         epochs=self.epochs, seed=self.seed)

    def validate(self) -> ScenarioConfig:
        """Build every derived settings object so invalid values fail early."""
        self.road(), self.physics(), self.gains(), self.planner(), self.policy(), self.world()
        self.rnn()
        return self

    # -- persistence ---------------------------------------------------------------------

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def replace(self, **changes) -> ScenarioConfig:
        return _coerce(self.to_dict() | changes)


def _coerce(data: dict) -> ScenarioConfig:
    known = {f.name: f for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(unknown[0], "unknown setting")
    values = {}
    for name, value in data.items():
        kind = type(getattr(ScenarioConfig, name))
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise TypeError
                values[name] = value
            elif kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                values[name] = int(value)
            else:
                values[name] = kind(value)
        except (TypeError, ValueError):
            raise ConfigError(name, f"expected {kind.__name__}, got {value!r}") from None
    return ScenarioConfig(**values)


def load_config(path=None, overrides: dict | None = None) -> ScenarioConfig:
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                loaded = yaml.safe_load(fh)
        except OSError as exc:
            raise ConfigError("config", f"cannot read {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError("config", f"invalid YAML in {path}: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config", "top level must be a mapping")
        data.update(loaded)
    data.update(overrides or {})
    return _coerce(data).validate()
