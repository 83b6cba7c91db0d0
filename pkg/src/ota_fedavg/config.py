"""Experiment configuration: one JSON document with sections
``system``, ``privacy``, ``fleet`` or ``fleet_file``, ``model`` and ``solver``.

Defaults: 1 W peak power per device, 200 total training rounds.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .fedavg_sim import FleetModel, make_synthetic_fleet
from .system_model import MODES, DeviceProfile, SystemParams, load_fleet, parse_fleet

SEED_ENV = "OTA_FEDAVG_SEED"
DEFAULT_PEAK_POWER = 1.0
DEFAULT_TOTAL_ROUNDS = 200

_SECTIONS = {"system", "privacy", "fleet", "fleet_file", "model", "solver"}


@dataclass
class SolverOptions:
    conv_tol: float = 1e-9
    max_iters: int = 50
    mode: str | None = None
    rounds: int | None = None
    seed: int = 0


@dataclass
class Experiment:
    params: SystemParams
    devices: list[DeviceProfile]
    model: FleetModel | None = None
    solver: SolverOptions = field(default_factory=SolverOptions)
    source: str = "<config>"


def _number(section: dict, key: str, path: str, default: Any = None, kind=float, required=True):
    if key not in section:
        if default is not None or not required:
            return default
        raise ValidationError(f"{path}.{key}: required field missing")
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{path}.{key}: expected a number, got {value!r}")
    if kind is int:
        if int(value) != value:
            raise ValidationError(f"{path}.{key}: expected an integer, got {value!r}")
        return int(value)
    return float(value)


def _section(doc: dict, name: str) -> dict:
    value = doc.get(name, {})
    if not isinstance(value, dict):
        raise ValidationError(f"{name}: expected an object")
    return value


def load_config(path: str | Path) -> Experiment:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ValidationError(f"{path}: cannot read config ({exc.strerror})") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    return build_experiment(doc, base_dir=path.parent, source=str(path))


def build_experiment(doc: Any, base_dir: Path | None = None, source: str = "<config>") -> Experiment:
    if not isinstance(doc, dict):
        raise ValidationError("config: expected a JSON object")
    unknown = set(doc) - _SECTIONS
    if unknown:
        raise ValidationError(f"config: unknown section(s) {sorted(unknown)}")
    system = _section(doc, "system")
    privacy = _section(doc, "privacy")
    model_sec = _section(doc, "model")
    solver_sec = _section(doc, "solver")

    solver = SolverOptions(
        conv_tol=_number(solver_sec, "conv_tol", "solver", 1e-9),
        max_iters=_number(solver_sec, "max_iters", "solver", 50, kind=int),
        mode=solver_sec.get("mode"),
        rounds=_number(solver_sec, "rounds", "solver", kind=int, required=False),
        seed=_number(solver_sec, "seed", "solver", 0, kind=int),
    )
    if solver.mode in ("auto", None):
        solver.mode = None
    elif solver.mode not in MODES:
        raise ValidationError(f"solver.mode: expected one of {['auto', *MODES]}, got {solver.mode!r}")

    model, devices = _build_fleet(doc, model_sec, base_dir)

    convex = model_sec.get("convex", True)
    fields: dict[str, Any] = {}
    if model is not None:
        fields.update(
            model_dim=model.dim,
            smoothness=model.smoothness,
            strong_convexity=model.strong_convexity if convex else 0.0,
            learning_rate=1.0 / model.smoothness,
            initial_gap=model.initial_gap(),
        )
    for key, kind in (("model_dim", int), ("smoothness", float), ("strong_convexity", float),
                      ("learning_rate", float), ("initial_gap", float)):
        if key in system or key not in fields:
            fields[key] = _number(system, key, "system", kind=kind)
    try:
        params = SystemParams(
            n_devices=len(devices),
            noise_std=_number(system, "noise_std", "system"),
            sum_power=_number(system, "sum_power", "system"),
            total_rounds=_number(system, "total_rounds", "system", DEFAULT_TOTAL_ROUNDS, kind=int),
            grad_bound=_number(system, "grad_bound", "system"),
            epsilon=_number(privacy, "epsilon", "privacy"),
            delta=_number(privacy, "delta", "privacy"),
            **fields,
        )
    except ValidationError as exc:
        raise ValidationError(f"system: {exc}") from exc
    return Experiment(params=params, devices=devices, model=model, solver=solver, source=source)


def _build_fleet(doc: dict, model_sec: dict, base_dir: Path | None):
    if "fleet" in doc and "fleet_file" in doc:
        raise ValidationError("config: give either fleet or fleet_file, not both")
    devices = None
    if "fleet" in doc:
        devices = parse_fleet(doc["fleet"], source="fleet")
    elif "fleet_file" in doc:
        fleet_path = Path(doc["fleet_file"])
        if base_dir is not None and not fleet_path.is_absolute():
            fleet_path = base_dir / fleet_path
        devices = load_fleet(fleet_path)

    kind = model_sec.get("kind", "none")
    if kind == "none":
        if devices is None:
            raise ValidationError("fleet: required when model.kind is none")
        return None, devices
    if kind not in ("quadratic", "logistic"):
        raise ValidationError(f"model.kind: expected quadratic, logistic or none, got {kind!r}")

    n = _number(model_sec, "n_devices", "model", None if devices is None else len(devices), kind=int)
    if devices is not None and n != len(devices):
        raise ValidationError(f"model.n_devices: {n} does not match the {len(devices)}-device fleet")
    eig = model_sec.get("eigen_range", [0.5, 2.0])
    if not (isinstance(eig, list) and len(eig) == 2):
        raise ValidationError("model.eigen_range: expected [lo, hi]")
    generated, model = make_synthetic_fleet(
        kind,
        n,
        _number(model_sec, "dim", "model", kind=int),
        _number(model_sec, "seed", "model", 0, kind=int),
        _number(model_sec, "spread", "model", 1.0),
        samples_per_device=_number(model_sec, "samples_per_device", "model", 20, kind=int),
        eigen_range=(float(eig[0]), float(eig[1])),
        regularization=_number(model_sec, "regularization", "model", 0.1),
        h_min=_number(model_sec, "h_min", "model", 0.1),
        h_max=_number(model_sec, "h_max", "model", 1.0),
        peak_power=_number(model_sec, "peak_power", "model", DEFAULT_PEAK_POWER),
    )
    if devices is None:
        return model, generated
    # explicit fleet: devices take datasets in id order
    ordered = sorted(devices, key=lambda d: d.id)
    bound = [DeviceProfile(d.id, d.channel_gain, d.peak_power, dataset_ref=i) for i, d in enumerate(ordered)]
    return model, bound


def resolve_seed(flag: int | None, config_seed: int) -> int:
    """Seed precedence: environment variable, then --seed, then the config."""
    env = os.environ.get(SEED_ENV)
    if env is not None and env.strip():
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"{SEED_ENV}: expected an integer, got {env!r}") from exc
    if flag is not None:
        return flag
    return config_seed
