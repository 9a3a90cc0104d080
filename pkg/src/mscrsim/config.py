"""Scenario configuration: defaults, file loading, overrides and builders."""
from __future__ import annotations

import hashlib
import json
import math
from pathlib import Path

import numpy as np
import yaml

from .control import ControllerConfig, Disturbance, Reference
from .elastica import PRESETS, Actuation, PlaneConfig, RobotParams, magnet_above_tip

DEFAULTS_FILE = Path(__file__).parent / "data" / "defaults.yaml"


class ConfigError(ValueError):
    pass


def defaults() -> dict:
    return yaml.safe_load(DEFAULTS_FILE.read_text())


def defaults_text() -> str:
    return DEFAULTS_FILE.read_text()


def _merge(base: dict, update: dict, where: str = "") -> None:
    if not isinstance(update, dict):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    for key, val in update.items():
        path = f"{where}.{key}" if where else str(key)
        if key not in base:
            raise ConfigError(f"unknown key {path!r}")
        if isinstance(base[key], dict):
            _merge(base[key], val, path)
        else:
            base[key] = val


def parse_override(text: str) -> tuple[list[str], object]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    try:
        value = yaml.safe_load(raw) if raw.strip() else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value of {key!r}: {exc}") from exc
    return parts, value


def load_config(path=None, overrides=()) -> tuple[dict, str]:
    """Merged configuration and the sha256 of the input file (or of the merged config)."""
    cfg = defaults()
    digest = None
    if path is not None:
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        digest = hashlib.sha256(raw).hexdigest()
        try:
            user = yaml.safe_load(raw) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        _merge(cfg, user)
    for text in overrides:
        parts, value = parse_override(text)
        nested = value
        for p in reversed(parts):
            nested = {p: nested}
        _merge(cfg, nested)
    if digest is None:
        digest = config_hash(cfg)
    return cfg, digest


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def hash_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# builders -------------------------------------------------------------------

def _num(section: dict, key: str, where: str, positive: bool = False) -> float:
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {val!r}")
    val = float(val)
    if not math.isfinite(val) or (positive and not val > 0):
        raise ConfigError(f"{where}.{key} must be {'positive' if positive else 'finite'}, got {val}")
    return val


def _int(section: dict, key: str, where: str, minimum: int = 0) -> int:
    val = section[key]
    if isinstance(val, bool) or not isinstance(val, int) or val < minimum:
        raise ConfigError(f"{where}.{key} must be an integer >= {minimum}, got {val!r}")
    return val


def _heights(section: dict, where: str) -> list[float]:
    hs = section["heights"]
    if not isinstance(hs, list) or not hs:
        raise ConfigError(f"{where}.heights must be a non-empty list")
    out = []
    for h in hs:
        if isinstance(h, bool) or not isinstance(h, (int, float)) or not h > 0:
            raise ConfigError(f"{where}.heights entries must be positive numbers, got {h!r}")
        out.append(float(h))
    return out


def build_robot(cfg: dict) -> RobotParams:
    sec = cfg["robot"]
    inline = {k: sec[k] for k in ("L", "r", "E", "M")}
    if sec["preset"] is None:
        missing = [k for k, v in inline.items() if v is None]
        if missing:
            raise ConfigError(f"robot: no preset and missing {missing}")
        try:
            return RobotParams.from_mapping(inline)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"robot: {exc}") from exc
    if sec["preset"] not in PRESETS:
        raise ConfigError(f"robot.preset must be one of {sorted(PRESETS)}, got {sec['preset']!r}")
    base = PRESETS[sec["preset"]]
    given = {k: _num(sec, k, "robot", positive=True) for k, v in inline.items() if v is not None}
    if not given:
        return base
    return RobotParams(**{**{k: getattr(base, k) for k in ("L", "r", "E", "M")}, **given})


def build_actuation(cfg: dict, params: RobotParams, height: float | None = None) -> Actuation:
    sec = cfg["magnet"]
    phi = _num(sec, "phi", "magnet")
    psi = _num(sec, "psi", "magnet")
    moment = _num(sec, "moment", "magnet", positive=True)
    if height is None and sec["position"] is not None:
        pos = np.asarray(sec["position"], dtype=float)
        if pos.shape != (3,) or not np.all(np.isfinite(pos)):
            raise ConfigError("magnet.position must be three finite numbers")
        act = Actuation(pos, psi, moment)
        try:
            act.check_plane(phi)
        except ValueError as exc:
            raise ConfigError(f"magnet.position: {exc}") from exc
        return act
    H = _num(sec, "height", "magnet", positive=True) if height is None else height
    return magnet_above_tip(params, H, psi, moment, phi)


def build_controller(cfg: dict) -> ControllerConfig:
    sec = dict(cfg["controller"])
    try:
        return ControllerConfig(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"controller: {exc}") from exc


def build_reference(cfg: dict) -> Reference:
    sec = dict(cfg["reference"])
    if sec["kind"] == "path":
        raise ConfigError("reference.kind 'path' is only valid for follow-path")
    try:
        return Reference(**sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"reference: {exc}") from exc


def build_disturbance(cfg: dict) -> Disturbance:
    try:
        return Disturbance(**cfg["disturbance"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"disturbance: {exc}") from exc


def psi_grid(cfg: dict) -> np.ndarray:
    sec = cfg["sweep"]
    n = _int(sec, "n_psi", "sweep")
    if n < 1:
        raise ConfigError("sweep.n_psi gives an empty psi grid")
    lo, hi = _num(sec, "psi_start", "sweep"), _num(sec, "psi_stop", "sweep")
    if not lo < hi:
        raise ConfigError("sweep.psi_start must be below sweep.psi_stop")
    return np.linspace(lo, hi, n)


def plane(cfg: dict) -> PlaneConfig:
    return PlaneConfig(_num(cfg["magnet"], "phi", "magnet"))
