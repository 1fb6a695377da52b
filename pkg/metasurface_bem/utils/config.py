"""
Configuration Management Module

Loads the scenario (lattice, geometry, material, incidence, sweep, numerics) from YAML or JSON,
applies environment overrides and configures logging.
"""

import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Optional

import yaml
from dotenv import load_dotenv

from .error_handling import ConfigError


@dataclass
class LatticeConfig:
    """Lattice basis vectors of the periodic layer"""
    a1: List[float] = field(default_factory=lambda: [1.0, 0.0])
    a2: List[float] = field(default_factory=lambda: [0.0, 1.0])


@dataclass
class GeometryConfig:
    """Particle boundary inside the reference cell"""
    shape: str = "sphere"  # sphere | ellipsoid | obj
    center: List[float] = field(default_factory=lambda: [0.0, 0.0, 0.5])
    radius: float = 0.05
    semiaxes: Optional[List[float]] = None
    path: Optional[str] = None
    refinement: int = 2
    quadrature: str = "centroid"  # centroid | three_point


@dataclass
class LayerConfig(GeometryConfig):
    """Extra layer of a well-separated stack; delta falls back to the scenario delta"""
    delta: Optional[float] = None


@dataclass
class MaterialConfig:
    """Drude parameters of the particle (or a tabulated response)"""
    mode: str = "drude"  # drude | tabulated
    eps_inf: float = 1.0
    omega_p_e: float = 1.0
    gamma_e: float = 0.01
    mu_inf: float = 1.0
    omega_p_m: float = 0.0
    gamma_m: float = 0.0
    table_path: Optional[str] = None


@dataclass
class IncidenceConfig:
    d: List[float] = field(default_factory=lambda: [0.6, 0.0, -0.8])
    p: List[float] = field(default_factory=lambda: [0.8, 0.0, 0.6])


@dataclass
class SweepConfig:
    omega_min: float = 0.4
    omega_max: float = 0.75
    count: int = 36


@dataclass
class NumericsConfig:
    """Ewald splitting, truncation and guard settings"""
    ewald_eta: Optional[float] = None  # None -> sqrt(pi / tau)
    n_spectral: Optional[int] = None  # None -> derived from ewald_tol
    n_spatial: Optional[int] = None
    ewald_tol: float = 1e-14
    assembly_tol: float = 1e-12
    guard: float = 1e-8
    h_min: float = 0.05
    near_factor: float = 3.0
    gauss_diagonal: bool = True  # False -> flat-panel self term plus smooth centroid value


@dataclass
class LoggingConfig:
    log_level: str = "WARNING"
    log_file: Optional[str] = None
    enable_tracing: bool = True


@dataclass
class ScenarioConfig:
    """Complete scenario consumed by the engine and the command line"""
    lattice: LatticeConfig = field(default_factory=LatticeConfig)
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    incidence: IncidenceConfig = field(default_factory=IncidenceConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    delta: float = 0.1
    numerics: NumericsConfig = field(default_factory=NumericsConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    layers: List[LayerConfig] = field(default_factory=list)
    threads: int = 1
    seed: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


_SECTIONS = {
    "lattice": LatticeConfig,
    "geometry": GeometryConfig,
    "material": MaterialConfig,
    "incidence": IncidenceConfig,
    "sweep": SweepConfig,
    "numerics": NumericsConfig,
    "logging": LoggingConfig,
}

_VECTOR_LENGTHS = {
    ("lattice", "a1"): 2,
    ("lattice", "a2"): 2,
    ("geometry", "center"): 3,
    ("geometry", "semiaxes"): 3,
    ("incidence", "d"): 3,
    ("incidence", "p"): 3,
}


logger = logging.getLogger(__name__)


def _build_section(cls, data: Any, name: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"Section '{name}' must be a mapping", section=name)
    valid_keys = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - valid_keys)
    if unknown:
        logger.warning(f"Ignoring unknown keys in '{name}': {json.dumps(unknown)}")
    try:
        return cls(**{k: v for k, v in data.items() if k in valid_keys})
    except TypeError as e:
        raise ConfigError(f"Invalid section '{name}': {e}", section=name) from e


def scenario_from_dict(data: Dict[str, Any]) -> ScenarioConfig:
    """Build a ScenarioConfig from a plain mapping, dropping unknown keys"""
    if not isinstance(data, dict):
        raise ConfigError("Scenario file must contain a mapping at the top level")

    valid_keys = {f.name for f in fields(ScenarioConfig)}
    unknown = sorted(set(data) - valid_keys)
    if unknown:
        logger.warning(f"Ignoring unknown top-level keys: {json.dumps(unknown)}")

    kwargs: Dict[str, Any] = {}
    for name, cls in _SECTIONS.items():
        kwargs[name] = _build_section(cls, data.get(name), name)

    layers = data.get("layers") or []
    if not isinstance(layers, list):
        raise ConfigError("'layers' must be a list of geometry mappings")
    kwargs["layers"] = [_build_section(LayerConfig, layer, f"layers[{i}]") for i, layer in enumerate(layers)]

    for scalar in ("delta", "threads", "seed"):
        if scalar in data and data[scalar] is not None:
            kwargs[scalar] = data[scalar]

    return ScenarioConfig(**kwargs)


def setup_logging(config: LoggingConfig):
    """Setup logging based on configuration"""
    log_level = getattr(logging, str(config.log_level).upper(), logging.INFO)

    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if config.log_file:
        log_dir = os.path.dirname(config.log_file)
        if log_dir and not os.path.exists(log_dir):
            os.makedirs(log_dir, exist_ok=True)
        handlers.append(logging.FileHandler(config.log_file))

    logging.basicConfig(
        level=log_level,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers
    )
    logging.getLogger().setLevel(log_level)


class ConfigManager:
    """Manages the scenario configuration"""

    ENV_MAP = {
        'METASURFACE_LOG_LEVEL': ('logging', 'log_level'),
        'METASURFACE_LOG_FILE': ('logging', 'log_file'),
        'METASURFACE_ENABLE_TRACING': ('logging', 'enable_tracing'),
        'METASURFACE_THREADS': (None, 'threads'),
        'METASURFACE_SEED': (None, 'seed'),
        'METASURFACE_GUARD': ('numerics', 'guard'),
    }

    def __init__(self, config_file: Optional[str] = None, configure_logging: bool = True):
        self.config_file = config_file
        self.logger = logging.getLogger(__name__)
        self._config: Optional[ScenarioConfig] = None
        self._initialize_config(configure_logging)

    def _initialize_config(self, configure_logging: bool):
        """Initialize configuration from file and environment"""
        load_dotenv()

        config_dict: Dict[str, Any] = {}
        if self.config_file:
            config_dict = self._read_file(self.config_file)

        self._config = scenario_from_dict(config_dict)
        self._apply_env_overrides(self._config)

        if configure_logging:
            setup_logging(self._config.logging)

        self.logger.info(f"Configuration loaded: {json.dumps({'file': self.config_file})}")

    def _read_file(self, path: str) -> Dict[str, Any]:
        if not os.path.exists(path):
            raise ConfigError(f"Config file not found: {path}", path=path)
        try:
            with open(path, 'r') as f:
                # JSON documents are valid YAML, one loader covers both
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Could not parse config file {path}: {e}", path=path) from e
        if not isinstance(data, dict):
            raise ConfigError(f"Config file {path} must contain a mapping", path=path)
        return data

    def _apply_env_overrides(self, config: ScenarioConfig):
        """Apply configuration overrides from environment variables"""
        for env_var, (section, key) in self.ENV_MAP.items():
            value = os.getenv(env_var)
            if value is None:
                continue
            target = getattr(config, section) if section else config
            current = getattr(target, key)
            try:
                if isinstance(current, bool):
                    converted: Any = value.lower() in ('true', '1', 'yes')
                elif isinstance(current, int):
                    converted = int(value)
                elif isinstance(current, float):
                    converted = float(value)
                else:
                    converted = value
            except ValueError:
                self.logger.warning(f"Invalid value for {env_var}: {value}")
                continue
            setattr(target, key, converted)
            self.logger.info(f"Environment override: {env_var} -> {key}")

    def get_config(self) -> ScenarioConfig:
        """Get the current configuration"""
        return self._config

    def update_config(self, **kwargs):
        """Update configuration values; mapping values are merged into sections"""
        for key, value in kwargs.items():
            if not hasattr(self._config, key):
                self.logger.warning(f"Unknown config key: {key}")
                continue
            current = getattr(self._config, key)
            if isinstance(value, dict) and hasattr(current, '__dataclass_fields__'):
                for sub_key, sub_value in value.items():
                    if hasattr(current, sub_key):
                        setattr(current, sub_key, sub_value)
                    else:
                        self.logger.warning(f"Unknown config key: {key}.{sub_key}")
            else:
                setattr(self._config, key, value)
            self.logger.info(f"Updated config: {key} = {value}")

    def save_config(self, file_path: Optional[str] = None):
        """Save current configuration to file (JSON when the suffix is .json)"""
        save_path = file_path or self.config_file
        if not save_path:
            raise ConfigError("No path to save the configuration to")
        config_dict = self._config.to_dict()
        with open(save_path, 'w') as f:
            if save_path.endswith('.json'):
                json.dump(config_dict, f, indent=2)
            else:
                yaml.safe_dump(config_dict, f, default_flow_style=False, sort_keys=False)
        self.logger.info(f"Configuration saved to {save_path}")

    def validate_config(self) -> List[str]:
        """Check invariants that need no assembly; returns the list of issues"""
        issues: List[str] = []
        cfg = self._config

        for (section, key), length in _VECTOR_LENGTHS.items():
            value = getattr(getattr(cfg, section), key)
            if value is None and key == "semiaxes":
                continue
            if not isinstance(value, (list, tuple)) or len(value) != length:
                issues.append(f"{section}.{key} must be a list of {length} numbers")

        if not issues:
            a1, a2 = cfg.lattice.a1, cfg.lattice.a2
            cross = a1[0] * a2[1] - a1[1] * a2[0]
            if abs(cross) < 1e-12 * math.hypot(*a1) * math.hypot(*a2):
                issues.append("lattice vectors are linearly dependent")

            d, p = cfg.incidence.d, cfg.incidence.p
            norm_d = math.sqrt(sum(c * c for c in d))
            if abs(norm_d - 1.0) > 1e-12:
                issues.append(f"incidence.d must be a unit vector (|d| = {norm_d})")
            if d[2] >= 0:
                issues.append("incidence.d must point towards the plane (d3 < 0)")
            norm_p = math.sqrt(sum(c * c for c in p))
            if abs(sum(a * b for a, b in zip(p, d))) > 1e-12 * max(norm_p, 1.0):
                issues.append("incidence.p must be orthogonal to incidence.d")

        if cfg.geometry.shape not in ("sphere", "ellipsoid", "obj"):
            issues.append(f"unknown geometry.shape '{cfg.geometry.shape}'")
        if cfg.geometry.shape == "ellipsoid" and cfg.geometry.semiaxes is None:
            issues.append("ellipsoid geometry needs geometry.semiaxes")
        if cfg.geometry.shape == "obj" and not cfg.geometry.path:
            issues.append("obj geometry needs geometry.path")
        if cfg.geometry.quadrature not in ("centroid", "three_point"):
            issues.append(f"unknown geometry.quadrature '{cfg.geometry.quadrature}'")
        if cfg.geometry.refinement < 0:
            issues.append("geometry.refinement must be >= 0")
        if cfg.material.mode not in ("drude", "tabulated"):
            issues.append(f"unknown material.mode '{cfg.material.mode}'")
        if cfg.material.mode == "tabulated" and not cfg.material.table_path:
            issues.append("tabulated material needs material.table_path")
        if cfg.delta <= 0:
            issues.append("delta must be positive")
        if cfg.sweep.count < 1:
            issues.append("sweep.count must be >= 1")
        if cfg.sweep.omega_min <= 0 or cfg.sweep.omega_max < cfg.sweep.omega_min:
            issues.append("sweep range must satisfy 0 < omega_min <= omega_max")
        if cfg.numerics.guard <= 0 or cfg.numerics.h_min <= 0:
            issues.append("numerics.guard and numerics.h_min must be positive")
        if cfg.numerics.ewald_eta is not None and cfg.numerics.ewald_eta <= 0:
            issues.append("numerics.ewald_eta must be positive")
        for name in ("n_spectral", "n_spatial"):
            value = getattr(cfg.numerics, name)
            if value is not None and value < 1:
                issues.append(f"numerics.{name} must be >= 1")
        if cfg.threads < 1:
            issues.append("threads must be >= 1")

        for issue in issues:
            self.logger.warning(f"Config validation issue: {issue}")
        return issues

    def require_valid(self) -> ScenarioConfig:
        """Return the configuration or raise ConfigError listing every issue"""
        issues = self.validate_config()
        if issues:
            raise ConfigError("Invalid configuration: " + "; ".join(issues), issues=issues)
        return self._config
