"""Experiment configuration: INI-style sections, documented defaults, fail-closed parsing.

Every key has a default below; unknown sections or keys are rejected so typos
cannot silently fall back to defaults.  Command-line flags override file
values, and the effective configuration is echoed into the output directory
for reproducibility.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .phantom import PhantomSpec
from .recon import ReconConfig
from .sampler import NoiseSchedule
from .trainer import TrainConfig
from .energy import Architecture

__all__ = ["ConfigError", "ExperimentConfig", "SCHEMA"]


class ConfigError(ValueError):
    """Raised for unknown keys/sections or malformed values."""


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_floats(s: str) -> tuple[float, ...]:
    return tuple(float(p) for p in s.split(",") if p.strip())


def _parse_ints(s: str) -> tuple[int, ...]:
    return tuple(int(p) for p in s.split(",") if p.strip())


_CONVERT = {
    "int": int,
    "float": float,
    "bool": _parse_bool,
    "str": lambda s: s.strip(),
    "floats": _parse_floats,
    "ints": _parse_ints,
}

# section -> key -> (type name, default value)
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "experiment": {
        "seed": ("int", 0),
    },
    "data": {
        "kind": ("str", "ellipses"),
        "height": ("int", 64),
        "width": ("int", 64),
        "count": ("int", 200),
        "min_shapes": ("int", 4),
        "max_shapes": ("int", 9),
        "intensity_lo": ("float", 0.3),
        "intensity_hi": ("float", 1.0),
        "phase_amplitude": ("float", 0.5),
        "manifest": ("str", ""),
    },
    "model": {
        "widths": ("ints", (64, 128, 256)),
        "blocks": ("ints", (1, 1, 1)),
        "conditional": ("bool", True),
    },
    "train": {
        "iterations": ("int", 500),
        "batch_size": ("int", 16),
        "beta": ("float", 1.0),
        "lr": ("float", 0.0003),
        "noise_amplitudes": ("floats", (0.5, 0.27, 0.14, 0.07, 0.04, 0.02, 0.01)),
        "langevin_steps": ("int", 10),
        "langevin_step_size": ("float", 0.01),
        "clip_grad_norm": ("float", 100.0),
        "buffer_capacity": ("int", 10_000),
        "reuse_probability": ("float", 0.95),
        "crop": ("int", 0),
        "augment": ("bool", True),
    },
    "sample": {
        "levels": ("int", 10),
        "sigma_start": ("float", 0.5),
        "sigma_end": ("float", 0.01),
        "steps": ("int", 20),
        "eps": ("float", 2e-5),
    },
    "recon": {
        "mode": ("str", "single_coil"),
        "lambda": ("float", 0.1),
        "init": ("str", "zero_filled"),
        "dc_every_step": ("bool", True),
        "cg_tol": ("float", 1e-8),
        "cg_max_iter": ("int", 200),
    },
    "mask": {
        "pattern": ("str", "pseudo_radial"),
        "r": ("float", 3.0),
        "center_fraction": ("float", 0.08),
    },
    "output": {
        "dir": ("str", "out"),
        "png": ("bool", True),
    },
}


@dataclass
class ExperimentConfig:
    """Parsed, validated configuration with typed accessors for every module."""

    values: dict[str, dict[str, Any]]

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls({s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def load(cls, path: Path | None = None, overrides: list[tuple[str, str]] | None = None) -> "ExperimentConfig":
        """Read a config file (optional) and apply ``section.key=value`` overrides."""
        cfg = cls.defaults()
        if path is not None:
            parser = configparser.ConfigParser()
            text = Path(path).read_text()
            parser.read_string(text, source=str(path))
            for section in parser.sections():
                if section not in SCHEMA:
                    raise ConfigError(f"unknown config section [{section}]")
                for key, raw in parser.items(section):
                    cfg._set(section, key, raw)
        for dotted, raw in overrides or []:
            if "." not in dotted:
                raise ConfigError(f"override must look like section.key, got {dotted!r}")
            section, key = dotted.split(".", 1)
            cfg._set(section, key, raw)
        return cfg

    def _set(self, section: str, key: str, raw: str) -> None:
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config key [{section}] {key}")
        typ, _ = SCHEMA[section][key]
        try:
            self.values[section][key] = _CONVERT[typ](raw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"bad value for [{section}] {key}: {raw!r} ({exc})") from exc

    def get(self, section: str, key: str) -> Any:
        return self.values[section][key]

    def render(self) -> str:
        """Effective configuration as INI text (the echo written next to outputs)."""
        buf = io.StringIO()
        for section, keys in SCHEMA.items():
            buf.write(f"[{section}]\n")
            for key in keys:
                val = self.values[section][key]
                if isinstance(val, tuple):
                    val = ",".join(repr(v) if isinstance(v, float) else str(v) for v in val)
                elif isinstance(val, bool):
                    val = "true" if val else "false"
                elif isinstance(val, float):
                    val = repr(val)
                buf.write(f"{key} = {val}\n")
            buf.write("\n")
        return buf.getvalue()

    # typed views -----------------------------------------------------------

    @property
    def seed(self) -> int:
        return self.get("experiment", "seed")

    def architecture(self) -> Architecture:
        m = self.values["model"]
        return Architecture(tuple(m["widths"]), tuple(m["blocks"]), m["conditional"])

    def phantom_spec(self) -> PhantomSpec:
        d = self.values["data"]
        return PhantomSpec(
            kind=d["kind"],
            height=d["height"],
            width=d["width"],
            min_shapes=d["min_shapes"],
            max_shapes=d["max_shapes"],
            intensity_lo=d["intensity_lo"],
            intensity_hi=d["intensity_hi"],
            phase_amplitude=d["phase_amplitude"],
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        t = self.values["train"]
        return TrainConfig(
            iterations=t["iterations"],
            batch_size=t["batch_size"],
            beta=t["beta"],
            lr=t["lr"],
            noise_amplitudes=tuple(t["noise_amplitudes"]),
            langevin_steps=t["langevin_steps"],
            langevin_step_size=t["langevin_step_size"],
            clip_grad_norm=t["clip_grad_norm"],
            buffer_capacity=t["buffer_capacity"],
            reuse_probability=t["reuse_probability"],
            crop=t["crop"] or None,
            augment=t["augment"],
        )

    def schedule(self) -> NoiseSchedule:
        s = self.values["sample"]
        return NoiseSchedule.geometric(
            n_levels=s["levels"],
            sigma_start=s["sigma_start"],
            sigma_end=s["sigma_end"],
            base_step=s["eps"],
            inner_steps=s["steps"],
        )

    def recon_config(self) -> ReconConfig:
        r = self.values["recon"]
        return ReconConfig(
            mode=r["mode"],
            lam=r["lambda"],
            schedule=self.schedule(),
            init=r["init"],
            dc_every_step=r["dc_every_step"],
            cg_tol=r["cg_tol"],
            cg_max_iter=r["cg_max_iter"],
        )
