"""Service configuration: model identifiers, device, limits.

Loaded from YAML or TOML, then overridden by DIFFUSION_SERVICE_* environment
variables (e.g. DIFFUSION_SERVICE_ENGINE=procedural,
DIFFUSION_SERVICE_MAX_RESOLUTION=768).
"""

from __future__ import annotations

import os
from dataclasses import dataclass, fields


@dataclass
class ServiceConfig:
    engine: str = "procedural"  # procedural | diffusers
    inpaint_model: str = "runwayml/stable-diffusion-inpainting"
    normal_adapter: str = "lllyasviel/control_v11p_sd15_normalbae"
    silhouette_adapter: str = "lllyasviel/control_v11p_sd15_softedge"
    device: str = "cpu"
    max_concurrent_jobs: int = 1
    guidance_scale: float = 15.0
    steps: int = 25
    max_resolution: int = 1024

    def model_identity(self) -> str:
        if self.engine == "procedural":
            return "procedural"
        return (f"{self.inpaint_model}"
                f"+{self.normal_adapter}+{self.silhouette_adapter}")

    @classmethod
    def load(cls, path: str | None = None, env=os.environ) -> "ServiceConfig":
        data: dict = {}
        if path:
            if path.endswith((".yaml", ".yml")):
                import yaml
                with open(path) as f:
                    data = yaml.safe_load(f) or {}
            elif path.endswith(".toml"):
                try:
                    import tomllib
                except ModuleNotFoundError:
                    import tomli as tomllib
                with open(path, "rb") as f:
                    data = tomllib.load(f)
            else:
                raise ValueError(f"unsupported config format: {path}")
            data = dict(data.get("service", data))
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown service config fields: {sorted(unknown)}")
        for name in known:
            env_key = f"DIFFUSION_SERVICE_{name.upper()}"
            if env_key in env:
                data[name] = env[env_key]
        config = cls(**data)
        config.max_concurrent_jobs = int(config.max_concurrent_jobs)
        config.guidance_scale = float(config.guidance_scale)
        config.steps = int(config.steps)
        config.max_resolution = int(config.max_resolution)
        return config
