"""Shape-guided inpainting service speaking the texfuse backend protocol."""

__version__ = "0.1.0"

from .config import ServiceConfig
from .engines import DiffusersEngine, ProceduralEngine, build_engine
from .server import create_app
