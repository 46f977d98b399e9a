"""Agent-driven fuzz harness generation engine."""

from .errors import EngineError
from .toolbus import AccessLevel, AgentRole, ToolRegistry, ToolRequest, ToolResponse

__all__ = [
    "AccessLevel",
    "AgentRole",
    "EngineError",
    "ToolRegistry",
    "ToolRequest",
    "ToolResponse",
]

__version__ = "0.1.0"
