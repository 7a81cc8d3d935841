from __future__ import annotations

from .config import settings, Settings

__all__ = ["Settings", "settings"]
