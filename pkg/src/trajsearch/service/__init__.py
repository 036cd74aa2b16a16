"""FastAPI service exposing dataset generation, index building and search."""

from .app import Registry, app, create_app

__all__ = ["Registry", "app", "create_app"]
