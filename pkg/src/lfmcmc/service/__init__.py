from .app import app, create_app, execute_run

__all__ = ["app", "create_app", "execute_run"]
