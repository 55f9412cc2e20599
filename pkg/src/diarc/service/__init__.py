from .app import ServiceError, ServiceState, create_app
from .store import SessionStore

__all__ = ["ServiceError", "ServiceState", "SessionStore", "create_app"]
