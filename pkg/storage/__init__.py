from storage.run_store import RunStore

__all__ = ["RunStore"]
