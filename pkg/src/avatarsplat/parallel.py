"""Thread-count control shared by the compiled kernels (``--threads`` / ``GASP_THREADS``)."""
import os

_threads = None


def set_threads(n):
    global _threads
    _threads = None if n is None else max(1, int(n))


def get_threads() -> int:
    if _threads is not None:
        return _threads
    env = os.environ.get("GASP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValueError(f"GASP_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1
