"""Two-server XOR PIR over distributed point functions, with the server-side
linear scan running on a simulated processing-in-memory backend."""

from impir._kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
