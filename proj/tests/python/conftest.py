import os
import sys

try:
    import mmcd  # noqa: F401
except ImportError:
    sys.path.insert(
        0,
        os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "..", "build", "bindings")),
    )
