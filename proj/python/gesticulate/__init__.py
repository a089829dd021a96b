"""Co-speech gesture pipeline bindings."""

import json as _json

from ._core import *  # noqa: F401,F403
from ._core import GestError, evaluate as _evaluate

__all__ = [name for name in dir() if not name.startswith("_")]


def evaluate_report(*args, **kwargs):
    """Run evaluate and return the report as a dict."""
    return _json.loads(_evaluate(*args, **kwargs))
