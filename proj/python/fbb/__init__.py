"""Forward-backward bridging samplers (C++ core)."""

import json

from ._fbb import *  # noqa: F401,F403
from ._fbb import _run_json


def run(config: dict) -> dict:
    """Run an experiment or the oracle suite from a config dict; returns the JSON report as a dict."""
    return json.loads(_run_json(json.dumps(config)))
