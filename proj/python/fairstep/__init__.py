"""Python front end for the stepwise payment-formula engine.

Documents (formulas, pools, policies, specs, traces) may be passed as
Python objects or as paths to JSON files. Results come back as dicts.
"""

from __future__ import annotations

import json
import os
import threading
from typing import Any, Iterable, Optional, Tuple, Union

from . import _core
from ._core import ConfigError, Error, FitError, IngestError, two_sided_p_value

Document = Union[str, os.PathLike, dict, list]

__all__ = [
    "ConfigError",
    "Error",
    "FitError",
    "IngestError",
    "Service",
    "calibrate",
    "compare",
    "ingest",
    "replay",
    "report",
    "simulate",
    "stepwise",
    "two_sided_p_value",
]


def _text(value: Document) -> str:
    if isinstance(value, (dict, list)):
        return json.dumps(value)
    with open(os.fspath(value), encoding="utf-8") as f:
        return f.read()


def _optional_text(value: Optional[Document]) -> Optional[str]:
    return None if value is None else _text(value)


def ingest(enrollees: str, maps_dir: str, out: str, groups: Optional[str] = None) -> dict:
    """Validate an enrollee CSV against the code maps and write a bundle."""
    return json.loads(_core.ingest(os.fspath(enrollees), os.fspath(maps_dir), os.fspath(out),
                                   None if groups is None else os.fspath(groups)))


def simulate(spec: Document, out: str, n: Optional[int] = None, seed: Optional[int] = None) -> int:
    """Write a synthetic population as enrollee CSV; returns the row count."""
    return _core.simulate(_text(spec), os.fspath(out), n, seed)


def report(bundle: str, formula: Document, cv_folds: int = 0, seed: int = 0,
           groups: Optional[Document] = None) -> dict:
    return json.loads(_core.report(os.fspath(bundle), _text(formula), cv_folds, seed, _optional_text(groups)))


def stepwise(bundle: str, baseline: Document, pool: Document, policy: Document,
             groups: Optional[Document] = None) -> dict:
    return json.loads(_core.stepwise(os.fspath(bundle), _text(baseline), _text(pool), _text(policy),
                                     _optional_text(groups)))


def compare(bundle: str, baseline: Document, pool: Document, policies: Iterable[Document],
            groups: Optional[Document] = None) -> dict:
    return json.loads(_core.compare(os.fspath(bundle), _text(baseline), _text(pool),
                                    [_text(p) for p in policies], _optional_text(groups)))


def replay(bundle: str, trace: Document, pool: Document, groups: Optional[Document] = None) -> dict:
    return json.loads(_core.replay(os.fspath(bundle), _text(trace), _text(pool), _optional_text(groups)))


def calibrate(bundle: str, baseline: Document, group: str, groups: Optional[Document] = None) -> dict:
    return json.loads(_core.calibrate(os.fspath(bundle), _text(baseline), group, _optional_text(groups)))


class Service:
    """Interactive sessions, callable in-process or served over HTTP."""

    def __init__(self, bundle: Optional[str] = None) -> None:
        self._svc = _core.Service(None if bundle is None else os.fspath(bundle))
        self._thread: Optional[threading.Thread] = None

    def request(self, method: str, path: str, body: Any = None) -> Tuple[int, dict]:
        payload = "" if body is None else json.dumps(body)
        status, text = self._svc.handle(method, path, payload)
        return status, json.loads(text)

    def start(self, host: str = "127.0.0.1", port: int = 0) -> int:
        """Serve on a background thread and return the bound port."""
        self._thread = threading.Thread(target=self._svc.serve, args=(host, port), daemon=True)
        self._thread.start()
        if not self._svc.wait_until_listening(5000):
            raise RuntimeError("service did not start listening")
        return self._svc.port

    def stop(self) -> None:
        self._svc.stop()
        if self._thread is not None:
            self._thread.join()
            self._thread = None

    def __enter__(self) -> "Service":
        return self

    def __exit__(self, *exc: object) -> None:
        if self._thread is not None:
            self.stop()
