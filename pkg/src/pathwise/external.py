"""Client for classifiers living in a child process.

Wire format (one JSON object per line on the child's stdin/stdout)::

    -> {"op": "hello"}
    <- {"n_classes": K, "n_features": n, "score_semantics": "prob" | "logit"}
    -> {"op": "predict", "inputs": [[...], ...]}
    <- {"scores": [[...], ...]}

Requests are serialized through one lock, so a single client may be shared
between threads.
"""
from __future__ import annotations

import json
import logging
import queue
import subprocess
import threading
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ProcessError, ProtocolError, ProtocolTimeoutError
from .models import LOGIT, PROB, Classifier

logger = logging.getLogger(__name__)

PROTOCOL = "jsonl/1"
_EOF = object()


@dataclass(frozen=True)
class ExternalModelSpec:
    command: tuple[str, ...]
    timeout_ms: int = 30_000
    protocol: str = PROTOCOL

    def __post_init__(self):
        object.__setattr__(self, "command", tuple(self.command))
        if not self.command:
            raise ValueError("launch command must not be empty")
        if self.timeout_ms <= 0:
            raise ValueError("timeout must be positive")
        if self.protocol != PROTOCOL:
            raise ValueError(f"unsupported protocol {self.protocol!r}")


class ExternalClassifier(Classifier):
    """Launches the child, performs the handshake and answers predict calls."""

    def __init__(self, spec: ExternalModelSpec):
        self.spec = spec
        self._lock = threading.Lock()
        self._lines: queue.Queue = queue.Queue()
        self._closed = False
        try:
            self._proc = subprocess.Popen(
                list(spec.command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise ProcessError(f"could not launch {spec.command[0]!r}: {exc}") from exc
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

        hello = self._request({"op": "hello"})
        try:
            self.n_classes = int(hello["n_classes"])
            self.n_features = int(hello["n_features"])
            self.score_semantics = hello.get("score_semantics", PROB)
        except (KeyError, TypeError, ValueError) as exc:
            self._kill()
            raise ProtocolError(f"malformed handshake reply: {hello!r}") from exc
        if self.score_semantics not in (PROB, LOGIT) or self.n_classes < 2 or self.n_features < 1:
            self._kill()
            raise ProtocolError(f"invalid handshake values: {hello!r}")
        logger.debug("external model ready: %d features, %d classes, %s",
                     self.n_features, self.n_classes, self.score_semantics)

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _kill(self):
        if self._proc.poll() is None:
            self._proc.kill()
        self._proc.wait()
        self._closed = True

    def _request(self, payload: dict) -> dict:
        with self._lock:
            if self._closed:
                raise ProcessError("external model is closed", self._proc.returncode)
            try:
                self._proc.stdin.write(json.dumps(payload) + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError, ValueError) as exc:
                self._kill()
                raise ProcessError(f"child process is gone: {exc}", self._proc.returncode) from exc
            try:
                line = self._lines.get(timeout=self.spec.timeout_ms / 1000.0)
            except queue.Empty:
                # the stream is now out of step with our requests; the child is unusable
                self._kill()
                raise ProtocolTimeoutError(f"no reply within {self.spec.timeout_ms} ms") from None
            if line is _EOF:
                self._kill()
                raise ProcessError(
                    f"child exited with status {self._proc.returncode} before replying",
                    self._proc.returncode,
                )
        try:
            reply = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ProtocolError(f"reply is not JSON: {line[:200]!r}") from exc
        if not isinstance(reply, dict):
            raise ProtocolError(f"reply must be a JSON object, got {type(reply).__name__}")
        if "error" in reply:
            raise ProtocolError(f"model reported an error: {reply['error']}")
        return reply

    def predict_batch(self, V) -> np.ndarray:
        V = np.atleast_2d(np.asarray(V, dtype=np.float64))
        if V.shape[1] != self.n_features:
            raise ProtocolError(f"model expects {self.n_features} features, got {V.shape[1]}")
        reply = self._request({"op": "predict", "inputs": V.tolist()})
        scores = reply.get("scores")
        try:
            out = np.array(scores, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ProtocolError("scores field is not a numeric matrix") from exc
        if out.shape != (V.shape[0], self.n_classes):
            raise ProtocolError(f"expected scores of shape {(V.shape[0], self.n_classes)}, got {out.shape}")
        if not np.all(np.isfinite(out)):
            raise ProtocolError("scores contain NaN or Inf")
        if self.score_semantics == PROB:
            if np.any(out < 0) or np.any(out > 1) or np.any(np.abs(out.sum(axis=1) - 1) > 1e-6):
                raise ProtocolError("probability scores must lie in [0, 1] and sum to 1")
        return out

    def close(self):
        if self._closed:
            return
        try:
            self._proc.stdin.close()
        except OSError:
            pass
        try:
            self._proc.wait(timeout=self.spec.timeout_ms / 1000.0)
        except subprocess.TimeoutExpired:
            self._proc.kill()
            self._proc.wait()
        self._closed = True

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            if not self._closed and self._proc.poll() is None:
                self._proc.kill()
        except AttributeError:
            pass


def external_predict(client: ExternalClassifier, inputs: Sequence) -> np.ndarray:
    """Scores for one vector (1-D result) or a batch (2-D result, request order)."""
    arr = np.asarray(inputs, dtype=np.float64)
    if arr.ndim == 1:
        return client.predict(arr)
    return client.predict_batch(arr)
