"""Client for out-of-process embedding backends.

A backend is any child process that speaks newline-delimited JSON over
its standard streams: one request object per line in, one response
object per line out, matched by ``id``. Wire fields are exactly

    request:  id, op, shape, data, text, scheme, k, seed
    response: id, ok, embedding, output_dim, supports_randomization,
              layer_count, error

``op`` is one of embed_image, embed_text, describe, randomize. Image
payloads travel as base64-encoded little-endian float32, shape [H, W, C].
Requests are serialized: the client keeps one request in flight and the
server must answer every request, errors included.
"""

import base64
import json
import queue
import shlex
import subprocess
import threading

import numpy as np
from sklearn.base import BaseEstimator

from .embedders import SERIALIZED, EmbedderDescriptor
from .exceptions import BackendError, CapabilityError
from .validation import as_image

OPS = ("embed_image", "embed_text", "describe", "randomize")


def image_to_payload(image) -> tuple[list, str]:
    """Encode an image as ([H, W, C], base64 of little-endian float32)."""
    img = np.ascontiguousarray(as_image(image), dtype="<f4")
    return list(img.shape), base64.b64encode(img.tobytes()).decode("ascii")


def payload_to_image(shape, data: str) -> np.ndarray:
    """Decode a base64 float32 payload back into an (H, W, C) array."""
    if len(shape) != 3 or any(int(s) < 1 for s in shape):
        raise BackendError(f"invalid image shape {shape}")
    height, width, channels = (int(s) for s in shape)
    raw = base64.b64decode(data.encode("ascii"), validate=True)
    expected = 4 * height * width * channels
    if len(raw) != expected:
        raise BackendError(
            f"payload of {len(raw)} bytes does not match shape {shape} "
            f"(expected {expected})"
        )
    return np.frombuffer(raw, dtype="<f4").reshape(height, width, channels)


def encode_request(request: dict) -> str:
    if request.get("op") not in OPS:
        raise BackendError(f"unknown op {request.get('op')!r}")
    if not isinstance(request.get("id"), int) or request["id"] < 0:
        raise BackendError("request id must be a non-negative integer")
    return json.dumps(request, separators=(",", ":"))


def decode_request(line: str) -> dict:
    try:
        request = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BackendError(f"malformed request line: {exc}: {line!r}") from exc
    if not isinstance(request, dict) or request.get("op") not in OPS:
        raise BackendError(f"malformed request object: {line!r}")
    return request


def encode_response(response: dict) -> str:
    if not isinstance(response.get("id"), int) or "ok" not in response:
        raise BackendError("response must carry an integer id and an ok flag")
    return json.dumps(response, separators=(",", ":"))


def decode_response(line: str) -> dict:
    try:
        response = json.loads(line)
    except json.JSONDecodeError as exc:
        raise BackendError(f"malformed response line: {exc}: {line!r}") from exc
    if not isinstance(response, dict) or "id" not in response or "ok" not in response:
        raise BackendError(f"malformed response object: {line!r}")
    return response


class BridgeEmbedder(BaseEstimator):
    """Embedder backed by a spawned child process.

    The handle owns the child; one request is in flight at a time, so the
    declared concurrency is serialized. The constructor performs the
    describe handshake and fails if the child does not answer in time.
    """

    concurrency = SERIALIZED

    def __init__(self, command, handshake_timeout=15.0, request_timeout=120.0):
        self.command = command
        self.handshake_timeout = handshake_timeout
        self.request_timeout = request_timeout
        self._lock = threading.Lock()
        self._next_id = 0
        self._proc = subprocess.Popen(
            shlex.split(command) if isinstance(command, str) else list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            encoding="utf-8",
        )
        self._lines = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()
        self._descriptor = self._handshake()

    def _pump(self):
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(None)  # EOF sentinel

    def _request(self, body: dict, timeout: float) -> dict:
        with self._lock:
            request_id = self._next_id
            self._next_id += 1
            line = encode_request({"id": request_id, **body})
            try:
                self._proc.stdin.write(line + "\n")
                self._proc.stdin.flush()
            except (BrokenPipeError, OSError) as exc:
                raise BackendError(f"backend process is gone: {exc}") from exc
            try:
                raw = self._lines.get(timeout=timeout)
            except queue.Empty:
                raise BackendError(
                    f"backend did not answer request {request_id} "
                    f"within {timeout}s"
                ) from None
            if raw is None:
                code = self._proc.poll()
                raise BackendError(f"backend exited (status {code}) mid-request")
            response = decode_response(raw)
            if response["id"] != request_id:
                raise BackendError(
                    f"response id {response['id']} does not match request "
                    f"{request_id}: {raw!r}"
                )
            if not response["ok"]:
                raise BackendError(
                    f"backend error: {response.get('error', 'unspecified')}"
                )
            return response

    def _handshake(self) -> EmbedderDescriptor:
        response = self._request({"op": "describe"}, self.handshake_timeout)
        try:
            return EmbedderDescriptor(
                name=f"bridge:{self.command}",
                output_dim=int(response["output_dim"]),
                supports_randomization=bool(
                    response.get("supports_randomization", False)
                ),
                layer_count=int(response.get("layer_count", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"invalid describe response: {response}") from exc

    def _embedding(self, response: dict) -> np.ndarray:
        vec = np.asarray(response.get("embedding"), dtype=np.float64).ravel()
        if vec.size != self._descriptor.output_dim:
            raise BackendError(
                f"embedding length {vec.size} does not match advertised "
                f"output_dim {self._descriptor.output_dim}"
            )
        return vec

    def embed(self, image) -> np.ndarray:
        shape, data = image_to_payload(image)
        response = self._request(
            {"op": "embed_image", "shape": shape, "data": data},
            self.request_timeout,
        )
        return self._embedding(response)

    def embed_text(self, text: str) -> np.ndarray:
        response = self._request(
            {"op": "embed_text", "text": str(text)}, self.request_timeout
        )
        return self._embedding(response)

    def describe(self) -> EmbedderDescriptor:
        return self._descriptor

    def randomized(self, scheme: str, k: int, seed: int = 0) -> "BridgeEmbedder":
        """Ask the backend to randomize k layers, starting from its
        original weights each call. Returns this handle."""
        if not self._descriptor.supports_randomization:
            raise CapabilityError(
                f"backend {self._descriptor.name!r} does not support randomization"
            )
        self._request(
            {"op": "randomize", "scheme": scheme, "k": int(k), "seed": int(seed)},
            self.request_timeout,
        )
        return self

    def close(self):
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()
                self._proc.wait()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
