"""Generation backends: the request contract, a deterministic mock, and adapters."""

from __future__ import annotations

import base64
import json
import os
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler
from typing import Callable, Protocol

import cv2
import numpy as np

from ..errors import BackendError, ContractError
from ..utils import array_digest, stable_digest
from .params import METHODS, TEXT2IMG_SIZE, GenerationParams

BACKEND_URL_ENV = "SASPA_BACKEND_URL"


@dataclass
class GenerationRequest:
    method: str
    prompt: str
    seed: int
    params: GenerationParams = field(default_factory=GenerationParams)
    edge_map: np.ndarray | None = None
    init_image: np.ndarray | None = None
    reference_image: np.ndarray | None = None
    subject_texts: tuple[str, str] | None = None

    def validate(self) -> "GenerationRequest":
        m = self.method
        if m not in METHODS:
            raise ContractError(f"unsupported method {m!r}")
        if not self.prompt:
            raise ContractError("prompt is empty")
        needs_edges = m in ("saspa", "saspa_no_subject", "edge_plus_img2img")
        needs_init = m in ("img2img", "edge_plus_img2img")
        if needs_edges and self.edge_map is None:
            raise ContractError(f"{m} request is missing edge_map")
        if not needs_edges and self.edge_map is not None:
            raise ContractError(f"{m} request must not carry an edge_map")
        if needs_init and self.init_image is None:
            raise ContractError(f"{m} request is missing init_image")
        if needs_init and self.params.strength is None:
            raise ContractError(f"{m} request is missing strength")
        if not needs_init and self.init_image is not None:
            raise ContractError(f"{m} request must not carry an init_image")
        if m == "saspa":
            if self.reference_image is None:
                raise ContractError("saspa request is missing reference_image")
            if not self.subject_texts or len(self.subject_texts) != 2:
                raise ContractError("saspa request is missing subject_texts")
        elif self.reference_image is not None:
            raise ContractError(f"{m} request must not carry a reference_image")
        if self.edge_map is not None and self.edge_map.ndim != 2:
            raise ContractError("edge_map must be single-channel")
        return self

    def output_size(self) -> tuple[int, int]:
        """(height, width) implied by the resolution rule."""
        if self.params.resolution_rule == "fixed_512" or self.method == "text2img":
            return TEXT2IMG_SIZE, TEXT2IMG_SIZE
        base = self.edge_map if self.edge_map is not None else self.init_image
        return int(base.shape[0]), int(base.shape[1])

    def digest(self) -> str:
        return stable_digest(
            {
                "method": self.method,
                "prompt": self.prompt,
                "seed": self.seed,
                "params": self.params.to_dict(),
                "edge_map": array_digest(self.edge_map),
                "init_image": array_digest(self.init_image),
                "reference_image": array_digest(self.reference_image),
                "subject_texts": list(self.subject_texts) if self.subject_texts else None,
            },
            length=64,
        )


class GenerationBackend(Protocol):
    name: str
    methods: frozenset[str]

    def handshake(self) -> dict: ...

    def generate(self, request: GenerationRequest) -> np.ndarray: ...


class MockBackend:
    """Model-free backend whose output is a pure function of the request.

    The image is seeded noise; edge pixels are painted white, an init image is
    blended in by ``1 - strength``, the reference image's mean colour tints the
    result, and the first row carries the prompt digest bytes.
    """

    name = "mock"
    methods = frozenset(METHODS)

    def handshake(self) -> dict:
        return {"backend": self.name, "methods": sorted(self.methods)}

    def generate(self, request: GenerationRequest) -> np.ndarray:
        request.validate()
        h, w = request.output_size()
        digest = request.digest()
        rng = np.random.default_rng(int(digest[:16], 16))
        img = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8).astype(np.float64)
        if request.init_image is not None:
            init = request.init_image
            if init.ndim == 2:
                init = np.repeat(init[..., None], 3, axis=2)
            if init.shape[:2] != (h, w):
                init = cv2.resize(init, (w, h), interpolation=cv2.INTER_LINEAR)
            s = float(request.params.strength)
            img = (1.0 - s) * init.astype(np.float64) + s * img
        if request.reference_image is not None:
            tint = request.reference_image.reshape(-1, request.reference_image.shape[-1]).mean(axis=0)
            img = 0.75 * img + 0.25 * np.broadcast_to(tint[:3], img.shape)
        out = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        if request.edge_map is not None:
            edges = request.edge_map
            if edges.shape != (h, w):
                edges = cv2.resize(edges, (w, h), interpolation=cv2.INTER_NEAREST)
            out[edges > 0] = 255
        stamp = np.frombuffer(bytes.fromhex(stable_digest(request.prompt, length=64)), dtype=np.uint8)
        n = min(w, stamp.size)
        out[0, :n, :] = stamp[:n, None]
        return out


class InProcessBackend:
    """Wraps a callable ``fn(request) -> image`` (e.g. a diffusers pipeline closure)."""

    def __init__(self, fn: Callable[[GenerationRequest], np.ndarray], methods=METHODS, name="in_process"):
        self.fn = fn
        self.methods = frozenset(methods)
        self.name = name

    def handshake(self) -> dict:
        return {"backend": self.name, "methods": sorted(self.methods)}

    def generate(self, request: GenerationRequest) -> np.ndarray:
        request.validate()
        if request.method not in self.methods:
            raise ContractError(f"{self.name} does not support {request.method}")
        try:
            return self.fn(request)
        except BackendError:
            raise
        except Exception as exc:  # model failures are assumed transient
            raise BackendError(f"{type(exc).__name__}: {exc}", retryable=True) from exc


# -- wire format ---------------------------------------------------------------


def encode_image(image: np.ndarray) -> str:
    ok, buf = cv2.imencode(".png", image)
    if not ok:
        raise BackendError("failed to encode image")
    return base64.b64encode(buf.tobytes()).decode("ascii")


def decode_image(data: str, grayscale: bool = False) -> np.ndarray:
    raw = np.frombuffer(base64.b64decode(data), dtype=np.uint8)
    image = cv2.imdecode(raw, cv2.IMREAD_GRAYSCALE if grayscale else cv2.IMREAD_UNCHANGED)
    if image is None:
        raise BackendError("failed to decode image payload")
    return image


def encode_request(request: GenerationRequest) -> dict:
    doc = {
        "method": request.method,
        "prompt": request.prompt,
        "seed": request.seed,
        "params": request.params.wire(),
    }
    if request.edge_map is not None:
        doc["edge_map"] = encode_image(request.edge_map)
    if request.init_image is not None:
        doc["init_image"] = encode_image(request.init_image)
    if request.reference_image is not None:
        doc["reference_image"] = encode_image(request.reference_image)
    if request.subject_texts is not None:
        doc["subject_texts"] = list(request.subject_texts)
    return doc


def decode_request(doc: dict) -> GenerationRequest:
    try:
        return GenerationRequest(
            method=doc["method"],
            prompt=doc["prompt"],
            seed=int(doc["seed"]),
            params=GenerationParams.from_wire(doc.get("params", {})),
            edge_map=decode_image(doc["edge_map"], grayscale=True) if "edge_map" in doc else None,
            init_image=decode_image(doc["init_image"]) if "init_image" in doc else None,
            reference_image=decode_image(doc["reference_image"]) if "reference_image" in doc else None,
            subject_texts=tuple(doc["subject_texts"]) if doc.get("subject_texts") else None,
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"malformed request: {exc}") from exc


class WireBackend:
    """HTTP adapter: POST ``{url}/generate`` with the JSON request, GET ``{url}/health``."""

    name = "wire"

    def __init__(self, url: str | None = None, timeout: float = 600.0):
        url = url or os.environ.get(BACKEND_URL_ENV)
        if not url:
            raise BackendError(f"wire backend needs a url or ${BACKEND_URL_ENV}")
        self.url = url.rstrip("/")
        self.timeout = timeout
        self.methods = frozenset()

    def _call(self, path: str, payload: dict | None = None) -> dict:
        data = None if payload is None else json.dumps(payload).encode("utf-8")
        req = urllib.request.Request(
            self.url + path, data=data, headers={"Content-Type": "application/json"}
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            try:
                return json.loads(exc.read().decode("utf-8"))
            except ValueError:
                raise BackendError(f"HTTP {exc.code} from {self.url}", retryable=exc.code >= 500) from exc
        except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
            raise BackendError(f"cannot reach {self.url}: {exc}", retryable=True) from exc

    def handshake(self) -> dict:
        try:
            info = self._call("/health")
        except BackendError as exc:
            raise BackendError(f"handshake failed: {exc}") from exc
        self.methods = frozenset(info.get("methods", ()))
        return info

    def generate(self, request: GenerationRequest) -> np.ndarray:
        request.validate()
        doc = self._call("/generate", encode_request(request))
        if "error" in doc:
            raise BackendError(doc["error"], retryable=bool(doc.get("retryable", False)))
        return decode_image(doc["image"])


def make_wire_handler(backend: GenerationBackend) -> type[BaseHTTPRequestHandler]:
    """Request handler serving ``backend`` over the wire protocol (for ``http.server``)."""

    class Handler(BaseHTTPRequestHandler):
        def _send(self, status: int, doc: dict) -> None:
            body = json.dumps(doc).encode("utf-8")
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            if self.path.rstrip("/") == "/health":
                self._send(200, backend.handshake())
            else:
                self._send(404, {"error": "not found", "retryable": False})

        def do_POST(self):
            if self.path.rstrip("/") != "/generate":
                self._send(404, {"error": "not found", "retryable": False})
                return
            length = int(self.headers.get("Content-Length", 0))
            try:
                request = decode_request(json.loads(self.rfile.read(length)))
                image = backend.generate(request)
                self._send(200, {"image": encode_image(image), "backend_info": {"name": backend.name}})
            except BackendError as exc:
                self._send(200, {"error": str(exc), "retryable": exc.retryable})

        def log_message(self, format, *args):
            pass

    return Handler


def get_backend(name: str, url: str | None = None) -> GenerationBackend:
    if name == "mock":
        return MockBackend()
    if name == "wire":
        return WireBackend(url)
    raise BackendError(f"unknown backend {name!r}; available: mock, wire")


BACKEND_NAMES = ("mock", "wire")
