"""JSON-over-HTTP adapters for hosted generative and perception models.

Every adapter is a thin client: it serializes the operation's arguments,
posts them to an endpoint taken from the environment, and validates the
reply. Arrays (images, masks, depth) travel as ``{"dtype", "shape",
"data"}`` objects with base64 payloads.

Environment variables:

    VIDEOGUIDE_VIDEO_URL     image-to-video generator
    VIDEOGUIDE_VERIFIER_URL  rubric verifier and keyframe bounds
    VIDEOGUIDE_LLM_URL       prompt rewriting
    VIDEOGUIDE_SEGMENT_URL   video object segmentation
    VIDEOGUIDE_DEPTH_URL     video depth estimation
    VIDEOGUIDE_HAND_URL      hand keypoints
    VIDEOGUIDE_VLM_URL       contact questions
    VIDEOGUIDE_API_KEY       bearer token sent with every request (optional)
"""

from __future__ import annotations

import base64
import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, ProtocolError, TransportError
from .geometry import CameraModel, DepthMap
from .imagination import RUBRIC, VideoSample, VideoScore, parse_rubric_reply
from .perception import Providers
from .render import colorize
from .sim import ContactMatrix, SceneConfig, contact_pairs

log = logging.getLogger(__name__)

ENDPOINTS = {
    "video": "VIDEOGUIDE_VIDEO_URL",
    "verifier": "VIDEOGUIDE_VERIFIER_URL",
    "llm": "VIDEOGUIDE_LLM_URL",
    "segment": "VIDEOGUIDE_SEGMENT_URL",
    "depth": "VIDEOGUIDE_DEPTH_URL",
    "hand": "VIDEOGUIDE_HAND_URL",
    "vlm": "VIDEOGUIDE_VLM_URL",
}
ROLE_SERVICE = {"video": "video", "verifier": "verifier", "llm": "llm", "segmentation": "segment",
                "depth": "depth", "hand": "hand", "contacts": "vlm"}
API_KEY = "VIDEOGUIDE_API_KEY"
RETRYABLE = {408, 425, 429, 500, 502, 503, 504}


def encode_array(a) -> dict:
    a = np.ascontiguousarray(a)
    return {"dtype": a.dtype.str, "shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"], validate=True)
        a = np.frombuffer(raw, dtype=np.dtype(d["dtype"]))
        return a.reshape([int(s) for s in d["shape"]]).copy()
    except (KeyError, TypeError, ValueError) as exc:
        raise ProtocolError(f"malformed array payload: {exc}", raw=repr(d)[:500]) from None


def _field(reply: dict, key: str):
    if not isinstance(reply, dict) or key not in reply:
        raise ProtocolError(f"reply lacks {key!r}", raw=json.dumps(reply)[:500])
    return reply[key]


@dataclass
class JsonClient:
    """POSTs JSON documents with exponential backoff on transient failures."""

    base_url: str
    api_key: str | None = None
    timeout: float = 60.0
    retries: int = 4
    backoff: float = 0.5
    sleep = staticmethod(time.sleep)

    @classmethod
    def from_env(cls, service: str, var: str | None = None, **kw) -> JsonClient:
        var = var or ENDPOINTS[service]
        url = os.environ.get(var)
        if not url:
            raise ConfigurationError(f"remote {service} provider needs {var} to be set")
        return cls(url.rstrip("/"), os.environ.get(API_KEY) or None, **kw)

    def post(self, route: str, payload: dict) -> dict:
        url = f"{self.base_url}/{route.lstrip('/')}"
        body = json.dumps(payload).encode()
        headers = {"Content-Type": "application/json", "Accept": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        delay = self.backoff
        last = "no attempt made"
        retry_after = None
        for attempt in range(1, self.retries + 2):
            req = urllib.request.Request(url, data=body, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    text = resp.read().decode("utf-8", "replace")
                try:
                    return json.loads(text)
                except json.JSONDecodeError:
                    raise ProtocolError(f"{url} returned non-JSON", raw=text[:2000]) from None
            except urllib.error.HTTPError as exc:
                last = f"HTTP {exc.code}"
                ra = exc.headers.get("Retry-After") if exc.headers else None
                retry_after = float(ra) if ra and ra.replace(".", "", 1).isdigit() else None
                if exc.code not in RETRYABLE:
                    raise TransportError(f"{url}: {last}", attempts=attempt) from None
            except (urllib.error.URLError, TimeoutError, ConnectionError) as exc:
                last = str(getattr(exc, "reason", exc))
                retry_after = None
            if attempt <= self.retries:
                wait = max(delay, retry_after or 0.0)
                log.warning("%s failed (%s); retry %d in %.1fs", url, last, attempt, wait)
                self.sleep(wait)
                delay *= 2
        raise TransportError(f"{url}: {last} after {self.retries + 1} attempts",
                             attempts=self.retries + 1, retry_after=retry_after)


# ---------------------------------------------------------------------------
# imagination


class RemoteLanguageModel:
    def __init__(self, client: JsonClient | None = None):
        self.client = client or JsonClient.from_env("llm")

    def rewrite(self, description: str, scene: SceneConfig) -> str:
        reply = self.client.post("rewrite", {
            "description": description,
            "actuator": scene.actuator.name,
            "targets": [o.name for o in scene.targets],
            "objects": [o.name for o in scene.foreground],
        })
        prompt = _field(reply, "prompt")
        if not isinstance(prompt, str) or not prompt.strip():
            raise ProtocolError("rewrite reply has an empty prompt", raw=json.dumps(reply)[:500])
        return prompt


class RemoteVideoProvider:
    """Submits (image, prompt) jobs and polls until every candidate is ready."""

    name = "remote"
    concurrent = False

    def __init__(self, client: JsonClient | None = None, poll_interval: float = 5.0, max_polls: int = 360):
        self.client = client or JsonClient.from_env("video")
        self.poll_interval = poll_interval
        self.max_polls = max_polls

    def generate(self, prompt, initial_frame, n, seed=0) -> list[VideoSample]:
        job = _field(self.client.post("generate", {
            "prompt": prompt, "initial_frame": encode_array(_color(initial_frame)),
            "num_samples": int(n), "seed": int(seed)}), "job_id")
        for _ in range(self.max_polls):
            reply = self.client.post("poll", {"job_id": job})
            status = _field(reply, "status")
            if status == "done":
                videos = _field(reply, "frames")
                if not isinstance(videos, list) or len(videos) != n:
                    raise ProtocolError(f"job {job} returned {len(videos) if isinstance(videos, list) else '?'} "
                                        f"videos, expected {n}", raw=str(status))
                return [VideoSample(tuple(decode_array(f) for f in frames), prompt, self.name, int(seed) + i, i)
                        for i, frames in enumerate(videos)]
            if status == "failed":
                raise TransportError(f"video job {job} failed: {reply.get('error', 'no reason given')}")
            self.client.sleep(self.poll_interval)
        raise TransportError(f"video job {job} still pending after {self.max_polls} polls")


class RemoteVerifier:
    def __init__(self, client: JsonClient | None = None, max_frames: int = 8):
        self.client = client or JsonClient.from_env("verifier")
        self.max_frames = max_frames

    def _frames(self, sample: VideoSample, idx=None):
        if idx is None:
            idx = np.linspace(0, len(sample) - 1, min(self.max_frames, len(sample))).round().astype(int)
        return [int(i) for i in idx], [encode_array(sample.frames[i]) for i in idx]

    def verify(self, sample: VideoSample, description: str) -> VideoScore:
        idx, frames = self._frames(sample)
        reply = self.client.post("verify", {"rubric": RUBRIC.format(description=description),
                                            "frame_indices": idx, "frames": frames})
        text = _field(reply, "reply")
        return parse_rubric_reply(text)

    def keyframe_bounds(self, sample: VideoSample, keyframes: Sequence[int]) -> tuple[int, int]:
        idx, frames = self._frames(sample, list(keyframes))
        reply = self.client.post("keyframes", {"frame_indices": idx, "frames": frames})
        try:
            return int(_field(reply, "start")), int(_field(reply, "end"))
        except (TypeError, ValueError):
            raise ProtocolError("keyframe bounds are not integers", raw=json.dumps(reply)[:500]) from None


# ---------------------------------------------------------------------------
# perception


def _color(obs) -> np.ndarray:
    return obs.color if obs.color is not None else colorize(obs.depth, obs.seg)


def _video_frames(video) -> list[dict]:
    return [encode_array(f) for f in video.sample.frames]


class RemoteSegmenter:
    def __init__(self, client: JsonClient | None = None):
        self.client = client or JsonClient.from_env("segment")

    def track(self, video, prompts):
        reply = self.client.post("track", {
            "frames": _video_frames(video),
            "prompts": {str(k): np.asarray(v).tolist() for k, v in prompts.items()}})
        masks = _field(reply, "masks")
        out = {}
        for k in prompts:
            if str(k) not in masks:
                raise ProtocolError(f"segmenter dropped object {k}", raw=",".join(masks)[:500])
            out[k] = [decode_array(m).astype(bool) for m in masks[str(k)]]
        return out


class RemoteDepth:
    def __init__(self, client: JsonClient | None = None):
        self.client = client or JsonClient.from_env("depth")

    def depth(self, video):
        reply = self.client.post("depth", {"frames": _video_frames(video)})
        return [DepthMap.from_array(decode_array(d).astype(np.float32)) for d in _field(reply, "depth")]


class RemoteHand:
    """Fingertip pixels on one frame, plus 3D hand keypoints for particle tasks."""

    def __init__(self, client: JsonClient | None = None):
        self.client = client or JsonClient.from_env("hand")

    def fingertips(self, video, frame, cam: CameraModel):
        reply = self.client.post("fingertips", {"frame": encode_array(video.sample.frames[frame]),
                                                "camera": cam.to_dict()})
        px = np.asarray(_field(reply, "pixels"), float).reshape(-1, 2)
        return px

    def keypoints_3d(self, video, frames):
        reply = self.client.post("keypoints", {"frames": [encode_array(video.sample.frames[f]) for f in frames]})
        pts = np.asarray(_field(reply, "points"), float)
        if pts.shape != (len(frames), 3):
            raise ProtocolError(f"expected {len(frames)}x3 keypoints, got {pts.shape}")
        return pts


class RemoteContacts:
    """Asks a vision-language model which foreground objects touch each target."""

    def __init__(self, client: JsonClient | None = None):
        self.client = client or JsonClient.from_env("vlm")

    def contacts(self, video, frames, scene):
        pairs = contact_pairs(scene)
        names = {o.id: o.name for o in scene.objects}
        reply = self.client.post("contacts", {
            "frames": [encode_array(video.sample.frames[f]) for f in frames],
            "pairs": [[names[a], names[b]] for a, b in pairs]})
        rows = _field(reply, "contacts")
        if not isinstance(rows, list) or len(rows) != len(frames) or any(len(r) != len(pairs) for r in rows):
            raise ProtocolError("contact reply does not match frames x pairs", raw=json.dumps(reply)[:500])
        return [ContactMatrix(tuple(pairs), np.array([bool(v) for v in r], bool)) for r in rows]


def remote_providers() -> Providers:
    return Providers(RemoteSegmenter(), RemoteDepth(), RemoteHand(), RemoteContacts())
