"""Loopback-TCP integration mode.

Runs the same three-tier protocol as the virtual simulator, but each node is
a real thread talking over real TCP sockets and compute stages are real
sleeps scaled by ``time_scale``. Wire format: 4-byte big-endian length prefix
followed by one JSON message (the same chunk/meta/result documents the
virtual mode uses, plus per-message "ack" frames for the blocking transport).

Timing metrics from this mode are wall-clock measurements and are inherently
noisy; the mode exists to exercise the protocol end to end, not to reproduce
calibrated numbers.
"""

from __future__ import annotations

import base64
import json
import queue
import socket
import struct
import threading
import time
from dataclasses import dataclass
from typing import Optional

from . import chunkwire, workload
from .domain import ScenarioConfig, TransportKind
from .metrics import MetricsRecord, summarize
from .nodes import ResultMessage, RunResult, build_dataset, decode_result, encode_result

_FRAME_HEADER = struct.Struct(">I")


def _send_frame(sock: socket.socket, lock: threading.Lock, payload: bytes) -> None:
    with lock:
        sock.sendall(_FRAME_HEADER.pack(len(payload)) + payload)


def _recv_frame(sock: socket.socket) -> Optional[bytes]:
    header = _recv_exact(sock, _FRAME_HEADER.size)
    if header is None:
        return None
    (length,) = _FRAME_HEADER.unpack(header)
    return _recv_exact(sock, length)


def _recv_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    buf = b""
    while len(buf) < n:
        try:
            part = sock.recv(n - len(buf))
        except OSError:
            return None
        if not part:
            return None
        buf += part
    return buf


class _GrantRegistry:
    def __init__(self, ttl: float):
        self._ttl = ttl
        self._grants: dict[str, tuple[str, float, bool]] = {}
        self._counter = 0
        self._lock = threading.Lock()

    def issue(self, image_id: str) -> dict:
        with self._lock:
            self._counter += 1
            token = f"grant-{self._counter:06d}"
            expires = time.monotonic() + self._ttl
            self._grants[token] = (image_id, expires, False)
        return {"upload_token": token, "expires_at": expires}

    def redeem(self, token: str, image_id: str) -> bool:
        with self._lock:
            entry = self._grants.get(token)
            if entry is None:
                return False
            gid, expires, used = entry
            if used or gid != image_id or time.monotonic() > expires:
                return False
            self._grants[token] = (gid, expires, True)
            return True


class _CloudServer(threading.Thread):
    def __init__(self, cfg: ScenarioConfig, ground_truth: dict, port: int):
        super().__init__(daemon=True, name="tcp-cloud")
        self._cfg = cfg
        self._ground_truth = ground_truth
        self._grants = _GrantRegistry(cfg.grant_ttl_s)
        self._rng = workload.Prng(workload.substream(cfg.rng_seed, 3))
        self._rng_lock = threading.Lock()
        self._listener = socket.create_server(("127.0.0.1", port))
        self.port = self._listener.getsockname()[1]

    def run(self) -> None:
        try:
            conn, _ = self._listener.accept()
        except OSError:
            return
        lock = threading.Lock()
        while True:
            data = _recv_frame(conn)
            if data is None:
                break
            doc = json.loads(data.decode("utf-8"))
            if doc.get("msg_type") == "grant_request":
                grant = self._grants.issue(doc["image_id"])
                grant.update({"msg_type": "grant", "image_id": doc["image_id"]})
                _send_frame(conn, lock, json.dumps(grant).encode("utf-8"))
            elif doc.get("msg_type") == "cloud_upload":
                image_id = doc["image_id"]
                if not self._grants.redeem(doc.get("upload_token", ""), image_id):
                    _send_frame(conn, lock, json.dumps({
                        "msg_type": "upload_rejected", "image_id": image_id,
                    }).encode("utf-8"))
                    continue
                threading.Thread(
                    target=self._recognize, args=(conn, lock, image_id),
                    daemon=True).start()
        conn.close()

    def _recognize(self, conn, lock, image_id: str) -> None:
        with self._rng_lock:
            verdict = workload.cloud_recognize(
                self._ground_truth[image_id], self._cfg.fp_rate, self._rng,
                self._cfg.stage_durations.cloud_latency_mean)
        time.sleep(verdict.t_cloud * self._cfg.time_scale)
        _send_frame(conn, lock, encode_result(ResultMessage(
            image_id=image_id,
            origin="cloud",
            recognized=verdict.outcome is workload.CloudOutcome.MATCH,
            label=verdict.label,
            is_false_positive=verdict.is_false_positive,
        )))

    def close(self) -> None:
        self._listener.close()


class _EdgeServer(threading.Thread):
    """Reassembles uploads from the far edge, identifies, escalates."""

    def __init__(self, cfg: ScenarioConfig, db, embeddings: dict, port: int,
                 cloud_port: Optional[int]):
        super().__init__(daemon=True, name="tcp-edge")
        self._cfg = cfg
        self._db = db
        self._embeddings = embeddings
        self._listener = socket.create_server(("127.0.0.1", port))
        self.port = self._listener.getsockname()[1]
        self._cloud_port = cloud_port
        self._cloud_sock: Optional[socket.socket] = None
        self._cloud_lock = threading.Lock()
        self._cloud_pending: dict[str, queue.Queue] = {}
        self._serve_q: "queue.Queue[tuple[str, bytes] | None]" = queue.Queue()

    def run(self) -> None:
        if self._cloud_port is not None:
            self._cloud_sock = socket.create_connection(("127.0.0.1", self._cloud_port))
            threading.Thread(target=self._cloud_receiver, daemon=True).start()
        try:
            conn, _ = self._listener.accept()
        except OSError:
            return
        far_lock = threading.Lock()
        threading.Thread(target=self._serve_worker, args=(conn, far_lock),
                         daemon=True).start()
        sessions: dict[str, chunkwire.ReassemblySession] = {}
        ack_needed = self._cfg.transport is TransportKind.BLOCKING_SESSION
        while True:
            data = _recv_frame(conn)
            if data is None:
                break
            if ack_needed:
                _send_frame(conn, far_lock, b'{"msg_type":"ack"}')
            msg_type = chunkwire.peek_msg_type(data)
            if msg_type == "meta":
                meta = chunkwire.decode_meta(data)
                sessions.setdefault(meta.image_id, chunkwire.ReassemblySession(meta))
            elif msg_type == "chunk":
                env = chunkwire.decode_envelope(data)
                session = sessions.get(env.image_id)
                if session is None:
                    continue
                status = session.accept(env)
                if status is chunkwire.ReassemblyStatus.COMPLETE:
                    sessions.pop(env.image_id, None)
                    self._serve_q.put((env.image_id, session.payload))
        self._serve_q.put(None)
        conn.close()

    def _serve_worker(self, conn, far_lock) -> None:
        # One worker thread: identification is serialized like a single core.
        while True:
            item = self._serve_q.get()
            if item is None:
                return
            image_id, payload = item
            time.sleep(self._cfg.stage_durations.t_identify * self._cfg.time_scale)
            embedding = self._embeddings.get(image_id)
            result = None
            if embedding is not None:
                ident = workload.identify(
                    embedding, self._db, self._cfg.similarity_threshold,
                    self._cfg.stage_durations.t_identify, image_id)
                if ident.recognized:
                    result = ResultMessage(image_id, "edge", True,
                                           ident.best_person.label, False)
            if result is None and self._cloud_sock is not None:
                threading.Thread(target=self._cloud_flow,
                                 args=(conn, far_lock, image_id, payload),
                                 daemon=True).start()
                continue
            if result is None:
                result = ResultMessage(image_id, "edge", False, None, False)
            _send_frame(conn, far_lock, encode_result(result))

    def _cloud_flow(self, conn, far_lock, image_id: str, payload: bytes) -> None:
        replies: queue.Queue = queue.Queue()
        self._cloud_pending[image_id] = replies
        timeout = max(1.0, self._cfg.cloud_timeout_s * self._cfg.time_scale)
        _send_frame(self._cloud_sock, self._cloud_lock, json.dumps(
            {"msg_type": "grant_request", "image_id": image_id}).encode("utf-8"))
        result = ResultMessage(image_id, "cloud", False, None, False)
        try:
            grant = replies.get(timeout=timeout)
            if grant.get("msg_type") == "grant":
                _send_frame(self._cloud_sock, self._cloud_lock, json.dumps({
                    "msg_type": "cloud_upload",
                    "image_id": image_id,
                    "upload_token": grant["upload_token"],
                    "payload_b64": base64.b64encode(payload).decode("ascii"),
                }).encode("utf-8"))
                verdict = replies.get(timeout=timeout)
                if verdict.get("msg_type") == "result":
                    result = ResultMessage(
                        image_id=verdict["image_id"],
                        origin=verdict["origin"],
                        recognized=verdict["recognized"],
                        label=verdict["label"],
                        is_false_positive=verdict["is_false_positive"],
                    )
        except queue.Empty:
            pass
        finally:
            self._cloud_pending.pop(image_id, None)
        _send_frame(conn, far_lock, encode_result(result))

    def _cloud_receiver(self) -> None:
        while True:
            data = _recv_frame(self._cloud_sock)
            if data is None:
                return
            doc = json.loads(data.decode("utf-8"))
            pending = self._cloud_pending.get(doc.get("image_id", ""))
            if pending is not None:
                pending.put(doc)

    def close(self) -> None:
        self._listener.close()
        if self._cloud_sock is not None:
            try:
                self._cloud_sock.close()
            except OSError:
                pass


@dataclass
class _FarState:
    uploads: int = 0
    results: dict[str, ResultMessage] = None
    duplicate_results: int = 0


def run_tcp_scenario(cfg: ScenarioConfig) -> RunResult:
    """Run one scenario over loopback TCP; returns wall-clock metrics."""
    db, dataset = build_dataset(cfg)
    embeddings = {img.id: img.embedding for img in dataset}
    ground_truth = {img.id: img for img in dataset}

    cloud = None
    cloud_port = None
    if cfg.cloud_enabled:
        cloud = _CloudServer(cfg, ground_truth, cfg.tcp_port_cloud)
        cloud.start()
        cloud_port = cloud.port
    edge = _EdgeServer(cfg, db, embeddings, cfg.tcp_port_edge, cloud_port)
    edge.start()

    sock = socket.create_connection(("127.0.0.1", edge.port))
    sock_lock = threading.Lock()
    state = _FarState(results={})
    results_done = threading.Event()
    ack_q: "queue.Queue[None]" = queue.Queue()
    traces: dict[str, dict] = {}
    t0 = time.monotonic()

    def receiver() -> None:
        while True:
            data = _recv_frame(sock)
            if data is None:
                return
            doc = json.loads(data.decode("utf-8"))
            if doc.get("msg_type") == "ack":
                ack_q.put(None)
                continue
            msg = decode_result(data)
            if msg.image_id in state.results:
                state.duplicate_results += 1
            else:
                state.results[msg.image_id] = msg
                traces[msg.image_id]["result_at"] = time.monotonic() - t0
            if len(state.results) >= state.uploads and pipeline_done.is_set():
                results_done.set()

    pipeline_done = threading.Event()
    threading.Thread(target=receiver, daemon=True).start()

    scale = cfg.time_scale
    durations = cfg.stage_durations
    blocking = cfg.transport is TransportKind.BLOCKING_SESSION

    send_q: "queue.Queue[bytes | None]" = queue.Queue(maxsize=cfg.queue_capacity)

    def pubsub_sender() -> None:
        while True:
            msg = send_q.get()
            if msg is None:
                return
            with sock_lock:
                sock.sendall(_FRAME_HEADER.pack(len(msg)) + msg)
            send_q.task_done()

    if not blocking:
        threading.Thread(target=pubsub_sender, daemon=True).start()

    def upload(image) -> None:
        meta, envelopes = chunkwire.fragment(
            image.payload, image.id, cfg.chunk_size_bytes,
            (image.width_px, image.height_px), image.format.value)
        messages = [chunkwire.encode_meta(meta)]
        messages.extend(chunkwire.encode_envelope(e) for e in envelopes)
        start = time.monotonic()
        for msg in messages:
            if blocking:
                _send_frame(sock, sock_lock, msg)
                ack_q.get(timeout=10.0)
            else:
                send_q.put(msg)
        traces[image.id]["upload_s"] = time.monotonic() - start
        traces[image.id]["upload_start"] = start - t0
        state.uploads += 1

    def detect_and_upload(image) -> None:
        time.sleep(durations.t_detect_total * scale)
        tr = traces.setdefault(image.id, {})
        tr["detect"] = durations.t_detect_total
        if image.has_face:
            upload(image)
        else:
            tr["result_at"] = time.monotonic() - t0

    if cfg.parallelism:
        handoff: "queue.Queue[object]" = queue.Queue(maxsize=cfg.queue_capacity)

        def reader() -> None:
            for image in dataset:
                time.sleep(durations.t_read_decode * scale)
                traces.setdefault(image.id, {})
                handoff.put(image)
            handoff.put(None)

        threading.Thread(target=reader, daemon=True).start()
        while True:
            image = handoff.get()
            if image is None:
                break
            detect_and_upload(image)
    else:
        for image in dataset:
            time.sleep(durations.t_read_decode * scale)
            traces.setdefault(image.id, {})
            detect_and_upload(image)
            if not blocking:
                send_q.join()

    pipeline_done.set()
    if state.uploads == len(state.results):
        results_done.set()
    deadline = max(5.0, cfg.image_timeout_s * scale * len(dataset))
    results_done.wait(timeout=deadline)

    wall = time.monotonic() - t0
    sock.close()
    edge.close()
    if cloud is not None:
        cloud.close()

    records = []
    for image in dataset:
        tr = traces.get(image.id, {})
        msg = state.results.get(image.id)
        records.append(MetricsRecord(
            image_id=image.id,
            t_read_decode=durations.t_read_decode,
            t_quality=durations.t_quality,
            t_infer1=durations.t_infer1,
            t_infer2=durations.t_infer2,
            t_upload=tr.get("upload_s", 0.0),
            t_identify=durations.t_identify if msg is not None else 0.0,
            edge_rtt=(tr.get("result_at", 0.0) - tr.get("upload_start", 0.0))
            if msg is not None and msg.origin == "edge" else 0.0,
            cloud_rtt=(tr.get("result_at", 0.0) - tr.get("upload_start", 0.0))
            if msg is not None and msg.origin == "cloud" else None,
            origin=msg.origin if msg is not None else "none",
            recognized=msg.recognized if msg is not None else False,
            label=msg.label if msg is not None else None,
            completion_s=tr.get("result_at", wall),
            is_false_positive=msg.is_false_positive if msg is not None else False,
        ))
    summary = summarize(records, {0: 0.0, 1: 0.0}, wall)
    failure = None
    if len(state.results) < state.uploads:
        failure = (f"missing results: {state.uploads - len(state.results)}"
                   f" of {state.uploads} uploads unanswered")
    if state.duplicate_results:
        failure = f"duplicate results received: {state.duplicate_results}"
    return RunResult(config=cfg, records=records, summary=summary,
                     wall=wall, failure=failure)
