"""Real-time pipeline: UDP emulator sender and the pose inference server.

The server consumes the packet stream in three phases driven purely by
packet timestamps, so captures replay deterministically: the first window
calibrates chest pressure, the second the forward-facing rotation, then
every running-phase frame becomes a feature vector and a Monte-Carlo
prediction. Two execution contexts (socket receiver and inference worker)
are joined by a bounded queue that drops the OLDEST pending frame under
backpressure; fresh poses matter more than stale ones.
"""

import json
import logging
import queue
import socket
import sys
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .calibration import CalibrationState, mean_pressure, mean_rotation
from .codecs import ArmPose, decode_batch
from .emulator import synth_session
from .errors import MalformedPacketError, TransportError
from .frames import SEQUENCE_LENGTH, pack_features
from .inference import ModeConfig, PoseDistribution, PoseMode, mc_masks, summarize
from .wire import decode_packet, packetize

_log = logging.getLogger(__name__)

PHASE_PRESSURE = "AwaitPressureCal"
PHASE_ROTATION = "AwaitRotationCal"
PHASE_RUNNING = "Running"


@dataclass(frozen=True)
class ServeConfig:
    n_passes: int = 150
    master_seed: int = 0
    cal_window_s: float = 3.0
    l_u: float = 0.30
    l_l: float = 0.25
    mode_config: ModeConfig = field(default_factory=ModeConfig)
    queue_capacity: int = 8
    dtype: str = "float32"
    include_samples: bool = False

    def __post_init__(self):
        if self.n_passes < 1:
            raise ValueError("n_passes must be at least 1")


class SessionTracker:
    """Packet-timestamp phase machine plus the rolling feature window."""

    def __init__(self, config):
        self.config = config
        self.phase = PHASE_PRESSURE
        self.calibration = None
        self.last_seq = None
        self.out_of_order = 0
        self.transitions = {}
        self._pressures = []
        self._thetas = []
        self._ring = deque(maxlen=SEQUENCE_LENGTH)

    def ingest(self, packet):
        """Returns (seq, t, feature) for running-phase frames, else None."""
        if self.last_seq is not None and packet.seq <= self.last_seq:
            self.out_of_order += 1
            return None
        self.last_seq = packet.seq
        cal_ms = self.config.cal_window_s * 1000.0
        t = packet.t
        if self.phase == PHASE_PRESSURE and t >= cal_ms:
            self._finish_pressure(t)
        if self.phase == PHASE_ROTATION and t >= 2.0 * cal_ms:
            self._finish_rotation(t)
        if self.phase == PHASE_PRESSURE:
            self._pressures.append(float(packet.values[13]))
            return None
        if self.phase == PHASE_ROTATION:
            self._thetas.append(packet.values[0:4])
            return None
        feature = self._feature(packet)
        self._ring.append((t, feature))
        return packet.seq, t, feature

    def _finish_pressure(self, t):
        self.calibration_rho = mean_pressure(self._pressures)
        self._pressures = []
        self.phase = PHASE_ROTATION
        self.transitions[PHASE_ROTATION] = t
        _log.info("pressure calibration done (rho_c=%.3f hPa) at t=%.0f ms",
                  self.calibration_rho, t)

    def _finish_rotation(self, t):
        theta_c = mean_rotation(np.stack(self._thetas))
        self._thetas = []
        self.calibration = CalibrationState(
            rho_c=self.calibration_rho, theta_c=theta_c, captured_at=t
        )
        self.phase = PHASE_RUNNING
        self.transitions[PHASE_RUNNING] = t
        _log.info("rotation calibration done at t=%.0f ms; running", t)

    def _feature(self, packet):
        return pack_features(
            packet.to_frame(), self.calibration, self.config.l_l, self.config.l_u
        )

    def window(self):
        """The last 6 features as a (6, 17) model window, or None while warm."""
        if len(self._ring) < SEQUENCE_LENGTH:
            return None
        times = np.array([t for t, _ in self._ring])
        feats = np.stack([f for _, f in self._ring])
        dt = np.diff(times, prepend=times[0]) / 1000.0
        return np.concatenate([feats, dt[:, None]], axis=1)


class InferenceEngine:
    """Monte-Carlo predictions for running-phase frames, seeded per frame."""

    def __init__(self, model, config):
        self.model = model
        self.config = config
        self.net = model.network(config.dtype)
        self.codec = model.spec.codec
        self.recurrent = model.spec.arch == "recurrent"

    def predict(self, tracker, seq, t, feature):
        if self.recurrent:
            x = tracker.window()
            if x is None:
                return None  # warmup: fewer than 6 frames buffered
            steps = x.shape[0]
        else:
            x = feature
            steps = None
        cfg = self.config
        if cfg.n_passes == 1:
            masks = mc_masks(self.model.spec, 1, cfg.master_seed, (seq,),
                             steps=steps, dtype=self.net.params.dtype)
            raw = np.asarray(self.net.forward_mc(x, masks), dtype=np.float64)
            poses = decode_batch(self.codec, raw, cfg.l_u, cfg.l_l)
            return _single_pass_distribution(poses)
        masks = mc_masks(self.model.spec, cfg.n_passes, cfg.master_seed, (seq,),
                         steps=steps, dtype=self.net.params.dtype)
        raw = np.asarray(self.net.forward_mc(x, masks), dtype=np.float64)
        poses = decode_batch(self.codec, raw, cfg.l_u, cfg.l_l)
        return summarize(poses, cfg.mode_config)


def _single_pass_distribution(poses):
    mean = ArmPose(
        p_e=poses.p_e[0],
        p_w=poses.p_w[0],
        q_u=None if poses.q_u is None else poses.q_u[0],
        q_l=None if poses.q_l is None else poses.q_l[0],
    )
    mode = PoseMode(elbow=poses.p_e[0], wrist=poses.p_w[0], weight=1.0, count=1)
    return PoseDistribution(
        elbow_samples=poses.p_e,
        wrist_samples=poses.p_w,
        mean=mean,
        std_elbow=np.zeros(3),
        std_wrist=np.zeros(3),
        modes=(mode,),
    )


def pose_line(seq, t, dist, include_samples=False):
    doc = {"seq": int(seq), "t": float(t)}
    doc.update(dist.to_dict(include_samples=include_samples))
    return json.dumps(doc)


@dataclass
class ServeReport:
    frames_in: int = 0
    malformed: int = 0
    out_of_order: int = 0
    queue_drops: int = 0
    inferences: int = 0
    per_second: list = field(default_factory=list)
    latency_p50_ms: float = 0.0
    latency_p99_ms: float = 0.0
    latency_max_ms: float = 0.0
    transitions: dict = field(default_factory=dict)

    def sustained_rate_hz(self):
        """Mean inference rate over the measured seconds (edges dropped)."""
        inner = self.per_second[1:-1] if len(self.per_second) > 2 else self.per_second
        return float(np.mean(inner)) if inner else 0.0


def replay_run(datagrams, model, config=ServeConfig(), out=None):
    """Deterministic single-threaded serve over recorded datagrams.

    Runs the same phase machine and engine as the live server, minus
    sockets, clock and backpressure. Returns (pose JSON lines, report).
    """
    tracker = SessionTracker(config)
    engine = InferenceEngine(model, config)
    report = ServeReport()
    lines = []
    for data in datagrams:
        try:
            packet = decode_packet(data)
        except MalformedPacketError:
            report.malformed += 1
            continue
        report.frames_in += 1
        item = tracker.ingest(packet)
        if item is None:
            continue
        dist = engine.predict(tracker, *item)
        if dist is None:
            continue
        line = pose_line(item[0], item[1], dist, config.include_samples)
        lines.append(line)
        if out is not None:
            out.write(line + "\n")
    report.out_of_order = tracker.out_of_order
    report.inferences = len(lines)
    report.transitions = dict(tracker.transitions)
    return lines, report


class PoseServer:
    """Receiver thread + inference worker joined by a bounded drop-oldest queue."""

    def __init__(self, bind, model, config=ServeConfig(), out=None):
        self.config = config
        self.out = out if out is not None else sys.stdout
        self.tracker = SessionTracker(config)
        self.engine = InferenceEngine(model, config)
        self.queue = queue.Queue(maxsize=config.queue_capacity)
        self.report = ServeReport()
        self._lock = threading.Lock()
        self._stop = threading.Event()
        self._latencies = []
        self._t0 = None
        try:
            self.sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
            self.sock.bind(bind)
            self.sock.settimeout(0.1)
        except OSError as exc:
            raise TransportError(f"cannot bind {bind}: {exc}") from exc
        self.address = self.sock.getsockname()

    def run(self, duration_s=None, stop_event=None):
        worker = threading.Thread(target=self._worker, name="armpose-infer", daemon=True)
        worker.start()
        self._t0 = time.perf_counter()
        deadline = None if duration_s is None else self._t0 + duration_s
        last_log = self._t0
        try:
            while not self._stop.is_set():
                now = time.perf_counter()
                if deadline is not None and now >= deadline:
                    break
                if stop_event is not None and stop_event.is_set():
                    break
                if now - last_log >= 1.0:
                    self._log_metrics()
                    last_log = now
                try:
                    data, _ = self.sock.recvfrom(2048)
                except socket.timeout:
                    continue
                self._on_datagram(data, time.perf_counter())
        finally:
            self._stop.set()
            worker.join(timeout=5.0)
            self.sock.close()
        return self._finalize()

    def _on_datagram(self, data, stamp):
        try:
            packet = decode_packet(data)
        except MalformedPacketError:
            with self._lock:
                self.report.malformed += 1
            return
        with self._lock:
            self.report.frames_in += 1
        item = self.tracker.ingest(packet)
        if item is None:
            return
        entry = (item, stamp)
        try:
            self.queue.put_nowait(entry)
        except queue.Full:
            try:
                self.queue.get_nowait()  # drop the oldest pending frame
                with self._lock:
                    self.report.queue_drops += 1
            except queue.Empty:
                pass
            try:
                self.queue.put_nowait(entry)
            except queue.Full:
                with self._lock:
                    self.report.queue_drops += 1

    def _worker(self):
        while not (self._stop.is_set() and self.queue.empty()):
            try:
                (item, stamp) = self.queue.get(timeout=0.05)
            except queue.Empty:
                continue
            dist = self.engine.predict(self.tracker, *item)
            if dist is None:
                continue
            line = pose_line(item[0], item[1], dist, self.config.include_samples)
            self.out.write(line + "\n")
            now = time.perf_counter()
            with self._lock:
                self.report.inferences += 1
                self._latencies.append((now - stamp) * 1000.0)
                second = int(now - self._t0)
                while len(self.report.per_second) <= second:
                    self.report.per_second.append(0)
                self.report.per_second[second] += 1

    def _log_metrics(self):
        with self._lock:
            _log.info(
                "frames=%d inferences=%d drops=%d malformed=%d out_of_order=%d",
                self.report.frames_in, self.report.inferences,
                self.report.queue_drops, self.report.malformed,
                self.tracker.out_of_order,
            )

    def _finalize(self):
        with self._lock:
            self.report.out_of_order = self.tracker.out_of_order
            self.report.transitions = dict(self.tracker.transitions)
            if self._latencies:
                lat = np.asarray(self._latencies)
                self.report.latency_p50_ms = float(np.percentile(lat, 50))
                self.report.latency_p99_ms = float(np.percentile(lat, 99))
                self.report.latency_max_ms = float(lat.max())
            return self.report


def serve_run(bind, model, config=ServeConfig(), duration_s=None, out=None,
              replay=None, ready=None, stop_event=None):
    """Run the inference server.

    With `replay` (an iterable of datagrams) the pipeline runs synchronously
    and deterministically; otherwise a UDP socket is bound at `bind` and the
    server runs for `duration_s` seconds (or until `stop_event`).
    """
    if replay is not None:
        _, report = replay_run(replay, model, config, out=out)
        return report
    server = PoseServer(bind, model, config, out=out)
    if ready is not None:
        ready.set()
    return server.run(duration_s=duration_s, stop_event=stop_event)


@dataclass
class EmulatorReport:
    packets_sent: int
    duration_s: float
    jitter_p50_ms: float
    jitter_p99_ms: float
    jitter_max_ms: float
    target: tuple


def emulator_run(cfg, target, pace=True, sock=None):
    """Generate a session live and stream it at the sensor rate.

    Packets are paced against the frame timestamps; the report carries the
    send-time jitter statistics. `pace=False` blasts the capture as fast as
    possible (useful for loss/backpressure tests).
    """
    sensors, _ = synth_session(cfg)
    packets = packetize(sensors)
    own_sock = sock is None
    if own_sock:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    jitter = []
    t0 = time.perf_counter()
    try:
        for frame, payload in zip(sensors, packets):
            if pace:
                deadline = t0 + frame.t / 1000.0
                delay = deadline - time.perf_counter()
                if delay > 0:
                    time.sleep(delay)
                jitter.append(max(0.0, (time.perf_counter() - deadline) * 1000.0))
            try:
                sock.sendto(payload, target)
            except OSError as exc:
                raise TransportError(f"cannot send to {target}: {exc}") from exc
    finally:
        if own_sock:
            sock.close()
    lat = np.asarray(jitter) if jitter else np.zeros(1)
    return EmulatorReport(
        packets_sent=len(packets),
        duration_s=time.perf_counter() - t0,
        jitter_p50_ms=float(np.percentile(lat, 50)),
        jitter_p99_ms=float(np.percentile(lat, 99)),
        jitter_max_ms=float(lat.max()),
        target=tuple(target),
    )


def capture_packets(cfg):
    """The emulator's datagrams without any network: for replay files."""
    sensors, _ = synth_session(cfg)
    return packetize(sensors)
