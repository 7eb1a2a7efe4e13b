"""Interactive control service.

One TCP port speaks two protocols: newline-delimited JSON control
messages (one session per connection), plus one-shot HTTP GETs for
/healthz and /clips. The policy runs in deterministic mean-action mode;
trajectory and mask edits land on frame boundaries only.
"""
import asyncio
import itertools
import json
from collections import deque

import numpy as np

from .envs import VecEnv, clip_kinematics
from .errors import DataError, StrideLabError
from .ppo import style_reward
from .tasks import (
    MIN_PATH_LENGTH_M,
    NUM_JOINTS,
    Termination,
    Trajectory,
    align_clip_to_trajectory,
    mask_plan_for_window,
    total_reward,
)
from .terrain import TERRAIN_KINDS, generate_terrain, load_terrain

BACKPRESSURE_LIMIT = 90  # frames queued before oldest-first dropping

_session_ids = itertools.count(1)


class ProtocolError(Exception):
    def __init__(self, code, detail):
        super().__init__(detail)
        self.code = code
        self.detail = detail


class Session:
    """One interactive rollout; all mutation happens between frames."""

    def __init__(self, server, terrain, early_termination=True):
        self.id = f"s{next(_session_ids)}"
        self.server = server
        self.env = VecEnv(
            server.skel, [terrain], num_envs=1, seed=0, auto_reset=False,
            early_termination=early_termination,
        )
        self.has_trajectory = False
        self.running = False
        self.terminated = False
        self.cause = None
        self.play_task = None
        self.lock = asyncio.Lock()

    @property
    def frame_index(self):
        return int(self.env.frames[0])

    def set_trajectory(self, points):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
            raise ProtocolError("schema", "points must be an Nx2 array, N >= 2")
        traj = Trajectory(points=pts)
        if traj.length < MIN_PATH_LENGTH_M:
            raise ProtocolError(
                "trajectory_too_short",
                f"path length {traj.length:.2f} m is under {MIN_PATH_LENGTH_M} m",
            )
        self.env.set_scenario(0, traj, terrain_index=0)
        self.has_trajectory = True
        self.terminated = False
        self.cause = None

    def set_mask(self, clip_id, t_start_s, t_end_s, group=None, joints=None):
        if not self.has_trajectory:
            raise ProtocolError("schema", "set_trajectory must come first")
        try:
            clip = self.server.clip_lib.get(clip_id)
        except DataError:
            raise ProtocolError("unknown_clip", f"no clip named {clip_id!r}")
        asset = self.env.assets[0]
        traj = asset.traj
        t_start = int(round(t_start_s * 30))
        t_end = int(round(t_end_s * 30))
        if not 0 <= t_start < t_end:
            raise ProtocolError("schema", "need 0 <= t_start_s < t_end_s")
        if t_start >= traj.num_frames:
            raise ProtocolError("schema", "mask starts after the trajectory ends")
        horizon = max(traj.num_frames, self.env.ep_cfg.episode_length)
        n_fit = min(clip.num_frames, horizon - t_start)
        if n_fit < 2 or t_end - t_start > n_fit:
            raise ProtocolError(
                "schema", "mask window does not fit the clip and episode"
            )
        try:
            plan = mask_plan_for_window(
                self.server.skel, n_fit, group or "WHOLE", 0, t_end - t_start,
                joints=joints,
            )
        except (DataError, KeyError) as e:
            raise ProtocolError("schema", str(e))
        align_target = traj
        overhang = t_start + n_fit - traj.num_frames
        if overhang > 0:
            # the window may outlive the drawn path; alignment only reads
            # the anchor frame, so pad the polyline with its endpoint
            pts = np.vstack([traj.points,
                             np.repeat(traj.points[-1:], overhang, axis=0)])
            align_target = Trajectory(points=pts)
        aligned = align_clip_to_trajectory(_trim(clip, n_fit), align_target, t_start)
        mask = np.zeros((horizon, NUM_JOINTS))
        mask[t_start : t_start + n_fit] = plan.mask
        asset.mask = mask
        asset.clip = aligned
        asset.t_start = t_start
        asset.kin = clip_kinematics(self.server.skel, aligned)

    def clear_mask(self):
        asset = self.env.assets[0]
        asset.mask = np.zeros_like(asset.mask)
        asset.clip = None
        asset.kin = None

    def reset(self):
        if not self.has_trajectory:
            raise ProtocolError("schema", "no trajectory to reset to")
        asset = self.env.assets[0]
        self.env.set_scenario(
            0, asset.traj, terrain_index=0, mask=asset.mask,
            clip=asset.clip, t_start=asset.t_start,
        )
        self.terminated = False
        self.cause = None

    def step_frame(self):
        """Advance one control step; returns the frame message dict."""
        if not self.has_trajectory:
            raise ProtocolError("schema", "no trajectory set")
        if self.terminated:
            raise ProtocolError("terminated", f"episode over ({self.cause})")
        env = self.env
        obs, _ = env.observe()
        action = self.server.policy.mean_action(obs.astype(np.float32))
        rewards, dones, infos, pairs = env.step(np.asarray(action, dtype=float))
        r_amp = 0.0
        if self.server.disc is not None:
            r_amp = float(style_reward(self.server.disc, pairs.astype(np.float32))[0])
        r_traj = float(rewards["traj"][0])
        r_motion = float(rewards["motion"][0])
        pos, quat = env._fk
        f = self.frame_index
        asset = env.assets[0]
        mask_row = (
            asset.mask[f] if f < len(asset.mask) else np.zeros(NUM_JOINTS)
        )
        msg = {
            "type": "frame",
            "t": f,
            "root": {
                "pos": env.state.root_pos[0].tolist(),
                "yaw": float(env.state.root_yaw[0]),
            },
            "joint_world_positions": pos[0].tolist(),
            "joint_rotations": env.state.joint_rot[0].tolist(),
            "rewards": {
                "traj": r_traj,
                "motion": r_motion,
                "amp": r_amp,
                "total": float(total_reward(r_amp, r_traj, r_motion)),
            },
            "mask_active": [bool(x) for x in mask_row],
        }
        if dones[0]:
            self.terminated = True
            self.cause = infos["causes"][0].value
            msg["terminated"] = True
            msg["cause"] = self.cause
        return msg


def _trim(clip, n):
    if n >= clip.num_frames:
        return clip
    c = clip.copy()
    c.root_pos = c.root_pos[:n]
    c.root_yaw = c.root_yaw[:n]
    c.joint_rot = c.joint_rot[:n]
    return c


class ControlServer:
    def __init__(self, policy, skel, clip_lib, disc=None, max_sessions=64):
        self.policy = policy
        self.skel = skel
        self.clip_lib = clip_lib
        self.disc = disc
        self.max_sessions = max_sessions
        self.sessions = {}
        self._server = None

    def clip_manifest(self):
        return [
            {"id": cid, "frames": clip.num_frames, "fps": clip.fps,
             "style": self.clip_lib.tags.get(cid, {}).get("style")}
            for cid, clip in sorted(self.clip_lib.clips.items())
        ]

    async def serve(self, host, port):
        self._server = await asyncio.start_server(self._on_connection, host, port)
        async with self._server:
            await self._server.serve_forever()

    async def start(self, host, port):
        """Non-blocking variant for tests; returns the bound port."""
        self._server = await asyncio.start_server(self._on_connection, host, port)
        return self._server.sockets[0].getsockname()[1]

    async def stop(self):
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def _on_connection(self, reader, writer):
        try:
            first = await reader.readline()
        except ConnectionError:
            writer.close()
            return
        if first.startswith(b"GET "):
            await self._serve_http(first, reader, writer)
            return
        conn = _Connection(self, reader, writer)
        await conn.run(first)

    async def _serve_http(self, request_line, reader, writer):
        path = request_line.split()[1].decode()
        while True:  # drain headers
            line = await reader.readline()
            if line in (b"\r\n", b"\n", b""):
                break
        if path == "/healthz":
            body = "ok"
            ctype = "text/plain"
        elif path == "/clips":
            body = json.dumps({"clips": self.clip_manifest()})
            ctype = "application/json"
        else:
            writer.write(b"HTTP/1.0 404 Not Found\r\n\r\n")
            await writer.drain()
            writer.close()
            return
        payload = body.encode()
        writer.write(
            b"HTTP/1.0 200 OK\r\nContent-Type: " + ctype.encode()
            + b"\r\nContent-Length: " + str(len(payload)).encode()
            + b"\r\n\r\n" + payload
        )
        await writer.drain()
        writer.close()


class _Connection:
    """One client connection = at most one session, strictly serialized."""

    def __init__(self, server, reader, writer):
        self.server = server
        self.reader = reader
        self.writer = writer
        self.session = None
        self.queue = deque()
        self.send_event = asyncio.Event()
        self.sender = asyncio.create_task(self._sender())
        self.closed = False

    def send(self, msg):
        self.queue.append(msg)
        if len(self.queue) > BACKPRESSURE_LIMIT:
            # Shed oldest frames only; control replies (acks, errors) are
            # never dropped, and prior drop counts accumulate.
            dropped = 0
            kept = deque()
            while self.queue:
                old = self.queue.popleft()
                if old.get("type") == "dropped":
                    dropped += old["count"]
                elif (old.get("type") == "frame"
                      and len(self.queue) + len(kept) >= BACKPRESSURE_LIMIT):
                    dropped += 1
                else:
                    kept.append(old)
            if dropped:
                kept.appendleft({"type": "dropped", "count": dropped})
            self.queue = kept
        self.send_event.set()

    async def _sender(self):
        try:
            while True:
                await self.send_event.wait()
                self.send_event.clear()
                while self.queue:
                    msg = self.queue.popleft()
                    self.writer.write(json.dumps(msg).encode() + b"\n")
                    await self.writer.drain()
                if self.closed and not self.queue:
                    break
        except (ConnectionError, asyncio.CancelledError):
            pass

    async def run(self, first_line):
        line = first_line
        try:
            while line:
                line = line.strip()
                if line:
                    await self._handle_line(line)
                line = await self.reader.readline()
        except ConnectionError:
            pass
        finally:
            await self._teardown()

    async def _teardown(self):
        if self.session is not None:
            if self.session.play_task is not None:
                self.session.play_task.cancel()
            self.server.sessions.pop(self.session.id, None)
            self.session = None
        self.closed = True
        self.send_event.set()
        try:
            await asyncio.wait_for(self.sender, timeout=2.0)
        except (asyncio.TimeoutError, asyncio.CancelledError):
            self.sender.cancel()
        try:
            self.writer.close()
            await self.writer.wait_closed()
        except ConnectionError:
            pass

    async def _handle_line(self, line):
        try:
            msg = json.loads(line.decode())
        except (json.JSONDecodeError, UnicodeDecodeError) as e:
            self.send({"type": "error", "code": "schema", "detail": str(e)})
            return
        if not isinstance(msg, dict) or "type" not in msg:
            self.send({"type": "error", "code": "schema",
                       "detail": "message must be an object with a type"})
            return
        seq = msg.get("seq")
        try:
            await self._dispatch(msg, seq)
        except ProtocolError as e:
            self.send({"type": "error", "code": e.code, "detail": e.detail,
                       "seq": seq})
        except StrideLabError as e:
            self.send({"type": "error", "code": "schema", "detail": str(e),
                       "seq": seq})

    async def _dispatch(self, msg, seq):
        mtype = msg["type"]
        if mtype == "create_session":
            if self.session is not None:
                raise ProtocolError("schema", "session already created")
            if len(self.server.sessions) >= self.server.max_sessions:
                raise ProtocolError("schema", "session limit reached")
            terrain = self._resolve_terrain(msg)
            self.session = Session(
                self.server, terrain,
                early_termination=msg.get("early_termination", True),
            )
            self.server.sessions[self.session.id] = self.session
            self.send({"type": "session_created", "id": self.session.id,
                       "seq": seq})
            return
        if mtype == "list_clips":
            self.send({"type": "clips", "clips": self.server.clip_manifest(),
                       "seq": seq})
            return
        s = self.session
        if s is None:
            raise ProtocolError("schema", "create_session first")
        async with s.lock:
            if mtype == "set_trajectory":
                s.set_trajectory(msg.get("points", []))
                self.send({"type": "ack", "seq": seq})
            elif mtype == "set_mask":
                for key in ("clip_id", "t_start_s", "t_end_s"):
                    if key not in msg:
                        raise ProtocolError("schema", f"set_mask needs {key!r}")
                s.set_mask(msg["clip_id"], msg["t_start_s"], msg["t_end_s"],
                           group=msg.get("group"), joints=msg.get("joints"))
                self.send({"type": "ack", "seq": seq})
            elif mtype == "clear_mask":
                s.clear_mask()
                self.send({"type": "ack", "seq": seq})
            elif mtype == "reset":
                s.reset()
                self.send({"type": "ack", "seq": seq})
            elif mtype == "step":
                n = msg.get("n", 1)
                if not isinstance(n, int) or n < 1:
                    raise ProtocolError("schema", "step n must be a positive integer")
                if not s.has_trajectory:
                    raise ProtocolError("schema", "no trajectory set")
                if s.terminated:
                    raise ProtocolError("terminated", f"episode over ({s.cause})")
                self.send({"type": "ack", "seq": seq})
                for _ in range(n):
                    frame = s.step_frame()
                    self.send(frame)
                    if frame.get("terminated"):
                        break
                    await asyncio.sleep(0)
            elif mtype == "play":
                if not s.running:
                    s.running = True
                    s.play_task = asyncio.create_task(self._play_loop(s))
                self.send({"type": "ack", "seq": seq})
            elif mtype == "pause":
                s.running = False
                if s.play_task is not None:
                    s.play_task.cancel()
                    s.play_task = None
                self.send({"type": "ack", "seq": seq})
            elif mtype == "close":
                self.send({"type": "ack", "seq": seq})
                self.closed = True
                self.send_event.set()
            else:
                raise ProtocolError("schema", f"unknown message type {mtype!r}")

    def _resolve_terrain(self, msg):
        if "terrain_file" in msg:
            try:
                return load_terrain(msg["terrain_file"])
            except (OSError, StrideLabError) as e:
                raise ProtocolError("schema", f"terrain_file: {e}")
        kind = msg.get("terrain_kind", "flat")
        if kind not in TERRAIN_KINDS:
            raise ProtocolError("schema", f"unknown terrain kind {kind!r}")
        return generate_terrain(kind, {}, seed=msg.get("terrain_seed", 0))

    async def _play_loop(self, s):
        try:
            while s.running:
                t0 = asyncio.get_event_loop().time()
                async with s.lock:
                    if not s.running:
                        break
                    try:
                        frame = s.step_frame()
                    except ProtocolError as e:
                        self.send({"type": "error", "code": e.code,
                                   "detail": e.detail})
                        s.running = False
                        break
                    self.send(frame)
                    if frame.get("terminated"):
                        s.running = False
                        break
                dt = 1.0 / 30.0 - (asyncio.get_event_loop().time() - t0)
                await asyncio.sleep(max(dt, 0.0))
        except asyncio.CancelledError:
            pass
