"""Interactive control service: protocol behavior over a real socket."""
import asyncio
import json

import pytest

from stridelab import training
from stridelab.motion import make_library
from stridelab.ppo import TrainConfig
from stridelab.service import BACKPRESSURE_LIMIT, ControlServer, _Connection
from stridelab.skeleton import default_skeleton


@pytest.fixture(scope="module")
def server_parts():
    state = training.TrainerState.fresh(TrainConfig(hidden=(32, 32), seed=0))
    lib = make_library(seed=0, n_style=2, n_tracking=3, duration_s=4.0)
    return state, default_skeleton(), lib


def straight_points(length_m, speed=1.0):
    """Per-frame trajectory samples at 30 Hz, straight along +x."""
    n = int(round(length_m * 30 / speed)) + 1
    return [[i * speed / 30.0, 0.0] for i in range(n)]


class Client:
    """Line-oriented JSON client with a monotone request counter."""

    def __init__(self, reader, writer):
        self.reader = reader
        self.writer = writer
        self.seq = 0

    async def send(self, msg):
        self.seq += 1
        msg = {**msg, "seq": self.seq}
        self.writer.write(json.dumps(msg).encode() + b"\n")
        await self.writer.drain()
        return self.seq

    async def recv(self, timeout=5.0):
        line = await asyncio.wait_for(self.reader.readline(), timeout)
        assert line, "connection closed unexpectedly"
        return json.loads(line.decode())

    async def recv_until(self, mtype, timeout=5.0):
        while True:
            msg = await self.recv(timeout)
            if msg["type"] == mtype:
                return msg

    async def close(self):
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except ConnectionError:
            pass


def run_session(server_parts, scenario, **server_kw):
    """Start a server on an ephemeral port, run the scenario coroutine."""
    state, skel, lib = server_parts

    async def main():
        server = ControlServer(state.policy, skel, lib, disc=state.disc,
                               **server_kw)
        port = await server.start("127.0.0.1", 0)
        try:
            return await scenario(server, port)
        finally:
            await server.stop()

    return asyncio.run(main())


async def connect(port):
    reader, writer = await asyncio.open_connection("127.0.0.1", port)
    return Client(reader, writer)


async def make_session(port, **opts):
    c = await connect(port)
    seq = await c.send({"type": "create_session", **opts})
    created = await c.recv()
    assert created["type"] == "session_created", created
    assert created["seq"] == seq
    return c


class TestSessionLifecycle:
    def test_create_and_close(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            assert len(server.sessions) == 1
            await c.send({"type": "close"})
            ack = await c.recv()
            assert ack["type"] == "ack"
            await c.close()

        run_session(server_parts, scenario)

    def test_sessions_get_distinct_ids(self, server_parts):
        async def scenario(server, port):
            a = await connect(port)
            b = await connect(port)
            await a.send({"type": "create_session"})
            await b.send({"type": "create_session"})
            ra = await a.recv()
            rb = await b.recv()
            assert ra["id"] != rb["id"]
            assert len(server.sessions) == 2
            await a.close()
            await b.close()

        run_session(server_parts, scenario)

    def test_commands_require_session(self, server_parts):
        async def scenario(server, port):
            c = await connect(port)
            await c.send({"type": "step"})
            err = await c.recv()
            assert err["type"] == "error"
            assert err["code"] == "schema"
            await c.close()

        run_session(server_parts, scenario)

    def test_session_limit(self, server_parts):
        async def scenario(server, port):
            a = await make_session(port)
            b = await connect(port)
            await b.send({"type": "create_session"})
            err = await b.recv()
            assert err["type"] == "error"
            await a.close()
            await b.close()

        run_session(server_parts, scenario, max_sessions=1)

    def test_unknown_terrain_kind(self, server_parts):
        async def scenario(server, port):
            c = await connect(port)
            await c.send({"type": "create_session", "terrain_kind": "lava"})
            err = await c.recv()
            assert err["code"] == "schema"
            await c.close()

        run_session(server_parts, scenario)


class TestStepping:
    def test_step_n_yields_ordered_frames(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(8.0)})
            assert (await c.recv())["type"] == "ack"
            seq = await c.send({"type": "step", "n": 5})
            ack = await c.recv()
            assert ack["type"] == "ack" and ack["seq"] == seq
            ts = []
            for _ in range(5):
                frame = await c.recv()
                assert frame["type"] == "frame"
                ts.append(frame["t"])
                assert len(frame["joint_world_positions"]) == 15
                assert len(frame["joint_rotations"]) == 14
                assert len(frame["mask_active"]) == 15
                assert set(frame["rewards"]) == {"traj", "motion", "amp", "total"}
            assert ts == [1, 2, 3, 4, 5]
            await c.close()

        run_session(server_parts, scenario)

    def test_step_before_trajectory_fails(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "step"})
            err = await c.recv()
            assert err["code"] == "schema"
            await c.close()

        run_session(server_parts, scenario)

    def test_reset_restarts_frames(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(8.0)})
            await c.recv()
            await c.send({"type": "step", "n": 3})
            await c.recv()  # ack
            for _ in range(3):
                await c.recv()
            await c.send({"type": "reset"})
            assert (await c.recv())["type"] == "ack"
            await c.send({"type": "step"})
            await c.recv()  # ack
            frame = await c.recv()
            assert frame["t"] == 1
            await c.close()

        run_session(server_parts, scenario)

    def test_termination_reported_then_refused(self, server_parts):
        async def scenario(server, port):
            # untrained policy on a long trajectory terminates quickly
            c = await make_session(port)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(10.0)})
            await c.recv()
            await c.send({"type": "step", "n": 400})
            await c.recv()  # ack
            last = None
            while True:
                msg = await c.recv()
                if msg["type"] == "frame":
                    last = msg
                    if msg.get("terminated"):
                        break
            assert last["cause"] in ("trajectory_deviation", "episode_end",
                                     "tracking_failure")
            await c.send({"type": "step"})
            err = await c.recv()
            assert err["type"] == "error" and err["code"] == "terminated"
            await c.close()

        run_session(server_parts, scenario)

    def test_play_pause(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port, early_termination=False)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(8.0)})
            await c.recv()
            await c.send({"type": "play"})
            assert (await c.recv())["type"] == "ack"
            frames = []
            for _ in range(3):
                frames.append(await c.recv_until("frame"))
            await c.send({"type": "pause"})
            await c.recv_until("ack")
            assert [f["t"] for f in frames] == sorted(f["t"] for f in frames)
            # after pause, stepping resumes from where playback stopped
            await c.send({"type": "step"})
            await c.recv_until("ack")
            frame = await c.recv_until("frame")
            assert frame["t"] > frames[-1]["t"]
            await c.close()

        run_session(server_parts, scenario)


class TestMasks:
    def test_mask_window_frames(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port, early_termination=False)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(5.0)})
            await c.recv()
            await c.send({"type": "set_mask", "clip_id": "track_001_wave",
                          "t_start_s": 1.0, "t_end_s": 3.0, "group": "UPPER"})
            assert (await c.recv())["type"] == "ack"
            await c.send({"type": "step", "n": 100})
            await c.recv()  # ack
            active = {}
            for _ in range(100):
                f = await c.recv_until("frame")
                active[f["t"]] = any(f["mask_active"])
            assert not active[29]
            assert active[30] and active[89]
            assert not active[90]
            await c.close()

        run_session(server_parts, scenario)

    def test_mask_clip_may_overhang_trajectory_end(self, server_parts):
        # 8 m at 1 m/s ends at frame 240; a 4-s clip starting at 4.5 s
        # overhangs the drawn path yet stays active until the episode ends
        async def scenario(server, port):
            c = await make_session(port, early_termination=False)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(8.0)})
            await c.recv()
            await c.send({"type": "set_mask", "clip_id": "track_001_wave",
                          "t_start_s": 4.5, "t_end_s": 8.0, "group": "UPPER"})
            assert (await c.recv())["type"] == "ack"
            await c.send({"type": "step", "n": 240})
            await c.recv()  # ack
            active = {}
            last = None
            for _ in range(240):
                last = await c.recv_until("frame")
                active[last["t"]] = any(last["mask_active"])
            assert not active[134]
            assert active[135] and active[239]
            assert last["terminated"] and last["cause"] == "episode_end"
            await c.close()

        run_session(server_parts, scenario)

    def test_unknown_clip(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(5.0)})
            await c.recv()
            await c.send({"type": "set_mask", "clip_id": "nope",
                          "t_start_s": 0.0, "t_end_s": 2.0})
            err = await c.recv()
            assert err["code"] == "unknown_clip"
            await c.close()

        run_session(server_parts, scenario)

    def test_mask_requires_trajectory(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "set_mask", "clip_id": "track_001_wave",
                          "t_start_s": 0.0, "t_end_s": 2.0})
            err = await c.recv()
            assert err["code"] == "schema"
            await c.close()

        run_session(server_parts, scenario)

    def test_clear_mask(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port, early_termination=False)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(5.0)})
            await c.recv()
            await c.send({"type": "set_mask", "clip_id": "track_001_wave",
                          "t_start_s": 0.0, "t_end_s": 2.0, "group": "UPPER"})
            await c.recv()
            await c.send({"type": "clear_mask"})
            await c.recv()
            await c.send({"type": "step", "n": 3})
            await c.recv()
            for _ in range(3):
                f = await c.recv_until("frame")
                assert not any(f["mask_active"])
            await c.close()

        run_session(server_parts, scenario)


class TestErrors:
    def test_trajectory_too_short(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "set_trajectory",
                          "points": straight_points(2.0)})
            err = await c.recv()
            assert err["code"] == "trajectory_too_short"
            await c.close()

        run_session(server_parts, scenario)

    def test_malformed_json(self, server_parts):
        async def scenario(server, port):
            c = await connect(port)
            c.writer.write(b"{broken\n")
            await c.writer.drain()
            err = await c.recv()
            assert err["type"] == "error" and err["code"] == "schema"
            await c.close()

        run_session(server_parts, scenario)

    def test_unknown_message_type(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "teleport"})
            err = await c.recv()
            assert err["code"] == "schema"
            await c.close()

        run_session(server_parts, scenario)

    def test_bad_points_shape(self, server_parts):
        async def scenario(server, port):
            c = await make_session(port)
            await c.send({"type": "set_trajectory", "points": [[1, 2, 3]]})
            err = await c.recv()
            assert err["code"] == "schema"
            await c.close()

        run_session(server_parts, scenario)


class TestHttp:
    async def _get(self, port, path):
        reader, writer = await asyncio.open_connection("127.0.0.1", port)
        writer.write(f"GET {path} HTTP/1.0\r\n\r\n".encode())
        await writer.drain()
        raw = await asyncio.wait_for(reader.read(), 5.0)
        writer.close()
        head, _, body = raw.partition(b"\r\n\r\n")
        return head.split(b"\r\n")[0].decode(), body.decode()

    def test_healthz(self, server_parts):
        async def scenario(server, port):
            status, body = await self._get(port, "/healthz")
            assert "200" in status
            assert body == "ok"

        run_session(server_parts, scenario)

    def test_clips(self, server_parts):
        async def scenario(server, port):
            status, body = await self._get(port, "/clips")
            assert "200" in status
            clips = json.loads(body)["clips"]
            assert {c["id"] for c in clips} == set(server.clip_lib.clips)
            for c in clips:
                assert c["frames"] > 0 and c["fps"] == 30.0

        run_session(server_parts, scenario)

    def test_unknown_path_404(self, server_parts):
        async def scenario(server, port):
            status, _ = await self._get(port, "/nope")
            assert "404" in status

        run_session(server_parts, scenario)

    def test_list_clips_message(self, server_parts):
        async def scenario(server, port):
            c = await connect(port)
            await c.send({"type": "list_clips"})
            msg = await c.recv()
            assert msg["type"] == "clips"
            assert {x["id"] for x in msg["clips"]} == set(server.clip_lib.clips)
            await c.close()

        run_session(server_parts, scenario)


class TestBackpressure:
    def test_frames_shed_oldest_first(self):
        async def main():
            reader = asyncio.StreamReader()

            class NullWriter:
                def write(self, data):
                    pass

                async def drain(self):
                    await asyncio.sleep(3600)  # a stalled client

                def close(self):
                    pass

            conn = _Connection(None, reader, NullWriter())
            conn.sender.cancel()
            conn.send({"type": "ack", "seq": 1})
            for t in range(200):
                conn.send({"type": "frame", "t": t})
            q = list(conn.queue)
            assert len(q) <= BACKPRESSURE_LIMIT + 1
            assert q[0]["type"] == "dropped"
            kept_frames = [m for m in q if m["type"] == "frame"]
            assert q[0]["count"] + len(kept_frames) == 200
            # control replies survive shedding
            assert any(m["type"] == "ack" for m in q)
            # the newest frames are the ones kept
            assert kept_frames[-1]["t"] == 199

        asyncio.run(main())
