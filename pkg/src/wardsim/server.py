"""Interactive service layer: newline-delimited JSON over one TCP socket.

A single simulation thread owns all state and advances ticks at a configured
rate. Client connections are handled concurrently, but every state-affecting
command is funneled into the simulation's injection queue and applied at the
next tick boundary, so an interactive session stays a deterministic, fully
logged run. Pacing commands (pause, resume, step, set_rate) act on the serve
layer only and never touch simulation state.

Envelope, both directions: {"kind": ..., "seq": ..., "payload": {...}}.

Client to server kinds:
  hello    {"from_seq": n}   subscribe; server streams records with seq > n
  command  {"op": ..., "args": {...}}

Server to client kinds:
  hello    {"scenario", "seed", "now", "level", "last_seq", "state"}
  event    one EventRecord, in seq order, no gaps, no duplicates
  state    periodic immutable state summary
  ack      {"cmd_seq", "ok", "error", "data"}
  error    {"error": "malformed_command", "detail": ...}
"""
from __future__ import annotations

import json
import queue
import socket
import threading
import time

from .scenario import EVENT_KINDS
from .sim import Simulation

PACING_OPS = {"pause", "resume", "step", "set_rate", "state", "shutdown"}


def record_to_dict(rec) -> dict:
    return {"seq": rec.seq, "tick": rec.tick, "source": rec.source,
            "type": rec.type, "payload": rec.payload}


class _Client:
    def __init__(self, conn: socket.socket, addr) -> None:
        self.conn = conn
        self.addr = addr
        self.outq: queue.Queue = queue.Queue()
        self.cursor: int | None = None   # next record seq to stream; None until hello
        self.msg_seq = 0
        self.alive = True
        self.lock = threading.Lock()

    def send(self, kind: str, payload: dict) -> None:
        with self.lock:
            if not self.alive:
                return
            line = json.dumps({"kind": kind, "seq": self.msg_seq, "payload": payload},
                              separators=(",", ":")) + "\n"
            self.msg_seq += 1
            try:
                self.conn.sendall(line.encode())
            except OSError:
                self.alive = False

    def close(self) -> None:
        # plain close() keeps the fd open while reader makefile handles exist,
        # so the peer never sees EOF; shutdown() tears the connection down now
        self.alive = False
        try:
            self.conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        try:
            self.conn.close()
        except OSError:
            pass


class SimServer:
    def __init__(self, sim: Simulation, host: str = "127.0.0.1", port: int = 0,
                 rate: float = 50.0, state_every: int = 10,
                 log_path: str | None = None) -> None:
        self.sim = sim
        self.rate = rate
        self.state_every = state_every
        self.log_path = log_path
        self.paused = False
        self.step_budget = 0
        self.stop_event = threading.Event()
        self.clients: list[_Client] = []
        self.clients_lock = threading.Lock()
        self.last_state: dict = {}
        self.sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self.sock.bind((host, port))
        self.sock.listen(8)
        self.address = self.sock.getsockname()
        sim.tick_listeners.append(self._on_tick)

    # -------------------------------------------------------------- sim thread

    def _sim_loop(self) -> None:
        while not self.stop_event.is_set():
            if self.step_budget > 0:
                self.sim.tick()
                self.step_budget -= 1
            elif not self.paused:
                self.sim.tick()
                if self.rate > 0:
                    time.sleep(1.0 / self.rate)
            else:
                time.sleep(0.01)

    def _on_tick(self) -> None:
        self.last_state = self.sim.state_summary()
        if self.sim.clock.now % self.state_every == 0:
            with self.clients_lock:
                targets = [c for c in self.clients if c.cursor is not None]
            for client in targets:
                client.outq.put(("state", self.last_state))

    # ----------------------------------------------------------------- clients

    def _reader(self, client: _Client) -> None:
        buf = client.conn.makefile("r", encoding="utf-8")
        try:
            for line in buf:
                line = line.strip()
                if not line:
                    continue
                try:
                    msg = json.loads(line)
                    kind = msg["kind"]
                    payload = msg.get("payload") or {}
                except (ValueError, KeyError, TypeError) as exc:
                    client.outq.put(("error", {"error": "malformed_command",
                                               "detail": str(exc)}))
                    continue
                if kind == "hello":
                    from_seq = payload.get("from_seq", -1)
                    client.outq.put(("hello", {
                        "scenario": self.sim.scenario.name,
                        "seed": self.sim.scenario.seed,
                        "now": self.sim.clock.now,
                        "level": self.sim.isolation.level.name,
                        "last_seq": len(self.sim.log.records) - 1,
                        "state": self.last_state}))
                    client.cursor = int(from_seq) + 1
                elif kind == "command":
                    self._handle_command(client, msg.get("seq"), payload)
                else:
                    client.outq.put(("error", {"error": "malformed_command",
                                               "detail": f"unknown kind {kind!r}"}))
        except OSError:
            pass
        finally:
            client.alive = False

    def _handle_command(self, client: _Client, cmd_seq, payload: dict) -> None:
        op = payload.get("op")
        args = payload.get("args") or {}

        def ack(ok: bool, error: str | None = None, data=None) -> None:
            client.outq.put(("ack", {"cmd_seq": cmd_seq, "ok": ok,
                                     "error": error, "data": data}))

        if op in PACING_OPS:
            if op == "pause":
                self.paused = True
                ack(True, data="paused")
            elif op == "resume":
                self.paused = False
                ack(True, data="running")
            elif op == "step":
                n = int(args.get("ticks", 1))
                self.paused = True
                self.step_budget += n
                ack(True, data=f"stepping {n}")
            elif op == "set_rate":
                self.rate = float(args.get("ticks_per_second", 50.0))
                ack(True, data=self.rate)
            elif op == "state":
                ack(True, data=self.last_state)
            elif op == "shutdown":
                ack(True, data="stopping")
                self.stop_event.set()
            return
        if op not in EVENT_KINDS:
            client.outq.put(("error", {"error": "malformed_command",
                                       "detail": f"unknown op {op!r}"}))
            return

        def on_result(result) -> None:
            error = result.error if not result.ok else None
            data = result.data
            if not (data is None or isinstance(data, (bool, int, float, str))):
                data = str(data)
            ack(result.ok, "command_refused:" + error if error else None, data)

        self.sim.inject(op, args, on_result)

    def _writer(self, client: _Client) -> None:
        records = self.sim.log.records
        while client.alive and not self.stop_event.is_set():
            sent = False
            try:
                kind, payload = client.outq.get_nowait()
                client.send(kind, payload)
                sent = True
            except queue.Empty:
                pass
            if client.cursor is not None:
                # list append is atomic; len() gives a consistent high-water mark
                high = len(records)
                while client.cursor < high and client.alive:
                    client.send("event", record_to_dict(records[client.cursor]))
                    client.cursor += 1
                    sent = True
            if not sent:
                time.sleep(0.005)
        # drain queued envelopes (for example the shutdown ack) before closing
        while client.alive:
            try:
                kind, payload = client.outq.get_nowait()
            except queue.Empty:
                break
            client.send(kind, payload)
        client.close()

    # ------------------------------------------------------------------- serve

    def serve_forever(self) -> None:
        self.sim.start()
        self.last_state = self.sim.state_summary()
        sim_thread = threading.Thread(target=self._sim_loop, daemon=True)
        sim_thread.start()
        self.sock.settimeout(0.2)
        try:
            while not self.stop_event.is_set():
                try:
                    conn, addr = self.sock.accept()
                except socket.timeout:
                    continue
                except OSError:
                    break
                conn.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
                client = _Client(conn, addr)
                with self.clients_lock:
                    self.clients.append(client)
                threading.Thread(target=self._reader, args=(client,), daemon=True).start()
                threading.Thread(target=self._writer, args=(client,), daemon=True).start()
        finally:
            self.stop_event.set()
            sim_thread.join(timeout=5.0)
            time.sleep(0.05)  # let writers flush final acks
            with self.clients_lock:
                for client in self.clients:
                    client.close()
            self.sock.close()
            if self.log_path:
                self.sim.log.write_jsonl(self.log_path)

    def stop(self) -> None:
        self.stop_event.set()
