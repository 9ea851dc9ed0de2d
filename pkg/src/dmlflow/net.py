"""TCP transport for running one deployment group of a larger graph.

Each channel that crosses a group boundary gets its own socket. For a
given pair of groups the lexicographically lower group name listens on
its manifest endpoint and the higher name dials, regardless of which
way the data flows; the dialer opens with a 9-byte hello (magic,
protocol version, channel id) and the acceptor answers with its
version byte. After the handshake the channel's sender writes length-
prefixed frames and the receiver feeds them into its local engine.

Every socket carries exactly one channel and closes right after its
end-of-stream frame. A connection that drops before end-of-stream
raises ChannelBrokenError and cancels the whole run, because a silent
half-finished round would otherwise deadlock the peers.
"""

from __future__ import annotations

import socket
import struct
import threading
import time

from . import runtime, wire

HELLO = struct.Struct("<IBI")
MAGIC = 0x444D4C46


class NetError(Exception):
    pass


class ChannelBrokenError(NetError):
    pass


def _recv_exact(sock, n):
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ChannelBrokenError(
                f"connection closed after {len(buf)} of {n} bytes")
        buf.extend(chunk)
    return bytes(buf)


class _SocketTransport:
    """Maps outbound channels to their sockets; used by the engine."""

    def __init__(self):
        self.socks = {}
        self._locks = {}

    def attach(self, channel_id, sock):
        self.socks[channel_id] = sock
        self._locks[channel_id] = threading.Lock()

    def send(self, channel, msg):
        sock = self.socks.get(channel.channel_id)
        if sock is None:
            raise NetError(f"channel {channel.channel_id} has no socket")
        frame = wire.encode_frame(msg)
        with self._locks[channel.channel_id]:
            sock.sendall(frame)
        if msg.kind == wire.EOS:
            try:
                sock.shutdown(socket.SHUT_WR)
            except OSError:
                pass

    def close(self):
        for sock in self.socks.values():
            try:
                sock.close()
            except OSError:
                pass


def _dial(host, port, channel_id, deadline):
    last = None
    while time.monotonic() < deadline:
        try:
            sock = socket.create_connection((host, port), timeout=1.0)
        except OSError as exc:
            last = exc
            time.sleep(0.1)
            continue
        try:
            sock.sendall(HELLO.pack(MAGIC, wire.PROTOCOL_VERSION, channel_id))
            reply = _recv_exact(sock, 1)
        except (OSError, ChannelBrokenError) as exc:
            sock.close()
            last = exc
            time.sleep(0.1)
            continue
        if reply[0] != wire.PROTOCOL_VERSION:
            sock.close()
            raise wire.VersionMismatch(
                f"peer speaks protocol {reply[0]}, not "
                f"{wire.PROTOCOL_VERSION}")
        sock.settimeout(None)
        return sock
    raise NetError(
        f"could not reach {host}:{port} for channel {channel_id}: {last}")


def _accept_all(listener, expected, deadline):
    """Accept one handshake per expected channel id."""
    got = {}
    while set(got) != expected:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            missing = sorted(expected - set(got))
            raise NetError(f"peers never connected channels {missing}")
        listener.settimeout(min(remaining, 1.0))
        try:
            sock, _ = listener.accept()
        except socket.timeout:
            continue
        try:
            hello = _recv_exact(sock, HELLO.size)
            magic, version, channel_id = HELLO.unpack(hello)
        except (OSError, ChannelBrokenError):
            sock.close()
            continue
        if magic != MAGIC:
            sock.close()
            raise NetError("bad handshake magic")
        if version != wire.PROTOCOL_VERSION:
            sock.close()
            raise wire.VersionMismatch(
                f"peer speaks protocol {version}, not "
                f"{wire.PROTOCOL_VERSION}")
        if channel_id not in expected or channel_id in got:
            sock.close()
            raise NetError(f"unexpected handshake for channel {channel_id}")
        sock.sendall(bytes([wire.PROTOCOL_VERSION]))
        sock.settimeout(None)
        got[channel_id] = sock
    return got


def _reader(engine, channel_id, sock):
    """Decode inbound frames into the engine until end-of-stream."""
    try:
        while True:
            msg = wire.read_frame(lambda n: _recv_exact(sock, n))
            engine.deliver(channel_id, msg)
            if msg.kind == wire.EOS:
                return
    except runtime._Cancelled:
        pass
    except Exception as exc:
        engine.fail(None, ChannelBrokenError(
            f"channel {channel_id} broke mid-stream: {exc}"))
    finally:
        try:
            sock.close()
        except OSError:
            pass


def run_group(plan, group, bindings, seed=0, quiescence_timeout=60.0,
              connect_timeout=20.0):
    """Run this plan's `group` in the current process.

    Blocks until the group's nodes all finish; returns the group's
    RunResult (local outputs plus sender-side trace rows)."""
    groups = plan.groups
    if group not in groups:
        raise NetError(f"no dgroup named '{group}' in the plan")
    node_ids = groups[group]
    boundary = plan.inbound(group) + plan.outbound(group)

    # split boundary channels into ones we accept and ones we dial
    def peer_of(ch):
        other = plan.group_of(ch.src if ch.dst in node_ids else ch.dst)
        return other

    to_accept = {c.channel_id for c in boundary if group < peer_of(c)}
    to_dial = [c for c in boundary if group > peer_of(c)]

    deadline = time.monotonic() + connect_timeout
    listener = None
    socks = {}
    transport = _SocketTransport()
    try:
        if to_accept:
            host, port = plan.endpoints[group]
            listener = socket.create_server((host, port))
            accept_box = {}

            def _run_accept():
                try:
                    accept_box["socks"] = _accept_all(
                        listener, to_accept, deadline)
                except Exception as exc:
                    accept_box["error"] = exc

            acceptor = threading.Thread(target=_run_accept, daemon=True)
            acceptor.start()
        for ch in to_dial:
            peer = peer_of(ch)
            host, port = plan.endpoints[min(group, peer)]
            socks[ch.channel_id] = _dial(host, port, ch.channel_id, deadline)
        if to_accept:
            acceptor.join()
            if "error" in accept_box:
                raise accept_box["error"]
            socks.update(accept_box["socks"])

        outbound_ids = {c.channel_id for c in plan.outbound(group)}
        for cid, sock in socks.items():
            if cid in outbound_ids:
                transport.attach(cid, sock)

        engine = runtime.Engine(
            plan.graph, bindings, seed=seed,
            quiescence_timeout=quiescence_timeout,
            node_ids=node_ids, transport=transport)

        readers = []
        for ch in plan.inbound(group):
            t = threading.Thread(
                target=_reader,
                args=(engine, ch.channel_id, socks[ch.channel_id]),
                daemon=True)
            readers.append(t)
            t.start()

        result = engine.run()
        for t in readers:
            t.join(timeout=5.0)
        return result
    finally:
        transport.close()
        for sock in socks.values():
            try:
                sock.close()
            except OSError:
                pass
        if listener is not None:
            listener.close()
