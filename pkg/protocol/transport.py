"""Byte-line transports: an in-process queue pair and an asyncio TCP server/client.

Both carry the exact lines produced by `encode`, so the same trace grammar
holds whether a session runs over sockets or inside one process.
"""

import asyncio
import itertools
import logging
import queue
from typing import Callable, List, Optional, Protocol, Tuple, Union

from protocol.messages import WireMessage, encode

logger = logging.getLogger(__name__)


class QueueEnd:
    """One end of an in-process connection."""

    def __init__(self, inbox: "queue.Queue[bytes]", outbox: "queue.Queue[bytes]"):
        self._inbox = inbox
        self._outbox = outbox

    def send(self, line: bytes) -> None:
        self._outbox.put(line)

    def send_all(self, messages: List[WireMessage]) -> None:
        for m in messages:
            self.send(encode(m))

    def drain(self) -> List[bytes]:
        """every line waiting right now, oldest first"""
        lines = []
        while True:
            try:
                lines.append(self._inbox.get_nowait())
            except queue.Empty:
                return lines


def queue_pair() -> Tuple[QueueEnd, QueueEnd]:
    """(server end, client end)"""
    to_server: "queue.Queue[bytes]" = queue.Queue()
    to_client: "queue.Queue[bytes]" = queue.Queue()
    return QueueEnd(to_server, to_client), QueueEnd(to_client, to_server)


# ---------------------------------------------------------------- TCP

async def _write_all(writer: asyncio.StreamWriter, messages: List[WireMessage]) -> None:
    for m in messages:
        writer.write(encode(m))
    await writer.drain()


class SessionServer:
    """Serves one controller per TCP connection; sessions share nothing."""

    def __init__(self, make_controller: Callable[[str], "ServerSession"], timeout_seconds: float):
        self.make_controller = make_controller
        self.timeout_seconds = timeout_seconds
        self.sessions: List["ServerSession"] = []
        self._ids = itertools.count(1)
        self._server: Optional[asyncio.AbstractServer] = None

    async def start(self, host: str, port: int) -> asyncio.AbstractServer:
        self._server = await asyncio.start_server(self.handle_connection, host, port)
        addrs = ", ".join(str(s.getsockname()) for s in self._server.sockets)
        logger.info("serving on %s", addrs)
        return self._server

    @property
    def port(self) -> int:
        return self._server.sockets[0].getsockname()[1]

    async def serve_forever(self, host: str, port: int) -> None:
        server = await self.start(host, port)
        async with server:
            await server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    async def handle_connection(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        session_id = str(next(self._ids))
        controller = self.make_controller(session_id)
        self.sessions.append(controller)
        peer = writer.get_extra_info("peername")
        logger.info("session %s: connected from %s", session_id, peer)
        try:
            while not controller.closed:
                try:
                    line = await asyncio.wait_for(reader.readline(), self.timeout_seconds)
                except asyncio.TimeoutError:
                    replies = controller.on_timeout()
                else:
                    if not line:
                        controller.abort("connection closed by peer")
                        break
                    # model fits can take a while; keep the event loop free for other sessions
                    replies = await asyncio.to_thread(controller.handle_line, line)
                await _write_all(writer, replies)
        except (ConnectionError, OSError) as e:
            logger.error("session %s: transport failure: %s", session_id, e)
            controller.abort(f"transport failure: {e}")
        except Exception as e:
            logger.exception("session %s: controller failure", session_id)
            controller.abort(f"controller failure: {e}")
        finally:
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass
            logger.info("session %s: closed", session_id)


class ServerSession(Protocol):
    """What SessionServer needs from a controller."""

    @property
    def closed(self) -> bool: ...

    def handle_line(self, line: Union[bytes, str]) -> List[WireMessage]: ...

    def on_timeout(self) -> List[WireMessage]: ...

    def abort(self, reason: str) -> None: ...


async def run_client(host: str, port: int, client, poll_seconds: float, reply_timeout: float):
    """Drive a workload client over TCP until either side says Bye.

    While monitoring, the client measures one interval per poll unless the
    server announced a new phase in the meantime.
    """
    reader, writer = await asyncio.open_connection(host, port)
    try:
        await _write_all(writer, client.start())
        while not client.closed:
            wait = reply_timeout if client.expecting_reply else poll_seconds
            try:
                line = await asyncio.wait_for(reader.readline(), wait)
            except asyncio.TimeoutError:
                if client.expecting_reply:
                    out = client.give_up(f"no reply from server within {reply_timeout}s")
                else:
                    out = client.tick()
            else:
                if not line:
                    logger.warning("server closed the connection")
                    break
                out = client.handle_line(line)
            await _write_all(writer, out)
    finally:
        writer.close()
        try:
            await writer.wait_closed()
        except (ConnectionError, OSError):
            pass
    return client
