"""Minimal SSH 2.0 transport: version exchange, one KEX suite, password
auth, and session channels with exec/shell. Server and client roles.

Algorithm suite (fixed): curve25519-sha256 key exchange, ssh-ed25519
host keys, aes128-ctr, hmac-sha2-256, no compression — a modern set every
mainstream client offers. The server side feeds the honeypot sensor; the
client side drives the attack emulator. Interop between the two is what
the closed-loop tests exercise; the wire behavior itself follows RFC
4253/4252/4254 so real SSH clients can negotiate too.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import os
import socket
import struct
from dataclasses import dataclass
from typing import Optional

from cryptography.hazmat.primitives.asymmetric import ed25519, x25519
from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes
from cryptography.hazmat.primitives import serialization

# message numbers (RFC 4250)
MSG_DISCONNECT = 1
MSG_IGNORE = 2
MSG_UNIMPLEMENTED = 3
MSG_DEBUG = 4
MSG_SERVICE_REQUEST = 5
MSG_SERVICE_ACCEPT = 6
MSG_KEXINIT = 20
MSG_NEWKEYS = 21
MSG_KEX_ECDH_INIT = 30
MSG_KEX_ECDH_REPLY = 31
MSG_USERAUTH_REQUEST = 50
MSG_USERAUTH_FAILURE = 51
MSG_USERAUTH_SUCCESS = 52
MSG_GLOBAL_REQUEST = 80
MSG_REQUEST_SUCCESS = 81
MSG_REQUEST_FAILURE = 82
MSG_CHANNEL_OPEN = 90
MSG_CHANNEL_OPEN_CONFIRMATION = 91
MSG_CHANNEL_OPEN_FAILURE = 92
MSG_CHANNEL_WINDOW_ADJUST = 93
MSG_CHANNEL_DATA = 94
MSG_CHANNEL_EXTENDED_DATA = 95
MSG_CHANNEL_EOF = 96
MSG_CHANNEL_CLOSE = 97
MSG_CHANNEL_REQUEST = 98
MSG_CHANNEL_SUCCESS = 99
MSG_CHANNEL_FAILURE = 100

KEX_ALGS = "curve25519-sha256,curve25519-sha256@libssh.org"
HOSTKEY_ALGS = "ssh-ed25519"
CIPHERS = "aes128-ctr"
MACS = "hmac-sha2-256"
COMPRESSIONS = "none"

MAX_PACKET = 1 << 20
LOCAL_WINDOW = 1 << 21
LOCAL_MAX_PACKET = 32768


class ProtocolViolation(Exception):
    """Peer sent something that is not valid SSH for our state."""


class ConnectionClosed(Exception):
    """TCP stream ended."""


class AuthenticationFailed(Exception):
    pass


# -- wire primitives -----------------------------------------------------------


def _string(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def _namelist(text: str) -> bytes:
    return _string(text.encode("ascii"))


def _mpint(value: int) -> bytes:
    if value == 0:
        return _string(b"")
    raw = value.to_bytes((value.bit_length() + 7) // 8, "big")
    if raw[0] & 0x80:
        raw = b"\x00" + raw
    return _string(raw)


class Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def byte(self) -> int:
        value = self.data[self.offset]
        self.offset += 1
        return value

    def boolean(self) -> bool:
        return self.byte() != 0

    def uint32(self) -> int:
        (value,) = struct.unpack_from(">I", self.data, self.offset)
        self.offset += 4
        return value

    def string(self) -> bytes:
        length = self.uint32()
        value = self.data[self.offset : self.offset + length]
        if len(value) != length:
            raise ProtocolViolation("truncated string field")
        self.offset += length
        return value

    def text(self) -> str:
        return self.string().decode("utf-8", "replace")


# -- packet engine ----------------------------------------------------------------


class PacketStream:
    """Binary packet protocol with optional aes128-ctr + hmac-sha2-256."""

    def __init__(self, sock: socket.socket):
        self.sock = sock
        self._send_seq = 0
        self._recv_seq = 0
        self._send_cipher = None
        self._recv_cipher = None
        self._send_mac = None
        self._recv_mac = None

    def activate_send(self, key: bytes, iv: bytes, mac_key: bytes):
        self._send_cipher = Cipher(algorithms.AES(key), modes.CTR(iv)).encryptor()
        self._send_mac = mac_key

    def activate_recv(self, key: bytes, iv: bytes, mac_key: bytes):
        self._recv_cipher = Cipher(algorithms.AES(key), modes.CTR(iv)).decryptor()
        self._recv_mac = mac_key

    def _recv_exact(self, n: int) -> bytes:
        chunks = []
        remaining = n
        while remaining > 0:
            chunk = self.sock.recv(remaining)
            if not chunk:
                raise ConnectionClosed("peer closed the stream")
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def send_packet(self, payload: bytes):
        block = 16 if self._send_cipher else 8
        pad_len = block - ((5 + len(payload)) % block)
        if pad_len < 4:
            pad_len += block
        packet = struct.pack(">IB", 1 + len(payload) + pad_len, pad_len) + payload + os.urandom(pad_len)
        if self._send_cipher:
            mac = hmac_mod.new(
                self._send_mac, struct.pack(">I", self._send_seq) + packet, hashlib.sha256
            ).digest()
            wire = self._send_cipher.update(packet) + mac
        else:
            wire = packet
        self.sock.sendall(wire)
        self._send_seq = (self._send_seq + 1) & 0xFFFFFFFF

    def recv_packet(self) -> bytes:
        head = self._recv_exact(4)
        if self._recv_cipher:
            head = self._recv_cipher.update(head)
        (packet_length,) = struct.unpack(">I", head)
        if not 1 <= packet_length <= MAX_PACKET:
            raise ProtocolViolation(f"implausible packet length {packet_length}")
        body = self._recv_exact(packet_length)
        if self._recv_cipher:
            body = self._recv_cipher.update(body)
            mac = self._recv_exact(32)
            expected = hmac_mod.new(
                self._recv_mac, struct.pack(">I", self._recv_seq) + head + body, hashlib.sha256
            ).digest()
            if not hmac_mod.compare_digest(mac, expected):
                raise ProtocolViolation("bad packet MAC")
        pad_len = body[0]
        if pad_len < 4 or pad_len >= packet_length:
            raise ProtocolViolation("bad padding length")
        self._recv_seq = (self._recv_seq + 1) & 0xFFFFFFFF
        return body[1 : packet_length - pad_len]


# -- kex ----------------------------------------------------------------------------

_KEXINIT_FIELDS = (
    "kex",
    "hostkey",
    "cipher_c2s",
    "cipher_s2c",
    "mac_c2s",
    "mac_s2c",
    "comp_c2s",
    "comp_s2c",
    "lang_c2s",
    "lang_s2c",
)


def build_kexinit() -> bytes:
    lists = (
        KEX_ALGS,
        HOSTKEY_ALGS,
        CIPHERS,
        CIPHERS,
        MACS,
        MACS,
        COMPRESSIONS,
        COMPRESSIONS,
        "",
        "",
    )
    payload = bytes([MSG_KEXINIT]) + os.urandom(16)
    for text in lists:
        payload += _namelist(text)
    payload += b"\x00"  # first_kex_packet_follows
    payload += struct.pack(">I", 0)
    return payload


def parse_kexinit(payload: bytes) -> dict[str, list[str]]:
    reader = Reader(payload)
    if reader.byte() != MSG_KEXINIT:
        raise ProtocolViolation("expected KEXINIT")
    reader.offset += 16  # cookie
    lists = {}
    for name in _KEXINIT_FIELDS:
        lists[name] = [a for a in reader.text().split(",") if a]
    lists["first_follows"] = reader.boolean()
    return lists


def kex_fingerprint(lists: dict) -> str:
    """Stable hash over the peer's algorithm proposal (cookie excluded):
    identical proposals give identical fingerprints."""
    joined = ";".join(",".join(lists[name]) for name in _KEXINIT_FIELDS[:8])
    return hashlib.sha256(joined.encode("ascii")).hexdigest()[:32]


def _negotiate(client_list: list[str], server_list: list[str], what: str) -> str:
    for candidate in client_list:
        if candidate in server_list:
            return candidate
    raise ProtocolViolation(f"no common {what}: client offered {client_list!r}")


def derive_keys(shared_k: int, exchange_hash: bytes, session_id: bytes):
    """RFC 4253 7.2 key derivation; returns the six direction keys."""

    def derive(letter: bytes, size: int) -> bytes:
        seed = _mpint(shared_k) + exchange_hash
        key = hashlib.sha256(seed + letter + session_id).digest()
        while len(key) < size:
            key += hashlib.sha256(seed + key).digest()
        return key[:size]

    return {
        "iv_c2s": derive(b"A", 16),
        "iv_s2c": derive(b"B", 16),
        "key_c2s": derive(b"C", 16),
        "key_s2c": derive(b"D", 16),
        "mac_c2s": derive(b"E", 32),
        "mac_s2c": derive(b"F", 32),
    }


def _exchange_version(sock: socket.socket, local_version: str) -> str:
    sock.sendall((local_version + "\r\n").encode("ascii"))
    data = b""
    for _ in range(32):  # tolerate pre-version banner lines
        line = b""
        while not line.endswith(b"\n"):
            byte = sock.recv(1)
            if not byte:
                raise ConnectionClosed("peer closed during version exchange")
            line += byte
            if len(line) > 1024:
                raise ProtocolViolation("oversized identification line")
        text = line.rstrip(b"\r\n")
        if text.startswith(b"SSH-"):
            remote = text.decode("ascii", "replace")
            if not remote.startswith("SSH-2.0-") and not remote.startswith("SSH-1.99-"):
                raise ProtocolViolation(f"unsupported protocol version: {remote!r}")
            return remote
        data += text
        if len(data) > 4096:
            break
    raise ProtocolViolation("no SSH identification line received")


# -- server -----------------------------------------------------------------------


class ServerCallbacks:
    """Hook surface the honeypot sensor implements."""

    def on_client_version(self, version: str):  # verbatim identification string
        pass

    def on_kex_fingerprint(self, fingerprint: str):
        pass

    def check_password(self, username: str, password: str, attempt_index: int) -> bool:
        return False

    def on_command(self, command: str) -> str:  # shell/exec input -> output
        return ""

    def shell_prompt(self) -> str:
        return "$ "

    def shell_greeting(self) -> str:
        return ""


@dataclass
class _Channel:
    remote_id: int
    remote_window: int
    remote_max_packet: int
    line_buffer: bytes = b""
    shell: bool = False
    closed: bool = False


def generate_host_key() -> ed25519.Ed25519PrivateKey:
    return ed25519.Ed25519PrivateKey.generate()


def host_key_to_bytes(key: ed25519.Ed25519PrivateKey) -> bytes:
    return key.private_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PrivateFormat.Raw,
        encryption_algorithm=serialization.NoEncryption(),
    )


def host_key_from_bytes(raw: bytes) -> ed25519.Ed25519PrivateKey:
    return ed25519.Ed25519PrivateKey.from_private_bytes(raw)


class ServerTransport:
    """One SSH server connection, driven synchronously on its own thread."""

    def __init__(
        self,
        sock: socket.socket,
        host_key: ed25519.Ed25519PrivateKey,
        server_version: str,
        callbacks: ServerCallbacks,
    ):
        self.sock = sock
        self.host_key = host_key
        self.version = server_version
        self.callbacks = callbacks
        self.stream = PacketStream(sock)
        self.authenticated_user: Optional[str] = None
        self._auth_attempts = 0
        self._channels: dict[int, _Channel] = {}
        self._next_channel = 0

    def run(self):
        """Serve the connection until the peer disconnects."""
        client_version = _exchange_version(self.sock, self.version)
        self.callbacks.on_client_version(client_version)
        self._handshake(client_version)
        while True:
            try:
                payload = self.stream.recv_packet()
            except ConnectionClosed:
                return
            if not payload:
                continue
            msg = payload[0]
            if msg == MSG_DISCONNECT:
                return
            handler = {
                MSG_IGNORE: lambda p: None,
                MSG_DEBUG: lambda p: None,
                MSG_UNIMPLEMENTED: lambda p: None,
                MSG_SERVICE_REQUEST: self._on_service_request,
                MSG_USERAUTH_REQUEST: self._on_userauth,
                MSG_GLOBAL_REQUEST: self._on_global_request,
                MSG_CHANNEL_OPEN: self._on_channel_open,
                MSG_CHANNEL_REQUEST: self._on_channel_request,
                MSG_CHANNEL_DATA: self._on_channel_data,
                MSG_CHANNEL_WINDOW_ADJUST: self._on_window_adjust,
                MSG_CHANNEL_EOF: self._on_channel_eof,
                MSG_CHANNEL_CLOSE: self._on_channel_close,
            }.get(msg)
            if handler is None:
                self.stream.send_packet(bytes([MSG_UNIMPLEMENTED]) + struct.pack(">I", 0))
            else:
                handler(payload)

    # -- handshake ---------------------------------------------------------

    def _handshake(self, client_version: str):
        local_kexinit = build_kexinit()
        self.stream.send_packet(local_kexinit)
        remote_kexinit = self.stream.recv_packet()
        lists = parse_kexinit(remote_kexinit)
        self.callbacks.on_kex_fingerprint(kex_fingerprint(lists))
        kex_alg = _negotiate(lists["kex"], KEX_ALGS.split(","), "kex algorithm")
        _negotiate(lists["hostkey"], [HOSTKEY_ALGS], "host key algorithm")
        _negotiate(lists["cipher_c2s"], [CIPHERS], "cipher")
        _negotiate(lists["mac_c2s"], [MACS], "mac")
        if lists["first_follows"] and lists["kex"][0] != kex_alg:
            self.stream.recv_packet()  # discard the wrong guess

        packet = self.stream.recv_packet()
        if packet[0] != MSG_KEX_ECDH_INIT:
            raise ProtocolViolation("expected KEX_ECDH_INIT")
        client_pub_bytes = Reader(packet[1:]).string()
        client_pub = x25519.X25519PublicKey.from_public_bytes(client_pub_bytes)
        server_eph = x25519.X25519PrivateKey.generate()
        server_pub_bytes = server_eph.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        shared = int.from_bytes(server_eph.exchange(client_pub), "big")
        host_pub = self.host_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        host_blob = _string(b"ssh-ed25519") + _string(host_pub)
        hash_input = (
            _string(client_version.encode())
            + _string(self.version.encode())
            + _string(remote_kexinit)
            + _string(local_kexinit)
            + _string(host_blob)
            + _string(client_pub_bytes)
            + _string(server_pub_bytes)
            + _mpint(shared)
        )
        exchange_hash = hashlib.sha256(hash_input).digest()
        signature = self.host_key.sign(exchange_hash)
        sig_blob = _string(b"ssh-ed25519") + _string(signature)
        reply = (
            bytes([MSG_KEX_ECDH_REPLY])
            + _string(host_blob)
            + _string(server_pub_bytes)
            + _string(sig_blob)
        )
        self.stream.send_packet(reply)
        self.stream.send_packet(bytes([MSG_NEWKEYS]))
        keys = derive_keys(shared, exchange_hash, exchange_hash)
        self.stream.activate_send(keys["key_s2c"], keys["iv_s2c"], keys["mac_s2c"])
        packet = self.stream.recv_packet()
        if packet[0] != MSG_NEWKEYS:
            raise ProtocolViolation("expected NEWKEYS")
        self.stream.activate_recv(keys["key_c2s"], keys["iv_c2s"], keys["mac_c2s"])

    # -- auth ----------------------------------------------------------------

    def _on_service_request(self, payload: bytes):
        service = Reader(payload[1:]).string()
        if service == b"ssh-userauth":
            self.stream.send_packet(bytes([MSG_SERVICE_ACCEPT]) + _string(service))
        else:
            raise ProtocolViolation(f"unsupported service {service!r}")

    def _on_userauth(self, payload: bytes):
        reader = Reader(payload[1:])
        username = reader.text()
        reader.string()  # service name
        method = reader.text()
        if method == "password":
            reader.boolean()
            password = reader.text()
            self._auth_attempts += 1
            if self.callbacks.check_password(username, password, self._auth_attempts):
                self.authenticated_user = username
                self.stream.send_packet(bytes([MSG_USERAUTH_SUCCESS]))
                return
        self.stream.send_packet(
            bytes([MSG_USERAUTH_FAILURE]) + _namelist("password") + b"\x00"
        )

    def _on_global_request(self, payload: bytes):
        reader = Reader(payload[1:])
        reader.string()
        if reader.boolean():
            self.stream.send_packet(bytes([MSG_REQUEST_FAILURE]))

    # -- channels ---------------------------------------------------------------

    def _on_channel_open(self, payload: bytes):
        reader = Reader(payload[1:])
        channel_type = reader.string()
        remote_id = reader.uint32()
        remote_window = reader.uint32()
        remote_max_packet = reader.uint32()
        if channel_type != b"session" or self.authenticated_user is None:
            code = 1 if self.authenticated_user is None else 3
            self.stream.send_packet(
                bytes([MSG_CHANNEL_OPEN_FAILURE])
                + struct.pack(">II", remote_id, code)
                + _string(b"unsupported")
                + _string(b"")
            )
            return
        local_id = self._next_channel
        self._next_channel += 1
        self._channels[local_id] = _Channel(
            remote_id=remote_id, remote_window=remote_window, remote_max_packet=remote_max_packet
        )
        self.stream.send_packet(
            bytes([MSG_CHANNEL_OPEN_CONFIRMATION])
            + struct.pack(">IIII", remote_id, local_id, LOCAL_WINDOW, LOCAL_MAX_PACKET)
        )

    def _channel(self, local_id: int) -> Optional[_Channel]:
        return self._channels.get(local_id)

    def _send_data(self, channel: _Channel, data: bytes):
        # clamp below so a hostile tiny max-packet cannot wedge the loop
        chunk_size = max(256, min(channel.remote_max_packet - 64, 16384))
        offset = 0
        while offset < len(data):
            chunk = data[offset : offset + chunk_size]
            self.stream.send_packet(
                bytes([MSG_CHANNEL_DATA]) + struct.pack(">I", channel.remote_id) + _string(chunk)
            )
            offset += len(chunk)

    def _finish_channel(self, local_id: int, channel: _Channel, status: int = 0):
        self.stream.send_packet(
            bytes([MSG_CHANNEL_REQUEST])
            + struct.pack(">I", channel.remote_id)
            + _string(b"exit-status")
            + b"\x00"
            + struct.pack(">I", status)
        )
        self.stream.send_packet(bytes([MSG_CHANNEL_EOF]) + struct.pack(">I", channel.remote_id))
        self.stream.send_packet(bytes([MSG_CHANNEL_CLOSE]) + struct.pack(">I", channel.remote_id))
        channel.closed = True

    def _on_channel_request(self, payload: bytes):
        reader = Reader(payload[1:])
        local_id = reader.uint32()
        request = reader.string()
        want_reply = reader.boolean()
        channel = self._channel(local_id)
        if channel is None:
            return
        ok = True
        if request == b"exec":
            command = reader.text()
            if want_reply:
                self._reply_channel(channel, True)
            output = self.callbacks.on_command(command)
            if output:
                self._send_data(channel, output.encode("utf-8", "replace") + b"\n")
            self._finish_channel(local_id, channel)
            return
        if request == b"shell":
            channel.shell = True
            if want_reply:
                self._reply_channel(channel, True)
            greeting = self.callbacks.shell_greeting()
            if greeting:
                self._send_data(channel, greeting.encode() + b"\r\n")
            self._send_data(channel, self.callbacks.shell_prompt().encode())
            return
        if request not in (b"pty-req", b"env", b"window-change"):
            ok = False
        if want_reply:
            self._reply_channel(channel, ok)

    def _reply_channel(self, channel: _Channel, ok: bool):
        msg = MSG_CHANNEL_SUCCESS if ok else MSG_CHANNEL_FAILURE
        self.stream.send_packet(bytes([msg]) + struct.pack(">I", channel.remote_id))

    def _on_channel_data(self, payload: bytes):
        reader = Reader(payload[1:])
        local_id = reader.uint32()
        data = reader.string()
        channel = self._channel(local_id)
        if channel is None or not channel.shell or channel.closed:
            return
        channel.line_buffer += data
        while b"\n" in channel.line_buffer:
            line, channel.line_buffer = channel.line_buffer.split(b"\n", 1)
            command = line.rstrip(b"\r").decode("utf-8", "replace").strip()
            if not command:
                self._send_data(channel, self.callbacks.shell_prompt().encode())
                continue
            if command in ("exit", "logout", "quit"):
                self._finish_channel(local_id, channel)
                return
            output = self.callbacks.on_command(command)
            if output:
                self._send_data(channel, output.encode("utf-8", "replace") + b"\r\n")
            self._send_data(channel, self.callbacks.shell_prompt().encode())

    def _on_window_adjust(self, payload: bytes):
        reader = Reader(payload[1:])
        local_id = reader.uint32()
        amount = reader.uint32()
        channel = self._channel(local_id)
        if channel is not None:
            channel.remote_window += amount

    def _on_channel_eof(self, payload: bytes):
        pass

    def _on_channel_close(self, payload: bytes):
        local_id = Reader(payload[1:]).uint32()
        channel = self._channels.pop(local_id, None)
        if channel is not None and not channel.closed:
            self.stream.send_packet(bytes([MSG_CHANNEL_CLOSE]) + struct.pack(">I", channel.remote_id))


# -- client -----------------------------------------------------------------------


class SshClient:
    """Blocking SSH client: password auth and one exec/shell at a time."""

    def __init__(self, sock: socket.socket, version: str = "SSH-2.0-decoyloop_0.1"):
        self.sock = sock
        self.version = version
        self.stream = PacketStream(sock)
        self.server_version: Optional[str] = None
        self.authenticated = False
        self._next_channel = 0
        self._userauth_ready = False

    @classmethod
    def connect(
        cls,
        host: str,
        port: int,
        timeout: float = 10.0,
        source_address: Optional[tuple[str, int]] = None,
        version: str = "SSH-2.0-decoyloop_0.1",
    ) -> "SshClient":
        sock = socket.create_connection((host, port), timeout=timeout, source_address=source_address)
        sock.settimeout(timeout)
        client = cls(sock, version=version)
        client._handshake()
        return client

    def _handshake(self):
        self.server_version = _exchange_version(self.sock, self.version)
        local_kexinit = build_kexinit()
        self.stream.send_packet(local_kexinit)
        remote_kexinit = self._expect(MSG_KEXINIT)
        lists = parse_kexinit(remote_kexinit)
        _negotiate(KEX_ALGS.split(","), lists["kex"], "kex algorithm")
        ephemeral = x25519.X25519PrivateKey.generate()
        public = ephemeral.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        self.stream.send_packet(bytes([MSG_KEX_ECDH_INIT]) + _string(public))
        reply = self._expect(MSG_KEX_ECDH_REPLY)
        reader = Reader(reply[1:])
        host_blob = reader.string()
        server_pub_bytes = reader.string()
        sig_blob = reader.string()
        shared = int.from_bytes(
            ephemeral.exchange(x25519.X25519PublicKey.from_public_bytes(server_pub_bytes)), "big"
        )
        hash_input = (
            _string(self.version.encode())
            + _string(self.server_version.encode())
            + _string(local_kexinit)
            + _string(remote_kexinit)
            + _string(host_blob)
            + _string(public)
            + _string(server_pub_bytes)
            + _mpint(shared)
        )
        exchange_hash = hashlib.sha256(hash_input).digest()
        self._verify_host_signature(host_blob, sig_blob, exchange_hash)
        self.stream.send_packet(bytes([MSG_NEWKEYS]))
        keys = derive_keys(shared, exchange_hash, exchange_hash)
        self.stream.activate_send(keys["key_c2s"], keys["iv_c2s"], keys["mac_c2s"])
        self._expect(MSG_NEWKEYS)
        self.stream.activate_recv(keys["key_s2c"], keys["iv_s2c"], keys["mac_s2c"])

    @staticmethod
    def _verify_host_signature(host_blob: bytes, sig_blob: bytes, exchange_hash: bytes):
        blob = Reader(host_blob)
        if blob.string() != b"ssh-ed25519":
            raise ProtocolViolation("unexpected host key type")
        public = ed25519.Ed25519PublicKey.from_public_bytes(blob.string())
        sig = Reader(sig_blob)
        if sig.string() != b"ssh-ed25519":
            raise ProtocolViolation("unexpected signature type")
        try:
            public.verify(sig.string(), exchange_hash)
        except Exception as exc:
            raise ProtocolViolation(f"host signature invalid: {exc}") from None

    def _expect(self, msg: int, skippable=(MSG_IGNORE, MSG_DEBUG)) -> bytes:
        while True:
            payload = self.stream.recv_packet()
            if not payload:
                continue
            if payload[0] in skippable:
                continue
            if payload[0] == MSG_DISCONNECT:
                raise ConnectionClosed("server disconnected")
            if payload[0] != msg:
                raise ProtocolViolation(f"expected message {msg}, got {payload[0]}")
            return payload

    def auth_password(self, username: str, password: str) -> bool:
        """One password attempt; callable repeatedly on the same
        connection."""
        if not self._userauth_ready:
            self.stream.send_packet(bytes([MSG_SERVICE_REQUEST]) + _string(b"ssh-userauth"))
            self._expect(MSG_SERVICE_ACCEPT)
            self._userauth_ready = True
        request = (
            bytes([MSG_USERAUTH_REQUEST])
            + _string(username.encode())
            + _string(b"ssh-connection")
            + _string(b"password")
            + b"\x00"
            + _string(password.encode())
        )
        self.stream.send_packet(request)
        while True:
            payload = self.stream.recv_packet()
            if payload[0] in (MSG_IGNORE, MSG_DEBUG):
                continue
            if payload[0] == MSG_USERAUTH_SUCCESS:
                self.authenticated = True
                return True
            if payload[0] == MSG_USERAUTH_FAILURE:
                return False
            if payload[0] == MSG_DISCONNECT:
                raise ConnectionClosed("server disconnected during auth")
            raise ProtocolViolation(f"unexpected auth reply {payload[0]}")

    def _open_session(self) -> tuple[int, int]:
        local_id = self._next_channel
        self._next_channel += 1
        self.stream.send_packet(
            bytes([MSG_CHANNEL_OPEN])
            + _string(b"session")
            + struct.pack(">III", local_id, LOCAL_WINDOW, LOCAL_MAX_PACKET)
        )
        while True:
            payload = self.stream.recv_packet()
            if payload[0] in (MSG_IGNORE, MSG_DEBUG, MSG_GLOBAL_REQUEST):
                continue
            if payload[0] == MSG_CHANNEL_OPEN_CONFIRMATION:
                reader = Reader(payload[1:])
                reader.uint32()  # our id
                remote_id = reader.uint32()
                return local_id, remote_id
            if payload[0] == MSG_CHANNEL_OPEN_FAILURE:
                raise ProtocolViolation("channel open refused")

    def exec_command(self, command: str, timeout: float = 10.0) -> tuple[int, bytes]:
        """Run one command; returns (exit_status, output)."""
        local_id, remote_id = self._open_session()
        self.stream.send_packet(
            bytes([MSG_CHANNEL_REQUEST])
            + struct.pack(">I", remote_id)
            + _string(b"exec")
            + b"\x01"
            + _string(command.encode())
        )
        output = b""
        status = 0
        closed = False
        sent_close = False
        while not closed:
            payload = self.stream.recv_packet()
            msg = payload[0]
            if msg in (MSG_IGNORE, MSG_DEBUG, MSG_CHANNEL_SUCCESS, MSG_CHANNEL_WINDOW_ADJUST, MSG_CHANNEL_EOF):
                continue
            if msg == MSG_CHANNEL_FAILURE:
                raise ProtocolViolation("exec request refused")
            if msg == MSG_CHANNEL_DATA:
                reader = Reader(payload[1:])
                reader.uint32()
                output += reader.string()
            elif msg == MSG_CHANNEL_REQUEST:
                reader = Reader(payload[1:])
                reader.uint32()
                if reader.string() == b"exit-status":
                    reader.boolean()
                    status = reader.uint32()
            elif msg == MSG_CHANNEL_CLOSE:
                if not sent_close:
                    self.stream.send_packet(bytes([MSG_CHANNEL_CLOSE]) + struct.pack(">I", remote_id))
                    sent_close = True
                closed = True
            elif msg == MSG_DISCONNECT:
                raise ConnectionClosed("server disconnected mid-exec")
        return status, output

    def close(self):
        try:
            self.stream.send_packet(
                bytes([MSG_DISCONNECT]) + struct.pack(">I", 11) + _string(b"bye") + _string(b"")
            )
        except OSError:
            pass
        try:
            self.sock.close()
        except OSError:
            pass
