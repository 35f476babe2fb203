"""Client for external black-box nonlinearities over a line-based protocol.

Wire format (newline-delimited JSON, UTF-8):

* on connect the provider sends a hello line
  ``{"protocol": "ssm-blackbox/1", "n": <dof count>, "model": "<id>"}``;
* a request is ``{"id": int, "kind": "full"|"even"|"odd",
  "x": [floats], "xdot": [floats]}``;
* a JSON array of requests is a batch; the reply is an array of responses
  in the same order;
* a response is ``{"id": int, "status": "ok", "f": [floats]}`` or
  ``{"id": <echoed or null>, "status": "error", "message": str}``.

Vectors are plain decimal lists; the schema has no complex field, which
structurally enforces the real-only evaluation contract.  Transports:
a spawned subprocess speaking the protocol on stdio, or TCP on localhost.
"""

from __future__ import annotations

import json
import socket
import subprocess

import numpy as np

from .errors import ProtocolError

PROTOCOL_VERSION = "ssm-blackbox/1"


class ExternalNonlinearity:
    """Callable f(x, xdot) backed by an external provider process.

    External FE assemblies are typically stateful, so the client declares
    itself serial; the evaluation scheduler then keeps a single queue.
    Batches are forwarded as protocol batches to amortize round trips.
    """

    serial_only = True

    def __init__(self, cmd=None, host=None, port=None):
        if (cmd is None) == (host is None):
            raise ValueError("give either a command to spawn or a host/port to reach")
        self._proc = None
        self._sock = None
        if cmd is not None:
            self._proc = subprocess.Popen(cmd, stdin=subprocess.PIPE,
                                          stdout=subprocess.PIPE, text=True,
                                          bufsize=1)
            self._send = self._send_stdio
            self._recv = self._recv_stdio
        else:
            self._sock = socket.create_connection((host, int(port)))
            self._rfile = self._sock.makefile("r", encoding="utf-8", newline="\n")
            self._wfile = self._sock.makefile("w", encoding="utf-8", newline="\n")
            self._send = self._send_tcp
            self._recv = self._recv_tcp
        hello = json.loads(self._recv())
        if hello.get("protocol") != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol header {hello!r}")
        self.n = int(hello["n"])
        self.model_id = hello.get("model", "")
        self._next_id = 0

    # -- transports -----------------------------------------------------------

    def _send_stdio(self, line):
        self._proc.stdin.write(line + "\n")
        self._proc.stdin.flush()

    def _recv_stdio(self):
        line = self._proc.stdout.readline()
        if not line:
            raise ProtocolError("provider closed the stream")
        return line

    def _send_tcp(self, line):
        self._wfile.write(line + "\n")
        self._wfile.flush()

    def _recv_tcp(self):
        line = self._rfile.readline()
        if not line:
            raise ProtocolError("provider closed the connection")
        return line

    def close(self):
        if self._proc is not None:
            try:
                self._proc.stdin.close()
            except Exception:
                pass
            self._proc.wait(timeout=10)
        if self._sock is not None:
            self._sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- evaluation -----------------------------------------------------------

    def _request(self, kind, x, xdot):
        rid = self._next_id
        self._next_id += 1
        return {"id": rid, "kind": kind,
                "x": [float(v) for v in np.asarray(x).reshape(-1)],
                "xdot": [float(v) for v in np.asarray(xdot).reshape(-1)]}

    @staticmethod
    def _check(req, resp):
        if resp.get("status") != "ok":
            raise ProtocolError(f"provider error for id {resp.get('id')}: "
                                f"{resp.get('message', 'unknown')}")
        if resp.get("id") != req["id"]:
            raise ProtocolError(f"response id {resp.get('id')} does not match "
                                f"request id {req['id']}")
        return np.asarray(resp["f"], dtype=float)

    def eval_kind(self, kind, x, xdot):
        req = self._request(kind, x, xdot)
        self._send(json.dumps(req))
        resp = json.loads(self._recv())
        return self._check(req, resp)

    def __call__(self, x, xdot):
        return self.eval_kind("full", x, xdot)

    def evaluate_batch(self, pairs):
        reqs = [self._request("full", x, xdot) for x, xdot in pairs]
        self._send(json.dumps(reqs))
        resps = json.loads(self._recv())
        if not isinstance(resps, list) or len(resps) != len(reqs):
            raise ProtocolError(f"batch reply has {len(resps) if isinstance(resps, list) else 'no'} "
                                f"entries for {len(reqs)} requests")
        return [self._check(req, resp) for req, resp in zip(reqs, resps)]
