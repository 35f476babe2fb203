"""Reference provider serving a nonlinear internal force over the wire protocol.

This daemon plays the role of an external FE package: it owns the model and
answers force evaluations.  Messages are newline-delimited JSON:

* hello (sent once on connect):
  ``{"protocol": "ssm-blackbox/1", "n": <dofs>, "model": "<id>"}``
* request: ``{"id": int, "kind": "full"|"even"|"odd", "x": [...], "xdot": [...]}``
* batch: a JSON array of requests; answered by an array of responses in
  request order
* response: ``{"id": int, "status": "ok", "f": [...]}`` or
  ``{"id": <echoed or null>, "status": "error", "message": str}``

Vectors are plain decimal lists; there is no complex field in the schema,
so only real-valued inputs can ever reach the model.  The ``even``/``odd``
kinds are computed server-side from two evaluations, halving round trips
for parity splits.  Requests are handled serially: FE assemblies are
typically stateful.

The built-in model catalog is resolved through ssmkit's public model
registry so that served forces are bit-identical to in-process ones; a
real FE provider would replace ``resolve_model`` with its own assembly.
"""

from __future__ import annotations

import argparse
import json
import socket
import sys

import numpy as np

PROTOCOL_VERSION = "ssm-blackbox/1"


def resolve_model(name, params):
    from ssmkit import models
    built = models.make(name, **(params or {}))
    return built.identifier, built.model.n, built.model.eval_force


class ForceServer:
    """Serial request handler around one force callable."""

    def __init__(self, model_id, n, force):
        self.model_id = model_id
        self.n = n
        self.force = force

    def hello(self):
        return {"protocol": PROTOCOL_VERSION, "n": self.n, "model": self.model_id}

    def _evaluate(self, kind, x, xdot):
        if kind == "full":
            return self.force(x, xdot)
        fp = self.force(x, xdot)
        fm = self.force(-x, -xdot)
        if kind == "even":
            return (fp + fm) / 2.0
        if kind == "odd":
            return (fp - fm) / 2.0
        raise ValueError(f"unknown kind {kind!r}")

    def handle_one(self, req):
        rid = req.get("id") if isinstance(req, dict) else None
        try:
            if not isinstance(req, dict):
                raise ValueError("request must be a JSON object")
            x = np.asarray(req["x"], dtype=float)
            xdot = np.asarray(req["xdot"], dtype=float)
            if x.shape != (self.n,) or xdot.shape != (self.n,):
                raise ValueError(
                    f"vector length mismatch: got {x.shape[0]}/{xdot.shape[0]}, "
                    f"model has {self.n} dofs")
            f = self._evaluate(req.get("kind", "full"), x, xdot)
            return {"id": rid, "status": "ok",
                    "f": [float(v) for v in np.asarray(f).reshape(self.n)]}
        except Exception as exc:  # every failure becomes an error response
            return {"id": rid, "status": "error", "message": str(exc)}

    def handle_line(self, line):
        line = line.strip()
        if not line:
            return None
        try:
            msg = json.loads(line)
        except json.JSONDecodeError as exc:
            return {"id": None, "status": "error", "message": f"malformed JSON: {exc}"}
        if isinstance(msg, list):
            return [self.handle_one(req) for req in msg]
        return self.handle_one(msg)

    # -- transports ---------------------------------------------------------

    def serve_stdio(self, stdin=None, stdout=None):
        stdin = stdin or sys.stdin
        stdout = stdout or sys.stdout
        stdout.write(json.dumps(self.hello()) + "\n")
        stdout.flush()
        for line in stdin:
            resp = self.handle_line(line)
            if resp is None:
                continue
            stdout.write(json.dumps(resp) + "\n")
            stdout.flush()

    def serve_tcp(self, port, host="127.0.0.1", ready_cb=None):
        with socket.create_server((host, port)) as srv:
            if ready_cb is not None:
                ready_cb(srv.getsockname()[1])
            conn, _ = srv.accept()
            with conn:
                rfile = conn.makefile("r", encoding="utf-8", newline="\n")
                wfile = conn.makefile("w", encoding="utf-8", newline="\n")
                wfile.write(json.dumps(self.hello()) + "\n")
                wfile.flush()
                for line in rfile:
                    resp = self.handle_line(line)
                    if resp is None:
                        continue
                    wfile.write(json.dumps(resp) + "\n")
                    wfile.flush()


def main(argv=None):
    parser = argparse.ArgumentParser(
        description="Serve a nonlinear internal force over the ssm-blackbox protocol")
    parser.add_argument("--model", required=True, help="builtin model identifier")
    parser.add_argument("--params", type=json.loads, default={},
                        help="model parameters as JSON")
    parser.add_argument("--transport", choices=["stdio", "tcp"], default="stdio")
    parser.add_argument("--port", type=int, default=0)
    args = parser.parse_args(argv)
    model_id, n, force = resolve_model(args.model, args.params)
    server = ForceServer(model_id, n, force)
    if args.transport == "stdio":
        server.serve_stdio()
    else:
        server.serve_tcp(args.port,
                         ready_cb=lambda p: print(f"listening on {p}", file=sys.stderr))
    return 0


if __name__ == "__main__":
    sys.exit(main())
