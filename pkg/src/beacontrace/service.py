"""HTTP/JSON front end for the authority store, and a matching client.

Endpoints::

    POST /submit-report            Authorization: Bearer <credential>
         {"report_id", "upload_time_s", "records": [...]}
         -> {"version": int, "duplicate": bool}
    GET  /get-published?since=<v>
         -> {"version": int, "entries": [...]}   entries added after v
"""

from __future__ import annotations

import json
import logging
import threading
import urllib.error
import urllib.request
from http import HTTPStatus
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .detection import ScanRecord, format_mac, parse_mac
from .protocol import AuthorityStore, PositiveReport, PublishedEntry, PublishedList

log = logging.getLogger(__name__)


class WireError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(f"{status}: {message}")
        self.status = status


def record_to_json(r: ScanRecord) -> dict:
    return {"timestamp_s": r.timestamp_s, "beacon_mac": format_mac(r.beacon_mac),
            "ephemeral_id": r.ephemeral_id.hex(), "rssi_dbm": r.rssi_dbm}


def record_from_json(d: dict) -> ScanRecord:
    return ScanRecord(float(d["timestamp_s"]), parse_mac(d["beacon_mac"]),
                      bytes.fromhex(d["ephemeral_id"]), float(d["rssi_dbm"]))


def report_to_json(report: PositiveReport) -> dict:
    return {"report_id": report.report_id, "upload_time_s": report.upload_time_s,
            "records": [record_to_json(r) for r in report.records]}


def report_from_json(d: dict) -> PositiveReport:
    return PositiveReport(str(d["report_id"]), float(d["upload_time_s"]),
                          tuple(record_from_json(r) for r in d["records"]))


def published_to_json(p: PublishedList) -> dict:
    return {"version": p.version,
            "entries": [{"ephemeral_id": e.ephemeral_id.hex(),
                         "time_bucket_start_s": e.time_bucket_start_s,
                         "rssi_dbm": e.rssi_dbm} for e in sorted(p.entries)]}


def published_from_json(d: dict) -> PublishedList:
    return PublishedList(int(d["version"]), frozenset(
        PublishedEntry(bytes.fromhex(e["ephemeral_id"]), float(e["time_bucket_start_s"]),
                       float(e["rssi_dbm"])) for e in d["entries"]))


def make_handler(store: AuthorityStore, credential: str):
    class Handler(BaseHTTPRequestHandler):
        server_version = "beacontrace-authority/0.1"

        def log_message(self, fmt, *args):
            log.info("%s %s", self.address_string(), fmt % args)

        def _send(self, status, body):
            raw = json.dumps(body).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(raw)))
            self.end_headers()
            self.wfile.write(raw)

        def do_GET(self):
            url = urlparse(self.path)
            if url.path != "/get-published":
                return self._send(HTTPStatus.NOT_FOUND, {"error": "unknown endpoint"})
            try:
                since = int(parse_qs(url.query).get("since", ["0"])[0])
            except ValueError:
                return self._send(HTTPStatus.BAD_REQUEST, {"error": "since must be an integer"})
            self._send(HTTPStatus.OK, published_to_json(store.published(since)))

        def do_POST(self):
            if urlparse(self.path).path != "/submit-report":
                return self._send(HTTPStatus.NOT_FOUND, {"error": "unknown endpoint"})
            if self.headers.get("Authorization") != f"Bearer {credential}":
                return self._send(HTTPStatus.UNAUTHORIZED, {"error": "bad hospital credential"})
            try:
                length = int(self.headers.get("Content-Length", 0))
                report = report_from_json(json.loads(self.rfile.read(length)))
            except (ValueError, KeyError, TypeError) as exc:
                return self._send(HTTPStatus.BAD_REQUEST, {"error": f"malformed report: {exc}"})
            before = store.version
            after = store.ingest(report).version
            self._send(HTTPStatus.OK, {"version": after, "duplicate": after == before})

    return Handler


class AuthorityServer:
    """Threaded authority service; use as a context manager in tests."""

    def __init__(self, store: AuthorityStore, credential: str,
                 host: str = "127.0.0.1", port: int = 0):
        self.store = store
        self.httpd = ThreadingHTTPServer((host, port), make_handler(store, credential))
        self._thread = None

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self):
        self.httpd.serve_forever()

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class AuthorityClient:
    def __init__(self, base_url: str, credential: str | None = None, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.credential = credential
        self.timeout = timeout

    def _call(self, req):
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read())
        except urllib.error.HTTPError as exc:
            try:
                msg = json.loads(exc.read()).get("error", "")
            except ValueError:
                msg = exc.reason
            raise WireError(exc.code, msg) from None

    def submit_report(self, report: PositiveReport) -> dict:
        body = json.dumps(report_to_json(report)).encode()
        req = urllib.request.Request(f"{self.base_url}/submit-report", data=body, method="POST",
                                     headers={"Content-Type": "application/json",
                                              "Authorization": f"Bearer {self.credential}"})
        return self._call(req)

    def get_published(self, since: int = 0) -> PublishedList:
        return published_from_json(self._call(f"{self.base_url}/get-published?since={int(since)}"))
