#!/usr/bin/env python3
"""Stand-in for a remote NLI model.

Speaks the POST /nli protocol: {"premise", "hypothesis"} in,
{"label", "scores"} out, lowercase labels. The default behaviour is a crude
negation/overlap heuristic; --constant pins every reply to one label, which
is handy when exercising the CLI's remote backend end to end.

    python tools/nli_stub_server.py --port 8420
    FACTHARNESS_NLI_URL=http://127.0.0.1:8420 build/factharness_cli reward ...
"""

import argparse
import json
import re
from http.server import BaseHTTPRequestHandler, HTTPServer

NEGATORS = {"no", "not", "without", "negative", "unremarkable", "clear", "resolved"}
STOPWORDS = {"the", "a", "an", "is", "are", "there", "of", "and", "or", "in", "on"}


def tokens(text):
    return [t for t in re.findall(r"[a-z]+", text.lower()) if t not in STOPWORDS]


def classify(premise, hypothesis):
    p, h = tokens(premise), tokens(hypothesis)
    p_neg = bool(set(p) & NEGATORS)
    h_neg = bool(set(h) & NEGATORS)
    content_p = set(p) - NEGATORS
    content_h = set(h) - NEGATORS
    overlap = len(content_p & content_h) / max(1, len(content_p | content_h))
    if overlap >= 0.3 and p_neg != h_neg:
        return "contradiction"
    if content_h and content_h <= content_p and p_neg == h_neg:
        return "entailment"
    return "neutral"


class Handler(BaseHTTPRequestHandler):
    constant = None

    def do_POST(self):
        if self.path != "/nli":
            self.send_error(404)
            return
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        label = self.constant or classify(body["premise"], body["hypothesis"])
        scores = {"entailment": 0, "neutral": 1, "contradiction": 2}
        reply = json.dumps(
            {"label": label, "scores": [1.0 if i == scores[label] else 0.0 for i in range(3)]}
        ).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(reply)))
        self.end_headers()
        self.wfile.write(reply)

    def log_message(self, fmt, *args):  # quiet by default
        pass


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8420)
    ap.add_argument(
        "--constant",
        choices=["entailment", "neutral", "contradiction"],
        help="always reply with this label",
    )
    args = ap.parse_args()
    Handler.constant = args.constant
    server = HTTPServer((args.host, args.port), Handler)
    print(f"nli stub listening on http://{args.host}:{args.port}/nli")
    server.serve_forever()


if __name__ == "__main__":
    main()
