"""Command line entry: serve EPS1 noise predictions on stdio or TCP."""

from __future__ import annotations

import argparse
import sys

from epsbridge.server import ServerConfig, serve_stdio, serve_tcp


def build_parser():
    ap = argparse.ArgumentParser(prog="epsbridge", description=__doc__)
    ap.add_argument("--mode", choices=["zero", "identity", "gaussian", "model"], default="zero")
    ap.add_argument("--listen", default="stdio",
                    help='"stdio" or "tcp:HOST:PORT" (port 0 picks a free one)')
    ap.add_argument("--model-path", default=None, dest="model_path",
                    help="TorchScript checkpoint for model mode")
    ap.add_argument("--prior-mean", type=float, default=0.5, dest="prior_mean")
    ap.add_argument("--prior-var", type=float, default=0.01, dest="prior_var")
    ap.add_argument("--schedule-steps", type=int, default=1000, dest="T")
    ap.add_argument("--beta-start", type=float, default=1e-4, dest="beta_start")
    ap.add_argument("--beta-end", type=float, default=0.02, dest="beta_end")
    ap.add_argument("--limit", type=int, default=None,
                    help="serve at most N requests then exit (fault-injection aid)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = ServerConfig(
            mode=args.mode, T=args.T, beta_start=args.beta_start, beta_end=args.beta_end,
            prior_mean=args.prior_mean, prior_var=args.prior_var,
            model_path=args.model_path, limit=args.limit,
        )
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if args.listen == "stdio":
        serve_stdio(config)
        return 0
    if args.listen.startswith("tcp:"):
        _, host, port = args.listen.split(":")
        serve_tcp(config, host, int(port), ready=lambda p: print(f"listening on {host}:{p}", flush=True))
        return 0
    print(f"cannot parse --listen {args.listen!r}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
