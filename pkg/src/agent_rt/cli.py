from __future__ import annotations

import argparse
import json
import math
import logging
import sys
from pathlib import Path

from .executor import lower_actions, read_jsonl, replay, write_jsonl
from .grammar import GrammarError, KeyChunk, format_turn, parse_action, parse_turn, serialize_action, tokenize_action
from .harness import (
    DeadlineConfigError, LatencyModel, LoopConfig, MockPolicy, SimEnv, format_table, read_playlist,
    run_closed_loop, speedup,
)
from .specdecode import decode_action

log = logging.getLogger("agent_rt")


def _latency(path) -> LatencyModel:
    return LatencyModel.load(path) if path else LatencyModel()


def cmd_loop(args) -> int:
    lat = _latency(args.latency)
    if args.overlap_ms is not None:
        lat = LatencyModel.from_mapping({**lat.to_dict(), "overlap_ms": args.overlap_ms})
    playlist = read_playlist(args.policy) if args.policy else None
    policy = MockPolicy(args.seed, playlist, args.think_every)
    config = LoopConfig(strict=args.strict, wall_clock=args.wall_clock, capacity=args.capacity)
    try:
        rep = run_closed_loop(SimEnv(args.seed), policy, lat, args.cycles, config, seed=args.seed)
    except DeadlineConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sys.stdout.write(format_table(rep))
    if args.json:
        Path(args.json).write_text(rep.to_json(), encoding="utf-8")
    if args.strict and rep.late_chunks:
        print(f"deadline violation: {rep.late_chunks} late chunks", file=sys.stderr)
        return 1
    return 0


def cmd_bench(args) -> int:
    base = LatencyModel.load(args.baseline)
    opt = LatencyModel.load(args.optimized)
    rep = run_closed_loop(SimEnv(args.seed), MockPolicy(args.seed), opt, args.cycles, seed=args.seed)
    ratio = speedup(rep, base, opt)
    sys.stdout.write(format_table(rep))
    shown = "unbounded" if math.isinf(ratio) else f"{ratio:.2f}x"
    print(f"speedup {shown} (baseline {args.baseline} vs optimized {args.optimized}, "
          f"{len(rep.non_reasoning())} cycles)")
    return 0


def cmd_serve_mock(args) -> int:
    from .wire.transport import MockInferenceServer

    policy = MockPolicy(args.seed, read_playlist(args.policy) if args.policy else None)
    n = len(policy)

    def respond(seq, image):
        return policy(image, None, seq % n if n else seq)

    server = MockInferenceServer(respond, args.host, args.port, token_delay=args.token_delay_ms / 1000)
    host, port = server.address
    print(f"serving on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def cmd_curate(args) -> int:
    from .pipeline import PipelineConfig, curate_session
    from .pipeline.samples import write_samples

    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    res = curate_session(args.input, args.kind, not args.no_history, config)
    with open(args.out, "w", encoding="utf-8") as fh:
        n = write_samples(res.samples, fh)
    print(f"offset {res.alignment.offset_ms:.1f} ms, {res.alignment.frames_dropped} frames dropped; "
          f"{res.pairs_in} pairs -> {n} samples")
    if res.filter_report is not None:
        r = res.filter_report
        print(f"idle {r.idle_in} -> {r.idle_out}, active {r.active_in}, jitter dropped {r.jitter_dropped}")
    for d in res.diagnostics:
        print(f"{d.code}: {d.message}", file=sys.stderr)
    return 0


def cmd_parse(args) -> int:
    lines = [args.text] if args.text is not None else [ln for ln in sys.stdin if ln.strip()]
    status = 0
    for line in lines:
        try:
            if args.turn:
                print(format_turn(parse_turn(line.strip())))
                continue
            action = parse_action(line)
        except GrammarError as exc:
            print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
            status = 1
            continue
        print(serialize_action(action))
        if args.tokens:
            toks = tokenize_action(action)
            res = decode_action(action)
            print(json.dumps(toks))
            print(f"{len(toks)} tokens, {res.forward_steps} forward steps")
    return status


def cmd_replay(args) -> int:
    src = open(args.file, encoding="utf-8") if args.file != "-" else sys.stdin
    with src:
        if args.events:
            stream = read_jsonl(src)
        else:
            actions = [parse_action(ln) for ln in src if ln.strip()]
            tail = KeyChunk.of(*args.prev_tail.split()) if args.prev_tail else KeyChunk()
            stream = lower_actions(actions, tail)
    if args.trace:
        for row in replay(stream):
            keys = " ".join(sorted(row.state.held)) or "-"
            print(f"{row.at:>8}  {keys:<24} mouse={row.mouse[0]},{row.mouse[1]} scroll={row.scroll}")
    else:
        write_jsonl(stream, sys.stdout)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="agent-rt", description="Real-time game agent control loop tools.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("loop", help="run the closed-loop latency simulation")
    s.add_argument("--cycles", type=int, default=None)
    s.add_argument("--latency", help="latency model TOML")
    s.add_argument("--policy", help="scripted playlist JSONL")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--think-every", type=int, default=None)
    s.add_argument("--capacity", type=int, default=20)
    s.add_argument("--overlap-ms", type=float, default=None)
    s.add_argument("--strict", action="store_true", help="fail on any deadline violation")
    s.add_argument("--wall-clock", action="store_true", help="pace cycles in real time")
    s.add_argument("--json", help="write the JSON report here")
    s.set_defaults(fn=cmd_loop)

    s = sub.add_parser("bench", help="price one run under a baseline and an optimized model")
    s.add_argument("--baseline", required=True)
    s.add_argument("--optimized", required=True)
    s.add_argument("--cycles", type=int, default=200)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("serve-mock", help="serve mock turns over TCP")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--policy", help="scripted playlist JSONL (cycled)")
    s.add_argument("--token-delay-ms", type=float, default=0.0)
    s.set_defaults(fn=cmd_serve_mock)

    s = sub.add_parser("curate", help="turn a recorded session into training samples")
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--kind", choices=("pretrain", "instruct", "reasoning"), default="pretrain")
    s.add_argument("--no-history", action="store_true")
    s.add_argument("--config", help="pipeline TOML")
    s.set_defaults(fn=cmd_curate)

    s = sub.add_parser("parse", help="canonicalize action strings (argument or stdin lines)")
    s.add_argument("text", nargs="?")
    s.add_argument("--turn", action="store_true", help="parse full model turns")
    s.add_argument("--tokens", action="store_true", help="also print tokens and decode steps")
    s.set_defaults(fn=cmd_parse)

    s = sub.add_parser("replay", help="lower actions to timed events, or trace an event log")
    s.add_argument("file", help="actions (one per line) or events JSONL with --events; '-' for stdin")
    s.add_argument("--events", action="store_true")
    s.add_argument("--prev-tail", default="", help="keys held before the first action")
    s.add_argument("--trace", action="store_true", help="print held keys after every event")
    s.set_defaults(fn=cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
