"""``sentinel`` command line: fit, simulate, detect, pipeline, eval.

Exit codes: 0 success, 1 input error, 2 internal error.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
from pathlib import Path
import sys

from .errors import InputError, SentinelError
from .evaluation import eval_match
from .events import emit_event, parse_event
from .ident import fit_arma, select_order
from .io import parse_csv, parse_model, parse_order, read_scenario, read_truth, serialize_model, write_csv, write_truth
from .kalman import chi2_threshold
from .pipeline import PipelineConfig, PipelineState, flush, register, run, speed_step
from .synth import make_scenario

SEED_ENV = "SENTINEL_SEED"


class ArgError(InputError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ArgError(f"{self.prog}: {message}")


def _order(text):
    try:
        return parse_order(text)
    except InputError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser():
    p = Parser(prog="sentinel", description="Sensor gross-error detection: fit, simulate, detect, pipeline, eval.")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=Parser)

    f = sub.add_parser("fit", help="identify a model from a sample CSV")
    f.add_argument("csv")
    f.add_argument("--order", type=_order, default="auto")
    f.add_argument("--max-n", type=int, default=4)
    f.add_argument("--max-m", type=int, default=0)
    f.add_argument("--sensor")
    f.add_argument("--out")

    s = sub.add_parser("simulate", help="labeled synthetic CSV plus truth sidecar")
    s.add_argument("--config", required=True, help="scenario file or 'demo'")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True, help="sample CSV; truth goes to <stem>.truth.csv")

    d = sub.add_parser("detect", help="GED events from a CSV and a model file")
    d.add_argument("csv")
    d.add_argument("--model", required=True)
    d.add_argument("--confidence", type=float, default=0.95)
    d.add_argument("--out")

    r = sub.add_parser("pipeline", help="full loop over a CSV or a scenario")
    r.add_argument("csv", nargs="?")
    r.add_argument("--config", help="scenario file or 'demo' (used when no CSV is given)")
    r.add_argument("--order", type=_order)
    r.add_argument("--confidence", type=float)
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="NDJSON events")
    r.add_argument("--summary", help="summary JSON (default: <out>.summary.json)")

    e = sub.add_parser("eval", help="score events against a truth sidecar")
    e.add_argument("--events", required=True)
    e.add_argument("--truth", required=True)
    e.add_argument("--out")
    return p


def _seed(args):
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ArgError(f"{SEED_ENV} must be an integer, got {env!r}") from None
    return args.seed


@contextlib.contextmanager
def _output(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            yield fh


def _open_input(path):
    try:
        return open(path, encoding="utf-8")
    except OSError as exc:
        raise ArgError(f"cannot open {path}: {exc}") from None


def cmd_fit(args):
    with _open_input(args.csv) as fh:
        samples = list(parse_csv(fh))
    sensors = sorted({s.sensor_id for s in samples})
    if args.sensor:
        samples = [s for s in samples if s.sensor_id == args.sensor]
        if not samples:
            raise ArgError(f"no samples for sensor {args.sensor!r}")
    elif len(sensors) > 1:
        raise ArgError(f"CSV holds several sensors {sensors}; pick one with --sensor")
    exog = [s.exog for s in samples] if samples and samples[0].exog is not None else None
    order = args.order
    if order == "auto":
        order = select_order(samples, args.max_n, args.max_m, exog)
    model = fit_arma(samples, order[0], order[1], exog)
    with _output(args.out) as out:
        out.write(serialize_model(model))


def cmd_simulate(args):
    cfg = read_scenario(args.config)
    seed = _seed(args)
    if seed is not None:
        cfg.seed = seed
    stream = make_scenario(cfg)
    out = Path(args.out)
    truth = out.with_name(out.stem + ".truth.csv")
    header = [f"seed={cfg.seed}", f"config={args.config}"]
    with _output(out) as fh:
        write_csv(stream.samples, fh, comments=header)
    with _output(truth) as fh:
        write_truth(stream, fh, comments=header)


def cmd_detect(args):
    chi2_threshold(1, args.confidence)
    try:
        model = parse_model(Path(args.model).read_text())
    except OSError as exc:
        raise ArgError(f"cannot open {args.model}: {exc}") from None
    cfg = PipelineConfig(confidence=args.confidence, order=(model.n, model.m if model.exog else 0))
    state = PipelineState(cfg)
    with _open_input(args.csv) as fh, _output(args.out) as out:
        for sample in parse_csv(fh):
            if sample.sensor_id not in state.channels:
                register(state, sample.sensor_id, [], model)
            for ev in speed_step(state, sample):
                out.write(emit_event(ev) + "\n")
        for ev in flush(state):
            out.write(emit_event(ev) + "\n")


def cmd_pipeline(args):
    seed = _seed(args)
    overrides = {}
    if args.order is not None:
        overrides["order"] = args.order
    if args.confidence is not None:
        overrides["confidence"] = args.confidence
    if args.csv:
        if args.config:
            raise ArgError("give either a CSV or --config, not both")
        settings = dict(overrides)
        fh = _open_input(args.csv)
        source = parse_csv(fh)
        origin = {"input": args.csv, "seed": None}
    elif args.config:
        cfg = read_scenario(args.config)
        if seed is not None:
            cfg.seed = seed
        settings = {**cfg.pipeline, **overrides}
        fh = None
        source = iter(make_scenario(cfg).samples)
        origin = {"input": f"scenario:{args.config}", "seed": cfg.seed}
    else:
        raise ArgError("pipeline needs a CSV or --config")
    config = PipelineConfig(**settings)
    summary_path = args.summary or (f"{args.out}.summary.json" if args.out not in (None, "-") else None)
    try:
        with _output(args.out) as out:
            summary = run(config, source, lambda ev: out.write(emit_event(ev) + "\n"))
    finally:
        if fh is not None:
            fh.close()
    doc = {**origin, "config": _config_dict(config), **summary}
    text = json.dumps(doc, indent=2) + "\n"
    if summary_path:
        with _output(summary_path) as fh_s:
            fh_s.write(text)
    else:
        sys.stderr.write(text)


def _config_dict(config):
    d = dict(vars(config))
    if isinstance(d.get("order"), tuple):
        d["order"] = list(d["order"])
    return d


def cmd_eval(args):
    with _open_input(args.events) as fh:
        events = [parse_event(line) for line in fh if line.strip()]
    with _open_input(args.truth) as fh:
        truth = read_truth(fh)
    summary = eval_match(events, truth)
    with _output(args.out) as out:
        out.write(summary.to_text())


COMMANDS = {
    "fit": cmd_fit,
    "simulate": cmd_simulate,
    "detect": cmd_detect,
    "pipeline": cmd_pipeline,
    "eval": cmd_eval,
}


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.cmd](args)
    except InputError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except SentinelError as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - exit-code contract
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
