"""File formats: sample CSV, truth sidecar, model documents and scenario configs."""

from __future__ import annotations

import configparser
import csv
from importlib import resources
import math
from pathlib import Path

from .classifier import ErrorClass
from .errors import ConfigError, Malformed, MalformedRow, MissingHeader, NonMonotoneT, VersionMismatch
from .ident import ArmaModel, SensorSample, fit_arma, select_order
from .synth import CLEAN, DEFAULT_DURATION, DEFAULT_MAGNITUDES, FaultSpec, ScenarioConfig

HEADER = ("t", "sensor_id", "value")
HEADER_EXOG = HEADER + ("exog",)
TRUTH_HEADER = ("t", "sensor_id", "label")
LABELS = (CLEAN,) + tuple(c.value for c in ErrorClass)
MODEL_VERSION = 1
MODEL_MAGIC = "# sentinel-model"


def _content(lines):
    """Yield ``(line_no, fields)`` skipping blank and ``#`` comment lines."""
    for no, line in enumerate(lines, start=1):
        text = line.rstrip("\r\n")
        if not text.strip() or text.lstrip().startswith("#"):
            continue
        yield no, next(csv.reader([text]))


def _float(text, what, line):
    try:
        v = float(text)
    except ValueError:
        raise MalformedRow(f"line {line}: {what} {text!r} is not a number", line) from None
    if not math.isfinite(v):
        raise MalformedRow(f"line {line}: {what} must be finite", line)
    return v


def parse_csv(lines):
    """Lazily parse ``t,sensor_id,value[,exog]`` rows into samples.

    Per-sensor timestamps must strictly increase.
    """
    rows = _content(lines)
    first = next(rows, None)
    if first is None or tuple(c.strip() for c in first[1]) not in (HEADER, HEADER_EXOG):
        raise MissingHeader(f"expected header {','.join(HEADER)}[,exog]")
    width = len(first[1])
    last = {}
    for no, fields in rows:
        if len(fields) != width:
            raise MalformedRow(f"line {no}: expected {width} fields, got {len(fields)}", no)
        t_text, sid = fields[0].strip(), fields[1].strip()
        if not t_text.isdigit():
            raise MalformedRow(f"line {no}: t {t_text!r} is not a non-negative integer", no)
        if not sid:
            raise MalformedRow(f"line {no}: empty sensor_id", no)
        t = int(t_text)
        value = _float(fields[2], "value", no)
        exog = _float(fields[3], "exog", no) if width == 4 else None
        if sid in last and t <= last[sid]:
            raise NonMonotoneT(f"line {no}: t={t} does not advance past {last[sid]} for sensor {sid!r}", no, sid)
        last[sid] = t
        yield SensorSample(t, sid, value, exog)


def write_csv(samples, fh, exog=None, comments=()):
    """Write samples with ``repr`` floats so they reparse exactly."""
    samples = list(samples)
    if exog is None:
        exog = bool(samples) and samples[0].exog is not None
    for c in comments:
        fh.write(f"# {c}\n")
    fh.write(",".join(HEADER_EXOG if exog else HEADER) + "\n")
    for s in samples:
        row = f"{s.t},{s.sensor_id},{float(s.value)!r}"
        if exog:
            row += f",{float(s.exog)!r}"
        fh.write(row + "\n")


def write_truth(stream, fh, comments=()):
    for c in comments:
        fh.write(f"# {c}\n")
    fh.write(",".join(TRUTH_HEADER) + "\n")
    for s, label in zip(stream.samples, stream.truth):
        fh.write(f"{s.t},{s.sensor_id},{label}\n")


def read_truth(lines):
    """Parse a truth sidecar into a list of ``(t, sensor_id, label)``."""
    rows = _content(lines)
    first = next(rows, None)
    if first is None or tuple(c.strip() for c in first[1]) != TRUTH_HEADER:
        raise MissingHeader(f"expected header {','.join(TRUTH_HEADER)}")
    out = []
    for no, fields in rows:
        if len(fields) != 3:
            raise MalformedRow(f"line {no}: expected 3 fields, got {len(fields)}", no)
        t_text, sid, label = (f.strip() for f in fields)
        if not t_text.isdigit():
            raise MalformedRow(f"line {no}: t {t_text!r} is not a non-negative integer", no)
        if label not in LABELS:
            raise MalformedRow(f"line {no}: unknown label {label!r}", no)
        out.append((int(t_text), sid, label))
    return out


def serialize_model(model):
    """Versioned ``key = value`` document; reals use 17 significant digits."""
    fmt = lambda xs: " ".join("%.17g" % v for v in xs)
    lines = [
        MODEL_MAGIC,
        f"version = {MODEL_VERSION}",
        f"n = {model.n}",
        f"m = {model.m}",
        f"exog = {str(model.exog).lower()}",
        f"alpha = {fmt(model.alpha)}",
        f"beta = {fmt(model.beta)}",
        f"sigma = {'%.17g' % model.sigma}",
        f"stable = {str(model.stable).lower()}",
        f"fitted_on = {model.fitted_on}",
    ]
    return "\n".join(lines) + "\n"


def _bool(text, key):
    if text not in ("true", "false"):
        raise Malformed(f"{key} must be true or false, got {text!r}")
    return text == "true"


def parse_model(text):
    fields = {}
    for no, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise Malformed(f"line {no}: expected 'key = value'")
        key, _, value = line.partition("=")
        fields[key.strip()] = value.strip()
    if "version" not in fields:
        raise Malformed("model document has no version")
    if fields["version"] != str(MODEL_VERSION):
        raise VersionMismatch(f"model version {fields['version']!r} is not supported (expected {MODEL_VERSION})")
    for key in ("n", "m", "exog", "alpha", "beta", "sigma", "stable", "fitted_on"):
        if key not in fields:
            raise Malformed(f"model document is missing {key!r}")
    try:
        n, m, fitted_on = int(fields["n"]), int(fields["m"]), int(fields["fitted_on"])
        alpha = tuple(float(v) for v in fields["alpha"].split())
        beta = tuple(float(v) for v in fields["beta"].split())
        sigma = float(fields["sigma"])
    except ValueError as exc:
        raise Malformed(f"bad numeric field: {exc}") from exc
    if len(alpha) != n or len(beta) != m + 1:
        raise Malformed(f"coefficient counts do not match orders n={n}, m={m}")
    model = ArmaModel(alpha, beta, sigma, fitted_on, _bool(fields["exog"], "exog"))
    if model.stable != _bool(fields["stable"], "stable"):
        raise Malformed("stable flag disagrees with the coefficients")
    return model


def parse_order(text):
    """``"auto"`` or ``"n,m"``."""
    text = text.strip()
    if text == "auto":
        return "auto"
    parts = text.split(",")
    try:
        n, m = (int(p) for p in parts) if len(parts) == 2 else (int(parts[0]), 0)
    except ValueError:
        raise ConfigError(f"order must be 'auto' or 'n,m', got {text!r}") from None
    if n < 1 or m < 0 or len(parts) > 2:
        raise ConfigError(f"order must satisfy n >= 1, m >= 0, got {text!r}")
    return (n, m)


def _floats(text, key):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"{key}: expected numbers, got {text!r}") from None


def _pair(text, key, cast=float):
    vals = [cast(float(v)) for v in text.replace(",", " ").split()]
    if len(vals) != 2 or vals[0] > vals[1]:
        raise ConfigError(f"{key}: expected 'lo, hi', got {text!r}")
    return tuple(vals)


PIPELINE_KEYS = {
    "confidence": float,
    "eval_window": int,
    "eps_keep": float,
    "eps_recompute": float,
    "buffer_cap": int,
    "f": int,
    "w": int,
    "f_close": int,
    "min_window": int,
    "order": parse_order,
    "max_n": int,
    "max_m": int,
    "lam": float,
    "bootstrap_len": int,
}


def demo_config_text():
    return resources.files("sentinel").joinpath("data/demo.ini").read_text()


def read_scenario(source):
    """Scenario from an INI file path, or ``"demo"`` for the bundled one."""
    if str(source) == "demo":
        text, base = demo_config_text(), Path.cwd()
    else:
        path = Path(source)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {source}: {exc}") from exc
        base = path.parent
    return parse_scenario(text, base)


def parse_scenario(text, base=Path(".")):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    try:
        sc = cp["scenario"]
        length = sc.getint("length")
        if length is None:
            raise ConfigError("[scenario] needs length")
        seed = sc.getint("seed", 0)
        sensor = sc.get("sensor_id", "s1")
        t0 = sc.getint("t0", 0)
        model = _model_section(cp, base)
        sigma = cp.getfloat("noise", "sigma", fallback=1.0) if cp.has_section("noise") else 1.0

        faults = []
        for name in sorted(s for s in cp.sections() if s.startswith("fault")):
            fs = cp[name]
            faults.append(
                FaultSpec(
                    ErrorClass(fs.get("class")),
                    fs.getint("start"),
                    fs.getint("duration"),
                    fs.getfloat("magnitude"),
                    fs.get("mode", "stuck"),
                )
            )
        kwargs = {}
        if cp.has_section("random"):
            rs = cp["random"]
            kwargs["random_points"] = rs.getint("points", 0)
            if "classes" in rs:
                kwargs["classes"] = tuple(ErrorClass(c.strip()) for c in rs["classes"].split(","))
            mags = dict(DEFAULT_MAGNITUDES)
            for cls in ErrorClass:
                key = f"magnitude.{cls.value}"
                if key in rs:
                    mags[cls] = _pair(rs[key], key)
            kwargs["magnitudes"] = mags
            kwargs["duration"] = _pair(rs.get("duration", "%d,%d" % DEFAULT_DURATION), "duration", int)
            kwargs["min_gap"] = rs.getint("min_gap", 20)
            kwargs["lead_in"] = rs.getint("lead_in", 0)
        pipeline = {}
        if cp.has_section("pipeline"):
            for key, raw in cp["pipeline"].items():
                if key not in PIPELINE_KEYS:
                    raise ConfigError(f"[pipeline] unknown key {key!r}")
                pipeline[key] = PIPELINE_KEYS[key](raw)
    except ConfigError:
        raise
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad scenario config: {exc}") from exc
    return ScenarioConfig(model, length, seed, sigma, sensor, faults, t0=t0, pipeline=pipeline, **kwargs)


def _model_section(cp, base):
    if not cp.has_section("model"):
        raise ConfigError("scenario needs a [model] section")
    ms = cp["model"]
    if "fit_from" in ms:
        path = Path(ms["fit_from"])
        if not path.is_absolute():
            path = base / path
        try:
            with open(path) as fh:
                samples = list(parse_csv(fh))
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
        order = parse_order(ms.get("order", "auto"))
        exog = [s.exog for s in samples] if samples and samples[0].exog is not None else None
        if order == "auto":
            order = select_order(samples, ms.getint("max_n", 4), ms.getint("max_m", 0), exog)
        return fit_arma(samples, order[0], order[1], exog)
    if "alpha" not in ms:
        raise ConfigError("[model] needs alpha (and optional beta) or fit_from")
    alpha = _floats(ms["alpha"], "alpha")
    beta = _floats(ms.get("beta", "1"), "beta")
    return ArmaModel(alpha, beta, 0.0, 0, ms.getboolean("exog", False))
