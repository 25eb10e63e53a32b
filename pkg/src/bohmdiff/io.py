"""Run configuration files, CSV export and run manifests.

Configuration files are INI text (flat sections, ``key = value``). The
``[physical]`` section is required and must set every model parameter;
the other sections are optional and fall back to the defaults below.
Keys are case-sensitive; unknown sections and keys are errors.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .config import ConfigError, Mode, PhysicalConfig
from .trajectories import PROFILES, SwarmSpec

OUTPUT_ENV = "BOHMDIFF_OUTPUT_DIR"
CSV_FORMAT = "{:.16e}"  # 17 significant digits

PHYSICAL_KEYS = [f.name for f in fields(PhysicalConfig)]


@dataclass(frozen=True)
class FieldBlock:
    z_min: float = -6000.0
    z_max: float = 6000.0
    nz: int = 121
    R_min: float = 0.0
    R_max: float = 6000.0
    nR: int = 61
    t: float = 0.0


@dataclass(frozen=True)
class SeparatorBlock:
    theta_min: float = 0.2
    theta_max: float = 1.5
    n_samples: int = 4000


@dataclass(frozen=True)
class NodesBlock:
    theta_min: float = 0.473773
    theta_max: float = 0.47385
    branch: str = "outer"
    q_bars: tuple[int, ...] = (78823,)
    max_nodes: int = 200


@dataclass(frozen=True)
class SurveyBlock:
    theta_min: float = 0.2
    theta_max: float = 1.4
    n: int = 40
    bragg_below: float = 0.8
    branch: str = "outer"


@dataclass(frozen=True)
class SwarmBlock:
    n: int = 360
    z_start: float = -1e4
    R_min: float = 1500.0
    R_max: float = 3300.0
    sampling: str = "uniform"
    r_detect: float = 5e4
    t_max: float | None = None
    profile: str = "swarm"


@dataclass(frozen=True)
class TofBlock:
    theta_min_deg: float = 25.0
    theta_max_deg: float = 155.0
    n_bins: int = 60
    theta_ref_deg: float = 150.0


@dataclass(frozen=True)
class FitBlock:
    n_realizations: int = 100
    N_perp: int = 32


@dataclass(frozen=True)
class RunConfig:
    physical: PhysicalConfig
    mode: Mode = Mode.ADIABATIC
    output_dir: str = "out"
    seeds: dict = field(default_factory=lambda: {"swarm": 0, "fit": 0})
    field: FieldBlock = FieldBlock()
    separator: SeparatorBlock = SeparatorBlock()
    nodes: NodesBlock = NodesBlock()
    survey: SurveyBlock = SurveyBlock()
    swarm: SwarmBlock = SwarmBlock()
    tof: TofBlock = TofBlock()
    fit: FitBlock = FitBlock()

    def swarm_spec(self) -> SwarmSpec:
        s = self.swarm
        return SwarmSpec(
            n=s.n, z_start=s.z_start, R_range=(s.R_min, s.R_max), sampling=s.sampling,
            seed=self.seeds["swarm"], r_detect=s.r_detect, t_max=s.t_max, profile=s.profile, mode=self.mode,
        )

    def with_overrides(self, mode=None, seed=None, output_dir=None) -> "RunConfig":
        out = self
        if mode is not None:
            out = replace(out, mode=Mode(mode))
        if seed is not None:
            out = replace(out, seeds={k: int(seed) for k in out.seeds})
        if output_dir is not None:
            out = replace(out, output_dir=str(output_dir))
        return out

    def digest(self) -> str:
        return hashlib.sha256(serialize_config(self).encode()).hexdigest()


BLOCKS = {
    "field": FieldBlock,
    "separator": SeparatorBlock,
    "nodes": NodesBlock,
    "survey": SurveyBlock,
    "swarm": SwarmBlock,
    "tof": TofBlock,
    "fit": FitBlock,
}
SEED_KEYS = ("swarm", "fit")


class ConfigParseError(ConfigError):
    """Syntax or validation error located in the configuration text."""

    def __init__(self, message, line=None, column=None):
        self.line, self.column = line, column
        where = f"line {line}, column {column}: " if line is not None else ""
        super().__init__(where + message)


def _locate(text: str, section: str, key: str | None = None):
    """(line, column) of a section header or of a key inside it, 1-based."""
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip().lower()
            if key is None and current == section:
                return i, raw.index("[") + 1
            continue
        if current == section and key is not None and s and s[0] not in "#;":
            name = s.split("=", 1)[0].split(":", 1)[0].strip()
            if name == key:
                return i, raw.index(s[0]) + 1
    return None, None


def _convert(text, section, key, raw, kind):
    line, col = _locate(text, section, key)
    try:
        if kind is float:
            return float(raw)
        if kind is int:
            v = float(raw)
            if v != int(v):
                raise ValueError
            return int(v)
        if kind == "optional_float":
            return None if raw.strip().lower() in ("", "none") else float(raw)
        if kind == "int_tuple":
            return tuple(int(x) for x in raw.replace(",", " ").split())
        return raw.strip()
    except ValueError:
        raise ConfigParseError(f"[{section}] {key}: cannot read {raw!r} as {getattr(kind, '__name__', kind)}", line, col)


def _kind(dc, name):
    ann = {f.name: f.type for f in fields(dc)}[name]
    return {
        "float": float,
        "int": int,
        "str": str,
        "float | None": "optional_float",
        "tuple[int, ...]": "int_tuple",
    }[ann]


def parse_config(text: str) -> RunConfig:
    """Parse and validate configuration text; see the module docstring."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    cp.optionxform = str  # keys are case-sensitive (D and d are different parameters)
    try:
        cp.read_string(text)
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0] if exc.errors else (None, "")
        raise ConfigParseError(f"cannot parse {line!r}", lineno, 1) from None
    except configparser.DuplicateOptionError as exc:
        raise ConfigParseError(f"duplicate key {exc.option!r} in [{exc.section}]", exc.lineno, 1) from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigParseError(f"duplicate section [{exc.section}]", exc.lineno, 1) from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParseError("key outside any [section]", exc.lineno, 1) from None

    known = {"physical", "run", "seeds", *BLOCKS}
    for sec in cp.sections():
        if sec not in known:
            line, col = _locate(text, sec)
            raise ConfigParseError(f"unknown section [{sec}] (expected one of {sorted(known)})", line, col)

    def check_keys(section, allowed):
        if not cp.has_section(section):
            return
        for key in cp[section]:
            if key not in allowed:
                line, col = _locate(text, section, key)
                raise ConfigParseError(f"unknown key {key!r} in [{section}]", line, col)

    # physical parameters
    lower = {k: k for k in PHYSICAL_KEYS}
    check_keys("physical", lower)
    given = dict(cp["physical"]) if cp.has_section("physical") else {}
    required = [k for k in PHYSICAL_KEYS if k not in ("hbar2_2m", "coulomb_k")]
    missing = [k for k in required if k not in given]
    if missing:
        raise ConfigParseError("missing required keys in [physical]: " + ", ".join(missing))
    values = {}
    for key, raw in given.items():
        name = lower[key]
        values[name] = _convert(text, "physical", key, raw, int if name == "q_max" else float)
    try:
        phys = PhysicalConfig(**values)
    except ConfigError as exc:
        line, col = _locate(text, "physical", "q_max" if "q_max" in str(exc) else None)
        raise ConfigParseError(f"[physical] {exc}", line, col) from None

    # run options
    check_keys("run", {"mode", "output_dir"})
    run = cp["run"] if cp.has_section("run") else {}
    try:
        mode = Mode(run.get("mode", Mode.ADIABATIC.value).strip())
    except ValueError:
        line, col = _locate(text, "run", "mode")
        raise ConfigParseError(f"[run] mode must be one of {[m.value for m in Mode]}", line, col) from None
    output_dir = run.get("output_dir", "out").strip()

    check_keys("seeds", set(SEED_KEYS))
    seeds = {k: 0 for k in SEED_KEYS}
    if cp.has_section("seeds"):
        for key, raw in cp["seeds"].items():
            seeds[key] = _convert(text, "seeds", key, raw, int)

    blocks = {}
    for name, dc in BLOCKS.items():
        names = {f.name: f.name for f in fields(dc)}
        check_keys(name, names)
        kw = {}
        if cp.has_section(name):
            for key, raw in cp[name].items():
                kw[names[key]] = _convert(text, name, key, raw, _kind(dc, names[key]))
        blocks[name] = dc(**kw)

    cfg = RunConfig(phys, mode, output_dir, seeds, **blocks)
    _validate(cfg, text)
    return cfg


def _validate(cfg: RunConfig, text: str):
    """Check every block against its module's preconditions."""

    def fail(section, key, msg):
        line, col = _locate(text, section, key)
        raise ConfigParseError(f"[{section}] {msg}", line, col)

    f = cfg.field
    if f.nz < 1 or f.nR < 1:
        fail("field", "nz", "nz and nR must be >= 1")
    if f.z_min > f.z_max or not 0 <= f.R_min <= f.R_max:
        fail("field", "z_min", "need z_min <= z_max and 0 <= R_min <= R_max")
    s = cfg.separator
    if not 1e-3 < s.theta_min < s.theta_max < math.pi:
        fail("separator", "theta_min", "need theta_min < theta_max inside (theta_min cutoff, pi)")
    if s.n_samples < 2:
        fail("separator", "n_samples", "n_samples must be >= 2")
    for sec, blk in (("nodes", cfg.nodes), ("survey", cfg.survey)):
        if blk.branch not in ("inner", "outer"):
            fail(sec, "branch", "branch must be 'inner' or 'outer'")
        if not 1e-3 < blk.theta_min < blk.theta_max < math.pi:
            fail(sec, "theta_min", "need theta_min < theta_max inside (theta_min cutoff, pi)")
    if cfg.survey.n < 1:
        fail("survey", "n", "n must be >= 1")
    if cfg.swarm.profile not in PROFILES:
        fail("swarm", "profile", f"profile must be one of {sorted(PROFILES)}")
    try:
        cfg.swarm_spec()
    except ValueError as exc:
        fail("swarm", None, str(exc))
    t = cfg.tof
    if t.n_bins < 1 or not 0 < t.theta_min_deg < t.theta_max_deg < 180:
        fail("tof", "n_bins", "need n_bins >= 1 and 0 < theta_min_deg < theta_max_deg < 180")
    if not t.theta_min_deg <= t.theta_ref_deg < t.theta_max_deg:
        fail("tof", "theta_ref_deg", "theta_ref_deg must lie inside the binned range")
    if cfg.fit.n_realizations < 10 or cfg.fit.N_perp < 1:
        fail("fit", "n_realizations", "n_realizations must be >= 10 and N_perp >= 1")


def _fmt(v) -> str:
    if isinstance(v, Mode):
        return v.value
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if v is None:
        return "none"
    return str(v)


def serialize_config(cfg: RunConfig) -> str:
    """INI text that parses back to ``cfg``."""
    lines = ["[physical]"]
    lines += [f"{k} = {_fmt(v)}" for k, v in cfg.physical.as_dict().items()]
    lines += ["", "[run]", f"mode = {cfg.mode.value}", f"output_dir = {cfg.output_dir}", "", "[seeds]"]
    lines += [f"{k} = {cfg.seeds[k]}" for k in SEED_KEYS]
    for name in BLOCKS:
        lines += ["", f"[{name}]"]
        blk = getattr(cfg, name)
        lines += [f"{f.name} = {_fmt(getattr(blk, f.name))}" for f in fields(blk)]
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    return parse_config(text)


def resolve_output_dir(cfg: RunConfig, cli_value=None) -> Path:
    """--out, then the environment variable, then the config value."""
    if cli_value:
        return Path(cli_value)
    if os.environ.get(OUTPUT_ENV):
        return Path(os.environ[OUTPUT_ENV])
    return Path(cfg.output_dir)


# --- CSV ---------------------------------------------------------------------------


def _cell(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "nan" if math.isnan(v) else CSV_FORMAT.format(v)
    if v is None:
        return ""
    s = str(v)
    if any(c in s for c in ',"\n'):
        s = '"' + s.replace('"', '""') + '"'
    return s


def write_csv(path: Path, columns, rows, meta: dict) -> Path:
    """One ``# {json}`` metadata line, a header line, then the rows."""
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            if len(row) != len(columns):
                raise ValueError(f"row has {len(row)} cells, header has {len(columns)}")
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    """(metadata, header, rows as strings) of a file written by :func:`write_csv`."""
    import csv

    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        meta = json.loads(first[2:]) if first.startswith("# ") else {}
        reader = csv.reader(fh)
        header = next(reader)
        return meta, header, [r for r in reader]


def write_manifest(path: Path, cfg: RunConfig, command: str, files, failures, wall_time: float, version: str):
    record = {
        "command": command,
        "version": version,
        "config": serialize_config(cfg),
        "config_sha256": cfg.digest(),
        "seeds": cfg.seeds,
        "wall_time_s": wall_time,
        "outputs": [str(Path(f).name) for f in files],
        "failures": [str(f) for f in failures],
    }
    Path(path).write_text(json.dumps(record, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
