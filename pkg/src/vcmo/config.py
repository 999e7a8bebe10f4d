"""Project configuration: a flat ``section.key = value`` text format.

Lines starting with ``#`` are comments. Keys are dotted; numbered sections use
an integer segment (``stage.1.a0``, ``resonator.branch.3.q``). The schema is
:data:`SCHEMA`; see ``docs/config_schema.md`` for the user-facing version.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

from .dataio import atomic_open, format_value
from .errors import ConfigError, DomainError
from .loop import DEFAULT_STAGES, GainStage, LoopConfig
from .resonator import (
    LOBAR_C0_ASSUMED,
    MbvdResonator,
    PRESETS,
    branch_from_spec,
    get_preset,
)
from .tank import DEFAULT_REGION_TOL, FixedCapacitor, TankConfig, VaractorModel

log = logging.getLogger(__name__)

_DEFAULT_VARACTOR = VaractorModel()
_DEFAULT_TANK = TankConfig()

# key -> (type, default, description). None default = optional, no default.
SCHEMA: dict[str, tuple[str, object, str]] = {
    "resonator.preset": ("str", None, "built-in resonator preset name"),
    "resonator.file": ("path", None, "resonator model file (output of fit/export-preset)"),
    "resonator.label": ("str", None, "free-form label for an inline resonator"),
    "resonator.c_0_f": ("float", None, "static capacitance; overrides preset/file value"),
    "tank.l_h": ("float", _DEFAULT_TANK.l, "tank inductance"),
    "tank.c_s_f": ("float", _DEFAULT_TANK.c_s, "shunt capacitance at each port"),
    "tank.r_l_ohm": ("float", 0.0, "series resistance of the inductor"),
    "tank.c_p_fixed_f": ("float", None, "fixed C_P replacing the varactor"),
    "varactor.c_j0_f": ("float", _DEFAULT_VARACTOR.c_j0, "zero-bias junction capacitance"),
    "varactor.v_j_v": ("float", _DEFAULT_VARACTOR.v_j, "junction potential"),
    "varactor.m": ("float", _DEFAULT_VARACTOR.m, "grading exponent"),
    "varactor.v_min_v": ("float", _DEFAULT_VARACTOR.v_min, "lowest valid bias"),
    "varactor.v_max_v": ("float", _DEFAULT_VARACTOR.v_max, "highest valid bias"),
    "sweep.bias_start_v": ("float", 0.0, "tuning sweep start bias"),
    "sweep.bias_stop_v": ("float", 8.0, "tuning sweep stop bias"),
    "sweep.bias_step_v": ("float", 0.01, "tuning sweep bias step"),
    "sweep.bias_v": ("float", 2.0, "bias for single-bias commands (sweep, regions)"),
    "sweep.f_start_hz": ("float", None, "frequency window start (default 0.9*lowest f_m)"),
    "sweep.f_stop_hz": ("float", None, "frequency window stop (default 1.1*highest f_m)"),
    "sweep.f_step_hz": ("float", None, "frequency grid step (default: 8 samples/bandwidth)"),
    "regions.tol": ("float", DEFAULT_REGION_TOL, "relative half-width of Region 2"),
    "pn.f_carrier_hz": ("float", 300e6, "carrier frequency"),
    "pn.noise_factor_db": ("float", 3.0, "amplifier noise figure"),
    "pn.f_flicker_hz": ("float", 1e3, "flicker corner"),
    "pn.q_loaded": ("float", None, "loaded Q (default: nearest branch loaded by its own R_m)"),
    "pn.r_external_ohm": ("float", None, "external loading resistance for loaded Q"),
    "pn.p_sig_w": ("float", None, "carrier power; if set, no calibration is done"),
    "pn.anchor_dbchz": ("float", -100.0, "calibration anchor value"),
    "pn.anchor_offset_hz": ("float", 1e3, "calibration anchor offset"),
    "pn.offset_start_hz": ("float", 10.0, "profile start offset"),
    "pn.offset_stop_hz": ("float", 100e6, "profile stop offset"),
    "pn.points_per_decade": ("int", 10, "profile density"),
    "pn.p_dc_w": ("float", 9e-3, "DC power for the oscillator FoM"),
}

_STAGE_KEYS = {
    "a0": ("float", "low-frequency voltage gain"),
    "f_pole_hz": ("float_or_none", "single-pole corner ('none' = flat)"),
    "r_out_ohm": ("float", "output resistance"),
    "r_in_ohm": ("float", "input resistance"),
}
_BRANCH_KEYS = {
    "f_m_hz": "series resonance frequency",
    "q": "unloaded quality factor",
    "r_m_ohm": "motional resistance",
}
_STAGE_RE = re.compile(r"^stage\.(\d+)\.([a-z0-9_]+)$")
_BRANCH_RE = re.compile(r"^resonator\.branch\.(\d+)\.([a-z0-9_]+)$")
_LINE_RE = re.compile(r"^([A-Za-z0-9_.]+)\s*=\s*(.*)$")


def parse_kv(text: str, name: str = "<config>") -> dict[str, str]:
    """Parse ``key = value`` lines; duplicate keys and malformed lines are errors."""
    out: dict[str, str] = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        m = _LINE_RE.match(line)
        if not m:
            raise ConfigError(f"{name}:{n}: expected 'key = value', got {raw!r}")
        key, value = m.group(1).lower(), m.group(2).strip()
        if key in out:
            raise ConfigError(f"{name}:{n}: duplicate key {key!r}", [key])
        out[key] = value
    return out


def _as_float(key: str, text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {text!r}", [key]) from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite", [key])
    return v


def _as_int(key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}", [key]) from None


def _convert(key: str, kind: str, text: str):
    if kind == "float":
        return _as_float(key, text)
    if kind == "float_or_none":
        return None if text.lower() in ("none", "") else _as_float(key, text)
    if kind == "int":
        return _as_int(key, text)
    return text


@dataclass(frozen=True)
class ProjectConfig:
    """Validated project settings plus the record of defaults that were used."""

    resonator: MbvdResonator
    resonator_source: str
    tank: TankConfig
    stages: tuple[GainStage, ...]
    values: dict = field(default_factory=dict)
    defaults_applied: dict = field(default_factory=dict)
    path: str | None = None

    @property
    def loop(self) -> LoopConfig:
        return LoopConfig(self.stages, self.tank, self.resonator)

    def get(self, key: str):
        return self.values.get(key)

    def bias_grid(self) -> list[float]:
        start, stop, step = (self.values[k] for k in
                             ("sweep.bias_start_v", "sweep.bias_stop_v", "sweep.bias_step_v"))
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        # Rounded so grids are reproducible and endpoints land exactly in range.
        return [round(start + k * step, 12) for k in range(n)]

    def window(self) -> tuple[float, float]:
        lo = self.values.get("sweep.f_start_hz")
        hi = self.values.get("sweep.f_stop_hz")
        d_lo, d_hi = self.loop.default_window()
        return (d_lo if lo is None else lo, d_hi if hi is None else hi)


def _read_resonator_file(path: Path) -> MbvdResonator:
    if not path.is_file():
        raise ConfigError(f"resonator.file: {path} does not exist", ["resonator.file"])
    kv = parse_kv(path.read_text(encoding="utf-8"), str(path))
    extra = [k for k in kv if not (k.startswith("resonator.") and k not in ("resonator.file", "resonator.preset"))]
    if extra:
        raise ConfigError(f"{path}: model file may only hold inline resonator keys: {', '.join(extra)}", extra)
    return _inline_resonator(kv, str(path))


def _inline_resonator(kv: dict[str, str], name: str) -> MbvdResonator:
    rows: dict[int, dict[str, float]] = {}
    for key, text in kv.items():
        m = _BRANCH_RE.match(key)
        if m:
            rows.setdefault(int(m.group(1)), {})[m.group(2)] = _as_float(key, text)
    if "resonator.c_0_f" not in kv:
        raise ConfigError(f"{name}: inline resonator needs resonator.c_0_f", ["resonator.c_0_f"])
    branches = []
    for idx in sorted(rows):
        row = rows[idx]
        missing = [k for k in _BRANCH_KEYS if k not in row]
        if missing:
            keys = [f"resonator.branch.{idx}.{k}" for k in missing]
            raise ConfigError(f"{name}: missing {', '.join(keys)}", keys)
        try:
            branches.append(branch_from_spec(row["f_m_hz"], row["q"], row["r_m_ohm"]))
        except DomainError as e:
            sub = {"f_m": "f_m_hz", "r_m": "r_m_ohm"}.get(e.field, e.field)
            key = f"resonator.branch.{idx}.{sub}"
            raise ConfigError(f"{key}: {e}", [key]) from None
    c_0 = _as_float("resonator.c_0_f", kv["resonator.c_0_f"])
    try:
        return MbvdResonator(c_0, tuple(branches), kv.get("resonator.label", "inline"))
    except DomainError as e:
        key = "resonator.c_0_f" if e.field == "c_0" else "resonator.branch"
        raise ConfigError(f"{key}: {e}", [key]) from None


def config_from_dict(kv: dict[str, str], base_dir: Path | None = None,
                     name: str = "<config>") -> ProjectConfig:
    """Validate a parsed key-value mapping and apply defaults."""
    base_dir = base_dir or Path.cwd()
    unknown = []
    for key in kv:
        if key in SCHEMA:
            continue
        m = _STAGE_RE.match(key)
        if m and m.group(2) in _STAGE_KEYS:
            continue
        m = _BRANCH_RE.match(key)
        if m and m.group(2) in _BRANCH_KEYS:
            continue
        unknown.append(key)
    if unknown:
        raise ConfigError(f"{name}: unknown keys: {', '.join(sorted(unknown))}", sorted(unknown))

    values: dict[str, object] = {}
    defaults: dict[str, object] = {}
    for key, (kind, default, _) in SCHEMA.items():
        if key in kv:
            values[key] = _convert(key, kind, kv[key])
        elif default is not None:
            values[key] = default
            defaults[key] = default

    # Resonator: exactly one source.
    has_inline = any(_BRANCH_RE.match(k) for k in kv)
    sources = [s for s, present in (("preset", "resonator.preset" in kv),
                                    ("file", "resonator.file" in kv),
                                    ("inline", has_inline)) if present]
    if not sources:
        raise ConfigError(f"{name}: resonator source missing (set resonator.preset, "
                          "resonator.file, or inline resonator.branch.N.* keys)", ["resonator"])
    if len(sources) > 1:
        raise ConfigError(f"{name}: more than one resonator source given: {', '.join(sources)}",
                          ["resonator"])
    source = sources[0]
    c0_override = values.get("resonator.c_0_f")
    if c0_override is not None and not c0_override > 0:
        raise ConfigError("resonator.c_0_f: must be > 0", ["resonator.c_0_f"])
    if source == "preset":
        preset = kv["resonator.preset"]
        if preset not in PRESETS:
            raise ConfigError(f"resonator.preset: unknown preset {preset!r}; "
                              f"available: {', '.join(sorted(PRESETS))}", ["resonator.preset"])
        resonator = get_preset(preset)
        if c0_override is not None:
            resonator = resonator.with_c0(c0_override)
        elif LOBAR_C0_ASSUMED:
            defaults["resonator.c_0_f"] = resonator.c_0
        src = f"preset:{preset}"
    elif source == "file":
        p = Path(kv["resonator.file"])
        if not p.is_absolute():
            p = base_dir / p
        resonator = _read_resonator_file(p)
        if c0_override is not None:
            resonator = resonator.with_c0(c0_override)
        src = f"file:{p}"
    else:
        resonator = _inline_resonator(kv, name)
        src = "inline"

    # Tank.
    try:
        if "tank.c_p_fixed_f" in values:
            varactor = FixedCapacitor(values["tank.c_p_fixed_f"], values["varactor.v_min_v"],
                                      values["varactor.v_max_v"])
        else:
            varactor = VaractorModel(values["varactor.c_j0_f"], values["varactor.v_j_v"],
                                     values["varactor.m"], values["varactor.v_min_v"],
                                     values["varactor.v_max_v"])
    except DomainError as e:
        key = {"c": "tank.c_p_fixed_f", "c_j0": "varactor.c_j0_f", "v_j": "varactor.v_j_v",
               "m": "varactor.m", "v_min": "varactor.v_min_v"}.get(e.field, "varactor")
        raise ConfigError(f"{key}: {e}", [key]) from None
    try:
        tank = TankConfig(values["tank.l_h"], values["tank.c_s_f"], varactor, values["tank.r_l_ohm"])
    except DomainError as e:
        key = {"l": "tank.l_h", "c_s": "tank.c_s_f", "r_l": "tank.r_l_ohm"}[e.field]
        raise ConfigError(f"{key}: {e}", [key]) from None

    # Stages: numbered from 1, contiguous.
    stage_rows: dict[int, dict[str, str]] = {}
    for key, text in kv.items():
        m = _STAGE_RE.match(key)
        if m:
            stage_rows.setdefault(int(m.group(1)), {})[m.group(2)] = text
    if stage_rows:
        if sorted(stage_rows) != list(range(1, len(stage_rows) + 1)):
            raise ConfigError("stage numbers must be 1, 2, ... without gaps", ["stage"])
        stages = []
        for idx in sorted(stage_rows):
            row = stage_rows[idx]
            if "a0" not in row:
                raise ConfigError(f"stage.{idx}.a0 is required", [f"stage.{idx}.a0"])
            base = DEFAULT_STAGES[min(idx, len(DEFAULT_STAGES)) - 1]
            args = {}
            for sub, (kind, _) in _STAGE_KEYS.items():
                key = f"stage.{idx}.{sub}"
                if sub in row:
                    args[sub] = _convert(key, kind, row[sub])
                else:
                    args[sub] = {"a0": base.a0, "f_pole_hz": base.f_pole,
                                 "r_out_ohm": base.r_out, "r_in_ohm": base.r_in}[sub]
                    defaults[key] = args[sub]
            try:
                stages.append(GainStage(args["a0"], args["f_pole_hz"], args["r_out_ohm"], args["r_in_ohm"]))
            except DomainError as e:
                key = f"stage.{idx}." + {"a0": "a0", "f_pole": "f_pole_hz", "r_out": "r_out_ohm",
                                         "r_in": "r_in_ohm"}[e.field]
                raise ConfigError(f"{key}: {e}", [key]) from None
        stages = tuple(stages)
    else:
        stages = DEFAULT_STAGES
        for idx, s in enumerate(stages, start=1):
            defaults.update({f"stage.{idx}.a0": s.a0, f"stage.{idx}.f_pole_hz": s.f_pole,
                             f"stage.{idx}.r_out_ohm": s.r_out, f"stage.{idx}.r_in_ohm": s.r_in})

    _check_ranges(values, tank)
    for key in sorted(defaults):
        log.info("default applied: %s = %s", key, format_value(defaults[key]))
    return ProjectConfig(resonator, src, tank, stages, values, defaults, name)


def _check_ranges(values: dict, tank: TankConfig):
    def need(cond, key, msg):
        if not cond:
            raise ConfigError(f"{key}: {msg}", [key])

    lo, hi = tank.varactor.v_min, tank.varactor.v_max
    need(values["sweep.bias_step_v"] > 0, "sweep.bias_step_v", "must be > 0")
    need(values["sweep.bias_start_v"] < values["sweep.bias_stop_v"], "sweep.bias_stop_v",
         "must exceed sweep.bias_start_v")
    for key in ("sweep.bias_start_v", "sweep.bias_stop_v", "sweep.bias_v"):
        need(lo <= values[key] <= hi, key, f"must lie in the varactor range [{lo}, {hi}] V")
    f_lo, f_hi = values.get("sweep.f_start_hz"), values.get("sweep.f_stop_hz")
    for key in ("sweep.f_start_hz", "sweep.f_stop_hz", "sweep.f_step_hz"):
        if values.get(key) is not None:
            need(values[key] > 0, key, "must be > 0")
    if f_lo is not None and f_hi is not None:
        need(f_lo < f_hi, "sweep.f_stop_hz", "must exceed sweep.f_start_hz")
    need(0 < values["regions.tol"] < 0.1, "regions.tol", "must be in (0, 0.1)")
    for key in ("pn.f_carrier_hz", "pn.anchor_offset_hz", "pn.offset_start_hz",
                "pn.offset_stop_hz", "pn.p_dc_w"):
        need(values[key] > 0, key, "must be > 0")
    need(values["pn.f_flicker_hz"] >= 0, "pn.f_flicker_hz", "must be >= 0")
    need(values["pn.offset_start_hz"] < values["pn.offset_stop_hz"], "pn.offset_stop_hz",
         "must exceed pn.offset_start_hz")
    need(values["pn.points_per_decade"] >= 1, "pn.points_per_decade", "must be >= 1")
    for key in ("pn.q_loaded", "pn.p_sig_w"):
        if values.get(key) is not None:
            need(values[key] > 0, key, "must be > 0")
    if values.get("pn.r_external_ohm") is not None:
        need(values["pn.r_external_ohm"] >= 0, "pn.r_external_ohm", "must be >= 0")


def load_config(path) -> ProjectConfig:
    """Read, validate and default a project config file.

    Raises:
        ConfigError: unreadable file, unknown keys (all listed), missing
            resonator source, or a field violating its constraint.
    """
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {p}: {e.strerror}") from None
    return config_from_dict(parse_kv(text, str(p)), p.parent, str(p))


def default_config() -> ProjectConfig:
    """Configuration used when no file is given: ten-overtone preset, default loop."""
    return config_from_dict({"resonator.preset": "lobar_table1"}, name="<defaults>")


def format_model(r: MbvdResonator, header: tuple[str, ...] = ()) -> str:
    """Serialize a resonator as an inline-resonator key-value file."""
    lines = [f"# {h}" if h else "#" for h in header]
    lines.append("# tone  f_m_hz  q  r_m_ohm")
    for k, b in enumerate(r.branches, start=1):
        lines.append(f"#   {k}  {format_value(b.f_m)}  {format_value(b.q)}  {format_value(b.r_m)}")
    lines.append(f"resonator.label = {r.label or 'model'}")
    lines.append(f"resonator.c_0_f = {format_value(r.c_0)}")
    for k, b in enumerate(r.branches, start=1):
        lines.append(f"resonator.branch.{k}.f_m_hz = {format_value(b.f_m)}")
        lines.append(f"resonator.branch.{k}.q = {format_value(b.q)}")
        lines.append(f"resonator.branch.{k}.r_m_ohm = {format_value(b.r_m)}")
    return "\n".join(lines) + "\n"


def write_model(path, r: MbvdResonator, header: tuple[str, ...] = ()):
    with atomic_open(path) as fh:
        fh.write(format_model(r, header))


def read_model(path) -> MbvdResonator:
    return _read_resonator_file(Path(path))
