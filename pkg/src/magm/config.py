"""Run plans and their text format.

A plan document is UTF-8 ``key = value`` lines with ``#`` comments, grouped
under ``[problem]``, ``[solver]`` and ``[output]``. Keys before the first
section may come from any section; ``problem = jos1`` there names the
problem. Sweep documents may give several alternatives separated by ``|``;
``a, b = 0, 0.25 | 0.5, 0.0625`` varies two keys together.

A JSON object with the same three sections (the run's config echo) is
accepted as well.
"""

import itertools
import json
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional, Tuple

from .errors import ConfigError

MODES = ("mag_gm", "msd", "mavd")
PROBLEMS = ("jos1", "quadratic")


@dataclass(frozen=True)
class ProblemSpec:
    name: str = "jos1"
    n: int = 2
    m: Optional[int] = None
    seed: int = 0
    x0_seed: int = 0
    x0_scale: float = 5.0


@dataclass(frozen=True)
class SolverSpec:
    mode: str = "mag_gm"
    a: float = 0.0
    b: float = 0.25
    s: Optional[float] = None
    eps: float = 1e-10
    k_max: int = 100_000
    subproblem_tol: float = 1e-10
    alpha: float = 3.0
    dt: float = 1e-3
    t_end: float = 1000.0
    sample_every: int = 10
    rate_window: Optional[Tuple[float, float]] = None


@dataclass(frozen=True)
class OutputSpec:
    dir: str = "runs/default"
    store_iterates: bool = False
    ref_count: int = 64
    ref_tail: bool = True


@dataclass(frozen=True)
class RunPlan:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    solver: SolverSpec = field(default_factory=SolverSpec)
    output: OutputSpec = field(default_factory=OutputSpec)

    @property
    def mode(self):
        return self.solver.mode

    def to_dict(self):
        return {"problem": asdict(self.problem), "solver": asdict(self.solver), "output": asdict(self.output)}

    def with_output(self, directory=None, store_iterates=None):
        out = self.output
        if directory is not None:
            out = replace(out, dir=str(directory))
        if store_iterates is not None:
            out = replace(out, store_iterates=bool(store_iterates))
        return replace(self, output=out)


SECTIONS = {"problem": ProblemSpec, "solver": SolverSpec, "output": OutputSpec}
_KEY_SECTION = {f.name: sec for sec, cls in SECTIONS.items() for f in fields(cls)}
_TYPES = {sec: {f.name: f.type for f in fields(cls)} for sec, cls in SECTIONS.items()}
# top-level spellings that differ from the section key
_ALIASES = {"problem": ("problem", "name"), "output_dir": ("output", "dir"), "out": ("output", "dir")}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _convert(section, key, value):
    kind = _TYPES[section][key]
    if isinstance(value, str):
        text = value.strip()
        if kind in (int, "int"):
            num = float(text)
            if num != int(num):
                raise ValueError(f"expected an integer, got {text!r}")
            return int(num)
        if kind in (float, "float"):
            return float(text)
        if kind in (bool, "bool"):
            return _parse_bool(text)
        if kind in (str, "str"):
            return text
        if key == "m":
            return None if text.lower() in ("", "none", "auto") else int(text)
        if key == "s":
            return None if text.lower() in ("", "none", "auto") else float(text)
        if key == "rate_window":
            if text.lower() in ("", "none", "auto"):
                return None
            lo, hi = (float(p) for p in text.replace(":", ",").split(","))
            return (lo, hi)
        raise ValueError(f"unsupported key {key}")
    # JSON values
    if key == "rate_window" and value is not None:
        lo, hi = value
        return (float(lo), float(hi))
    if value is None:
        return None
    if kind in (int, "int") or key == "m":
        if float(value) != int(value):
            raise ValueError(f"expected an integer, got {value}")
        return int(value)
    if kind in (float, "float") or key == "s":
        return float(value)
    if kind in (bool, "bool"):
        if not isinstance(value, bool):
            raise ValueError(f"expected a boolean, got {value!r}")
        return value
    return str(value)


def _resolve_key(section, key, line):
    if section is None:
        if key in _ALIASES:
            return _ALIASES[key]
        if key in _KEY_SECTION:
            return _KEY_SECTION[key], key
        raise ConfigError(f"unknown key {key!r}", line=line, key=key)
    if key in _TYPES[section]:
        return section, key
    if section == "output" and key in ("output_dir", "out"):
        return "output", "dir"
    raise ConfigError(f"unknown key {key!r} in [{section}]", line=line, key=key)


def _lines(text):
    """Yield ``(line_no, section, keys, raw_value)`` for every assignment."""
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", line=no)
            name = line[1:-1].strip().lower()
            if name not in SECTIONS:
                raise ConfigError(f"unknown section [{name}]", line=no)
            section = name
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", line=no)
        lhs, rhs = line.split("=", 1)
        keys = [k.strip().lower() for k in lhs.split(",")]
        if not all(keys):
            raise ConfigError("empty key", line=no)
        yield no, section, keys, rhs.strip()


def _collect(text, allow_sweep):
    """Map ``(section, key)`` to a list of alternatives, zipped groups kept together."""
    groups = []
    seen = {}
    for no, section, keys, rhs in _lines(text):
        targets = [_resolve_key(section, k, no) for k in keys]
        for tgt in targets:
            if tgt in seen:
                raise ConfigError(f"duplicate key {tgt[1]!r} (first set on line {seen[tgt]})", line=no, key=tgt[1])
            seen[tgt] = no
        options = [o.strip() for o in rhs.split("|")]
        if len(options) > 1 and not allow_sweep:
            raise ConfigError("'|' alternatives are only allowed in sweep documents", line=no, key=keys[0])
        combos = []
        for opt in options:
            if len(targets) == 1 and targets[0][1] == "rate_window":
                parts = [opt]
            else:
                parts = [p.strip() for p in opt.split(",")] if len(targets) > 1 else [opt]
            if len(parts) != len(targets):
                raise ConfigError(f"{len(targets)} keys but {len(parts)} values in {opt!r}", line=no, key=keys[0])
            try:
                combos.append(tuple(_convert(sec, key, val) for (sec, key), val in zip(targets, parts)))
            except ValueError as exc:
                raise ConfigError(f"bad value for {keys}: {exc}", line=no, key=keys[0]) from None
        groups.append((no, targets, combos))
    return groups


def _build(assign):
    parts = {sec: {} for sec in SECTIONS}
    for (sec, key), value in assign.items():
        parts[sec][key] = value
    plan = RunPlan(ProblemSpec(**parts["problem"]), SolverSpec(**parts["solver"]), OutputSpec(**parts["output"]))
    return plan


def validate(plan, lines=None):
    """Range checks that need no problem data. ``lines`` maps key to line number."""
    lines = lines or {}

    def fail(key, msg):
        raise ConfigError(msg, line=lines.get(key), key=key)

    p, s, o = plan.problem, plan.solver, plan.output
    if p.name not in PROBLEMS:
        fail("name", f"unknown problem {p.name!r}; choose from {', '.join(PROBLEMS)}")
    if p.n < 1:
        fail("n", f"n must be >= 1, got {p.n}")
    if p.m is not None and p.m < 1:
        fail("m", f"m must be >= 1, got {p.m}")
    if p.name == "jos1" and p.m not in (None, 2):
        fail("m", "jos1 has exactly two objectives")
    if not p.x0_scale > 0:
        fail("x0_scale", f"x0_scale must be positive, got {p.x0_scale}")
    if s.mode not in MODES:
        fail("mode", f"mode must be one of {', '.join(MODES)}, got {s.mode!r}")
    if not 0.0 <= s.a < 1.0:
        fail("a", f"a must lie in [0, 1), got {s.a}")
    if not s.a * s.a / 4.0 <= s.b <= 0.25:
        fail("b", f"b must lie in [a²/4, 1/4], got b={s.b} with a={s.a}")
    if s.s is not None and not s.s > 0:
        fail("s", f"s must be positive, got {s.s}")
    if not s.eps >= 0:
        fail("eps", f"eps must be nonnegative, got {s.eps}")
    if s.k_max < 1:
        fail("k_max", f"k_max must be >= 1, got {s.k_max}")
    if not s.subproblem_tol > 0:
        fail("subproblem_tol", f"subproblem_tol must be positive, got {s.subproblem_tol}")
    if not s.alpha > 0:
        fail("alpha", f"alpha must be positive, got {s.alpha}")
    if not s.dt > 0:
        fail("dt", f"dt must be positive, got {s.dt}")
    if not s.t_end > 1:
        fail("t_end", f"t_end must exceed 1, got {s.t_end}")
    if s.sample_every < 1:
        fail("sample_every", f"sample_every must be >= 1, got {s.sample_every}")
    if s.rate_window is not None and not 0 < s.rate_window[0] < s.rate_window[1]:
        fail("rate_window", f"rate_window must satisfy 0 < lo < hi, got {s.rate_window}")
    if o.ref_count < 1:
        fail("ref_count", f"ref_count must be >= 1, got {o.ref_count}")
    if not o.dir:
        fail("dir", "output directory must be nonempty")
    return plan


def _from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ConfigError("JSON config must be an object")
    assign = {}
    for sec, body in doc.items():
        if sec not in SECTIONS or not isinstance(body, dict):
            raise ConfigError(f"unknown section {sec!r}", key=sec)
        for key, value in body.items():
            if key not in _TYPES[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]", key=key)
            try:
                assign[(sec, key)] = _convert(sec, key, value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {exc}", key=key) from None
    return validate(_build(assign))


def parse_config(text):
    """Parse and validate a single-run document into a :class:`RunPlan`.

    Raises
    ------
    ConfigError
        Syntax errors carry the line number; range errors name the key.
    """
    if text.lstrip().startswith("{"):
        return _from_json(text)
    groups = _collect(text, allow_sweep=False)
    assign = {}
    lines = {}
    for no, targets, combos in groups:
        for tgt, val in zip(targets, combos[0]):
            assign[tgt] = val
            lines[tgt[1]] = no
    return validate(_build(assign), lines)


def parse_sweep(text, out=None):
    """Expand a sweep document into a list of validated plans.

    Each plan writes to ``<dir>/run_<index>``, indices following the
    Cartesian product of the alternatives in document order. ``out``
    replaces the base directory.
    """
    if text.lstrip().startswith("{"):
        plan = _from_json(text)
        return [plan if out is None else plan.with_output(out)]
    groups = _collect(text, allow_sweep=True)
    lines = {tgt[1]: no for no, targets, _ in groups for tgt in targets}
    plans = []
    for choice in itertools.product(*[combos for _, _, combos in groups]):
        assign = {}
        for (_, targets, _), values in zip(groups, choice):
            assign.update(zip(targets, values))
        plan = validate(_build(assign), lines)
        plans.append(plan if out is None else plan.with_output(out))
    if len(plans) > 1:
        plans = [pl.with_output(f"{pl.output.dir}/run_{i:03d}") for i, pl in enumerate(plans)]
    return plans


def _format(value):
    if value is None:
        return "auto"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return str(value)


def to_config_text(plan):
    """Render a plan in the ``key = value`` format; :func:`parse_config` inverts it."""
    out = []
    for sec, body in plan.to_dict().items():
        out.append(f"[{sec}]")
        for key, value in body.items():
            if isinstance(value, list):
                value = tuple(value)
            out.append(f"{key} = {_format(value)}")
        out.append("")
    return "\n".join(out)


def plan_to_json(plan):
    return json.dumps(plan.to_dict(), indent=2, sort_keys=True)
