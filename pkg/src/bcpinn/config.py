"""YAML run configuration with field-level validation.

A config file has the sections ``problem``, ``network``, ``schedule``,
``adam``, ``lbfgs``, ``compat`` and ``runtime`` plus the top-level scalars
``seed``, ``method``, ``variant`` and ``reference``. Every key is optional;
defaults depend on the problem kind. Errors name the offending field and,
when it comes from a file, its line.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Any

import yaml

from .net import ConfigurationError, DomainBox
from .optim import AdamConfig, LbfgsConfig
from .pde import AllenCahnParams, CahnHilliardParams, PdeProblem, ProblemKind
from .sampling import SegmentSchedule, allen_cahn_schedule, cahn_hilliard_schedule
from .trainer import TrainConfig, standard_budget

METHODS = ("bc", "standard")
VARIANTS = ("plain", "log-residual")


class ConfigFileError(ConfigurationError):
    def __init__(self, message: str, field: str | None = None, line: int | None = None,
                 source: str | None = None):
        where = ":".join(str(p) for p in (source, line) if p is not None)
        prefix = f"{where}: " if where else ""
        super().__init__(f"{prefix}{field + ': ' if field else ''}{message}")
        self.field = field
        self.line = line


_INT, _FLOAT, _STR, _BOOL = "int", "float", "str", "bool"

_SCHEMA: dict[str, dict[str, Any]] = {
    "problem": {"kind": _STR, "c1_sq": _FLOAT, "c2": _FLOAT, "alpha": _FLOAT, "kappa": _FLOAT,
                "boundary_order": _INT},
    "network": {"hidden": "ints", "output_width": _INT},
    "schedule": {"T": _FLOAT, "segments": _INT, "steps_per_segment": _INT, "n_initial": _INT,
                 "n_boundary": _INT, "n_collocation": _INT, "adam_iters": _INT},
    "adam": {"lr": _FLOAT, "beta1": _FLOAT, "beta2": _FLOAT, "epsilon": _FLOAT,
             "log_stride": _INT, "reset_per_segment": _BOOL},
    "lbfgs": {"max_iter": _INT, "max_fun_evals": _INT, "max_line_search": _INT, "history": _INT,
              "ftol": _FLOAT, "gtol": "float?", "wolfe_c1": _FLOAT, "wolfe_c2": _FLOAT,
              "log_stride": _INT},
    "compat": {"x_stride": _INT, "t_stride": _INT},
    "runtime": {"chunk_size": _INT, "workers": _INT},
}
_TOP = {"seed": _INT, "method": _STR, "variant": _STR, "reference": "str?"}

_SCHEDULE_KEYS = {"segments": "n_max", "steps_per_segment": "steps"}


def _line_index(text: str) -> dict[tuple, int]:
    """Map key paths to 1-based line numbers of their values."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError:
        return {}
    lines: dict[tuple, int] = {}

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (k.value,)
                lines[key] = k.start_mark.line + 1
                walk(v, key)

    if root is not None:
        walk(root, ())
    return lines


def _coerce(kind: str, value, field: str, err):
    optional = kind.endswith("?")
    kind = kind.rstrip("?")
    if value is None and optional:
        return None
    if kind == _INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise err(f"expected an integer, got {value!r}", field)
        return value
    if kind == _FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise err(f"expected a number, got {value!r}", field)
        return float(value)
    if kind == _BOOL:
        if not isinstance(value, bool):
            raise err(f"expected true or false, got {value!r}", field)
        return value
    if kind == _STR:
        if not isinstance(value, str):
            raise err(f"expected a string, got {value!r}", field)
        return value
    if kind == "ints":
        if not isinstance(value, list) or not value or not all(
                isinstance(v, int) and not isinstance(v, bool) and v > 0 for v in value):
            raise err(f"expected a non-empty list of positive integers, got {value!r}", field)
        return tuple(value)
    raise AssertionError(kind)


@dataclass(frozen=True)
class RunConfig:
    problem: PdeProblem
    hidden: tuple
    seed: int
    method: str
    variant: str
    schedule: SegmentSchedule
    train: TrainConfig
    reference: str | None = None
    source: str | None = None

    @property
    def layer_dims(self) -> list[int]:
        return self.train.layer_dims(self.problem)

    def effective(self) -> tuple[SegmentSchedule, TrainConfig]:
        """Schedule and training config actually run (standard PINN is collapsed to one segment)."""
        if self.method == "standard" and self.schedule.n_max > 1:
            return standard_budget(self.schedule, self.train)
        return self.schedule, self.train

    def as_dict(self) -> dict:
        schedule, train = self.effective()
        p = self.problem
        return {
            "problem": {"kind": p.kind.value, **asdict(p.params), "boundary_order": p.boundary_order},
            "network": {"layer_dims": self.layer_dims},
            "seed": self.seed,
            "method": self.method,
            "variant": self.variant,
            "schedule": asdict(schedule),
            "adam": {**asdict(train.adam), "reset_per_segment": train.reset_adam},
            "lbfgs": asdict(train.lbfgs),
            "compat": {"x_stride": train.compat_x_stride, "t_stride": train.compat_t_stride},
            "runtime": {"chunk_size": train.chunk_size, "workers": train.workers},
            "reference": self.reference,
            "source": self.source,
        }


def parse_config(data: dict | None, lines: dict | None = None, source: str | None = None) -> RunConfig:
    """Validate a nested mapping (as loaded from YAML) into a :class:`RunConfig`."""
    data = {} if data is None else data
    lines = lines or {}

    def err(message, field=None):
        path = tuple(field.split(".")) if field else ()
        return ConfigFileError(message, field, lines.get(path), source)

    if not isinstance(data, dict):
        raise err("top level must be a mapping")
    values: dict[str, dict] = {}
    for key, raw in data.items():
        if key in _TOP:
            values.setdefault("", {})[key] = _coerce(_TOP[key], raw, key, err)
        elif key in _SCHEMA:
            if raw is None:
                raw = {}
            if not isinstance(raw, dict):
                raise err("section must be a mapping", key)
            section = values.setdefault(key, {})
            for sub, v in raw.items():
                name = f"{key}.{sub}"
                if sub not in _SCHEMA[key]:
                    raise err(f"unknown field (expected one of {', '.join(_SCHEMA[key])})", name)
                section[sub] = _coerce(_SCHEMA[key][sub], v, name, err)
        else:
            raise err("unknown section", str(key))

    top = values.get("", {})
    method = top.get("method", "bc")
    if method not in METHODS:
        raise err(f"must be one of {METHODS}", "method")
    variant = top.get("variant", "plain")
    if variant not in VARIANTS:
        raise err(f"must be one of {VARIANTS}", "variant")
    seed = top.get("seed", 0)
    if seed < 0:
        raise err("must be >= 0", "seed")

    prob = values.get("problem", {})
    try:
        kind = ProblemKind(prob.get("kind", "AC").upper())
    except ValueError:
        raise err("must be one of AC, CHPS, CH4", "problem.kind") from None
    sched_vals = {_SCHEDULE_KEYS.get(k, k): v for k, v in values.get("schedule", {}).items()}
    is_ac = kind is ProblemKind.AC
    for k in ("alpha", "kappa") if is_ac else ("c1_sq", "c2"):
        if k in prob:
            raise err(f"not a parameter of {kind.value}", f"problem.{k}")
    try:
        if is_ac:
            params = AllenCahnParams(prob.get("c1_sq", 1e-4), prob.get("c2", 5.0))
        else:
            params = CahnHilliardParams(prob.get("alpha", 0.02), prob.get("kappa", 1.0))
    except ConfigurationError as exc:
        raise err(str(exc), "problem") from None
    try:
        schedule = (allen_cahn_schedule if is_ac else cahn_hilliard_schedule)(**sched_vals)
    except ConfigurationError as exc:
        raise err(str(exc), "schedule") from None
    n_d = prob.get("boundary_order", 2 if is_ac else 1)
    try:
        problem = PdeProblem(kind, params, n_d, DomainBox(t_max=schedule.T))
    except ConfigurationError as exc:
        raise err(str(exc), "problem.boundary_order") from None

    net = values.get("network", {})
    hidden = net.get("hidden", (200, 200, 200, 200))
    if "output_width" in net and net["output_width"] != problem.output_width:
        raise err(f"{kind.value} needs output width {problem.output_width}", "network.output_width")

    adam_vals = dict(values.get("adam", {}))
    reset_adam = adam_vals.pop("reset_per_segment", True)
    try:
        adam = AdamConfig(**adam_vals, n_iter=schedule.adam_iters)
    except ConfigurationError as exc:
        raise err(str(exc), "adam") from None
    lbfgs_vals = {"max_iter": 2000, **values.get("lbfgs", {})}
    try:
        lbfgs = LbfgsConfig(**lbfgs_vals)
    except ConfigurationError as exc:
        raise err(str(exc), "lbfgs") from None
    compat = values.get("compat", {})
    runtime = values.get("runtime", {})
    for name, v in [("compat.x_stride", compat.get("x_stride", 1)),
                    ("compat.t_stride", compat.get("t_stride", 1)),
                    ("runtime.workers", runtime.get("workers", 1)),
                    ("runtime.chunk_size", runtime.get("chunk_size", 256))]:
        if v < 1:
            raise err("must be >= 1", name)
    train = TrainConfig(hidden=hidden, adam=adam, lbfgs=lbfgs,
                        log_residual=variant == "log-residual", reset_adam=reset_adam,
                        compat_x_stride=compat.get("x_stride", 1),
                        compat_t_stride=compat.get("t_stride", 1),
                        chunk_size=runtime.get("chunk_size", 256),
                        workers=runtime.get("workers", 1))
    return RunConfig(problem, tuple(hidden), seed, method, variant, schedule, train,
                     top.get("reference"), source)


def _set_dotted(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = data
    for p in parts[:-1]:
        child = node.get(p)
        if child is None:
            child = node[p] = {}
        if not isinstance(child, dict):
            raise ConfigFileError("cannot override inside a scalar", dotted)
        node = child
    node[parts[-1]] = value


def parse_override(item: str) -> tuple[str, Any]:
    """``section.key=value`` with the value parsed as a YAML scalar."""
    if "=" not in item:
        raise ConfigFileError(f"override {item!r} must look like section.key=value")
    key, raw = item.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigFileError(f"cannot parse value {raw!r}: {exc}", key) from None
    return key.strip(), value


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a YAML config (or start from defaults) and apply dotted-key overrides."""
    data: dict = {}
    lines: dict = {}
    source = None
    if path is not None:
        source = str(path)
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigFileError(f"cannot read config: {exc.strerror}", source=source) from None
        try:
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            problem = getattr(exc, "problem", None) or str(exc)
            raise ConfigFileError(f"malformed YAML: {problem}", line=line, source=source) from None
        lines = _line_index(text)
    data = copy.deepcopy(data)
    for key, value in (overrides or {}).items():
        _set_dotted(data, key, value)
        lines.pop(tuple(key.split(".")), None)
    return parse_config(data, lines, source)


def with_seed(cfg: RunConfig, seed: int) -> RunConfig:
    return replace(cfg, seed=seed)
