"""Run configuration for the command-line front end.

A run is described by one JSON document. Top-level keys follow the usual
hyperparameter listing names (``n_layers``, ``T``, ``lrQ``, ...), so an
existing listing can be pasted in as is; kernel-engine and evaluation
extras live under the ``kernel`` and ``eval`` namespaces.

``parse_config_text`` also accepts listings written as Python-ish dict
literals: ``#`` comments, bare ``Adam(...)`` style values and missing
commas between entries are tolerated.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .data import ShapeSpec
from .descent import REACTION_MODES, DescentConfig
from .errors import ConfigError
from .neural_critic import ACTIVATIONS, NeuralConfig

ENGINES = ("kernel", "neural")


def _default_source():
    return {"kind": "gaussian", "dim": 2}


def _default_target():
    comps = [{"mean": [sx * 2.0, sy * 2.0], "cov_diag": [0.09, 0.09]} for sx in (1, -1) for sy in (1, -1)]
    return {"kind": "mog", "components": comps}


@dataclass
class KernelOptions:
    n_features: int = 128
    # "lambda" in the JSON document
    lam: float = 1e-3
    bandwidth: float | None = None

    def to_dict(self):
        return {"n_features": self.n_features, "lambda": self.lam, "bandwidth": self.bandwidth}


@dataclass
class EvalOptions:
    n_features: int = 300
    bandwidth: float | None = None


@dataclass
class Seeds:
    data: int = 0
    descent: int = 0


@dataclass
class ImageOptions:
    source: str | None = None
    target: str | None = None
    output: str = "recolored.png"


@dataclass
class RunConfig:
    engine: str = "kernel"
    mode: str = "weighted"
    gamma: int = 1
    n_layers: list = field(default_factory=lambda: [64, 1024, 64])
    n_points_src: int = 4000
    n_points_target: int = 4000
    T: int = 800
    optimizer: str = "Adam(amsgrad=True)"
    batchSize: int = 512
    n_c_startup: int = 200
    n_c: int = 20
    wdecay: float = 1e-5
    lrD: float = 1e-4
    lrQ: float = 1e-4
    tau: float = 1e-3
    alpha: float = 0.6
    lambda_aug_init: float = 1e-5
    rho: float = 1e-6
    normalization: str | None = None
    dropout: float = 0.0
    activation: str = "tanh"
    snapshot_every: int = 0
    output_dir: str = "usd_out"
    kernel: KernelOptions = field(default_factory=KernelOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    seeds: Seeds = field(default_factory=Seeds)
    source: dict = field(default_factory=_default_source)
    target: dict = field(default_factory=_default_target)
    images: ImageOptions = field(default_factory=ImageOptions)

    # ---- validation -------------------------------------------------

    def validate(self) -> "RunConfig":
        if self.engine not in ENGINES:
            raise ConfigError(f"engine must be one of {ENGINES}, got {self.engine!r}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {tuple(ACTIVATIONS)}, got {self.activation!r}")
        for name in ("n_points_src", "n_points_target", "batchSize"):
            if not _is_int(getattr(self, name)) or getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)!r}")
        for name in ("T", "n_c", "n_c_startup", "snapshot_every"):
            if not _is_int(getattr(self, name)) or getattr(self, name) < 0:
                raise ConfigError(f"{name} must be a nonnegative integer, got {getattr(self, name)!r}")
        if not self.n_layers or not all(_is_int(h) and h >= 1 for h in self.n_layers):
            raise ConfigError(f"n_layers must be a list of positive integers, got {self.n_layers!r}")
        for name in ("wdecay", "lambda_aug_init", "rho"):
            if not np.isfinite(getattr(self, name)) or (name != "lambda_aug_init" and getattr(self, name) < 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {getattr(self, name)!r}")
        if not self.lrD > 0:
            raise ConfigError(f"lrD must be > 0, got {self.lrD}")
        if not _is_int(self.kernel.n_features) or self.kernel.n_features < 1:
            raise ConfigError(f"kernel.n_features must be >= 1, got {self.kernel.n_features}")
        if not _is_int(self.eval.n_features) or self.eval.n_features < 1:
            raise ConfigError(f"eval.n_features must be >= 1, got {self.eval.n_features}")
        for bw in (self.kernel.bandwidth, self.eval.bandwidth):
            if bw is not None and not (np.isfinite(bw) and bw > 0):
                raise ConfigError(f"bandwidth must be > 0, got {bw}")
        self.source_spec()
        self.target_spec()
        self.descent_config()
        return self

    def source_spec(self) -> ShapeSpec:
        return _shape(self.source, self.n_points_src, "source")

    def target_spec(self) -> ShapeSpec:
        return _shape(self.target, self.n_points_target, "target")

    def descent_config(self) -> DescentConfig:
        """Engine-specific step configuration derived from the listing keys."""
        base = dict(
            alpha=float(self.alpha), lam=float(self.kernel.lam), gamma=self.gamma,
            step_size=float(self.lrQ), reaction_rate=float(self.tau), n_steps=int(self.T),
            reaction_mode=self.mode, seed=int(self.seeds.descent), snapshot_every=int(self.snapshot_every),
        )
        if self.mode not in REACTION_MODES:
            raise ConfigError(f"mode must be one of {REACTION_MODES}, got {self.mode!r}")
        if self.engine == "kernel":
            return DescentConfig(**base).validate()
        return NeuralConfig(
            **base,
            hidden=tuple(int(h) for h in self.n_layers), activation=self.activation,
            n_c_startup=int(self.n_c_startup), n_c=int(self.n_c), lr_critic=float(self.lrD),
            batch_size=int(self.batchSize), wdecay=float(self.wdecay),
            lambda_aug_init=float(self.lambda_aug_init), rho=float(self.rho), dropout=float(self.dropout),
            critic_seed=sub_seed(self.seeds.descent, 3),
        ).validate()

    # ---- (de)serialization ------------------------------------------

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, KernelOptions):
                v = v.to_dict()
            elif hasattr(v, "__dataclass_fields__"):
                v = asdict(v)
            out[f.name] = copy.deepcopy(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigError("configuration must be a JSON object")
        d = copy.deepcopy(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown configuration keys: {unknown}")
        kw = {}
        for key, value in d.items():
            if key == "kernel":
                value = _section(KernelOptions, _rename(value, "lambda", "lam", "kernel"), "kernel")
            elif key == "eval":
                value = _section(EvalOptions, value, "eval")
            elif key == "seeds":
                value = _section(Seeds, value, "seeds")
            elif key == "images":
                value = _section(ImageOptions, value, "images")
            kw[key] = value
        return cls(**kw).validate()

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _rename(d, old, new, where):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    d = dict(d)
    if old in d:
        d[new] = d.pop(old)
    elif new in d:
        raise ConfigError(f"unknown {where} key {new!r}")
    return d


def _section(cls, value, where):
    if not isinstance(value, dict):
        raise ConfigError(f"{where} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(value) - known)
    if unknown:
        raise ConfigError(f"unknown {where} keys: {unknown}")
    return cls(**value)


def _shape(d, n, where) -> ShapeSpec:
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be a shape object")
    d = dict(d)
    d["n"] = n
    try:
        return ShapeSpec.from_dict(d)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def sub_seed(seed: int, stream: int) -> int:
    """Deterministic child seed for the given stream of a run seed."""
    return int(np.random.SeedSequence([int(seed), int(stream)]).generate_state(1)[0])


# ---- lenient parsing ----------------------------------------------------

_CALL_VALUE = re.compile(r'(:\s*)([A-Za-z_][\w.]*\((?:[^()"]|"[^"]*")*\))')


def _strip_comment(line: str) -> str:
    in_str = False
    for i, ch in enumerate(line):
        if ch == '"' and (i == 0 or line[i - 1] != "\\"):
            in_str = not in_str
        elif ch == "#" and not in_str:
            return line[:i]
    return line


def _python_literals(line: str) -> str:
    # replace Python constants outside string literals
    parts = re.split(r'("(?:[^"\\]|\\.)*")', line)
    for i in range(0, len(parts), 2):
        parts[i] = re.sub(r"\bTrue\b", "true", parts[i])
        parts[i] = re.sub(r"\bFalse\b", "false", parts[i])
        parts[i] = re.sub(r"\bNone\b", "null", parts[i])
    return "".join(parts)


def loosen(text: str) -> str:
    """Rewrite a Python-style listing into strict JSON text."""
    lines = []
    for raw in text.splitlines():
        line = _strip_comment(raw).rstrip()
        line = _CALL_VALUE.sub(lambda m: m.group(1) + json.dumps(m.group(2)), line)
        line = _python_literals(line)
        if line.strip():
            lines.append(line)
    for i in range(len(lines) - 1):
        cur, nxt = lines[i].rstrip(), lines[i + 1].lstrip()
        if nxt.startswith('"') and not cur.endswith((",", "{", "[", ":")):
            lines[i] = cur + ","
    joined = "\n".join(lines)
    return re.sub(r",(\s*[}\]])", r"\1", joined)


def parse_config_text(text: str) -> dict:
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    try:
        return json.loads(loosen(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse configuration: {exc}") from None


def load_config(path, overrides=()) -> RunConfig:
    with open(path) as fh:
        d = parse_config_text(fh.read())
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: configuration must be a JSON object")
    for item in overrides:
        apply_override(d, item)
    return RunConfig.from_dict(d)


def apply_override(d: dict, item: str) -> None:
    """Apply ``dotted.key=value``; the value is parsed as JSON when possible."""
    if "=" not in item:
        raise ConfigError(f"override must look like key=value, got {item!r}")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    parts = key.strip().split(".")
    node = d
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"cannot set {key}: {p} is not an object")
    node[parts[-1]] = value
