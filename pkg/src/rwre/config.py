"""Flat ``key = value`` experiment configs with dotted namespaces.

Example::

    kind = velocity
    seed = 7
    law.kind = drift-perturbed
    law.d = 2
    law.delta = 0.2
    run.n = 10000
    run.trials = 200

Blank lines and ``#`` comments are ignored.  Values are typed by key; lists
are comma separated and rows of a matrix are separated by ``;``.
"""

from dataclasses import dataclass, field
import hashlib

from rwre.env_core import (
    drift_perturbed_law,
    mixture_law,
    truncated_dirichlet_law,
    uniform_law,
)

KINDS = ("condt", "velocity", "regen", "intersect", "fn_tail", "torus", "trap", "clt",
         "exit_stats")


class ConfigError(ValueError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


# value codecs -----------------------------------------------------------------

def _bool(s):
    if s in ("true", "false"):
        return s == "true"
    raise ValueError(f"expected true or false, got {s!r}")


def _list(conv):
    def parse(s):
        return tuple(conv(x.strip()) for x in s.split(",") if x.strip())
    return parse


def _rows(s):
    return tuple(_list(float)(r) for r in s.split(";") if r.strip())


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(_fmt(r) for r in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


_ints = _list(int)
_floats = _list(float)

LAW_KEYS = {
    "kind": str, "d": int, "delta": float, "direction": int, "kappa": float,
    "atoms": _rows, "weights": _floats, "alpha": _floats, "strength": float,
}

# run keys per kind: name -> (parser, required)
RUN_KEYS = {
    "velocity": {"n": (int, True), "trials": (int, True)},
    "condt": {"L": (_ints, True), "trials": (int, True), "ell": (_ints, False),
              "horizon": (int, False), "velocity_n": (int, False),
              "velocity_trials": (int, False)},
    "regen": {"n": (int, True), "trials": (int, True), "ell": (_ints, False),
              "guard": (int, False), "oracle": (_bool, False)},
    "intersect": {"n_grid": (_ints, True), "env_count": (int, True), "pairs": (int, True),
                  "horizon_factor": (float, False), "horizon_power": (float, False),
                  "velocity_n": (int, False), "velocity_trials": (int, False)},
    "fn_tail": {"n": (_ints, True), "env_count": (int, True), "u_grid": (_floats, False),
                "trap_L": (int, False), "trap_c1": (float, False)},
    "torus": {"L": (int, True), "n": (_ints, True)},
    "trap": {"L": (_ints, True), "c1": (float, True), "trials": (int, True),
             "horizon": (int, True), "c1_relaxed": (float, False), "mc_L": (int, False),
             "mc_trials": (int, False), "c3": (float, False)},
    "clt": {"n": (_ints, True), "env_count": (int, True)},
    "exit_stats": {"N": (int, True), "j": (int, False), "trials": (int, True),
                   "cell_size": (int, True), "theta": (_floats, False)},
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int = 0
    out: str = ""
    law: dict = field(default_factory=dict)
    run: dict = field(default_factory=dict)

    def items(self):
        """Canonical (key, value) pairs in serialization order."""
        yield "kind", self.kind
        yield "seed", self.seed
        if self.out:
            yield "out", self.out
        for k in sorted(self.law):
            yield f"law.{k}", self.law[k]
        for k in sorted(self.run):
            yield f"run.{k}", self.run[k]

    def to_text(self, include_out=True):
        return "".join(f"{k} = {_fmt(v)}\n" for k, v in self.items()
                       if include_out or k != "out")

    def content_hash(self):
        """Git-style blob SHA-1 of the canonical text (``out`` excluded)."""
        data = self.to_text(include_out=False).encode()
        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

    def build_law(self):
        return build_law(self.law)


def parse_config(text):
    """Parse config text; raises :class:`ConfigError` with the offending line."""
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw!r}", lineno)
        key, value = (p.strip() for p in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        seen[key] = (value, lineno)
    if "kind" not in seen:
        raise ConfigError("missing required key 'kind'")
    kind, kline = seen.pop("kind")
    if kind not in KINDS:
        raise ConfigError(f"unknown experiment kind {kind!r}", kline)
    cfg = ExperimentConfig(kind)
    schema = RUN_KEYS[kind]
    for key, (value, lineno) in seen.items():
        try:
            if key == "seed":
                cfg.seed = int(value)
                if not 0 <= cfg.seed < 2 ** 64:
                    raise ValueError("seed must be an unsigned 64-bit integer")
            elif key == "out":
                cfg.out = value
            elif key.startswith("law.") and key[4:] in LAW_KEYS:
                cfg.law[key[4:]] = LAW_KEYS[key[4:]](value)
            elif key.startswith("run.") and key[4:] in schema:
                cfg.run[key[4:]] = schema[key[4:]][0](value)
            else:
                raise ConfigError(f"unknown key {key!r}", lineno)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from None
    missing = [f"run.{k}" for k, (_, req) in schema.items() if req and k not in cfg.run]
    if "kind" not in cfg.law:
        missing.insert(0, "law.kind")
    if missing:
        raise ConfigError(f"missing required key {missing[0]!r}")
    try:
        cfg.build_law()
    except (ValueError, TypeError, KeyError) as exc:
        line = seen.get("law.kind", (None, None))[1]
        raise ConfigError(f"invalid law: {exc}", line) from None
    return cfg


def load_config(path):
    with open(path) as fh:
        return parse_config(fh.read())


def build_law(spec):
    """EnvironmentLaw (or compass mixture) from the ``law.*`` keys."""
    kind = spec["kind"]
    extra = set(spec) - {"kind"}

    def only(*allowed):
        bad = extra - set(allowed)
        if bad:
            raise ValueError(f"law.{sorted(bad)[0]} not used by {kind} laws")

    kappa = spec.get("kappa")
    if kind == "uniform":
        only("d", "kappa")
        return uniform_law(spec["d"], kappa)
    if kind == "drift-perturbed":
        only("d", "delta", "direction", "kappa")
        return drift_perturbed_law(spec["d"], spec["delta"], spec.get("direction", 0), kappa)
    if kind == "mixture":
        only("atoms", "weights", "kappa")
        atoms = spec["atoms"]
        return mixture_law(atoms, spec.get("weights", (1.0,) * len(atoms)), kappa)
    if kind == "truncated-dirichlet":
        only("alpha", "kappa")
        return truncated_dirichlet_law(spec["alpha"], kappa)
    if kind == "compass":
        from rwre.traps import compass_law

        only("d", "strength", "kappa")
        return compass_law(spec["d"], spec["strength"], kappa)
    raise ValueError(f"unknown law kind {kind!r}")
