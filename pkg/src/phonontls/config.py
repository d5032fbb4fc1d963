"""Run-configuration files: TOML schema, defaults, unit conversion and hashing.

Keys ending in ``_hz`` hold ordinary frequencies (or rates quoted as
frequencies, e.g. gamma1/2pi).  They are multiplied by 2pi exactly once, here,
and stored under the key without the suffix.
"""

from __future__ import annotations

import copy
import hashlib
import json
import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .hilbert import DimensionError, HilbertLayout, TruncationError, check_truncation, required_n_max
from .lindblad import SystemConfig, strong_coupling_preset, weak_coupling_preset

TWO_PI = 2.0 * np.pi

EXPERIMENTS = ("ringdown", "interferometry", "ramsey-fit", "tls-params", "mc-report", "bvd-sweep")
PRESETS = ("none", "weak-coupling", "strong-coupling")


class ConfigError(ValueError):
    """The configuration file is unreadable or violates the schema."""


NUM = (int, float)
NUM_OR_LIST = (int, float, list)

# section -> key -> (accepted types, default); default None means optional with no value
SCHEMA: dict[str, dict[str, tuple]] = {
    "": {
        "experiment": (str, None),
        "seed": (int, 0),
        "figures": (bool, True),
    },
    "system": {
        "preset": (str, "none"),
        "n_tls": (int, None),
        "g_tls_hz": (NUM_OR_LIST, None),
        "delta_tls_hz": (NUM, None),
        "gamma1_hz": (NUM_OR_LIST, None),
        "gamma2_hz": (NUM_OR_LIST, None),
        "n_th": (NUM, None),
        "n_max": ((int, str), "auto"),
        "tls_thermal": (str, None),
        "mech_t2m_s": (NUM, None),
        "mech_dephasing_convention": (str, "envelope"),
    },
    "sweep": {
        "alpha": (NUM_OR_LIST, None),
        "nbar0": (NUM_OR_LIST, None),
        "taus_s": (list, None),
        "tau_max_s": (NUM, None),
        "n_taus": (int, 51),
        "phis_rad": (list, None),
        "n_phis": (int, 24),
    },
    "tolerances": {
        "rtol": (NUM, 1e-8),
        "atol": (NUM, 1e-14),
    },
    "fit": {
        "kappa1_fixed_hz": (NUM, None),
    },
    "ramsey": {
        "n_max": (int, None),
        "probs": (list, None),
        "omega0_hz": (NUM, 20e6),
        "two_chi_hz": (NUM, -1.48e6),
        "kappa_hz": (NUM, 1 / (TWO_PI * 1.4e-6)),
        "window_s": (NUM, 700e-9),
        "n_points": (int, 141),
        "noise": (NUM, 0.0),
        "phase_mode": (str, "per_level"),
        "use_hints": (bool, True),
    },
    "tls": {
        "p0": (NUM, 1e45),
        "delta0": (NUM, 10**-4.25),
        "rho": (NUM, 4700.0),
        "v": (NUM, 4000.0),
        "xi_zpf": (NUM, 1.6e-9),
        "mode_field": (str, None),
        "omega_m_hz": (NUM, 2.339e9),
        "volume_m3": (NUM, None),
        "delta_omega_hz": (NUM, 660e3),
        "n_samples": (int, 10_000),
        "bins": (int, 50),
    },
    "mc": {
        "mode": (str, "pn"),
        "probs": (list, None),
        "sigmas": (list, None),
        "n_iterations": (int, 2000),
        "sigma_rel": (NUM, None),
        "bins": (int, 40),
    },
    "bvd": {
        "c0_f": (NUM, 213.5e-18),
        "cm_f": (NUM, 51.4e-18),
        "lm_h": (NUM, 90.9e-6),
        "r_ohm": (NUM, 0.0),
        "f_start_hz": (NUM, 2.2e9),
        "f_stop_hz": (NUM, 2.5e9),
        "n_points": (int, 601),
    },
    "io": {
        "input": (str, None),
    },
}

MC_MODES = ("pn", "ringdown-fit", "t2m-fit")


@dataclass
class RunConfig:
    experiment: str
    seed: int
    figures: bool
    sections: dict  # resolved user-facing values (Hz units), used for echo and hashing
    system: SystemConfig | None = None
    alphas: list[float] = field(default_factory=list)
    taus: np.ndarray | None = None
    phis: np.ndarray | None = None
    source: str | None = None

    @property
    def hash(self) -> str:
        return config_hash(self.sections)

    def section(self, name: str) -> dict:
        return self.sections.get(name, {})

    def angular(self, section: str, key: str):
        """Value of ``key_hz`` converted to rad/s (lists element-wise)."""
        v = self.sections[section].get(key + "_hz")
        if v is None:
            return None
        if isinstance(v, list):
            return tuple(TWO_PI * float(x) for x in v)
        return TWO_PI * float(v)


def config_hash(sections: dict) -> str:
    text = json.dumps(sections, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def _type_ok(value, types) -> bool:
    if not isinstance(types, tuple):
        types = (types,)
    if isinstance(value, bool) and bool not in types:
        return False
    if isinstance(value, list) and list in types:
        return all(isinstance(x, NUM) and not isinstance(x, bool) for x in value)
    return isinstance(value, types)


def _check_schema(raw: dict) -> dict:
    errors = []
    out = {}
    for key, value in raw.items():
        if isinstance(value, dict):
            if key not in SCHEMA or key == "":
                errors.append(f"unknown section [{key}]")
                continue
            out[key] = {}
            for k, v in value.items():
                if k not in SCHEMA[key]:
                    errors.append(f"unknown key '{k}' in [{key}]")
                elif not _type_ok(v, SCHEMA[key][k][0]):
                    errors.append(f"[{key}] {k}: wrong type {type(v).__name__}")
                else:
                    out[key][k] = v
        elif key in SCHEMA[""]:
            if not _type_ok(value, SCHEMA[""][key][0]):
                errors.append(f"{key}: wrong type {type(value).__name__}")
            out[key] = value
        else:
            errors.append(f"unknown top-level key '{key}'")
    if errors:
        raise ConfigError("; ".join(errors))
    return out


def _fill_defaults(checked: dict, experiment: str) -> dict:
    used = {
        "ringdown": ("system", "sweep", "tolerances", "fit"),
        "interferometry": ("system", "sweep", "tolerances"),
        "ramsey-fit": ("ramsey", "io"),
        "tls-params": ("tls",),
        "mc-report": ("mc", "fit", "io"),
        "bvd-sweep": ("bvd",),
    }[experiment]
    for name in checked:
        if isinstance(checked[name], dict) and name not in used:
            raise ConfigError(f"section [{name}] is not used by experiment '{experiment}'")
    out = {k: checked.get(k, SCHEMA[""][k][1]) for k in SCHEMA[""]}
    for name in used:
        given = checked.get(name, {})
        sec = {}
        for k, (_, default) in SCHEMA[name].items():
            v = given.get(k, default)
            if v is not None:
                sec[k] = v
        out[name] = sec
    return out


def _system_from(sec: dict) -> SystemConfig:
    preset = sec.get("preset", "none")
    if preset not in PRESETS:
        raise ConfigError(f"[system] preset must be one of {PRESETS}, got '{preset}'")
    t2m = sec.get("mech_t2m_s")
    overrides = {}
    for key in ("g_tls", "delta_tls", "gamma1", "gamma2"):
        v = sec.get(key + "_hz")
        if v is not None:
            overrides[key] = tuple(TWO_PI * float(x) for x in v) if isinstance(v, list) else TWO_PI * float(v)
    for key in ("n_tls", "n_th", "tls_thermal"):
        if key in sec:
            overrides[key] = sec[key]
    if t2m is not None:
        if t2m <= 0:
            raise ConfigError("[system] mech_t2m_s must be > 0")
        conv = sec.get("mech_dephasing_convention", "envelope")
        if conv not in ("envelope", "literal"):
            raise ConfigError("[system] mech_dephasing_convention must be 'envelope' or 'literal'")
        if preset != "none" or any(k in overrides for k in ("g_tls", "gamma1", "gamma2", "delta_tls")):
            raise ConfigError("[system] mech_t2m_s replaces the TLS bath; drop the preset and TLS rates")
        rate = (1.0 if conv == "envelope" else 0.5) / t2m
        base = SystemConfig(n_tls=overrides.pop("n_tls", 0), mech_dephasing=rate)
    elif preset == "weak-coupling":
        base = weak_coupling_preset()
    elif preset == "strong-coupling":
        base = strong_coupling_preset()
    else:
        missing = [k for k in ("n_tls", "g_tls_hz", "delta_tls_hz", "gamma1_hz", "gamma2_hz", "n_th") if k not in sec]
        if missing:
            raise ConfigError(f"[system] without a preset requires {missing}")
        base = SystemConfig()
    try:
        return base.replace(**overrides)
    except ValueError as exc:
        raise ConfigError(f"[system] {exc}") from exc


def _as_list(v):
    return [float(x) for x in v] if isinstance(v, list) else [float(v)]


def _taus(sweep: dict) -> np.ndarray:
    if "taus_s" in sweep:
        taus = np.array(sweep["taus_s"], dtype=float)
    elif "tau_max_s" in sweep:
        taus = np.linspace(0.0, float(sweep["tau_max_s"]), int(sweep["n_taus"]))
    else:
        raise ConfigError("[sweep] needs taus_s or tau_max_s")
    if taus.size == 0 or np.any(taus < 0) or np.any(np.diff(taus) <= 0):
        raise ConfigError("[sweep] delays must be non-negative and strictly increasing")
    return taus


def resolve(raw: dict, source: str | None = None) -> RunConfig:
    """Validate a parsed TOML document and build a :class:`RunConfig` (no computation)."""
    checked = _check_schema(raw)
    exp = checked.get("experiment")
    if exp is None:
        raise ConfigError("missing required key 'experiment'")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {EXPERIMENTS}, got '{exp}'")
    sections = _fill_defaults(checked, exp)
    if not 0 <= sections["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    rc = RunConfig(exp, int(sections["seed"]), bool(sections["figures"]), sections, source=source)

    if exp in ("ringdown", "interferometry"):
        _resolve_dynamics(rc)
    elif exp == "ramsey-fit":
        r = sections["ramsey"]
        if "n_max" not in r:
            raise ConfigError("[ramsey] n_max is required")
        if "input" not in sections["io"] and "probs" not in r:
            raise ConfigError("ramsey-fit needs [io] input or [ramsey] probs to synthesise from")
        if "probs" in r and len(r["probs"]) != r["n_max"] + 1:
            raise ConfigError("[ramsey] probs must have n_max + 1 entries")
        if r["phase_mode"] not in ("per_level", "shared"):
            raise ConfigError("[ramsey] phase_mode must be 'per_level' or 'shared'")
    elif exp == "tls-params":
        t = sections["tls"]
        if "volume_m3" not in t:
            raise ConfigError("[tls] volume_m3 is required (resonator volume for the TLS count)")
        for k in ("p0", "rho", "v", "xi_zpf", "volume_m3", "omega_m_hz"):
            if t[k] <= 0:
                raise ConfigError(f"[tls] {k} must be > 0")
        if t["n_samples"] < 1:
            raise ConfigError("[tls] n_samples must be >= 1")
    elif exp == "mc-report":
        m = sections["mc"]
        if m["mode"] not in MC_MODES:
            raise ConfigError(f"[mc] mode must be one of {MC_MODES}")
        if m["n_iterations"] < 2:
            raise ConfigError("[mc] n_iterations must be >= 2")
        if m["mode"] == "pn" and "input" not in sections["io"]:
            if "probs" not in m or "sigmas" not in m:
                raise ConfigError("[mc] mode 'pn' needs probs and sigmas, or [io] input")
            if len(m["probs"]) != len(m["sigmas"]):
                raise ConfigError("[mc] probs and sigmas differ in length")
        if m["mode"] != "pn" and "input" not in sections["io"]:
            raise ConfigError(f"[mc] mode '{m['mode']}' needs [io] input")
    elif exp == "bvd-sweep":
        b = sections["bvd"]
        if not 0 < b["f_start_hz"] < b["f_stop_hz"]:
            raise ConfigError("[bvd] need 0 < f_start_hz < f_stop_hz")
        if b["n_points"] < 2:
            raise ConfigError("[bvd] n_points must be >= 2")
    return rc


def _resolve_dynamics(rc: RunConfig) -> None:
    sys_sec, sweep = rc.sections["system"], rc.sections["sweep"]
    cfg = _system_from(sys_sec)
    if ("alpha" in sweep) == ("nbar0" in sweep):
        raise ConfigError("[sweep] give exactly one of alpha or nbar0")
    if rc.experiment == "interferometry" and "nbar0" in sweep:
        raise ConfigError("[sweep] interferometry takes alpha")
    if "alpha" in sweep:
        alphas = _as_list(sweep["alpha"])
    else:
        nb = _as_list(sweep["nbar0"])
        if any(x < cfg.n_th for x in nb):
            raise ConfigError("[sweep] nbar0 must be >= n_th")
        # displacing the thermal state adds |alpha|^2 to its mean occupation
        alphas = [float(np.sqrt(x - cfg.n_th)) for x in nb]
    if any(a < 0 for a in alphas):
        raise ConfigError("[sweep] alpha must be >= 0")
    n_max = sys_sec.get("n_max", "auto")
    if n_max == "auto":
        n_max = required_n_max(max(alphas))
    elif isinstance(n_max, str):
        raise ConfigError("[system] n_max must be an integer or 'auto'")
    try:
        HilbertLayout(int(n_max), cfg.n_tls)
        for a in alphas:
            check_truncation(a, int(n_max))
    except (TruncationError, DimensionError) as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(f"[system] {exc}") from exc
    rc.system = cfg.replace(n_max=int(n_max))
    rc.alphas = alphas
    rc.taus = _taus(sweep)
    if rc.experiment == "interferometry":
        if "phis_rad" in sweep:
            phis = np.array(sweep["phis_rad"], dtype=float)
        else:
            phis = TWO_PI * np.arange(sweep["n_phis"]) / sweep["n_phis"]
        if phis.size < 5 or np.any(np.diff(phis) <= 0) or phis[0] < 0 or phis[-1] >= TWO_PI:
            raise ConfigError("[sweep] need >= 5 strictly increasing phases in [0, 2pi)")
        rc.phis = phis
    tol = rc.sections["tolerances"]
    if not (0 < tol["rtol"] < 1 and tol["atol"] > 0):
        raise ConfigError("[tolerances] need 0 < rtol < 1 and atol > 0")


def load(path, seed: int | None = None) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    raw = copy.deepcopy(raw)
    if seed is not None:
        raw["seed"] = seed
    return resolve(raw, source=str(path))
