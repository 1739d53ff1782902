"""Dataset CSV, scenario config files and atomic output writes."""

from __future__ import annotations

import configparser
import csv
import io
import os
import tempfile
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .survival import ACTIVE, CONTROL, ArmData, Dataset
from . import simulation as sim

__all__ = [
    "DataError", "ConfigError", "read_dataset", "write_dataset", "dataset_to_csv",
    "atomic_write", "StudyConfig", "load_config", "parse_config", "preset",
]

ARM_ALIASES = {"active": ACTIVE, "a": ACTIVE, "control": CONTROL, "c": CONTROL}
HEADER = ("time", "status", "arm")


class DataError(ValueError):
    """Input data that cannot be analysed (parse failures, missing arms)."""


class ConfigError(ValueError):
    pass


def atomic_write(path, text):
    """Write ``text`` to ``path`` via a temp file in the same directory and a rename."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dataset_to_csv(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for arm, data in ((ACTIVE, ds.active), (CONTROL, ds.control)):
        for t, e in zip(data.time, data.event):
            # repr() is the shortest string that round-trips the float exactly.
            w.writerow((repr(float(t)), int(e), arm))
    return buf.getvalue()


def write_dataset(ds: Dataset, path):
    atomic_write(path, dataset_to_csv(ds))


def read_dataset(path) -> Dataset:
    """Parse a ``time,status,arm`` CSV. Errors name the offending line."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise DataError(f"{path}: empty file")
    header = tuple(h.strip().lower() for h in rows[0])
    try:
        cols = [header.index(h) for h in HEADER]
    except ValueError:
        raise DataError(f"{path}: header must contain {','.join(HEADER)}, got {','.join(rows[0])}")
    arms = {ACTIVE: ([], []), CONTROL: ([], [])}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            t_raw, s_raw, a_raw = (row[i].strip() for i in cols)
        except IndexError:
            raise DataError(f"{path}, row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            t = float(t_raw)
        except ValueError:
            raise DataError(f"{path}, row {lineno}: time {t_raw!r} is not a number")
        if not t > 0 or t == float("inf"):
            raise DataError(f"{path}, row {lineno}: time must be a positive finite number, got {t_raw}")
        if s_raw not in ("0", "1"):
            raise DataError(f"{path}, row {lineno}: status must be 0 or 1, got {s_raw!r}")
        arm = ARM_ALIASES.get(a_raw.lower())
        if arm is None:
            raise DataError(f"{path}, row {lineno}: unknown arm {a_raw!r}")
        arms[arm][0].append(t)
        arms[arm][1].append(s_raw == "1")
    for arm, (times, _) in arms.items():
        if not times:
            raise DataError(f"{path}: no records for the {arm} arm")
    return Dataset(ArmData(*arms[ACTIVE]), ArmData(*arms[CONTROL]))


# -- scenario / study configuration --------------------------------------------

@dataclass
class StudyConfig:
    """Scenarios plus the study-level settings of a config file.

    Any study setting left as ``None`` falls back to the command-line flag
    or the built-in default.
    """

    scenarios: List[sim.ScenarioSpec]
    names: List[str]
    sizes: List[List[int]] = field(default_factory=list)
    replicates: Optional[int] = None
    seed: Optional[int] = None
    tau: Optional[float] = None
    alpha: Optional[float] = None
    methods: Optional[Tuple[str, ...]] = None
    chains: Optional[int] = None
    iterations: Optional[int] = None
    burn_in: Optional[int] = None

    def get(self, name):
        try:
            return self.scenarios[self.names.index(name)]
        except ValueError:
            raise ConfigError(f"no scenario named {name!r}; have {self.names}")


def _window(text):
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise ConfigError(f"window must be 'lo,hi', got {text!r}")
    if not 0 < lo < hi:
        raise ConfigError(f"window needs 0 < lo < hi, got {text!r}")
    return (lo, hi)


def _ints(text):
    try:
        return [int(x) for x in text.replace(" ", "").split(",") if x]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}")


SCENARIO_KEYS = {"family", "level", "hr", "psi", "zeta", "target_wp", "window",
                 "control_median", "effect", "sizes"}
STUDY_KEYS = {"sizes", "replicates", "seed", "tau", "alpha", "methods", "window",
              "chains", "iterations", "burnin"}


def _scenario_from_section(name, sec, default_window):
    unknown = set(sec) - SCENARIO_KEYS
    if unknown:
        raise ConfigError(f"[{name}]: unknown keys {sorted(unknown)}")
    family = sec.get("family")
    if family is None:
        raise ConfigError(f"[{name}]: 'family' is required (PH, Early, Late or Null)")
    window = _window(sec["window"]) if "window" in sec else default_window
    kw = {"window": window, "effect": sec.get("effect")}
    try:
        if "control_median" in sec:
            kw["control_median"] = float(sec["control_median"])
        if "level" in sec:
            return sim.scenario(family, int(sec["level"]), **kw)
        if "target_wp" in sec:
            ramp_or_hr = sim.calibrate_effect(family, float(sec["target_wp"]),
                                              kw.get("control_median", sim.CONTROL_MEDIAN))
            key = "hr" if family == "PH" else "ramp"
            return sim.scenario(family, **{key: ramp_or_hr}, **kw)
        if "hr" in sec:
            return sim.scenario(family, hr=float(sec["hr"]), **kw)
        for key in ("psi", "zeta"):
            if key in sec:
                return sim.scenario(family, ramp=float(sec[key]), **kw)
        return sim.scenario(family, **kw)
    except ValueError as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def parse_config(text, source="<config>") -> StudyConfig:
    """Parse an INI-style config: an optional ``[study]`` section and one
    section per scenario."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from exc
    study = cp["study"] if cp.has_section("study") else {}
    unknown = set(study) - STUDY_KEYS
    if unknown:
        raise ConfigError(f"[study]: unknown keys {sorted(unknown)}")
    default_window = _window(study["window"]) if "window" in study else sim.WINDOW_SHORT
    default_sizes = _ints(study["sizes"]) if "sizes" in study else []
    names, scenarios, sizes = [], [], []
    for name in cp.sections():
        if name == "study":
            continue
        sec = cp[name]
        scenarios.append(_scenario_from_section(name, sec, default_window))
        names.append(name)
        sizes.append(_ints(sec["sizes"]) if "sizes" in sec else default_sizes)
    if not scenarios:
        raise ConfigError(f"{source}: no scenario sections")

    def opt(key, conv):
        if key not in study:
            return None
        try:
            return conv(study[key])
        except ValueError:
            raise ConfigError(f"[study]: bad value for {key}: {study[key]!r}")

    methods = opt("methods", lambda s: tuple(m.strip().lower() for m in s.split(",") if m.strip()))
    if methods:
        bad = set(methods) - set(sim.METHODS)
        if bad:
            raise ConfigError(f"[study]: unknown methods {sorted(bad)}")
    return StudyConfig(
        scenarios, names, sizes,
        replicates=opt("replicates", int), seed=opt("seed", int), tau=opt("tau", float),
        alpha=opt("alpha", float), methods=methods, chains=opt("chains", int),
        iterations=opt("iterations", int), burn_in=opt("burnin", int),
    )


def load_config(path) -> StudyConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, source=str(path))


PRESETS = ("standard", "null", "ph", "early", "late")


def preset(name, window=sim.WINDOW_SHORT) -> StudyConfig:
    """Built-in scenario sets: the full nine-row grid plus null, or one family."""
    grid = sim.standard_grid(window)
    if name == "standard":
        chosen = grid
    elif name == "null":
        chosen = [s for s in grid if s.label == "Null"]
    elif name in ("ph", "early", "late"):
        chosen = [s for s in grid if s.label.lower() == name]
    else:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    names = [s.key.replace("/", "-").lower() for s in chosen]
    return StudyConfig(chosen, names, [[] for _ in chosen])
