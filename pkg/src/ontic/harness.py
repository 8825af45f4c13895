"""Experiment configs and runners.

Configs are INI-style ``key = value`` files with sections::

    [experiment]
    kind = count-converge
    seed = 7

    [state]
    source = seeded
    atoms = 64

    [partition]
    macrostates = 4
    scheme = blocks

    [run]
    levels = 1-24

Each run writes CSV files plus ``manifest.json`` into its output directory.
Timestamps and timings appear only in the manifest, so CSVs are byte-identical
across reruns with the same seed.
"""

from __future__ import annotations

import configparser
import json
import math
import os
import platform
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._textio import fmt, write_csv
from .configspace import ConfigSpace, MacroPartition, define_macropartition, new_config_space, uniform_space
from .counting import (
    COUNT_CSV_HEADER,
    OVERCOUNT_CSV_HEADER,
    count_estimate,
    generator,
    orbit_overcount_demo,
    refinement_sequence,
)
from .dynamics import LatticeModel, build_lattice_hamiltonian, ground_state, hermiticity_residual, rayleigh_quotient
from .errors import ConfigParse, InvariantViolation
from .selflocation import (
    COMPARISON_CSV_HEADER,
    FREQUENCY_CSV_HEADER,
    TREE_CSV_HEADER,
    Protocol,
    collapse_comparator,
    run_branch_experiment,
    sample_microstates,
)
from .state import StateVector, absorb_phases, born_probability, from_amplitudes, normalized, reconstruct

KINDS = (
    "count-converge",
    "overcount",
    "measure-chain",
    "collapse-compare",
    "lattice",
    "sample",
    "gauge-roundtrip",
)
OUTPUT_ENV = "ONTIC_OUTPUT_DIR"

# sections and keys each kind must provide
_REQUIRED = {
    "count-converge": {"state": ["source"], "partition": [], "run": ["levels"]},
    "overcount": {"state": ["source"], "partition": [], "run": ["trials"]},
    "measure-chain": {"state": ["source"], "protocol": ["registers", "targets"], "run": ["trials"]},
    "collapse-compare": {"state": ["source"], "protocol": ["registers", "targets"], "run": ["trials"]},
    "lattice": {"lattice": ["sites", "bins"]},
    "sample": {"state": ["source"], "partition": [], "run": ["trials"]},
    "gauge-roundtrip": {"state": ["source"], "run": ["states"]},
}


@dataclass
class ExperimentConfig:
    kind: str
    seed: int
    sections: dict
    output: str | None = None
    source: str | None = field(default=None, repr=False)
    lines: dict = field(default_factory=dict, repr=False)

    def get(self, section: str, key: str, default=None):
        return self.sections.get(section, {}).get(key, default)

    def where(self, section: str, key: str | None = None) -> str:
        loc = f"[{section}]" + (f" {key}" if key else "")
        line = self.lines.get((section, key))
        return f"{self.source or '<config>'}:{line}: {loc}" if line else f"{self.source or '<config>'}: {loc}"

    def require(self, section: str, key: str) -> str:
        v = self.get(section, key)
        if v is None or v == "":
            raise ConfigParse("missing required field", self.where(section, key))
        return v

    def as_int(self, section: str, key: str, default=None, minimum: int | None = None) -> int:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigParse("missing required field", self.where(section, key))
            return default
        try:
            v = int(raw)
        except ValueError:
            raise ConfigParse(f"expected an integer, got {raw!r}", self.where(section, key)) from None
        if minimum is not None and v < minimum:
            raise ConfigParse(f"must be >= {minimum}, got {v}", self.where(section, key))
        return v

    def as_float(self, section: str, key: str, default: float | None = None) -> float:
        raw = self.get(section, key)
        if raw is None:
            if default is None:
                raise ConfigParse("missing required field", self.where(section, key))
            return default
        try:
            return float(raw)
        except ValueError:
            raise ConfigParse(f"expected a number, got {raw!r}", self.where(section, key)) from None

    def as_list(self, section: str, key: str, conv=float, sep: str = ",") -> list:
        raw = self.require(section, key)
        try:
            return [conv(tok.strip()) for tok in raw.split(sep) if tok.strip()]
        except ValueError as exc:
            raise ConfigParse(f"bad list entry ({exc})", self.where(section, key)) from None


def _key_lines(text: str) -> dict:
    lines, section = {}, None
    for n, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        m = re.match(r"^\[([^\]]+)\]$", s)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = n
        elif section and s and s[0] not in "#;" and ("=" in s):
            lines[(section, s.split("=", 1)[0].strip().lower())] = n
    return lines


def parse_config(text: str, source: str | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=source or "<config>")
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigParse("content before the first [section] header", f"{source or '<config>'}:{exc.lineno}") from None
    except configparser.ParsingError as exc:
        lineno = exc.errors[0][0] if exc.errors else "?"
        raise ConfigParse(f"unparseable line {exc.errors[0][1] if exc.errors else ''}",
                          f"{source or '<config>'}:{lineno}") from None
    except configparser.Error as exc:
        raise ConfigParse(str(exc).splitlines()[0], source) from None
    sections = {s: dict(parser.items(s)) for s in parser.sections()}
    cfg = ExperimentConfig("", 0, sections, source=source, lines=_key_lines(text))
    kind = cfg.require("experiment", "kind")
    if kind not in KINDS:
        raise ConfigParse(f"unknown kind {kind!r}; expected one of {', '.join(KINDS)}", cfg.where("experiment", "kind"))
    cfg.kind = kind
    seed = cfg.as_int("experiment", "seed", default=0)
    if not 0 <= seed < 2**64:
        raise ConfigParse("seed must be a 64-bit unsigned integer", cfg.where("experiment", "seed"))
    cfg.seed = seed
    cfg.output = cfg.get("experiment", "output")
    for section, keys in _REQUIRED[kind].items():
        if section not in sections:
            raise ConfigParse(f"kind {kind} needs a [{section}] section", source)
        for key in keys:
            cfg.require(section, key)
    for (section, key), conv in _TYPED.items():
        if cfg.get(section, key) is not None:
            conv(cfg, section, key)
    if cfg.get("run", "levels") is not None:
        parse_levels(cfg)
    return cfg


def _int_list(cfg, section, key):
    cfg.as_list(section, key, int)


_TYPED = {
    ("lattice", "sites"): ExperimentConfig.as_int,
    ("lattice", "bins"): ExperimentConfig.as_int,
    ("lattice", "mass"): ExperimentConfig.as_float,
    ("lattice", "spacing"): ExperimentConfig.as_float,
    ("lattice", "dphi"): ExperimentConfig.as_float,
    ("state", "atoms"): ExperimentConfig.as_int,
    ("partition", "macrostates"): ExperimentConfig.as_int,
    ("run", "trials"): ExperimentConfig.as_int,
    ("run", "states"): ExperimentConfig.as_int,
    ("run", "thetas"): ExperimentConfig.as_int,
    ("protocol", "registers"): _int_list,
    ("protocol", "targets"): _int_list,
    ("protocol", "environment_dim"): ExperimentConfig.as_int,
}


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigParse(f"cannot read config: {exc.strerror}", str(path)) from None
    return parse_config(text, str(path))


# -- builders ----------------------------------------------------------------

def seeded_state(space: ConfigSpace, seed: int, stream: int = 0) -> StateVector:
    """Pseudo-random complex state, normalized in the space's measure."""
    rng = generator(seed, stream)
    z = rng.standard_normal(space.size) + 1j * rng.standard_normal(space.size)
    return normalized(space, z)


def _complex(tok: str) -> complex:
    return complex(tok.replace(" ", "").replace("i", "j"))


def build_space(cfg: ExperimentConfig, n_atoms: int | None = None) -> ConfigSpace:
    if cfg.get("state", "weights"):
        w = cfg.as_list("state", "weights")
        return new_config_space(range(len(w)), w)
    n = n_atoms if n_atoms is not None else cfg.as_int("state", "atoms", minimum=1)
    return uniform_space(n)


def build_state(cfg: ExperimentConfig) -> StateVector:
    source = cfg.require("state", "source")
    if source == "inline":
        amps = cfg.as_list("state", "amplitudes", _complex)
        space = build_space(cfg, len(amps))
        if cfg.get("state", "normalize", "no").lower() in ("yes", "true", "1"):
            return normalized(space, amps)
        return from_amplitudes(space, amps)
    if source == "seeded":
        return seeded_state(build_space(cfg), cfg.seed)
    if source == "uniform":
        if cfg.get("state", "weights"):
            space = build_space(cfg)
            return normalized(space, np.ones(space.size))
        # measure 1/n per atom with unit amplitudes keeps every weight exact
        n = cfg.as_int("state", "atoms", minimum=1)
        return from_amplitudes(uniform_space(n, 1.0 / n), np.ones(n))
    if source == "product":
        factors = [
            [math.sqrt(float(x)) for x in grp.split(",") if x.strip()]
            for grp in cfg.require("state", "probabilities").split(";")
        ]
        amps = factors[0]
        for f in factors[1:]:
            amps = np.kron(amps, f)
        return normalized(uniform_space(len(amps)), amps)
    if source == "lattice":
        return ground_state(build_lattice(cfg))[0]
    raise ConfigParse(f"unknown state source {source!r}", cfg.where("state", "source"))


def build_partition(cfg: ExperimentConfig, space: ConfigSpace) -> MacroPartition:
    if cfg.get("partition", "assignment"):
        ids = cfg.as_list("partition", "assignment", str)
        if len(ids) != space.size:
            raise ConfigParse(f"{len(ids)} ids for {space.size} atoms", cfg.where("partition", "assignment"))
        return define_macropartition(space, ids)
    k = cfg.as_int("partition", "macrostates", minimum=1)
    scheme = cfg.get("partition", "scheme", "blocks")
    n = space.size
    if scheme == "blocks":
        assignment = [i * k // n for i in range(n)]
    elif scheme == "round-robin":
        assignment = [i % k for i in range(n)]
    elif scheme == "parity":
        assignment = ["even" if i % 2 == 0 else "odd" for i in range(n)]
    elif scheme == "random":
        assignment = generator(cfg.seed, 99).integers(0, k, n).tolist()
    else:
        raise ConfigParse(f"unknown partition scheme {scheme!r}", cfg.where("partition", "scheme"))
    return define_macropartition(space, assignment)


def build_protocol(cfg: ExperimentConfig) -> Protocol:
    regs = cfg.as_list("protocol", "registers", int)
    targets = cfg.as_list("protocol", "targets", int)
    env = cfg.as_int("protocol", "environment_dim", default=1, minimum=1)
    return Protocol.computational(regs, targets, env)


def build_lattice(cfg: ExperimentConfig) -> LatticeModel:
    try:
        return LatticeModel(
            sites=cfg.as_int("lattice", "sites", minimum=1),
            bins=cfg.as_int("lattice", "bins", minimum=1),
            mass=cfg.as_float("lattice", "mass", 1.0),
            spacing=cfg.as_float("lattice", "spacing", 1.0),
            dphi=cfg.as_float("lattice", "dphi", 0.25),
        )
    except ValueError as exc:
        raise ConfigParse(str(exc), cfg.where("lattice")) from None


def parse_levels(cfg: ExperimentConfig) -> list[int]:
    raw = cfg.require("run", "levels")
    out = []
    for tok in raw.split(","):
        tok = tok.strip()
        m = re.fullmatch(r"(\d+)\s*-\s*(\d+)", tok)
        try:
            out.extend(range(int(m.group(1)), int(m.group(2)) + 1) if m else [int(tok)])
        except ValueError:
            raise ConfigParse(f"bad level {tok!r}", cfg.where("run", "levels")) from None
    return sorted(set(out))


# -- experiments -------------------------------------------------------------

def _count_converge(cfg, out: Path) -> dict:
    psi = build_state(cfg)
    part = build_partition(cfg, psi.space)
    levels = parse_levels(cfg)
    rows, worst = [], 0.0
    violations = []
    for ref in refinement_sequence(psi, part, max(levels)):
        if ref.level not in levels:
            continue
        rep = count_estimate(ref, part)
        rows.extend(rep.rows())
        worst = rep.max_deviation
        if not rep.within_bound:
            violations.append(ref.level)
    write_csv(out / "count_converge.csv", COUNT_CSV_HEADER, rows)
    if violations:
        raise InvariantViolation(f"count deviation above (|A|+1)*2^-n at levels {violations}")
    return {"final_max_deviation": worst}


def _overcount(cfg, out: Path) -> dict:
    psi = build_state(cfg)
    part = build_partition(cfg, psi.space)
    rep = orbit_overcount_demo(psi, part, cfg.as_int("run", "trials", minimum=1), cfg.seed)
    write_csv(out / "overcount.csv", OVERCOUNT_CSV_HEADER, rep.rows())
    return {"orbit_uniform": rep.orbit_uniform()}


def _measure_chain(cfg, out: Path) -> dict:
    psi = build_state(cfg)
    tree, rep = run_branch_experiment(psi, build_protocol(cfg), cfg.as_int("run", "trials", minimum=1), cfg.seed)
    (out / "branch_tree.txt").write_text(tree.to_text(), encoding="utf-8")
    write_csv(out / "branch_edges.csv", TREE_CSV_HEADER, tree.edges())
    write_csv(out / "frequencies.csv", FREQUENCY_CSV_HEADER, rep.rows())
    total = math.fsum(tree.leaf_weights().values())
    if abs(total - 1.0) > 1e-10:
        raise InvariantViolation(f"leaf weights sum to {total!r}")
    return {"chi2_pvalue": rep.chi2_pvalue, "within_3sigma": rep.within_sigma()}


def _collapse_compare(cfg, out: Path) -> dict:
    psi = build_state(cfg)
    rep = collapse_comparator(psi, build_protocol(cfg), cfg.as_int("run", "trials", minimum=1), cfg.seed)
    write_csv(out / "comparison.csv", COMPARISON_CSV_HEADER, rep.rows())
    return {"agree_3sigma": rep.agree()}


def _lattice(cfg, out: Path) -> dict:
    model = build_lattice(cfg)
    psi, energy = ground_state(model)
    H = build_lattice_hamiltonian(model)
    flat = np.sqrt(psi.space.weights) * psi.amplitudes
    residual = float(np.linalg.norm(H.matrix @ flat - energy * flat))
    rows = (
        (i, ";".join(fmt(v) for v in lab.field), float(c.real), float(c.imag), float(p))
        for i, (lab, c, p) in enumerate(zip(psi.space.labels, psi.amplitudes, psi.probability_weights))
    )
    write_csv(out / "lattice_ground_state.csv", ("index", "field", "re", "im", "probability_weight"), rows)
    summary = [
        ("energy", energy),
        ("rayleigh_quotient", rayleigh_quotient(H, psi)),
        ("residual", residual),
        ("hermiticity_residual", hermiticity_residual(H.matrix)),
        ("nonzeros", float(H.matrix.nnz)),
    ]
    write_csv(out / "lattice_summary.csv", ("quantity", "value"), summary)
    if residual > 1e-8:
        raise InvariantViolation(f"eigen residual {residual:.3e} above 1e-8")
    return {"energy": energy}


def _sample(cfg, out: Path) -> dict:
    psi = build_state(cfg)
    part = build_partition(cfg, psi.space)
    trials = cfg.as_int("run", "trials", minimum=1)
    atoms = sample_microstates(psi, generator(cfg.seed), trials)
    born = born_probability(psi, part)
    counts = {a: 0 for a in born}
    for a, c in zip(*np.unique(atoms, return_counts=True)):
        counts[part.assignment[int(a)]] += int(c)
    rows = []
    for a, p in born.items():
        rows.append((a, float(p), counts[a] / trials, math.sqrt(p * (1 - p) / trials)))
    write_csv(out / "sample.csv", ("macrostate", "born", "frequency", "stderr"), rows)
    return {}


def _gauge_roundtrip(cfg, out: Path) -> dict:
    n_states = cfg.as_int("run", "states", minimum=1)
    n_theta = cfg.as_int("run", "thetas", default=16, minimum=1)
    space = build_space(cfg)
    part = build_partition(cfg, space) if "partition" in cfg.sections else define_macropartition(
        space, [i % 2 for i in range(space.size)]
    )
    thetas = 2 * math.pi * np.arange(n_theta) / n_theta
    rows, worst = [], 0.0
    for s in range(n_states):
        psi = seeded_state(space, cfg.seed, stream=s)
        err = float(np.max(np.abs(reconstruct(absorb_phases(psi)).amplitudes - psi.amplitudes)))
        base = born_probability(psi, part)
        phase_err = max(
            abs(born_probability(psi.phased(t), part)[a] - base[a]) for t in thetas for a in base
        )
        worst = max(worst, err, phase_err)
        rows.append((s, err, float(phase_err)))
    write_csv(out / "gauge_roundtrip.csv", ("state", "max_roundtrip_error", "max_phase_born_error"), rows)
    if worst > 1e-12:
        raise InvariantViolation(f"gauge round trip error {worst:.3e} above 1e-12")
    return {"max_error": worst}


_RUNNERS = {
    "count-converge": _count_converge,
    "overcount": _overcount,
    "measure-chain": _measure_chain,
    "collapse-compare": _collapse_compare,
    "lattice": _lattice,
    "sample": _sample,
    "gauge-roundtrip": _gauge_roundtrip,
}


def environment() -> dict:
    return {
        "ontic": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


def resolve_output(cfg: ExperimentConfig, override=None) -> Path:
    if override:
        return Path(override)
    if cfg.output:
        return Path(cfg.output)
    stem = Path(cfg.source).stem if cfg.source else cfg.kind
    return Path(os.environ.get(OUTPUT_ENV, "ontic-out")) / stem


def run(cfg: ExperimentConfig, output=None) -> tuple[Path, dict]:
    """Execute one experiment; returns the output directory and the manifest.

    Module errors propagate; the CLI turns them into exit codes and error records.
    """
    out = resolve_output(cfg, output)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    summary = _RUNNERS[cfg.kind](cfg, out)
    manifest = {
        "kind": cfg.kind,
        "seed": cfg.seed,
        "config": cfg.sections,
        "environment": environment(),
        "started": started,
        "wall_time_s": time.perf_counter() - t0,
        "outputs": sorted(p.name for p in out.iterdir() if p.name not in ("manifest.json", "error.json")),
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return out, manifest


def bundled_configs() -> list[Path]:
    return sorted((Path(__file__).parent / "configs").glob("*.ini"))
