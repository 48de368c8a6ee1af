"""Command-line front end: reproducible experiments with CSV or JSON output.

Every artifact embeds the resolved configuration and a sha256 of its
content.  Settings come from built-in defaults, then an optional ``key =
value`` file (``--config``), then explicit flags.

Exit codes: 0 success, 1 invalid configuration, 2 a bound hypothesis or
admissibility inequality fails.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import sys
from dataclasses import dataclass

from . import bound_engine as be
from . import clusters as cl
from . import grid_core as gc
from . import path_checks as pc
from . import pt_solver as ps

COMMANDS = ("pekar-min", "hartree-min", "certificate", "gap", "clusters", "paths-check", "binding")
JSON_BY_DEFAULT = {"certificate", "clusters", "paths-check"}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    command: str
    N: int = 1
    nu: float = 3.0
    alpha: tuple = (1.0,)
    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 1.0
    c5: float = 1.0
    regime: str = "strong"
    grid_kind: str = "radial"
    grid_n: int | None = None
    rmax: float | None = None
    seed: int = 0
    k: int | None = None
    side: float = 1.0
    d: float | None = None
    input: str | None = None
    pairs: int = 1000
    ensembles: int = 100
    search: bool = False
    orbital: str | None = None
    out: str | None = None
    format: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.N < 1:
            raise ConfigError("N must be at least 1")
        if self.nu < 0:
            raise ConfigError("nu must be nonnegative")
        if not self.alpha or any(not a > 0 for a in self.alpha):
            raise ConfigError("alpha values must be positive")
        if self.regime not in ("strong", "general"):
            raise ConfigError("regime must be 'strong' or 'general'")
        if self.grid_kind not in ("radial", "cartesian"):
            raise ConfigError("grid_kind must be 'radial' or 'cartesian'")
        if self.format not in (None, "csv", "json"):
            raise ConfigError("format must be csv or json")
        if any(not c > 0 for c in self.constants(5)):
            raise ConfigError("constants must be positive")

    @property
    def output_format(self) -> str:
        if self.format:
            return self.format
        return "json" if self.command in JSON_BY_DEFAULT else "csv"

    def constants(self, count: int | None = None) -> tuple:
        if count is None:
            count = 4 if self.regime == "strong" else 5
        return (self.c1, self.c2, self.c3, self.c4, self.c5)[:count]

    def solver_config(self) -> ps.SolverConfig:
        kw = {"seed": self.seed, "grid_kind": self.grid_kind}
        if self.grid_n is not None:
            kw["n_radial" if self.grid_kind == "radial" else "cart_n"] = self.grid_n
        if self.rmax is not None:
            kw["r_max" if self.grid_kind == "radial" else "cart_extent"] = self.rmax
        return ps.SolverConfig(**kw)

    def to_dict(self) -> dict:
        """Resolved settings; the output destination is left out so that the
        same experiment written to different files gives identical bytes."""
        out = dataclasses.asdict(self)
        del out["out"]
        out["alpha"] = list(self.alpha)
        out["format"] = self.output_format
        return out


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_KEYS = {"N", "grid_n", "seed", "k", "pairs", "ensembles"}
_FLOAT_KEYS = {"nu", "c1", "c2", "c3", "c4", "c5", "rmax", "side", "d"}


def _coerce(key: str, raw):
    if raw is None:
        return None
    try:
        if key == "alpha":
            items = raw if isinstance(raw, (list, tuple)) else str(raw).replace(",", " ").split()
            return tuple(float(a) for a in items)
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key == "search":
            if isinstance(raw, bool):
                return raw
            return str(raw).strip().lower() in ("1", "true", "yes", "on")
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def read_config_file(path: str) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment; dashes in keys are allowed."""
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key == "n":
            key = "N"
        if key not in _FIELDS or key == "command":
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = value
    return values


def resolve_config(command: str, file_values: dict, flag_values: dict) -> ExperimentConfig:
    merged = {}
    for source in (file_values, flag_values):
        for key, raw in source.items():
            if raw is not None:
                merged[key] = _coerce(key, raw)
    return ExperimentConfig(command=command, **merged)


# --------------------------------------------------------------------------
# output
# --------------------------------------------------------------------------

def _sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def render_json(config: ExperimentConfig, result) -> str:
    body = {"config": config.to_dict(), "result": result}
    canonical = json.dumps(body, sort_keys=True, default=float)
    body["sha256"] = _sha256(canonical)
    return json.dumps(body, sort_keys=True, indent=2, default=float) + "\n"


def render_csv(config: ExperimentConfig, header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([f"{x:.12g}" if isinstance(x, float) else x for x in row])
    cfg = json.dumps(config.to_dict(), sort_keys=True)
    data = buf.getvalue()
    return f"# config={cfg}\n# sha256={_sha256(cfg + chr(10) + data)}\n{data}"


def _emit(config: ExperimentConfig, header, rows, result=None) -> str:
    if config.output_format == "json":
        if result is None:
            result = [dict(zip(header, row)) for row in rows]
        return render_json(config, result)
    return render_csv(config, header, rows)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------

def cmd_pekar_min(cfg: ExperimentConfig) -> str:
    solver = cfg.solver_config()
    rows = []
    for i, alpha in enumerate(cfg.alpha):
        est, psi = ps.minimize_pekar(alpha, solver)
        rows.append([alpha, est.value, est.value / alpha**2, est.iterations, est.kind,
                     est.converged, est.grid_hash])
        if cfg.orbital:
            path = cfg.orbital if len(cfg.alpha) == 1 else f"{cfg.orbital}.{i}"
            with open(path, "wb") as fh:
                fh.write(gc.to_bytes(psi))
    return _emit(cfg, ["alpha", "energy", "energy_over_alpha2", "iterations", "kind",
                       "converged", "grid_hash"], rows)


def cmd_hartree_min(cfg: ExperimentConfig) -> str:
    est, _ = ps.minimize_hartree(cfg.N, cfg.nu, cfg.solver_config())
    rows = [[a, cfg.N, cfg.nu, a**2 * est.value, est.value, est.kind, est.note, est.grid_hash]
            for a in cfg.alpha]
    return _emit(cfg, ["alpha", "N", "nu", "energy", "energy_over_alpha2", "kind", "note",
                       "grid_hash"], rows)


def _certificate(cfg: ExperimentConfig, alpha: float, provider):
    if cfg.search:
        cert = be.search_constants(cfg.regime, cfg.nu, alpha, cfg.N, provider)
        if cert is None:
            raise be.AlphaTooSmall(f"no constants on the search grid are admissible at alpha={alpha:g}")
        return cert
    return be.theorem1_certificate(cfg.regime, cfg.nu, alpha, cfg.N, cfg.constants(), provider)


def cmd_certificate(cfg: ExperimentConfig) -> str:
    provider = ps.HartreeProvider(cfg.solver_config())
    certs = [_certificate(cfg, a, provider) for a in cfg.alpha]
    if cfg.output_format == "json":
        result = [c.to_dict() for c in certs]
        return render_json(cfg, result[0] if len(result) == 1 else result)
    rows = [[c.alpha, name, c.terms[name]] for c in certs for name in be.TERM_ORDER]
    rows += [[c.alpha, "final", c.final] for c in certs]
    return render_csv(cfg, ["alpha", "term", "value"], rows)


def cmd_gap(cfg: ExperimentConfig) -> str:
    provider = ps.HartreeProvider(cfg.solver_config())
    rows = []
    for alpha in cfg.alpha:
        upper = ps.pt_energy_scaled(cfg.nu, alpha, cfg.N, provider).value
        cert = _certificate(cfg, alpha, provider)
        a2 = alpha**2
        rows.append([alpha, upper / a2, cert.final / a2, (upper - cert.final) / a2,
                     cert.valid, cert.label])
    return _emit(cfg, ["alpha", "upper_over_alpha2", "lower_over_alpha2", "gap_over_alpha2",
                       "valid", "label"], rows)


def cmd_clusters(cfg: ExperimentConfig) -> str:
    if not cfg.input:
        raise ConfigError("clusters needs --input (CSV of x,y,z box centres)")
    try:
        with open(cfg.input, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read input: {exc}") from exc
    try:
        boxes = cl.BoxConfiguration.from_csv(text, cfg.side)
    except ValueError as exc:
        raise ConfigError(f"bad box CSV: {exc}") from exc
    d = cfg.d if cfg.d is not None else cfg.side
    part = cl.partition(boxes, d)
    props = cl.check_properties(part, boxes)
    if cfg.output_format == "json":
        return render_json(cfg, {"threshold": part.threshold,
                                 "groups": [list(g) for g in part.groups],
                                 "sizes": list(part.sizes), "properties": props})
    label = part.label_of()
    return render_csv(cfg, ["index", "cluster"], [[i, label[i]] for i in range(boxes.N)])


def cmd_paths_check(cfg: ExperimentConfig) -> str:
    dist = pc.sweep_distance_bounds(cfg.pairs, side=cfg.side, seed=cfg.seed)
    split = pc.sweep_split(cfg.ensembles, side=cfg.side, seed=cfg.seed)
    if cfg.output_format == "json":
        return render_json(cfg, {"distance_bounds": dist.to_dict(), "cluster_split": split.to_dict()})
    rows = [[name, r.pairs_checked, r.violations, r.worst_margin, r.tolerance, r.skipped]
            for name, r in (("distance_bounds", dist), ("cluster_split", split))]
    return render_csv(cfg, ["check", "checked", "violations", "worst_margin", "tolerance", "skipped"],
                      rows)


def cmd_binding(cfg: ExperimentConfig) -> str:
    if cfg.N < 2:
        raise ConfigError("binding needs N >= 2")
    provider = ps.HartreeProvider(cfg.solver_config())
    ks = [cfg.k] if cfg.k is not None else range(1, cfg.N // 2 + 1)
    rows = []
    for k in ks:
        try:
            rep = ps.binding_check(cfg.N, cfg.nu, k, provider)
        except ps.InvalidK as exc:
            raise ConfigError(str(exc)) from exc
        rows.append([cfg.N, k, cfg.nu, rep.E_N.value, rep.E_N_minus_k.value, rep.E_k.value,
                     rep.margin, rep.binds, rep.comparable])
    return _emit(cfg, ["N", "k", "nu", "E_N", "E_N_minus_k", "E_k", "margin", "binds",
                       "comparable"], rows)


HANDLERS = {
    "pekar-min": cmd_pekar_min,
    "hartree-min": cmd_hartree_min,
    "certificate": cmd_certificate,
    "gap": cmd_gap,
    "clusters": cmd_clusters,
    "paths-check": cmd_paths_check,
    "binding": cmd_binding,
}


def run(cfg: ExperimentConfig) -> str:
    return HANDLERS[cfg.command](cfg)


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value file; flags override it")
    common.add_argument("--alpha", nargs="+", help="coupling constant(s)")
    common.add_argument("--nu", help="repulsion ratio U / alpha")
    common.add_argument("--N", dest="N", help="number of electrons")
    for i in range(1, 6):
        common.add_argument(f"--c{i}", help=f"schedule constant c{i}")
    common.add_argument("--regime", choices=("strong", "general"))
    common.add_argument("--grid-kind", dest="grid_kind", choices=("radial", "cartesian"))
    common.add_argument("--grid-n", dest="grid_n", help="radial nodes or Cartesian points per axis")
    common.add_argument("--rmax", help="radial cut-off or Cartesian box extent")
    common.add_argument("--seed")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=("csv", "json"))

    parser = _Parser(prog="polaron-bounds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("pekar-min", parents=[common], help="one-polaron minimizer")
    p.add_argument("--orbital", help="write the minimizing orbital (binary grid snapshot)")
    sub.add_parser("hartree-min", parents=[common], help="Hartree upper estimates for N >= 2")
    for name in ("certificate", "gap"):
        p = sub.add_parser(name, parents=[common],
                           help="lower-bound certificate" if name == "certificate"
                           else "upper/lower sweep over alpha")
        p.add_argument("--search", action="store_const", const=True,
                       help="grid-search the constants for the best valid certificate")
    p = sub.add_parser("clusters", parents=[common], help="partition box centres into clusters")
    p.add_argument("--input", help="CSV with x,y,z per row")
    p.add_argument("--side", help="box side R")
    p.add_argument("--d", help="cluster threshold (default: R)")
    p = sub.add_parser("paths-check", parents=[common], help="Monte-Carlo path inequality checks")
    p.add_argument("--pairs", help="number of box pairs")
    p.add_argument("--ensembles", help="number of multi-cluster ensembles")
    p.add_argument("--side", help="box side R")
    p = sub.add_parser("binding", parents=[common], help="binding inequality table")
    p.add_argument("--k", help="split size (default: all 1..N/2)")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        file_values = read_config_file(args.config) if args.config else {}
        cfg = resolve_config(args.command, file_values, flags)
        text = run(cfg)
    except (be.AlphaTooSmall, be.HypothesisViolated, be.NuNotAboveTwo) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, TypeError, ValueError) as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return 1
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
