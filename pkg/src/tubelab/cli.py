"""Command-line front end.

Every subcommand builds a :class:`RunConfig` and hands it to :func:`run`,
which writes exactly one JSON or CSV document. Exit status is 0 on success,
2 on invalid input and 3 when a numerical routine fails to converge.
"""

import argparse
import json
import math
import os
import sys
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Tuple

import numpy as np

from . import __version__
from .concentration import (
    ConcentrationScanner,
    EpsSchedule,
    equator_complement_measure,
)
from .mmdist import (
    FiniteMMSpace,
    box_exact,
    constant_family,
    dirac_family,
    equator_latitude_instance,
    implication_audit,
    projection_transport_cost,
    w1_exact,
)
from .specfun import NonConvergenceError
from .spherelab import empirical_complement, sample_sphere
from .tube import (
    Flat,
    SpectralData,
    Sphere,
    SymmetricCodim1,
    TubeSpec,
    flat_vs_sphere_relative_error,
    symmetric_codim1_volume,
    weyl_flat_volume,
    weyl_sphere_volume,
)

__all__ = ["RunConfig", "run", "main", "parse_n_range", "parse_floats", "EXIT_OK", "EXIT_INVALID", "EXIT_NONCONVERGENCE"]

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NONCONVERGENCE = 3
FORMATS = ("json", "csv")


def parse_n_range(text) -> list:
    """``"start:stop:step"`` (stop included) or a comma-separated list, strictly increasing."""
    if isinstance(text, (list, tuple)):
        ns = [int(v) for v in text]
    elif ":" in str(text):
        parts = str(text).split(":")
        if len(parts) != 3:
            raise ValueError(f"range must be start:stop:step, got {text!r}")
        start, stop, step = (int(p) for p in parts)
        if step <= 0:
            raise ValueError("range step must be positive")
        ns = list(range(start, stop + 1, step))
    else:
        ns = [int(p) for p in str(text).split(",") if p.strip()]
    if not ns:
        raise ValueError("empty n range")
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("n values must be strictly increasing")
    return ns


def parse_floats(text) -> list:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(p) for p in str(text).split(",") if p.strip()]


def _csv_line(values):
    out = []
    for v in values:
        if v is None:
            out.append("")
        elif isinstance(v, float):
            out.append(repr(v))
        else:
            out.append(str(v))
    return ",".join(out)


def _read_space(path):
    with open(path, encoding="utf-8") as fh:
        return FiniteMMSpace.from_json(fh.read())


# each handler returns (json document, csv text)


def _tube(p, seed):
    ambient = p["ambient"]
    kappas = parse_floats(p["kappas"]) if p.get("kappas") is not None else None
    doc = {"ambient": ambient, "n": int(p["n"]), "q": int(p["q"]), "eps": float(p["eps"]), "vol_m": float(p["vol_m"])}
    if ambient == "flat":
        spec = TubeSpec(Flat(), doc["n"], doc["q"], doc["eps"], doc["vol_m"], kappas)
    elif ambient == "sphere":
        doc["R"] = float(p.get("R", 1.0))
        spec = TubeSpec(Sphere(doc["R"]), doc["n"], doc["q"], doc["eps"], doc["vol_m"], kappas)
    elif ambient == "symmetric":
        if p.get("spectrum") is None or p.get("t_max") is None:
            raise ValueError("symmetric ambient needs spectrum and t_max")
        doc["spectrum"] = parse_floats(p["spectrum"])
        doc["t_max"] = float(p["t_max"])
        amb = SymmetricCodim1(SpectralData(doc["spectrum"]), doc["t_max"])
        spec = TubeSpec(amb, doc["n"], doc["q"], doc["eps"], doc["vol_m"], kappas)
    else:
        raise ValueError(f"unknown ambient {ambient!r}")
    doc["kappas"] = list(spec.kappas)
    doc["weyl_flat_volume"] = weyl_flat_volume(spec.with_ambient(Flat()))
    if ambient == "sphere":
        doc["weyl_sphere_volume"] = weyl_sphere_volume(spec)
        doc["relative_error"] = flat_vs_sphere_relative_error(spec)
    elif ambient == "symmetric":
        doc["symmetric_volume"] = symmetric_codim1_volume(spec)
    scalars = [(k, v) for k, v in doc.items() if not isinstance(v, list)]
    csv = _csv_line(k for k, _ in scalars) + "\n" + _csv_line(v for _, v in scalars) + "\n"
    return doc, csv


def _scan(p, seed):
    if p.get("family", "equator") != "equator":
        raise ValueError("only the equator family is available from the command line")
    ns = parse_n_range(p.get("n", "10:400:10"))
    schedule = p.get("schedule", "n^-0.25")
    EpsSchedule.parse(schedule)
    scanner = ConcentrationScanner(family="equator", schedule=schedule, tol=float(p.get("tol", 1e-2)))
    result = scanner.fit(ns).result_
    return result.to_dict(), result.to_csv()


def _sample(p, seed):
    n, N = int(p["n"]), int(p["N"])
    eps_grid = parse_floats(p.get("eps", "0.1,0.2,0.3"))
    cloud = sample_sphere(n, N, seed)
    rows = []
    for eps in eps_grid:
        p_hat, se = empirical_complement(cloud, eps)
        rows.append({"eps": eps, "p_hat": p_hat, "std_err": se, "analytic": equator_complement_measure(n, eps)})
    c1, excluded = projection_transport_cost(cloud, order=1, return_excluded=True)
    c2 = projection_transport_cost(cloud, order=2)
    doc = {
        "n": n,
        "N": N,
        "seed": seed,
        "rows": rows,
        "transport_cost": {"order1": c1, "order2": c2, "excluded_mass": excluded},
    }
    return doc, cloud.to_csv()


def _mmdist(p, seed):
    op = p.get("op", "w1")
    space = _read_space(p["space"])
    if op == "w1":
        if p.get("nu") is None:
            raise ValueError("w1 needs target weights nu")
        plan = w1_exact(space, np.asarray(parse_floats(p["nu"])))
        doc = {
            "op": "w1",
            "m": space.m,
            "cost": plan.cost,
            "gap": plan.gap,
            "lipschitz_excess": plan.lipschitz_excess,
            "pi": plan.pi.tolist(),
            "potential": plan.potential.tolist(),
        }
        lines = ["i,j,mass"]
        for i, j in zip(*np.nonzero(plan.pi)):
            lines.append(_csv_line([int(i), int(j), float(plan.pi[i, j])]))
        return doc, "\n".join(lines) + "\n"
    if op == "box":
        if p.get("other") is None:
            raise ValueError("box needs a second space")
        value = box_exact(space, _read_space(p["other"]))
        return {"op": "box", "box_exact": value}, "box_exact\n" + repr(value) + "\n"
    raise ValueError(f"unknown mmdist op {op!r}")


def _audit(p, seed):
    family = p.get("family", "equator")
    if family == "equator":
        ns = parse_n_range(p.get("n", "10,100,1000,10000,100000,1000000,10000000"))
        schedule = EpsSchedule.parse(p.get("schedule", "n^-0.25"))
        m = int(p.get("m", 7))
        instances = [equator_latitude_instance(n, schedule(n), m) for n in ns]
    elif family == "dirac":
        instances = dirac_family(int(p.get("length", 6)))
    elif family == "constant":
        instances = constant_family(int(p.get("length", 4)))
    else:
        raise ValueError(f"unknown audit family {family!r}")
    report = implication_audit(instances, threshold=float(p.get("threshold", 0.05)))
    return report.to_dict(), report.to_csv()


COMMANDS: Dict[str, Tuple[frozenset, Callable]] = {
    "tube": (frozenset({"ambient", "n", "q", "eps", "vol_m", "R", "kappas", "spectrum", "t_max"}), _tube),
    "scan": (frozenset({"family", "schedule", "n", "tol"}), _scan),
    "sample": (frozenset({"n", "N", "eps"}), _sample),
    "mmdist": (frozenset({"op", "space", "nu", "other"}), _mmdist),
    "audit": (frozenset({"family", "n", "schedule", "m", "length", "threshold"}), _audit),
}


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation; ``output_path`` of ``"-"`` means standard output."""

    command: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    output_path: str = "-"
    format: str = "json"

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"unknown command {self.command!r}")
        unknown = set(self.params) - COMMANDS[self.command][0]
        if unknown:
            raise ValueError(f"unknown parameters for {self.command}: {sorted(unknown)}")
        if self.format not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - {"command", "params", "seed", "output_path", "format"}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def _render(doc, csv, fmt):
    if fmt == "csv":
        return csv
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


def run(config: RunConfig, stderr=None) -> int:
    """Execute ``config`` and write its output document; return the exit status."""
    stderr = sys.stderr if stderr is None else stderr
    try:
        doc, csv = COMMANDS[config.command][1](config.params, config.seed)
        text = _render(doc, csv, config.format)
    except NonConvergenceError as exc:
        print(f"tubelab: no convergence: {exc}", file=stderr)
        return EXIT_NONCONVERGENCE
    except (ValueError, TypeError, KeyError, OSError, MemoryError) as exc:
        if isinstance(exc, KeyError):
            exc = f"missing parameter {exc.args[0]!r}"
        print(f"tubelab: invalid input: {exc}", file=stderr)
        return EXIT_INVALID
    if config.output_path == "-":
        sys.stdout.write(text)
        sys.stdout.flush()
    else:
        with open(config.output_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_INVALID)


def _global_flags(parser, suppress):
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(0), help="RNG seed (default 0)")
    parser.add_argument("--out", default=default("-"), help="output file (default: standard output)")
    parser.add_argument("--format", choices=FORMATS, default=default("json"))


def build_parser():
    parser = _Parser(prog="tubelab", description="Tube volumes, concentration scans and mm-space distances.")
    parser.add_argument("--version", action="version", version=f"tubelab {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("tube", help="tube volume by the Weyl formulas")
    p.add_argument("--ambient", choices=["flat", "sphere", "symmetric"], required=True)
    p.add_argument("--n", type=int, required=True, help="submanifold dimension")
    p.add_argument("--q", type=int, required=True, help="codimension")
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--vol-m", dest="vol_m", type=float, required=True)
    p.add_argument("--R", type=float, help="sphere radius (default 1)")
    p.add_argument("--kappas", help="comma-separated kappa_2, kappa_4, ...")
    p.add_argument("--spectrum", help="comma-separated d_a for the symmetric ambient")
    p.add_argument("--t-max", dest="t_max", type=float)
    _global_flags(p, suppress=True)

    p = sub.add_parser("scan", help="concentration scan over n")
    p.add_argument("--family", choices=["equator"], default="equator")
    p.add_argument("--schedule", default="n^-0.25", help='"c*n^-k", "n^-k" or "const:eps0"')
    p.add_argument("--n", default="10:400:10", help='"start:stop:step" or a comma-separated list')
    p.add_argument("--tol", type=float, default=1e-2)
    _global_flags(p, suppress=True)

    p = sub.add_parser("sample", help="uniform cloud on S^n (CSV: the cloud; JSON: summary)")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--N", type=int, required=True)
    p.add_argument("--eps", default="0.1,0.2,0.3", help="comma-separated tube radii")
    _global_flags(p, suppress=True)

    p = sub.add_parser("mmdist", help="W1 or box distance on finite mm-spaces")
    p.add_argument("--op", choices=["w1", "box"], default="w1")
    p.add_argument("--space", required=True, help="mm-space JSON file {m, D, w}")
    p.add_argument("--nu", help="comma-separated target weights (w1)")
    p.add_argument("--other", help="second mm-space JSON file (box)")
    _global_flags(p, suppress=True)

    p = sub.add_parser("audit", help="W1 versus box distance along a family")
    p.add_argument("--family", choices=["equator", "dirac", "constant"], default="equator")
    p.add_argument("--n", help="n values for the equator family")
    p.add_argument("--schedule", help="eps schedule for the equator family")
    p.add_argument("--m", type=int, help="points per latitude discretization (odd)")
    p.add_argument("--length", type=int, help="family length (dirac, constant)")
    p.add_argument("--threshold", type=float, default=0.05)
    _global_flags(p, suppress=True)
    return parser


def config_from_args(args) -> RunConfig:
    params = {
        k: v
        for k, v in vars(args).items()
        if k not in ("command", "seed", "out", "format") and v is not None
    }
    return RunConfig(args.command, params, args.seed, args.out, args.format)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = config_from_args(args)
    except ValueError as exc:
        print(f"tubelab: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    return run(config)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
