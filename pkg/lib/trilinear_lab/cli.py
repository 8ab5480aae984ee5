# Copyright 2021 Canonical Ltd.
# See LICENSE file for licensing details.

"""# CLI Library.

Batch front end of trilinear-lab. Each subcommand reads a validated `RunConfig`, runs
one study and writes `<output_dir>/<group>_<action>.json` plus, when the study produces
rows, `<output_dir>/<group>_<action>.csv`:

```shell
lab.py threshold --n 3 --k 3
lab.py --config table.yaml --seed 7 --threads 4 table build --R 32
```

Exit codes: 0 on success, 2 when a checked invariant fails, 1 on any other error.
"""

import argparse
import csv
import json
import logging
import math
import os
import sys
from dataclasses import asdict
from fractions import Fraction
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import SUBCOMMANDS, RunConfig, parse_config
from .errors import InvariantViolation, LabError
from .experiments import (
    RecursionConfig,
    SquashedCapConfig,
    classify_recursion,
    counterexample_target,
    cross_cube_trend,
    double_cone_trend,
    pair_census_trend,
    random_wave,
    recursion_iterate,
    squashed_cap_series,
    threshold_exponent,
    triple_decompositions,
)
from .geometry import (
    CHART_ROUNDTRIP_TOLERANCE,
    GRADIENT_RELATIVE_TOLERANCE,
    HypersurfacePatch,
    chart_roundtrip_error,
    check_foliation_flatness,
    double_cone_triple,
    estimate_transversality,
    gradient_consistency,
    patch_from_descriptor,
    shape_operator,
)
from .packets import (
    DECAY_FACTORS,
    DECAY_SLOPE_BOUND,
    FREQUENCY_SPREAD_BOUND,
    PacketDecomposition,
    block_sums,
    build_lattice,
    compatible_grid,
    decompose,
    local_mass_census,
    tube_decay_study,
    write_decomposition,
)
from .tables import (
    build_table,
    cross_cube_norm,
    three_sequence_bound,
    tube_weights,
    two_thirds_bound,
    write_table,
)
from .waves import (
    FreeWave,
    FrequencyGrid,
    SpaceTimeCube,
    extend_on_grid,
    lp_norm,
    margin,
    margin_budget,
    mass,
    phase_per_cell,
    read_wave,
)

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
FLAT_EIGENVALUE = 1e-9
CURVED_EIGENVALUE = 1e-3

Rows = List[Dict[str, Any]]
Outcome = Tuple[Rows, Dict[str, Any], Dict[str, bool]]

# flag name, config key, argparse type, nargs
_OVERRIDES = (
    ("--n", "n", int, None),
    ("--k", "k", int, None),
    ("--p", "p", str, None),
    ("--p-values", "p_values", str, "+"),
    ("--epsilons", "epsilons", str, "+"),
    ("--c-small", "c_small", str, None),
    ("--c", "c", str, None),
    ("--C", "C", str, None),
    ("--C0", "C0", int, None),
    ("--epsilon", "epsilon", str, None),
    ("--C-eps", "C_eps", str, None),
    ("--R0", "R0", str, None),
    ("--max-doublings", "max_doublings", int, None),
    ("--R", "R", str, None),
    ("--R-values", "R_values", str, "+"),
    ("--resolution", "resolution", int, None),
    ("--grid-resolution", "grid_resolution", int, None),
    ("--space-resolution", "space_resolution", int, None),
    ("--samples", "samples", int, None),
    ("--points-per-axis", "points_per_axis", int, None),
    ("--depth", "depth", int, None),
    ("--decay-power", "decay_power", int, None),
    ("--near", "near", int, None),
    ("--max-tubes", "max_tubes", int, None),
    ("--margin-budget", "margin_budget", str, None),
    ("--input-wave", "input_wave", str, None),
)


def build_parser() -> argparse.ArgumentParser:
    """Argument parser with the global flags and one subparser per subcommand."""
    overrides = argparse.ArgumentParser(add_help=False)
    for flag, key, kind, nargs in _OVERRIDES:
        overrides.add_argument(flag, dest=key, type=kind, nargs=nargs, default=argparse.SUPPRESS)
    overrides.add_argument(
        "--violating", dest="violating", action="store_true", default=argparse.SUPPRESS
    )

    parser = argparse.ArgumentParser(prog="lab.py", description="Trilinear restriction lab.")
    parser.add_argument("--config", help="YAML configuration file")
    parser.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--threads", type=int, default=argparse.SUPPRESS)
    parser.add_argument("--output-dir", dest="output_dir", default=argparse.SUPPRESS)
    parser.add_argument("--log-level", default="INFO")
    groups = parser.add_subparsers(dest="group")
    actions: Dict[str, List[str]] = {}
    for subcommand in SUBCOMMANDS:
        group, _, action = subcommand.partition(" ")
        actions.setdefault(group, []).append(action)
    for group, names in actions.items():
        if names == [""]:
            groups.add_parser(group, parents=[overrides]).set_defaults(subcommand=group)
            continue
        nested = groups.add_parser(group).add_subparsers(dest="action")
        for action in names:
            nested.add_parser(action, parents=[overrides]).set_defaults(
                subcommand=f"{group} {action}"
            )
    return parser


def _surfaces(config: RunConfig, count: int) -> List[HypersurfacePatch]:
    """Configured surfaces, or the standard double-cone triple when none are given."""
    if config.surfaces:
        if len(config.surfaces) < count:
            raise LabError(f"{count} surfaces needed, {len(config.surfaces)} configured")
        return [patch_from_descriptor(d) for d in config.surfaces]
    return double_cone_triple(config.n, violating=config.violating)[:count]


def _decomposition(config: RunConfig) -> PacketDecomposition:
    patch = _surfaces(config, 1)[0]
    grid, bounding = compatible_grid(patch, config.R, config.c, config.points_per_axis)
    if config.input_wave:
        with open(config.input_wave) as stream:
            wave = read_wave(stream, patch)
        grid = wave.grid
    else:
        wave = random_wave(patch, grid, config.seed, 0)
    lattice = build_lattice(patch, config.R, config.c, bounding, grid, config.decay_power)
    decomposition = decompose(wave, lattice)
    decomposition.compute_all(config.threads)
    return decomposition


def geometry_check(config: RunConfig) -> Outcome:
    """Transversality report plus per-patch consistency and curvature checks."""
    patches = _surfaces(config, 3)
    report = estimate_transversality(patches, config.samples, config.seed)
    rows = []
    checks = {}
    for index, patch in enumerate(patches[:3]):
        gradient = gradient_consistency(patch, config.samples, config.seed)
        row: Dict[str, Any] = {"patch": patch.name, "n": patch.n, "gradient_error": gradient}
        checks[f"{patch.name}_gradient"] = gradient <= GRADIENT_RELATIVE_TOLERANCE
        if patch.leaf_chart is not None:
            roundtrip = chart_roundtrip_error(patch, config.samples, config.seed)
            flatness = check_foliation_flatness(patch, config.samples, config.seed, index)
            row.update(
                chart_roundtrip=roundtrip,
                leaf_flatness=flatness.leaf_flatness_max,
                normal_variation=flatness.normal_variation_max,
            )
            checks[f"{patch.name}_chart"] = roundtrip <= CHART_ROUNDTRIP_TOLERANCE
        points = patch.sample(config.samples, np.random.default_rng(config.seed))
        magnitudes = np.array([np.abs(shape_operator(patch, xi).eigenvalues) for xi in points])
        row.update(
            flat_directions_min=int(np.min(np.sum(magnitudes < FLAT_EIGENVALUE, axis=1))),
            flat_directions_max=int(np.max(np.sum(magnitudes < FLAT_EIGENVALUE, axis=1))),
            curved_directions_min=int(np.min(np.sum(magnitudes > CURVED_EIGENVALUE, axis=1))),
        )
        rows.append(row)
    return rows, asdict(report), checks


def extend_run(config: RunConfig) -> Outcome:
    """Evaluates one wave on a cube of side R and reports its norms."""
    patch = _surfaces(config, 1)[0]
    if config.input_wave:
        with open(config.input_wave) as stream:
            wave = read_wave(stream, patch)
    else:
        wave = FreeWave.constant(patch, FrequencyGrid.uniform(patch.box, config.grid_resolution))
    cube = SpaceTimeCube.cube(np.zeros(patch.dim), config.R, config.resolution)
    values = extend_on_grid(wave, cube).ravel()
    rows = [
        {
            **{f"x{i}": float(v) for i, v in enumerate(point)},
            "re": float(value.real),
            "im": float(value.imag),
            "abs": float(abs(value)),
        }
        for point, value in zip(cube.points, values)
    ]
    results: Dict[str, Any] = {
        "mass": mass(wave),
        "margin": margin(wave),
        "lp_norm": lp_norm(values, cube.cell_volume, config.p),
        "phase_per_cell": phase_per_cell([wave], cube),
    }
    checks = {}
    if config.margin_budget is not None:
        measured, required, ok = margin_budget(wave, config.margin_budget, config.R)
        results["margin_budget"] = {"measured": measured, "required": required}
        checks["margin_budget"] = ok
    return rows, results, checks


def packets_decompose(config: RunConfig) -> Outcome:
    """Decomposes a wave into packets and checks the decomposition invariants."""
    decomposition = _decomposition(config)
    masses = decomposition.tube_masses()
    worst, required, margin_ok = decomposition.margin_loss()
    error = decomposition.reconstruction_error()
    spread = decomposition.frequency_spread()
    total = mass(decomposition.source)
    directory = os.path.join(config.output_dir, "packets_decompose")
    manifest = write_decomposition(decomposition, directory, config.max_tubes)
    rows = [
        {
            "leaf": tube.leaf,
            "point": tube.point,
            **{f"x_T{i}": float(v) for i, v in enumerate(tube.x_T)},
            **{f"xi_T{i}": float(v) for i, v in enumerate(tube.xi_T)},
            "mass": float(m),
        }
        for tube, m in zip(decomposition.tubes, masses)
    ]
    results = {
        "R": decomposition.lattice.R,
        "r": decomposition.lattice.r,
        "leaf_count": decomposition.lattice.leaf_count,
        "tube_count": len(masses),
        "reconstruction_error": error,
        "frequency_spread": spread,
        "packet_mass_sum": float(np.sum(masses)),
        "mass": total,
        "margin_worst": worst,
        "margin_required": required,
        "manifest": manifest,
    }
    checks = {
        "reconstruction": error <= 1e-10,
        "frequency_localization": spread <= FREQUENCY_SPREAD_BOUND,
        "mass_superadditivity": float(np.sum(masses)) <= (1 + 1e-9) * total,
        "margin_bookkeeping": margin_ok,
    }
    return rows, results, checks


def packets_census(config: RunConfig) -> Outcome:
    """Local mass census on Q plus the decay fit of a packet at distances 4R to 32R."""
    decomposition = _decomposition(config)
    lattice = decomposition.lattice
    resolution = max(2, config.resolution // 2**lattice.J) * 2**lattice.J
    cube = SpaceTimeCube.cube(np.zeros(lattice.patch.dim), lattice.R, resolution)
    ratio = local_mass_census(decomposition, cube, config.threads)
    literal = local_mass_census(decomposition, cube, config.threads, lattice.decay_power)
    fit = tube_decay_study(lattice.patch, lattice.R, lattice.c, DECAY_FACTORS, config.decay_power)
    results: Dict[str, Any] = {
        "R": lattice.R,
        "r": lattice.r,
        "census_ratio": ratio,
        "census_ratio_power_N": literal,
        "decay": asdict(fit),
    }
    rows = [
        {"distance": d, "sup": s, "R": lattice.R} for d, s in zip(fit.distances, fit.sup_values)
    ]
    checks = {"tube_decay": not fit.below_resolution and fit.slope <= DECAY_SLOPE_BOUND}
    return rows, results, checks


def _triple_table(config: RunConfig):
    triple = _surfaces(config, 3)
    decompositions = triple_decompositions(
        triple, config.R, config.c, config.points_per_axis, config.seed
    )
    first = decompositions[0]
    cube = SpaceTimeCube.cube(np.zeros(first.lattice.patch.dim), config.R, config.resolution)
    weights = tube_weights(first, decompositions[1].source, cube, config.depth, config.threads)
    return decompositions, cube, build_table(first, weights)


def table_build(config: RunConfig) -> Outcome:
    """Builds a table of φ₁ against φ₂ and reports its identities and cross-cube norms."""
    (first, second, third), cube, table = _triple_table(config)
    directory = os.path.join(config.output_dir, "table_build")
    write_table(table, directory, config.max_tubes)
    blocks = 2**config.depth
    partner_masses = [
        block_sums(np.abs(extend_on_grid(d.source, cube)) ** 2 * cube.cell_volume, blocks)
        for d in (second, third)
    ]
    entry_masses = [mass(w) for w in table.entries()]
    rows = []
    for index, center in enumerate(table.family.centers):
        entry = table.entry(index)
        rows.append(
            {
                "q0": index,
                **{f"c{i}": float(v) for i, v in enumerate(center)},
                "entry_mass": entry_masses[index],
                "entry_margin": margin(entry),
                "partner2_mass": float(partner_masses[0][index]),
                "partner3_mass": float(partner_masses[1][index]),
            }
        )
    scale = float(np.prod([np.sqrt(mass(d.source)) for d in (first, second, third)]))
    partners = [second.source, third.source]
    l1 = two_thirds = 0.0
    core = max(2, config.resolution // blocks)
    for source in range(table.family.count):
        for target in range(table.family.count):
            if source == target:
                continue
            l1 = max(l1, cross_cube_norm(table, source, target, partners, config.c, 1.0, core))
            two_thirds = max(
                two_thirds,
                cross_cube_norm(table, source, target, partners, config.c, 2.0 / 3.0, core),
            )
    lhs, rhs, holds = three_sequence_bound(
        entry_masses, partner_masses[0], partner_masses[1], config.p / 2
    )
    worst, required, margin_ok = table.margin_check()
    results = {
        "decomposition_error": table.decomposition_error(),
        "mass_constant": table.mass_constant(),
        "margin_worst": worst,
        "margin_required": required,
        "cross_cube_l1_max": l1 / scale if scale else 0.0,
        "cross_cube_two_thirds_max": two_thirds,
        "two_thirds_bound": two_thirds_bound(
            config.R, [first.source, second.source, third.source]
        ),
        "three_sequence": {"lhs": lhs, "rhs": rhs},
    }
    checks = {
        "table_identity": results["decomposition_error"] <= 1e-10,
        "three_sequence": holds,
        "margin": margin_ok,
    }
    return rows, results, checks


def table_census(config: RunConfig) -> Outcome:
    """Cross-cube exponent and pair multiplicities across R."""
    radii = config.R_values
    studies, fit = cross_cube_trend(
        config.n,
        radii,
        config.c,
        config.depth,
        config.resolution,
        config.points_per_axis,
        config.seed,
        config.threads,
    )
    standard, standard_censuses = pair_census_trend(
        config.n, radii, config.c, False, config.points_per_axis, config.near, config.seed,
        config.threads,
    )
    violating, violating_censuses = pair_census_trend(
        config.n, radii, config.c, True, config.points_per_axis, config.near, config.seed,
        config.threads,
    )
    rows = [
        {
            "R": R,
            "cross_cube_max": study.cross_cube_max,
            "mass_constant": study.mass_constant,
            "multiplicity_standard": s,
            "multiplicity_violating": v,
            "related_pairs_standard": a.related_pairs,
            "related_pairs_violating": b.related_pairs,
        }
        for R, study, s, v, a, b in zip(
            radii, studies, standard.values, violating.values, standard_censuses,
            violating_censuses,
        )
    ]
    results = {
        "cross_cube_fit": asdict(fit) if fit else None,
        "cross_cube_target": -(config.n - 2) / 4,
    }
    censuses = standard_censuses + violating_censuses
    checks = {
        "table_identity": all(s.decomposition_error <= 1e-10 for s in studies),
        "pair_census_nonempty": all(census.related_pairs > 0 for census in censuses),
    }
    return rows, results, checks


def counterexample_run(config: RunConfig) -> Outcome:
    """Squashed-cap series with per-p scaling fits against the predicted exponent."""
    cap = SquashedCapConfig(
        n=config.n,
        k=config.k,
        epsilons=tuple(config.epsilons),
        c_small=config.c_small,
        resolution=config.grid_resolution,
        space_resolution=config.space_resolution,
        p_values=tuple(config.p_values),
        samples=config.samples,
        seed=config.seed,
    )
    records, fits = squashed_cap_series(cap, config.threads)
    rows = [
        {
            "epsilon": record.epsilon,
            "n": config.n,
            "k": config.k,
            "p": p,
            "lp_norm": record.lp_norms[p],
            "normalized_norm": record.normalized_norms[p],
            "pointwise_min": record.pointwise_min,
            "max_phase_deviation": record.max_phase_deviation,
            "certified_factor": record.certified_factor,
            "nominal_factor": record.nominal_factor,
            "norm_closed_form": record.norm_closed_form,
            "norm_numeric_max": max(record.norm_numeric),
        }
        for record in records
        for p in cap.p_values
    ]
    results = {
        "fits": {
            str(p): {**asdict(fit), "target": counterexample_target(config.n, config.k, p)}
            for p, fit in fits.items()
        },
        "threshold": str(threshold_exponent(config.n, config.k)),
    }
    checks = {"pointwise": all(r.pointwise_min >= r.certified_factor - 1e-9 for r in records)}
    return rows, results, checks


def recursion_run(config: RunConfig) -> Outcome:
    """Iterates the scale recursion and compares its classification with the sign test."""
    recursion = RecursionConfig(
        n=config.n,
        p=config.p,
        C=config.C,
        C0=config.C0,
        epsilon=config.epsilon,
        C_eps=config.C_eps,
        R0=config.R0,
        max_doublings=config.max_doublings,
    )
    trace = recursion_iterate(recursion)
    factors = (None,) + trace.log_step_factors
    rows = [
        {"m": m, "p": config.p, "R": R, "log_A": value, "log_step_factor": factor}
        for m, (R, value, factor) in enumerate(zip(trace.radii, trace.log_values, factors))
    ]
    closed_form = classify_recursion(recursion)
    results = {
        "classification": trace.classification,
        "closed_form": closed_form,
        "exponent": recursion.exponent,
        "cauchy_step": trace.cauchy_step,
        "tail_bound": trace.tail_bound,
        "settled_in_trace": trace.settled_in_trace,
        "threshold": str(threshold_exponent(config.n, 3)),
    }
    return rows, results, {"classification": trace.classification == closed_form}


def trend_run(config: RunConfig) -> Outcome:
    """Double-cone trilinear ratio across R."""
    trend = double_cone_trend(
        config.n,
        config.p,
        config.R_values,
        config.resolution,
        config.grid_resolution,
        sample_count=config.samples,
        seed=config.seed,
        threads=config.threads,
    )
    rows = [{"R": R, "p": config.p, "ratio": v} for R, v in zip(trend.radii, trend.values)]
    results = {"fit": asdict(trend.fit) if trend.fit else None, "heuristic": True}
    return rows, results, {}


def threshold_run(config: RunConfig) -> Outcome:
    """Exact threshold exponent p(k)."""
    value = threshold_exponent(config.n, config.k)
    print(value)
    return [], {"threshold": str(value), "float": float(value)}, {}


HANDLERS: Dict[str, Callable[[RunConfig], Outcome]] = {
    "geometry check": geometry_check,
    "extend": extend_run,
    "packets decompose": packets_decompose,
    "packets census": packets_census,
    "table build": table_build,
    "table census": table_census,
    "counterexample run": counterexample_run,
    "recursion iterate": recursion_run,
    "trend run": trend_run,
    "threshold": threshold_run,
}


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, Fraction):
        return str(value)
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return value if math.isfinite(value) else str(value)
    return value


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


def write_rows(path: str, rows: Sequence[Dict[str, Any]]) -> None:
    """Writes rows as CSV; the header is the union of row keys in first-seen order."""
    fields: List[str] = []
    for row in rows:
        fields.extend(name for name in row if name not in fields)
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(fields)
        for row in rows:
            writer.writerow([_cell(row.get(name)) for name in fields])


def run(config: RunConfig) -> int:
    """Runs the configured subcommand and writes its artifacts.

    Returns:
        int: 0 on success, 2 if a checked invariant failed.
    """
    handler = HANDLERS[config.subcommand]
    rows, results, checks = handler(config)
    os.makedirs(config.output_dir, exist_ok=True)
    stem = os.path.join(config.output_dir, config.subcommand.replace(" ", "_"))
    if rows:
        write_rows(f"{stem}.csv", rows)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "subcommand": config.subcommand,
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "config": config.echo(),
        "results": results,
        "checks": checks,
    }
    with open(f"{stem}.json", "w") as stream:
        json.dump(_jsonable(summary), stream, indent=2, sort_keys=True)
        stream.write("\n")
    failed = sorted(name for name, ok in checks.items() if not ok)
    if failed:
        logger.error(f"{config.subcommand}: failed checks {', '.join(failed)}")
        return 2
    logger.info(f"{config.subcommand}: wrote {stem}.json")
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parses arguments, runs the subcommand and maps errors to exit codes."""
    parser = build_parser()
    try:
        args = vars(parser.parse_args(argv))
    except SystemExit as e:
        # argparse exits with 2 on usage errors; 2 is reserved for failed invariants
        return 0 if not e.code else 1
    logging.basicConfig(
        level=args.pop("log_level").upper(), format="%(levelname)s %(name)s: %(message)s"
    )
    path = args.pop("config")
    args.pop("group", None)
    args.pop("action", None)
    try:
        text = ""
        if path:
            with open(path) as stream:
                text = stream.read()
        config = parse_config(text, args)
        return run(config)
    except InvariantViolation as e:
        print(f"invariant violated: {e}", file=sys.stderr)
        return 2
    except (LabError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
