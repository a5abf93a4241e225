#!/usr/bin/env python3
"""
Spline Lab command line
=======================

Exact flat splines, discrete energy minimization on the model manifolds,
verification of candidate solutions and the flat-cylinder winding experiments.
Structured data goes to stdout or --out; logs go to stderr.
"""

import sys
import time
import logging
import argparse
import numpy as np
from pathlib import Path
from typing import Dict, List, Optional
from src.config.spline_config import SplineConfig
from src.core.errors import SplineError, MaxIterExceeded, GridError
from src.curves.problem import InterpolationProblem
from src.data.problem_loader import problem_loader
from src.data.result_writer import result_writer, is_polynomial_file
from src.exact.polyspline import exact_solver, exact_energy
from src.optimization.energy_optimizer import energy_optimizer, OptimizerOptions
from src.verification.spline_verifier import verify
from src.cylinder.cylinder_lab import cylinder_lab

logger = logging.getLogger('spline_cli')


def configure_logging():
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, SplineConfig.LOG_LEVEL, logging.INFO),
        stream=sys.stderr,
    )


def _samples_path(out: str) -> Path:
    out = Path(out)
    return out.with_name(out.stem + '.samples.csv')


def _emit(args, kind: str, payload: Dict, table=None):
    """Structured document (or table) to --out or stdout"""
    if args.format == 'table' and table is not None and args.out is None:
        result_writer.write_table(table)
        return
    result_writer.write_json(result_writer.document(kind, payload), args.out)


def cmd_solve_exact(args) -> int:
    started = time.perf_counter()
    parsed = problem_loader.load(args.problem)
    problem = parsed.problem
    if args.k is not None and args.k != problem.order:
        problem = problem.with_order(args.k)
    system = exact_solver.assemble_system(problem)
    poly = exact_solver.solve_exact(problem)
    energy_f = exact_energy(poly, halved=True)
    logger.info(f"Exact spline of order {problem.order}: energy_f={energy_f:.12g}")

    payload = {
        'problem': problem.describe(),
        'energy_f': energy_f,
        'energy_int': exact_energy(poly, halved=False),
        'rows': system.family_counts(),
        'wall_time': time.perf_counter() - started,
    }
    samples = poly.to_frame(args.samples)
    if args.out is not None:
        result_writer.write_polynomial(poly, args.out, extra=payload)
        result_writer.write_table(samples, _samples_path(args.out))
    elif args.format == 'table':
        result_writer.write_table(samples)
    else:
        result_writer.write_polynomial(poly, None, extra=payload)
    return 0


def _options(args, solver: Dict) -> OptimizerOptions:
    return OptimizerOptions.from_config(
        tol_grad=args.tol if args.tol is not None else solver.get('tol_grad'),
        max_iter=args.max_iter if args.max_iter is not None else solver.get('max_iter'),
        memory=args.memory if args.memory is not None else solver.get('memory'),
        initial_step=solver.get('initial_step'),
        backtrack=solver.get('backtrack'),
        armijo=solver.get('armijo'),
    )


def _compare_with_exact(problem: InterpolationProblem, curve) -> Optional[Dict]:
    if not problem.manifold.is_flat:
        return None
    poly = exact_solver.solve_exact(problem)
    reference = poly.eval(curve.times)
    return {
        'sup_error': float(np.max(np.abs(curve.coords - reference))),
        'exact_energy_f': exact_energy(poly),
    }


def cmd_minimize(args) -> int:
    started = time.perf_counter()
    parsed = problem_loader.load(args.problem)
    problem = parsed.problem
    solver = parsed.solver
    M = args.grid or solver.get('grid') or SplineConfig.DEFAULT_GRID_SIZE
    starts = args.starts or solver.get('starts', 1)
    opts = _options(args, solver)

    curve, report = energy_optimizer.multi_start(problem, M, opts, starts=starts, seed=args.seed)

    payload: Dict = {
        'problem': problem.describe(),
        'grid': M,
        'seed': args.seed,
        'starts': starts,
        'convergence': report.to_dict(include_traces=args.traces),
    }
    if report.converged:
        try:
            payload['verification'] = verify(curve, problem).to_dict()
        except GridError as e:
            payload['verification'] = {'skipped': str(e)}
    if args.compare_exact:
        payload['comparison'] = _compare_with_exact(problem, curve)
    payload['wall_time'] = time.perf_counter() - started

    if args.out is not None:
        result_writer.write_curve(curve, args.out, meta={'report': payload})
    elif args.format == 'table':
        result_writer.write_table(result_writer.curve_frame(curve))
    else:
        result_writer.write_json(result_writer.document('minimize', payload))

    if not report.converged:
        error = MaxIterExceeded(
            f"Optimizer did not converge ({report.termination}, gradient {report.grad_norm:.3e})",
            curve=curve, report=report,
        )
        logger.warning(str(error))
        return error.exit_code
    return 0


def cmd_verify(args) -> int:
    parsed = problem_loader.load(args.problem)
    problem = parsed.problem
    if is_polynomial_file(args.solution):
        solution = result_writer.read_polynomial(args.solution)
    else:
        solution = result_writer.read_curve(args.solution)
    report = verify(solution, problem)
    payload = report.to_dict()
    payload['passed'] = report.passed(args.tol)
    _emit(args, 'verification', payload)
    return 0


def _parse_window(text: str) -> List[int]:
    if ':' in text:
        lo, hi = text.split(':', 1)
        return [int(lo), int(hi)]
    width = int(text)
    return [-width, width]


def cmd_cylinder(args) -> int:
    r = SplineConfig.resolve_real(args.r)
    if args.experiment == 'sequence':
        table = cylinder_lab.dirichlet_sequence(r, args.K)
        payload = {'r': r, 'K_max': args.K, 'rows': table.to_dict(orient='records')}
    elif args.experiment == 'scan':
        table, summary = cylinder_lab.constrained_winding_scan(r, args.v, _parse_window(args.window))
        payload = dict(summary, rows=table.to_dict(orient='records'))
    else:
        table = cylinder_lab.natural_periodic_sequence(r, args.K, args.delta)
        payload = {'r': r, 'K_max': args.K, 'delta': args.delta, 'rows': table.to_dict(orient='records')}

    if args.format == 'table':
        result_writer.write_table(table, args.out)
    else:
        result_writer.write_json(result_writer.document(f"cylinder_{args.experiment}", payload), args.out)
    return 0


def _common(parser: argparse.ArgumentParser):
    parser.add_argument('--out', default=None, help='output path (stdout when omitted)')
    parser.add_argument('--format', choices=['table', 'structured'], default='structured')
    parser.add_argument('--seed', type=int, default=SplineConfig.DEFAULT_SEED)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='spline_cli', description='Variational interpolating splines')
    commands = parser.add_subparsers(dest='command', required=True)

    solve = commands.add_parser('solve-exact', help='exact piecewise-polynomial spline (flat manifolds)')
    solve.add_argument('problem')
    solve.add_argument('--k', type=int, default=None, help='spline order (defaults to the file)')
    solve.add_argument('--samples', type=int, default=256, help='grid steps of the sample table')
    _common(solve)
    solve.set_defaults(handler=cmd_solve_exact)

    minimize = commands.add_parser('minimize', help='discrete energy minimization')
    minimize.add_argument('problem')
    minimize.add_argument('--grid', type=int, default=None)
    minimize.add_argument('--tol', type=float, default=None)
    minimize.add_argument('--max-iter', type=int, default=None)
    minimize.add_argument('--memory', type=int, default=None)
    minimize.add_argument('--starts', type=int, default=None)
    minimize.add_argument('--compare-exact', action='store_true')
    minimize.add_argument('--traces', action='store_true', help='include energy and speed traces')
    _common(minimize)
    minimize.set_defaults(handler=cmd_minimize)

    check = commands.add_parser('verify', help='verify a curve or polynomial file')
    check.add_argument('solution')
    check.add_argument('problem')
    check.add_argument('--tol', type=float, default=1e-8)
    _common(check)
    check.set_defaults(handler=cmd_verify)

    cylinder = commands.add_parser('cylinder', help='flat-cylinder winding experiments')
    experiments = cylinder.add_subparsers(dest='experiment', required=True)
    sequence = experiments.add_parser('sequence')
    sequence.add_argument('--r', default=SplineConfig.CYLINDER_DEFAULT_R)
    sequence.add_argument('--K', type=int, default=10000)
    _common(sequence)
    scan = experiments.add_parser('scan')
    scan.add_argument('--r', default=SplineConfig.CYLINDER_DEFAULT_R)
    scan.add_argument('--v', type=float, default=0.0)
    scan.add_argument('--window', default='10', help='half-width W or lo:hi')
    _common(scan)
    natural = experiments.add_parser('natural-periodic')
    natural.add_argument('--r', default=SplineConfig.CYLINDER_DEFAULT_R)
    natural.add_argument('--K', type=int, default=10000)
    natural.add_argument('--delta', type=float, default=0.1)
    _common(natural)
    cylinder.set_defaults(handler=cmd_cylinder)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        SplineConfig.validate_config()
        return args.handler(args)
    except SplineError as e:
        logger.error(f"{type(e).__name__}: {e}")
        result_writer.write_json(result_writer.document('error', e.to_dict()))
        return e.exit_code
    except ValueError as e:
        logger.error(f"Error: {e}")
        result_writer.write_json(result_writer.document('error', {'error': 'value_error', 'message': str(e)}))
        return 1


if __name__ == "__main__":
    sys.exit(main())
