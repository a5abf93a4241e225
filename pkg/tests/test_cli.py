import pytest
import json
import numpy as np
import sys
import os

# Add parent directory to path for imports
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from spline_cli import main
from src.geometry.manifolds import Sphere
from src.curves.discrete_curve import ChartCurve, TimeGrid
from src.data.result_writer import result_writer, is_polynomial_file, sidecar_path

PROBLEMS = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'problems')


def problem_path(name):
    return os.path.join(PROBLEMS, name)


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr().out
    return code, out


def write_problem(tmp_path, data, name='problem.json'):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding='utf-8')
    return str(path)


class TestCommandLine:
    """Test cases for the spline_cli entry point"""

    @pytest.fixture
    def off_grid_problem(self, tmp_path):
        return write_problem(tmp_path, {
            'manifold': {'kind': 'euclidean', 'dim': 2},
            'knots': [
                {'t': 0, 'point': [0, 0]},
                {'t': '1/3', 'point': [1, 1]},
                {'t': 1, 'point': [2, 0]},
            ],
        })

    def test_solve_exact_cubic(self, capsys):
        code, out = run(capsys, 'solve-exact', problem_path('cubic_n1.json'))
        doc = json.loads(out)
        assert code == 0
        assert doc['kind'] == 'piecewise_polynomial'
        assert doc['schema_version'] == '1.0'
        assert abs(doc['energy_f'] - 1.5) <= 1e-12
        assert doc['rows'] == {'interp': 2, 'prescribed': 1, 'junction': 0, 'natural': 1}

    def test_solve_exact_collinear(self, capsys):
        code, out = run(capsys, 'solve-exact', problem_path('collinear.json'))
        assert code == 0
        assert json.loads(out)['energy_f'] <= 1e-18

    def test_solve_exact_table_format(self, capsys):
        code, out = run(capsys, 'solve-exact', problem_path('cubic_n1.json'), '--format', 'table', '--samples', '4')
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0].split() == ['t', 'x0', 'dx0', 'ddx0']
        assert len(lines) == 6

    def test_duplicate_knot_times(self, capsys, tmp_path):
        path = write_problem(tmp_path, {
            'manifold': {'kind': 'euclidean', 'dim': 1},
            'knots': [{'t': 0, 'point': [0]}, {'t': 0.5, 'point': [1]}, {'t': 0.5, 'point': [2]}, {'t': 1, 'point': [0]}],
        })
        code, out = run(capsys, 'solve-exact', path)
        doc = json.loads(out)
        assert code == 2
        assert doc['error'] == 'validation_error'
        assert 'knots[2].t' in [loc['field'] for loc in doc['locations']]

    def test_malformed_file_lists_every_field(self, capsys, tmp_path):
        path = write_problem(tmp_path, {
            'manifold': {'kind': 'torus'},
            'knots': [{'t': 'soon', 'point': [0]}],
            'solver': {'speed': 3},
        })
        code, out = run(capsys, 'minimize', path)
        fields = [loc['field'] for loc in json.loads(out)['locations']]
        assert code == 2
        assert 'manifold.kind' in fields
        assert 'knots[0].t' in fields
        assert 'solver.speed' in fields

    def test_unreadable_file(self, capsys, tmp_path):
        code, out = run(capsys, 'solve-exact', str(tmp_path / 'missing.json'))
        assert code == 2
        assert json.loads(out)['error'] == 'validation_error'

    def test_off_grid_knot_suggests_grid(self, capsys, off_grid_problem):
        code, out = run(capsys, 'minimize', off_grid_problem, '--grid', '10')
        doc = json.loads(out)
        assert code == 2
        assert doc['error'] == 'grid_error'
        assert doc['suggested_grid'] == 12

    def test_singular_exact_system(self, capsys, tmp_path):
        path = write_problem(tmp_path, {
            'manifold': {'kind': 'euclidean', 'dim': 1},
            'order': 3,
            'knots': [{'t': 0, 'point': [0]}, {'t': 1, 'point': [1]}],
        })
        code, out = run(capsys, 'solve-exact', path)
        assert code == 3
        assert json.loads(out)['error'] == 'singular_system'

    def test_minimize_compares_with_exact(self, capsys):
        code, out = run(capsys, 'minimize', problem_path('cubic_n1.json'), '--compare-exact')
        doc = json.loads(out)
        assert code == 0
        assert doc['grid'] == 512
        assert doc['convergence']['converged']
        assert 'energy_trace' not in doc['convergence']
        assert doc['comparison']['sup_error'] <= 1e-3
        assert abs(doc['comparison']['exact_energy_f'] - 1.5) <= 1e-12
        assert 'el_residual_max' in doc['verification']

    def test_minimize_on_curved_manifold_skips_comparison(self, capsys):
        code, out = run(capsys, 'minimize', problem_path('sphere_two_knots.json'), '--compare-exact', '--traces')
        doc = json.loads(out)
        assert code == 0
        assert doc['comparison'] is None
        assert len(doc['convergence']['energy_trace']) >= 1

    def test_minimize_not_converged(self, capsys):
        code, out = run(capsys, 'minimize', problem_path('sphere_two_knots.json'), '--max-iter', '1', '--tol', '1e-14')
        doc = json.loads(out)
        assert code == 4
        assert doc['convergence']['termination'] == 'max_iter'
        assert 'verification' not in doc

    def test_minimize_then_verify(self, capsys, tmp_path):
        curve_path = str(tmp_path / 'curve.csv')
        code, _ = run(capsys, 'minimize', problem_path('cubic_n1.json'), '--grid', '128', '--out', curve_path)
        assert code == 0
        assert sidecar_path(curve_path).exists()
        assert not is_polynomial_file(curve_path)

        code, out = run(capsys, 'verify', curve_path, problem_path('cubic_n1.json'))
        doc = json.loads(out)
        assert code == 0
        assert doc['kind'] == 'verification'
        assert doc['source'] == 'discrete'
        assert doc['grid_M'] == 128
        assert isinstance(doc['passed'], bool)

    def test_solve_then_verify_polynomial(self, capsys, tmp_path):
        poly_path = str(tmp_path / 'spline.json')
        code, _ = run(capsys, 'solve-exact', problem_path('plane_interior_site.json'), '--out', poly_path)
        assert code == 0
        assert is_polynomial_file(poly_path)
        assert (tmp_path / 'spline.samples.csv').exists()

        code, out = run(capsys, 'verify', poly_path, problem_path('plane_interior_site.json'))
        doc = json.loads(out)
        assert code == 0
        assert doc['source'] == 'polynomial'
        assert doc['passed']

    def test_curve_files_round_trip_exactly(self, tmp_path):
        rng = np.random.default_rng(7)
        grid = TimeGrid(24)
        curve = ChartCurve(grid, 0.5 * rng.normal(size=(25, 2)), Sphere())
        path = tmp_path / 'noise.csv'
        result_writer.write_curve(curve, path)
        restored = result_writer.read_curve(path)
        np.testing.assert_array_equal(restored.coords, curve.coords)
        np.testing.assert_array_equal(restored.times, curve.times)
        assert restored.manifold.kind == 'sphere'

    def test_cylinder_sequence(self, capsys):
        code, out = run(capsys, 'cylinder', 'sequence', '--K', '64')
        doc = json.loads(out)
        assert code == 0
        assert doc['kind'] == 'cylinder_sequence'
        assert [row['K'] for row in doc['rows']] == [1, 2, 4, 8, 16, 32, 64]

    def test_cylinder_scan(self, capsys):
        code, out = run(capsys, 'cylinder', 'scan', '--r', '1/2', '--v', '1', '--window=-2:2')
        doc = json.loads(out)
        assert code == 0
        assert doc['argmin'] == {'m': 0, 'k0': 1}
        assert len(doc['rows']) == 25

    def test_cylinder_natural_periodic_table(self, capsys):
        code, out = run(capsys, 'cylinder', 'natural-periodic', '--K', '8', '--format', 'table')
        lines = out.strip().splitlines()
        assert code == 0
        assert lines[0].split()[:4] == ['K', 'k0', 'm', 'alpha']
        assert len(lines) == 5


if __name__ == "__main__":
    pytest.main([__file__])
