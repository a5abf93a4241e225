import os
import math
from fractions import Fraction
from dataclasses import dataclass
from dotenv import load_dotenv

load_dotenv()

GOLDEN_CONJUGATE = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass
class OptimizerDefaults:
    tol_grad: float
    max_iter: int
    memory: int
    initial_step: float
    backtrack: float
    armijo: float


class SplineConfig:
    # Named constants accepted wherever a real number is expected
    NAMED_CONSTANTS = {
        'golden': GOLDEN_CONJUGATE,
    }

    # Logging
    LOG_LEVEL = os.getenv('LOG_LEVEL', 'INFO')

    # Discretization
    DEFAULT_GRID_SIZE = int(os.getenv('DEFAULT_GRID_SIZE', 256))
    GRID_MAX_DENOMINATOR = int(os.getenv('GRID_MAX_DENOMINATOR', 4096))
    GRID_TIME_TOLERANCE = float(os.getenv('GRID_TIME_TOLERANCE', 1e-12))

    # Optimizer
    OPT_TOL_GRAD = float(os.getenv('OPT_TOL_GRAD', 1e-9))
    OPT_MAX_ITER = int(os.getenv('OPT_MAX_ITER', 5000))
    OPT_MEMORY = int(os.getenv('OPT_MEMORY', 10))
    OPT_INITIAL_STEP = float(os.getenv('OPT_INITIAL_STEP', 1.0))
    OPT_BACKTRACK = float(os.getenv('OPT_BACKTRACK', 0.5))
    OPT_ARMIJO = float(os.getenv('OPT_ARMIJO', 1e-4))

    # Sphere chart
    SPHERE_POLE_RADIUS = float(os.getenv('SPHERE_POLE_RADIUS', 10.0))

    # Exact solver
    EXACT_MAX_PIECES = int(os.getenv('EXACT_MAX_PIECES', 50))
    EXACT_RESIDUAL_TOL = float(os.getenv('EXACT_RESIDUAL_TOL', 1e-9))
    EXACT_MAX_CONDITION = float(os.getenv('EXACT_MAX_CONDITION', 1e14))

    # Cylinder lab
    RATIONAL_WARN_DENOMINATOR = int(os.getenv('RATIONAL_WARN_DENOMINATOR', 1000))
    CYLINDER_DEFAULT_R = os.getenv('CYLINDER_DEFAULT_R', 'golden')

    # Outputs
    SCHEMA_VERSION = os.getenv('SCHEMA_VERSION', '1.0')
    DEFAULT_SEED = int(os.getenv('DEFAULT_SEED', 0))

    @classmethod
    def validate_config(cls):
        """Validate numeric settings"""
        issues = []

        if cls.DEFAULT_GRID_SIZE < 2:
            issues.append("DEFAULT_GRID_SIZE must be at least 2")
        if cls.OPT_TOL_GRAD <= 0:
            issues.append("OPT_TOL_GRAD must be positive")
        if cls.OPT_MAX_ITER < 1:
            issues.append("OPT_MAX_ITER must be at least 1")
        if cls.OPT_MEMORY < 0:
            issues.append("OPT_MEMORY cannot be negative")
        if not 0 < cls.OPT_BACKTRACK < 1:
            issues.append("OPT_BACKTRACK must lie in (0, 1)")
        if not 0 < cls.OPT_ARMIJO < 1:
            issues.append("OPT_ARMIJO must lie in (0, 1)")
        if cls.SPHERE_POLE_RADIUS <= 0:
            issues.append("SPHERE_POLE_RADIUS must be positive")
        if cls.EXACT_MAX_PIECES < 1:
            issues.append("EXACT_MAX_PIECES must be at least 1")

        if issues:
            raise ValueError(f"Invalid configuration: {'; '.join(issues)}")

        return True

    @classmethod
    def optimizer_defaults(cls) -> OptimizerDefaults:
        """Optimizer settings as configured through the environment"""
        return OptimizerDefaults(
            tol_grad=cls.OPT_TOL_GRAD,
            max_iter=cls.OPT_MAX_ITER,
            memory=cls.OPT_MEMORY,
            initial_step=cls.OPT_INITIAL_STEP,
            backtrack=cls.OPT_BACKTRACK,
            armijo=cls.OPT_ARMIJO,
        )

    @classmethod
    def resolve_real(cls, value) -> float:
        """Turn a number or a named constant ('golden') into a float"""
        if isinstance(value, str):
            key = value.strip().lower()
            if key in cls.NAMED_CONSTANTS:
                return cls.NAMED_CONSTANTS[key]
            return float(Fraction(key))
        return float(value)

