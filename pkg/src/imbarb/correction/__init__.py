"""Policy correction: constrained distillation through a projection layer."""

from imbarb.correction.constraints import (
    ConstraintConfig,
    ConstraintSet,
    InfeasibleConstraintsError,
    LinearConstraint,
    build_constraints,
    margin_constraint,
)
from imbarb.correction.distill import distill_loss, teacher_policy, train_student
from imbarb.correction.qp import (
    ProjectionInfo,
    project_policy,
    project_policy_backward,
    project_policy_with_info,
)
from imbarb.correction.verify import (
    GridSpec,
    ViolationReport,
    project_batch_fixpoint,
    verify_properties,
)

__all__ = [
    "ConstraintConfig",
    "ConstraintSet",
    "GridSpec",
    "InfeasibleConstraintsError",
    "LinearConstraint",
    "ProjectionInfo",
    "ViolationReport",
    "build_constraints",
    "distill_loss",
    "margin_constraint",
    "project_batch_fixpoint",
    "project_policy",
    "project_policy_backward",
    "project_policy_with_info",
    "teacher_policy",
    "train_student",
    "verify_properties",
]
