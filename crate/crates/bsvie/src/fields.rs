//! Sources for the two solution fields during a rollout.
//!
//! The rollout is generic over where Y and Z come from: the trainable
//! networks, or the problem's closed-form pair (the "closed-form bypass"
//! used as a residual oracle and for reference constructions). Both run
//! through the identical rollout code path.

use crate::net::BoundNets;
use crate::problem::ProblemSpec;
use crate::tape::{Tape, Var};

pub trait FieldProvider {
    /// Value field at per-row times: t_col [m x 1], x [m x d] -> [m x 1].
    fn y(&self, tape: &mut Tape, t_col: Var, x: Var) -> Var;
    /// Control field on (t, s, x_t, x_s) rows -> [m x ell].
    fn z(&self, tape: &mut Tape, t_col: Var, s_col: Var, x_t: Var, x_s: Var) -> Var;
}

/// Networks bound to the current tape.
pub struct NetProvider<'a> {
    pub nets: &'a BoundNets,
}

impl FieldProvider for NetProvider<'_> {
    fn y(&self, tape: &mut Tape, t_col: Var, x: Var) -> Var {
        self.nets.y_forward(tape, t_col, x)
    }

    fn z(&self, tape: &mut Tape, t_col: Var, s_col: Var, x_t: Var, x_s: Var) -> Var {
        self.nets.z_forward(tape, t_col, s_col, x_t, x_s)
    }
}

/// The problem's closed-form solution pair.
pub struct ClosedFormProvider<'a> {
    pub problem: &'a ProblemSpec,
}

impl FieldProvider for ClosedFormProvider<'_> {
    fn y(&self, tape: &mut Tape, t_col: Var, x: Var) -> Var {
        self.problem.closed_form_y(tape, t_col, x)
    }

    fn z(&self, tape: &mut Tape, t_col: Var, s_col: Var, x_t: Var, x_s: Var) -> Var {
        self.problem.closed_form_z(tape, t_col, s_col, x_t, x_s)
    }
}
