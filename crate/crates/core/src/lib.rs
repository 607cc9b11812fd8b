//! Finite-element solver for doubly nonlinear parabolic systems
//!
//! ```text
//! ∂ₜB(u) − ∇·(K(u)∇u + e(u)) = F(x, t, u)
//! ```
//!
//! with Dirichlet data on Γ₁, a flux condition on Γ₂ and the sign
//! constraint `u ≤ 0`, `flux ≤ 0`, `u·flux = 0` on Γ₃. The constraint is
//! enforced by the boundary penalty `(1/ε)∫_{Γ₃} u⁺·v` with a decreasing
//! sequence of penalty parameters; a primal–dual active-set solver provides
//! an independent reference.

pub mod bundled;
pub mod diagnostics;
pub mod expr;
pub mod fem;
pub mod mesh;
pub mod mms;
pub mod newton;
pub mod oracle;
pub mod quadrature;
pub mod solver;
pub mod spec;
pub mod validate;

pub use expr::{parse_expr, Bindings, Expr, ExprError};
pub use fem::{Discretization, StateField};
pub use mesh::{BoundaryTag, Mesh};
pub use spec::ProblemSpec;
