//! Principal-value and truncated integration over surface rules, tail
//! certificates and the ball/sphere moment oracles.

pub mod gauss;
pub mod moments;
pub mod pv;
pub mod reduce;
pub mod tail;

pub use moments::{
    ball_moment_x1_4, ball_moment_x1sq_x2sq, c_star, moment_row, monte_carlo_ball_moments,
    sphere_moment_theta1_4, unit_sphere_area, varpi, MomentRow,
};
pub use pv::{pv_surface_integral, pv_surface_integral_with, PVIntegralResult};
pub use tail::{power_envelope_tail, tail_bound, tail_bound_scaled};
