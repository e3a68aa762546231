//! Regularity diagnostics (minimal radii, hole-filling, Caccioppoli) and
//! statistical checks (CLT scaling, growth, tails, monotonicity of `a_bar`).

pub mod balls;
pub mod monotonicity;
pub mod radius;
pub mod regularity;
pub mod scaling;

pub use balls::{ball_average_direct, BallAverager};
pub use monotonicity::{radial_profile_check, verify_strong_monotonicity, MonotonicityReport, RadialReport};
pub use radius::{
    calibrate_c1, inf_convolution, linear_minimal_radius, meyers_radius, sandwich_check, RadiusField, RadiusKind,
    ELL,
};
pub use regularity::{
    average_control_constant, caccioppoli_constant, corrector_bounds, holefilling_fit, rescaling_invariance,
    BoundsReport, CaccioppoliReport, HoleFillingReport, RescalingReport,
};
pub use scaling::{clt_scaling, corrector_growth, moment_tail, GrowthReport, Quantity, ScalingReport, TailReport};

/// Growth weight: `1 + sqrt|z|` for `d = 1`, `sqrt(log(2 + |z|))` for
/// `d = 2` and `1` for `d = 3`.
pub fn mu_d(d: usize, z: f64) -> f64 {
    match d {
        1 => 1.0 + z.abs().sqrt(),
        2 => (2.0 + z.abs()).ln().sqrt(),
        _ => 1.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn growth_weight_values() {
        assert_eq!(mu_d(1, 4.0), 3.0);
        assert_eq!(mu_d(2, 0.0), 2f64.ln().sqrt());
        assert_eq!(mu_d(3, 17.0), 1.0);
    }
}
