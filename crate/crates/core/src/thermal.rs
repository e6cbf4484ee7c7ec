//! Transformer insulation aging and top-oil / hot-spot thermal response.
//!
//! Temperatures are in °C everywhere; the Kelvin shift only appears inside
//! [`aging_factor_exact`]. Loading enters through the squared line current
//! `l` relative to the squared nominal current `l_nominal`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Reference hot-spot temperature at which the aging factor equals one.
pub const REFERENCE_HOTSPOT_C: f64 = 110.0;

/// Default hot-spot breakpoints: 0-110, 110-120, ..., 170-180 (eight segments).
pub const DEFAULT_BREAKPOINTS: [f64; 9] =
    [0.0, 110.0, 120.0, 130.0, 140.0, 150.0, 160.0, 170.0, 180.0];

/// Aging acceleration factor for hot-spot temperature `theta_h` (°C).
pub fn aging_factor_exact(theta_h: f64) -> Result<f64> {
    if !(theta_h > -273.0) || !theta_h.is_finite() {
        return Err(Error::Domain(format!(
            "hot-spot temperature {theta_h} °C is at or below absolute zero"
        )));
    }
    Ok((15000.0 / 383.0 - 15000.0 / (theta_h + 273.0)).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalParams {
    /// Ratio of load losses at rated load to no-load losses.
    pub loss_ratio: f64,
    /// Top-oil rise over ambient at rated load (°C).
    pub rated_top_oil_rise: f64,
    /// Hot-spot rise over top-oil at rated load (°C).
    pub rated_hotspot_rise: f64,
    pub oil_time_constant_h: f64,
    /// Informational only; the winding is treated as quasi-steady.
    pub winding_time_constant_min: f64,
    pub k1: f64,
    pub n: f64,
    pub m: f64,
    /// Squared nominal current (p.u.).
    pub l_nominal: f64,
}

impl ThermalParams {
    /// Parameters with the standard constants τ_TO = 3 h, τ_w = 4 min,
    /// k1 = 1, n = m = 0.8.
    pub fn recommended(
        loss_ratio: f64,
        rated_top_oil_rise: f64,
        rated_hotspot_rise: f64,
        l_nominal: f64,
    ) -> Self {
        Self {
            loss_ratio,
            rated_top_oil_rise,
            rated_hotspot_rise,
            oil_time_constant_h: 3.0,
            winding_time_constant_min: 4.0,
            k1: 1.0,
            n: 0.8,
            m: 0.8,
            l_nominal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Validation(format!(
                    "thermal parameter {what} out of range"
                )))
            }
        };
        check(self.loss_ratio > 0.0, "loss_ratio (> 0)")?;
        check(self.rated_top_oil_rise > 0.0, "rated_top_oil_rise (> 0)")?;
        check(self.rated_hotspot_rise > 0.0, "rated_hotspot_rise (> 0)")?;
        check(self.oil_time_constant_h > 0.0, "oil_time_constant_h (> 0)")?;
        check(self.k1 > 0.0, "k1 (> 0)")?;
        check(self.n > 0.0 && self.n <= 1.0, "n (0 < n <= 1)")?;
        check(self.m > 0.0 && self.m <= 1.0, "m (0 < m <= 1)")?;
        check(self.l_nominal > 0.0, "l_nominal (> 0)")
    }

    /// Weight of the new input in the discretized oil equation, `Δt/(k1 τ + Δt)`.
    fn input_weight(&self, dt: f64) -> f64 {
        dt / (self.k1 * self.oil_time_constant_h + dt)
    }
}

/// Convex piecewise-linear surrogate `F̃(θ) = a_κ θ − b_κ` on
/// `[θ_{κ-1}, θ_κ)`, built from secants of the exact aging factor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseAging {
    pub breakpoints: Vec<f64>,
    pub slopes: Vec<f64>,
    /// Offsets `b_κ`, subtracted: `F̃ = a θ − b`.
    pub offsets: Vec<f64>,
}

impl PiecewiseAging {
    pub fn new(breakpoints: &[f64]) -> Result<Self> {
        if breakpoints.len() < 2 {
            return Err(Error::Validation(
                "piecewise aging needs at least two breakpoints".into(),
            ));
        }
        if breakpoints.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Validation(
                "piecewise aging breakpoints must be strictly increasing".into(),
            ));
        }
        let values = breakpoints
            .iter()
            .map(|&t| aging_factor_exact(t))
            .collect::<Result<Vec<_>>>()?;
        let mut slopes = Vec::with_capacity(breakpoints.len() - 1);
        let mut offsets = Vec::with_capacity(breakpoints.len() - 1);
        for k in 0..breakpoints.len() - 1 {
            let a = (values[k + 1] - values[k]) / (breakpoints[k + 1] - breakpoints[k]);
            slopes.push(a);
            offsets.push(a * breakpoints[k] - values[k]);
        }
        Ok(Self {
            breakpoints: breakpoints.to_vec(),
            slopes,
            offsets,
        })
    }

    pub fn default_curve() -> Self {
        Self::new(&DEFAULT_BREAKPOINTS).expect("default breakpoints are valid")
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn segment_value(&self, k: usize, theta_h: f64) -> f64 {
        self.slopes[k] * theta_h - self.offsets[k]
    }

    /// Value on the segment covering `theta_h`; the end segments extend
    /// beyond the breakpoint range.
    pub fn eval(&self, theta_h: f64) -> f64 {
        let last = self.segments() - 1;
        let k = self.breakpoints[1..]
            .iter()
            .position(|&b| theta_h < b)
            .unwrap_or(last)
            .min(last);
        self.segment_value(k, theta_h)
    }

    /// Upper envelope of all segment lines. Equals [`eval`](Self::eval) for a
    /// convex curve.
    pub fn max_affine(&self, theta_h: f64) -> f64 {
        (0..self.segments())
            .map(|k| self.segment_value(k, theta_h))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Coefficients of the linear hot-spot inequalities and top-oil recursion for
/// one transformer:
///
/// `f ≥ α_κ h + β_κ l + γ_κ` and `h_t = δ h_{t−1} + ε l_t + ζ_t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearizedCoeffs {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Oil memory factor.
    pub delta: f64,
    pub epsilon: f64,
    /// Load-independent part of ζ.
    pub zeta_base: f64,
    /// Multiplier of ambient temperature in ζ.
    pub zeta_ambient: f64,
    /// Winding rise per unit squared current.
    pub eta: f64,
}

impl LinearizedCoeffs {
    pub fn zeta(&self, ambient: f64) -> f64 {
        self.zeta_base + self.zeta_ambient * ambient
    }
}

pub fn linearized_coefficients(
    tp: &ThermalParams,
    pw: &PiecewiseAging,
    dt_hours: f64,
) -> LinearizedCoeffs {
    let w = tp.input_weight(dt_hours);
    let r = tp.loss_ratio;
    let rise = tp.rated_top_oil_rise;
    let eta = tp.m * tp.rated_hotspot_rise / tp.l_nominal;
    let fixed_rise = (1.0 - tp.m) * tp.rated_hotspot_rise;
    LinearizedCoeffs {
        alpha: pw.slopes.clone(),
        beta: pw.slopes.iter().map(|a| a * eta).collect(),
        gamma: pw
            .slopes
            .iter()
            .zip(&pw.offsets)
            .map(|(a, b)| a * fixed_rise - b)
            .collect(),
        delta: tp.k1 * tp.oil_time_constant_h / (tp.k1 * tp.oil_time_constant_h + dt_hours),
        epsilon: w * tp.n * r / (1.0 + r) * rise / tp.l_nominal,
        zeta_base: w * (1.0 + (1.0 - tp.n) * r) / (1.0 + r) * rise,
        zeta_ambient: w,
        eta,
    }
}

/// Linearized top-oil update.
pub fn top_oil_step(coeffs: &LinearizedCoeffs, h_prev: f64, l: f64, ambient: f64) -> f64 {
    coeffs.delta * h_prev + coeffs.epsilon * l + coeffs.zeta(ambient)
}

/// Top-oil update with the unlinearized loss term `((1 + K²R)/(1 + R))^n`.
pub fn top_oil_step_exact(
    tp: &ThermalParams,
    dt_hours: f64,
    h_prev: f64,
    l: f64,
    ambient: f64,
) -> f64 {
    let k1tau = tp.k1 * tp.oil_time_constant_h;
    let w = tp.input_weight(dt_hours);
    let k2 = l / tp.l_nominal;
    let r = tp.loss_ratio;
    let loss = ((1.0 + k2 * r) / (1.0 + r)).powf(tp.n);
    k1tau / (k1tau + dt_hours) * h_prev + w * (tp.rated_top_oil_rise * loss + ambient)
}

/// Hot-spot temperature with the winding rise linearized around rated load.
pub fn hotspot(tp: &ThermalParams, h: f64, l: f64) -> f64 {
    h + tp.m * tp.rated_hotspot_rise * l / tp.l_nominal + (1.0 - tp.m) * tp.rated_hotspot_rise
}

/// Top-oil temperature in steady state under squared current `l0`.
pub fn steady_state_top_oil(tp: &ThermalParams, l0: f64, ambient: f64) -> f64 {
    let r = tp.loss_ratio;
    ambient + tp.rated_top_oil_rise * ((1.0 + l0 / tp.l_nominal * r) / (1.0 + r)).powf(tp.n)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalRow {
    pub period: usize,
    pub l: f64,
    pub top_oil: f64,
    pub hotspot: f64,
    pub faa_exact: f64,
    pub faa_piecewise: f64,
    /// Cumulative loss of life in hours, `Σ F̃ Δt`.
    pub cumulative_lol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThermalTrajectory {
    pub initial_top_oil: f64,
    pub rows: Vec<ThermalRow>,
}

/// Runs the linear thermal model over a load series. Without a known
/// initial top-oil temperature the steady state under the first load is used.
pub fn simulate_thermal(
    tp: &ThermalParams,
    pw: &PiecewiseAging,
    dt_hours: f64,
    loads: &[f64],
    ambient: &[f64],
    initial_top_oil: Option<f64>,
) -> Result<ThermalTrajectory> {
    if loads.len() != ambient.len() {
        return Err(Error::ShapeMismatch(format!(
            "load series has {} periods, ambient has {}",
            loads.len(),
            ambient.len()
        )));
    }
    if loads.is_empty() {
        return Err(Error::ShapeMismatch("empty load series".into()));
    }
    let coeffs = linearized_coefficients(tp, pw, dt_hours);
    let h0 = initial_top_oil.unwrap_or_else(|| steady_state_top_oil(tp, loads[0], ambient[0]));
    let mut h = h0;
    let mut lol = 0.0;
    let mut rows = Vec::with_capacity(loads.len());
    for (k, (&l, &a)) in loads.iter().zip(ambient).enumerate() {
        h = top_oil_step(&coeffs, h, l, a);
        let th = hotspot(tp, h, l);
        let f = pw.eval(th).max(0.0);
        lol += f * dt_hours;
        rows.push(ThermalRow {
            period: k + 1,
            l,
            top_oil: h,
            hotspot: th,
            faa_exact: aging_factor_exact(th)?,
            faa_piecewise: f,
            cumulative_lol: lol,
        });
    }
    Ok(ThermalTrajectory {
        initial_top_oil: h0,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn fixture() -> ThermalParams {
        ThermalParams::recommended(5.0, 55.0, 25.0, 1.0)
    }

    #[test]
    fn aging_factor_values() {
        assert_eq!(aging_factor_exact(110.0).unwrap(), 1.0);
        assert_abs_diff_eq!(aging_factor_exact(120.0).unwrap(), 2.7089, epsilon = 1e-4);
        assert_abs_diff_eq!(aging_factor_exact(98.0).unwrap(), 0.2817, epsilon = 1e-4);
        assert!(aging_factor_exact(-273.0).is_err());
        assert!(aging_factor_exact(-300.0).is_err());
    }

    #[test]
    fn default_curve_shape() {
        let pw = PiecewiseAging::default_curve();
        assert_eq!(pw.segments(), 8);
        // Segment [110, 120] passes through the exact values at its ends.
        assert_abs_diff_eq!(pw.segment_value(1, 110.0), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pw.segment_value(1, 120.0), 2.708_9, epsilon = 1e-4);
        for k in 1..pw.segments() {
            let b = pw.breakpoints[k];
            assert_abs_diff_eq!(
                pw.segment_value(k - 1, b),
                pw.segment_value(k, b),
                epsilon = 1e-12
            );
            assert!(pw.slopes[k] >= pw.slopes[k - 1]);
        }
    }

    #[test]
    fn piecewise_rejects_bad_breakpoints() {
        assert!(PiecewiseAging::new(&[110.0]).is_err());
        assert!(PiecewiseAging::new(&[110.0, 110.0]).is_err());
        assert!(PiecewiseAging::new(&[120.0, 110.0]).is_err());
    }

    #[test]
    fn delta_by_granularity() {
        let tp = fixture();
        let pw = PiecewiseAging::default_curve();
        assert_eq!(linearized_coefficients(&tp, &pw, 1.0).delta, 0.75);
        assert_abs_diff_eq!(
            linearized_coefficients(&tp, &pw, 0.5).delta,
            6.0 / 7.0,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            linearized_coefficients(&tp, &pw, 0.25).delta,
            12.0 / 13.0,
            epsilon = 1e-15
        );
    }

    #[test]
    fn hourly_coefficients_match_closed_forms() {
        let tp = fixture();
        let pw = PiecewiseAging::default_curve();
        let c = linearized_coefficients(&tp, &pw, 1.0);
        assert_abs_diff_eq!(c.epsilon, 275.0 / 30.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.zeta(25.0), 550.0 / 120.0 + 6.25, epsilon = 1e-12);
        assert_abs_diff_eq!(c.eta, 4.0 * 25.0 / 5.0, epsilon = 1e-12);
        for k in 0..pw.segments() {
            let a = pw.slopes[k];
            assert_abs_diff_eq!(c.alpha[k], a, epsilon = 0.0);
            assert_abs_diff_eq!(c.beta[k], a * 4.0 * 25.0 / 5.0, epsilon = 1e-12);
            assert_abs_diff_eq!(c.gamma[k], a * 25.0 / 5.0 - pw.offsets[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn top_oil_steps() {
        let tp = fixture();
        let c = linearized_coefficients(&tp, &PiecewiseAging::default_curve(), 1.0);
        assert_abs_diff_eq!(top_oil_step(&c, 80.0, 1.0, 25.0), 80.0, epsilon = 1e-12);
        assert_abs_diff_eq!(
            top_oil_step(&c, 80.0, 0.0, 25.0),
            60.0 + 550.0 / 120.0 + 6.25,
            epsilon = 1e-12
        );
        let mut h = 80.0;
        for _ in 0..20 {
            h = top_oil_step(&c, h, 1.0, 25.0);
        }
        assert_abs_diff_eq!(h, 80.0, epsilon = 1e-12);
    }

    #[test]
    fn exact_step_matches_at_rated_load() {
        let tp = fixture();
        let c = linearized_coefficients(&tp, &PiecewiseAging::default_curve(), 1.0);
        for h in [40.0, 80.0, 95.0] {
            assert_abs_diff_eq!(
                top_oil_step_exact(&tp, 1.0, h, 1.0, 25.0),
                top_oil_step(&c, h, 1.0, 25.0),
                epsilon = 1e-12
            );
        }
        // No load: the exact loss term is (1/(1+R))^n, the surrogate is affine.
        let exact = top_oil_step_exact(&tp, 1.0, 80.0, 0.0, 25.0);
        let expected = 60.0 + 0.25 * (55.0 * (1.0f64 / 6.0).powf(0.8) + 25.0);
        assert_abs_diff_eq!(exact, expected, epsilon = 1e-12);
        assert!(top_oil_step(&c, 80.0, 0.0, 25.0) > exact);
    }

    /// Largest gap between linearized and exact oil steps for loading ratios in
    /// [0.5, 1.5], found by a fine sweep with the fixture parameters.
    const LINEARIZATION_BOUND_C: f64 = 0.2329;

    #[test]
    fn linearization_bound() {
        let tp = fixture();
        let c = linearized_coefficients(&tp, &PiecewiseAging::default_curve(), 1.0);
        let mut worst: f64 = 0.0;
        for k in 0..=1000 {
            let l = 0.5 + k as f64 / 1000.0;
            let d = top_oil_step(&c, 70.0, l, 25.0) - top_oil_step_exact(&tp, 1.0, 70.0, l, 25.0);
            // Concave loss term: the tangent always lies above.
            assert!(d >= -1e-12);
            worst = worst.max(d);
        }
        assert!(worst <= LINEARIZATION_BOUND_C, "worst deviation {worst}");
        // 1.2 × rated: the documented point value.
        let d = top_oil_step(&c, 70.0, 1.2, 25.0) - top_oil_step_exact(&tp, 1.0, 70.0, 1.2, 25.0);
        assert_abs_diff_eq!(d, 0.028_687, epsilon = 1e-5);
    }

    #[test]
    fn hotspot_values() {
        let tp = fixture();
        assert_abs_diff_eq!(hotspot(&tp, 80.0, 1.0), 105.0, epsilon = 1e-12);
        assert_abs_diff_eq!(hotspot(&tp, 80.0, 0.0), 85.0, epsilon = 1e-12);
        let mut flat = tp.clone();
        flat.rated_hotspot_rise = 0.0;
        assert_eq!(hotspot(&flat, 80.0, 0.7), 80.0);
    }

    #[test]
    fn steady_state_values() {
        let tp = fixture();
        assert_abs_diff_eq!(steady_state_top_oil(&tp, 1.0, 25.0), 80.0, epsilon = 1e-12);
        assert_abs_diff_eq!(steady_state_top_oil(&tp, 0.0, 25.0), 38.12, epsilon = 5e-3);
        let mut cold = tp.clone();
        cold.rated_top_oil_rise = 0.0;
        assert_eq!(steady_state_top_oil(&cold, 0.4, 25.0), 25.0);
    }

    #[test]
    fn simulation_constant_rated_load() {
        let tp = fixture();
        let pw = PiecewiseAging::default_curve();
        let traj = simulate_thermal(&tp, &pw, 1.0, &[1.0; 24], &[25.0; 24], None).unwrap();
        assert_abs_diff_eq!(traj.initial_top_oil, 80.0, epsilon = 1e-12);
        for row in &traj.rows {
            assert_abs_diff_eq!(row.top_oil, 80.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.faa_exact, traj.rows[0].faa_exact, epsilon = 1e-12);
        }
        let last = traj.rows.last().unwrap();
        assert_abs_diff_eq!(
            last.cumulative_lol,
            24.0 * last.faa_piecewise,
            epsilon = 1e-9
        );
    }

    #[test]
    fn simulation_load_step_is_geometric() {
        let tp = fixture();
        let pw = PiecewiseAging::default_curve();
        let mut loads = vec![0.0; 30];
        for l in loads.iter_mut().skip(4) {
            *l = 1.0;
        }
        let traj = simulate_thermal(&tp, &pw, 1.0, &loads, &[25.0; 30], None).unwrap();
        let target = 80.0;
        // Gap to the new fixed point shrinks by δ every period after the step.
        for k in 5..30 {
            let g_prev = target - traj.rows[k - 1].top_oil;
            let g = target - traj.rows[k].top_oil;
            assert_abs_diff_eq!(g / g_prev, 0.75, epsilon = 1e-9);
        }
        let half_life = 2f64.ln() / (1.0f64 / 0.75).ln();
        assert_abs_diff_eq!(half_life, 2.41, epsilon = 5e-3);
    }

    #[test]
    fn simulation_cold_transformer_ages_slowly() {
        let tp = fixture();
        let pw = PiecewiseAging::default_curve();
        let traj = simulate_thermal(&tp, &pw, 1.0, &[0.0; 24], &[25.0; 24], None).unwrap();
        for row in &traj.rows {
            assert!(row.hotspot < 110.0);
            assert!(row.faa_exact < 1.0);
        }
    }

    #[test]
    fn simulation_shape_mismatch() {
        let tp = fixture();
        let pw = PiecewiseAging::default_curve();
        assert!(simulate_thermal(&tp, &pw, 1.0, &[1.0; 3], &[25.0; 2], None).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn top_oil_step_monotone(h in 0.0f64..150.0, l in 0.0f64..3.0, a in -20.0f64..45.0,
                                     dh in 0.0f64..10.0, dl in 0.0f64..1.0, da in 0.0f64..10.0) {
                let tp = ThermalParams::recommended(5.0, 55.0, 25.0, 1.0);
                let c = linearized_coefficients(&tp, &PiecewiseAging::default_curve(), 1.0);
                let base = top_oil_step(&c, h, l, a);
                prop_assert!(top_oil_step(&c, h + dh, l, a) >= base);
                prop_assert!(top_oil_step(&c, h, l + dl, a) >= base);
                prop_assert!(top_oil_step(&c, h, l, a + da) >= base);
            }

            #[test]
            fn unrolled_recursion(loads in proptest::collection::vec(0.0f64..2.0, 1..30),
                                  h0 in 20.0f64..100.0, dt in prop::sample::select(vec![0.25, 0.5, 1.0])) {
                let tp = ThermalParams::recommended(4.0, 60.0, 22.0, 0.8);
                let c = linearized_coefficients(&tp, &PiecewiseAging::default_curve(), dt);
                let ambient: Vec<f64> = (0..loads.len()).map(|k| 20.0 + k as f64 * 0.3).collect();
                let mut h = h0;
                for t in 1..=loads.len() {
                    h = top_oil_step(&c, h, loads[t - 1], ambient[t - 1]);
                    let mut unrolled = c.delta.powi(t as i32) * h0;
                    for tau in 1..=t {
                        unrolled += c.delta.powi((t - tau) as i32)
                            * (c.epsilon * loads[tau - 1] + c.zeta(ambient[tau - 1]));
                    }
                    prop_assert!((h - unrolled).abs() <= 1e-10);
                }
            }

            #[test]
            fn secants_bracket_exact(theta in 0.0f64..180.0) {
                let pw = PiecewiseAging::default_curve();
                let exact = aging_factor_exact(theta).unwrap();
                prop_assert!(pw.eval(theta) >= exact - 1e-12);
                prop_assert!((pw.eval(theta) - pw.max_affine(theta)).abs() <= 1e-12);
                prop_assert!(pw.eval(theta) >= 0.0);
            }
        }
    }
}
