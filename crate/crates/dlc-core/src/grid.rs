//! Grid-of-Gaussians benchmark: N isotropic components on an axis-aligned
//! square grid with factorized (row, col) mode identity and exact density.

use alloc::vec::Vec;

use crate::error::{CoreError, Result};
use crate::math::log_sum_exp;
use crate::rng::Rng;

/// Ground-truth 2D mixture: `rows × cols` equal-weight isotropic Gaussians,
/// neighbouring centers `spacing` apart, grid centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMixtureSpec {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    /// Component variance (σ²) per dimension.
    pub variance: f64,
}

impl GridMixtureSpec {
    pub fn new(rows: usize, cols: usize) -> Self {
        GridMixtureSpec {
            rows,
            cols,
            spacing: 1.0,
            variance: 0.1,
        }
    }

    pub fn with_variance(mut self, variance: f64) -> Self {
        self.variance = variance;
        self
    }

    pub fn with_spacing(mut self, spacing: f64) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(CoreError::InvalidArgument(
                "grid needs at least one row and column".into(),
            ));
        }
        if !(self.spacing > 0.0) || !(self.variance >= 0.0) {
            return Err(CoreError::InvalidArgument(
                "spacing must be positive and variance non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn num_modes(&self) -> usize {
        self.rows * self.cols
    }

    /// Center of mode `(row, col)`: columns advance along x, rows along y.
    pub fn center(&self, row: usize, col: usize) -> [f64; 2] {
        let x = (col as f64 - (self.cols as f64 - 1.0) / 2.0) * self.spacing;
        let y = (row as f64 - (self.rows as f64 - 1.0) / 2.0) * self.spacing;
        [x, y]
    }

    pub fn mode_index(&self, row: usize, col: usize) -> usize {
        row * self.cols + col
    }

    pub fn row_col(&self, mode_index: usize) -> (usize, usize) {
        (mode_index / self.cols, mode_index % self.cols)
    }

    /// Half-width of the grid plus a 5σ margin, used as an evaluation
    /// bounding box.
    pub fn extent(&self) -> f64 {
        let half = (self.rows.max(self.cols) as f64 - 1.0) / 2.0 * self.spacing;
        half + 5.0 * libm::sqrt(self.variance)
    }
}

/// A draw from the mixture together with its generating mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledSample {
    pub x: [f32; 2],
    pub mode_index: usize,
    pub row: usize,
    pub col: usize,
}

/// Draws `n` labeled samples: mode uniform, point = center + N(0, σ²I).
pub fn sample(spec: &GridMixtureSpec, n: usize, rng: &mut Rng) -> Result<Vec<LabeledSample>> {
    spec.validate()?;
    if n == 0 {
        return Err(CoreError::InvalidArgument("need n >= 1 samples".into()));
    }
    let sigma = libm::sqrt(spec.variance) as f32;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mode = rng.below(spec.num_modes());
        let (row, col) = spec.row_col(mode);
        let c = spec.center(row, col);
        let x = [
            c[0] as f32 + sigma * rng.standard_normal(),
            c[1] as f32 + sigma * rng.standard_normal(),
        ];
        out.push(LabeledSample {
            x,
            mode_index: mode,
            row,
            col,
        });
    }
    Ok(out)
}

/// Log-density of the mixture at `x`, via log-sum-exp over components.
pub fn exact_log_density(spec: &GridMixtureSpec, x: [f64; 2]) -> f64 {
    let n = spec.num_modes() as f64;
    // log N(x; c, σ²I) = -log(2πσ²) - ||x-c||²/(2σ²)
    let log_norm = -libm::log(2.0 * core::f64::consts::PI * spec.variance);
    let inv_two_var = 1.0 / (2.0 * spec.variance);
    let mut terms = Vec::with_capacity(spec.num_modes());
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let c = spec.center(row, col);
            let dx = x[0] - c[0];
            let dy = x[1] - c[1];
            terms.push(log_norm - (dx * dx + dy * dy) * inv_two_var);
        }
    }
    log_sum_exp(&terms) - libm::log(n)
}

/// Nearest mode center to `x`; ties go to the lowest mode index.
pub fn nearest_mode(spec: &GridMixtureSpec, x: [f32; 2]) -> usize {
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for row in 0..spec.rows {
        for col in 0..spec.cols {
            let c = spec.center(row, col);
            let dx = x[0] as f64 - c[0];
            let dy = x[1] as f64 - c[1];
            let d = dx * dx + dy * dy;
            if d < best_d {
                best_d = d;
                best = spec.mode_index(row, col);
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_grid_collapses_to_origin() {
        let spec = GridMixtureSpec::new(1, 1).with_variance(0.0);
        let mut rng = Rng::new(0);
        let samples = sample(&spec, 100, &mut rng).unwrap();
        for s in samples {
            assert_eq!(s.x, [0.0, 0.0]);
            assert_eq!(s.mode_index, 0);
        }
    }

    #[test]
    fn mode_frequencies_uniform_within_binomial_4_sigma() {
        // 21x21 grid, 1e5 draws: each mode's count within 4σ of n/N.
        let spec = GridMixtureSpec::new(21, 21);
        let n = 100_000usize;
        let modes = spec.num_modes();
        let mut rng = Rng::new(7);
        let samples = sample(&spec, n, &mut rng).unwrap();
        let mut counts = alloc::vec![0usize; modes];
        for s in &samples {
            counts[s.mode_index] += 1;
        }
        let p = 1.0 / modes as f64;
        let mean = n as f64 * p;
        let sd = libm::sqrt(n as f64 * p * (1.0 - p));
        for (m, &c) in counts.iter().enumerate() {
            assert!(
                (c as f64 - mean).abs() <= 4.0 * sd,
                "mode {m}: count {c}, expected {mean:.1} ± {:.1}",
                4.0 * sd
            );
        }
    }

    #[test]
    fn empirical_component_means_match_centers() {
        let spec = GridMixtureSpec::new(2, 2);
        let n = 100_000usize;
        let mut rng = Rng::new(13);
        let samples = sample(&spec, n, &mut rng).unwrap();
        let mut sums = [[0.0f64; 2]; 4];
        let mut counts = [0usize; 4];
        for s in &samples {
            sums[s.mode_index][0] += s.x[0] as f64;
            sums[s.mode_index][1] += s.x[1] as f64;
            counts[s.mode_index] += 1;
        }
        for m in 0..4 {
            let (row, col) = spec.row_col(m);
            let c = spec.center(row, col);
            let mean = [sums[m][0] / counts[m] as f64, sums[m][1] / counts[m] as f64];
            assert!((mean[0] - c[0]).abs() < 0.02, "mode {m} x: {mean:?} vs {c:?}");
            assert!((mean[1] - c[1]).abs() < 0.02, "mode {m} y: {mean:?} vs {c:?}");
        }
    }

    #[test]
    fn labels_are_consistent_with_mode_index() {
        let spec = GridMixtureSpec::new(3, 5);
        let mut rng = Rng::new(2);
        for s in sample(&spec, 1000, &mut rng).unwrap() {
            assert_eq!(s.mode_index, s.row * spec.cols + s.col);
        }
        // And (row, col) <-> mode_index is a bijection.
        for m in 0..spec.num_modes() {
            let (r, c) = spec.row_col(m);
            assert_eq!(spec.mode_index(r, c), m);
        }
    }

    #[test]
    fn single_gaussian_peak_log_density() {
        let spec = GridMixtureSpec::new(1, 1);
        let got = exact_log_density(&spec, [0.0, 0.0]);
        let expect = libm::log(1.0 / (2.0 * core::f64::consts::PI * 0.1));
        assert!((got - expect).abs() < 1e-12);
    }

    #[test]
    fn density_symmetric_under_negation() {
        let spec = GridMixtureSpec::new(4, 4);
        for p in [[0.3, -0.7], [1.2, 0.4], [0.0, 2.0]] {
            let a = exact_log_density(&spec, p);
            let b = exact_log_density(&spec, [-p[0], -p[1]]);
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn density_matches_naive_nine_term_sum() {
        let spec = GridMixtureSpec::new(3, 3);
        let x = [0.37, -0.81];
        // Independent oracle: direct 9-term sum in plain f64.
        let mut total = 0.0f64;
        for row in 0..3 {
            for col in 0..3 {
                let c = spec.center(row, col);
                let d2 = (x[0] - c[0]) * (x[0] - c[0]) + (x[1] - c[1]) * (x[1] - c[1]);
                total += (-d2 / (2.0 * spec.variance)).exp()
                    / (2.0 * core::f64::consts::PI * spec.variance);
            }
        }
        total /= 9.0;
        let got = exact_log_density(&spec, x);
        assert!((got - total.ln()).abs() < 1e-12);
    }

    #[test]
    fn density_integrates_to_one_by_trapezoid() {
        for spec in [
            GridMixtureSpec::new(1, 1),
            GridMixtureSpec::new(2, 3),
            GridMixtureSpec::new(3, 3),
        ] {
            let ext = spec.extent();
            let steps = 600usize;
            let hx = 2.0 * ext / steps as f64;
            let mut total = 0.0f64;
            for i in 0..=steps {
                let wx = if i == 0 || i == steps { 0.5 } else { 1.0 };
                let x = -ext + i as f64 * hx;
                for j in 0..=steps {
                    let wy = if j == 0 || j == steps { 0.5 } else { 1.0 };
                    let y = -ext + j as f64 * hx;
                    total += wx * wy * exact_log_density(&spec, [x, y]).exp();
                }
            }
            total *= hx * hx;
            assert!(
                (total - 1.0).abs() < 1e-3,
                "{}x{} integral {total}",
                spec.rows,
                spec.cols
            );
        }
    }

    #[test]
    fn density_invariant_under_dihedral_symmetries() {
        let spec = GridMixtureSpec::new(3, 3);
        let p = [0.42, -0.13];
        let base = exact_log_density(&spec, p);
        let transforms: [fn([f64; 2]) -> [f64; 2]; 7] = [
            |v| [-v[0], v[1]],
            |v| [v[0], -v[1]],
            |v| [-v[0], -v[1]],
            |v| [v[1], v[0]],
            |v| [-v[1], v[0]],
            |v| [v[1], -v[0]],
            |v| [-v[1], -v[0]],
        ];
        for t in transforms {
            assert!((exact_log_density(&spec, t(p)) - base).abs() < 1e-12);
        }
    }
}
