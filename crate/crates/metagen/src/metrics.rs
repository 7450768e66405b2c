//! Evaluation tools: signed contact and performance errors, 2-D histograms
//! with an L1 histogram distance (the dissimilarity reported as "Wasserstein"
//! in the output tables), and aggregation of a generated-vs-reference sample
//! comparison into an [`EvalReport`].
//!
//! The histogram distance is the L1 distance between normalized 2-D
//! histograms, not an optimal-transport solver; it is symmetric, bounded by
//! 2, and a metric on fixed-shape histograms. Bin ranges are fixed (radii
//! `[0, 110]`, densities `[0, 13]`) so distances are comparable across
//! models; out-of-range samples clamp to edge bins so a badly wrong
//! generator still gets scored.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::DatasetRecord;
use crate::domain::{Condition, SystemParams};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("histogram needs at least one sample")]
    EmptySamples,
    #[error("histogram needs at least one bin per axis")]
    EmptyBins,
    #[error("histogram range is empty or non-finite")]
    BadRange,
    #[error("histogram shapes or ranges differ: {0}")]
    ShapeMismatch(String),
    #[error("generated and reference sample sets differ: {0}")]
    SampleMismatch(String),
}

/// Signed contact error `r_ext2 - r_int1`; zero means the inner cylinder
/// touches the outer one exactly. Reports take the absolute value.
pub fn contact_error(p: &SystemParams) -> f64 {
    p.r_ext2 - p.r_int1
}

/// Signed distance to equilibrium,
/// `pi * [(r_ext1^2 - r_int1^2) d1 + (r_ext2^2 - r_int2^2) d2] * y - m_cube * x`.
pub fn performance_error(p: &SystemParams, c: &Condition) -> f64 {
    let areas = (p.r_ext1 * p.r_ext1 - p.r_int1 * p.r_int1) * p.d1
        + (p.r_ext2 * p.r_ext2 - p.r_int2 * p.r_int2) * p.d2;
    std::f64::consts::PI * areas * c.y - c.m_cube * c.x
}

/// The two sides of the balance equation per sample: `(m_cube * x,
/// generated_mass_term * y)`. A perfect generator puts every pair on the
/// slope-1, intercept-0 line.
pub fn residual_pairs(samples: &[(SystemParams, Condition)]) -> Vec<(f64, f64)> {
    samples
        .iter()
        .map(|(p, c)| {
            let areas = (p.r_ext1 * p.r_ext1 - p.r_int1 * p.r_int1) * p.d1
                + (p.r_ext2 * p.r_ext2 - p.r_int2 * p.r_int2) * p.d2;
            (c.m_cube * c.x, std::f64::consts::PI * areas * c.y)
        })
        .collect()
}

/// Least-squares fit `ordinate = slope * abscissa + intercept` over
/// `(abscissa, ordinate)` pairs.
pub fn linear_fit(pairs: &[(f64, f64)]) -> (f64, f64) {
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in pairs {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// A normalized 2-D histogram over fixed closed ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2D {
    bins: Vec<f64>,
    m: usize,
    n: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Histogram2D {
    pub fn shape(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn ranges(&self) -> ((f64, f64), (f64, f64)) {
        (self.x_range, self.y_range)
    }

    pub fn mass(&self, i: usize, j: usize) -> f64 {
        self.bins[i * self.n + j]
    }

    pub fn total_mass(&self) -> f64 {
        self.bins.iter().sum()
    }
}

/// Bins `samples` into an `m x n` normalized histogram. Bin width is
/// `range / m` per axis; the right edge belongs to the last bin, and
/// out-of-range samples clamp to the edge bins.
pub fn histogram2d(
    samples: &[(f64, f64)],
    m: usize,
    n: usize,
    x_range: (f64, f64),
    y_range: (f64, f64),
) -> Result<Histogram2D, MetricsError> {
    if samples.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if m == 0 || n == 0 {
        return Err(MetricsError::EmptyBins);
    }
    for (lo, hi) in [x_range, y_range] {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(MetricsError::BadRange);
        }
    }
    let mut bins = vec![0.0; m * n];
    let bin_index = |v: f64, (lo, hi): (f64, f64), k: usize| -> usize {
        if !v.is_finite() {
            return if v.is_sign_negative() { 0 } else { k - 1 };
        }
        let raw = ((v - lo) / (hi - lo) * k as f64).floor();
        (raw.max(0.0) as usize).min(k - 1)
    };
    let weight = 1.0 / samples.len() as f64;
    for &(x, y) in samples {
        let i = bin_index(x, x_range, m);
        let j = bin_index(y, y_range, n);
        bins[i * n + j] += weight;
    }
    Ok(Histogram2D { bins, m, n, x_range, y_range })
}

/// L1 distance between two normalized histograms of identical shape and
/// ranges: `sum_ij |h1(i,j) - h2(i,j)|`, in `[0, 2]`.
pub fn hist_distance(h1: &Histogram2D, h2: &Histogram2D) -> Result<f64, MetricsError> {
    if h1.shape() != h2.shape() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            h1.shape(),
            h2.shape()
        )));
    }
    if h1.ranges() != h2.ranges() {
        return Err(MetricsError::ShapeMismatch(format!(
            "ranges {:?} vs {:?}",
            h1.ranges(),
            h2.ranges()
        )));
    }
    Ok(h1.bins.iter().zip(h2.bins.iter()).map(|(a, b)| (a - b).abs()).sum())
}

/// The four joint parameter distributions compared in the report, in output
/// order.
pub const JOINT_NAMES: [&str; 4] = ["rext1_rint2", "rext1_rext2", "rext2_rint2", "d1_d2"];

fn joint_samples(params: &[SystemParams], which: usize) -> Vec<(f64, f64)> {
    params
        .iter()
        .map(|p| match which {
            0 => (p.r_ext1, p.r_int2),
            1 => (p.r_ext1, p.r_ext2),
            2 => (p.r_ext2, p.r_int2),
            _ => (p.d1, p.d2),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Bins per axis for the joint histograms.
    pub bins: usize,
    pub radius_range: (f64, f64),
    pub density_range: (f64, f64),
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { bins: 50, radius_range: (0.0, 110.0), density_range: (0.0, 13.0) }
    }
}

/// Builds the four joint histograms of a parameter sample.
pub fn joint_histograms(
    params: &[SystemParams],
    opts: &EvalOptions,
) -> Result<[Histogram2D; 4], MetricsError> {
    let range = |which: usize| {
        if which == 3 { opts.density_range } else { opts.radius_range }
    };
    let mut out = Vec::with_capacity(4);
    for which in 0..4 {
        out.push(histogram2d(
            &joint_samples(params, which),
            opts.bins,
            opts.bins,
            range(which),
            range(which),
        )?);
    }
    Ok(out.try_into().expect("four joints"))
}

/// Absolute-error summary of one error stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    pub mean_abs: f64,
    pub std_abs: f64,
    pub median_abs: f64,
}

impl ErrorStats {
    fn from_signed(errors: &[f64]) -> Self {
        let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
        let n = abs.len() as f64;
        let mean = abs.iter().sum::<f64>() / n;
        let var = abs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
        abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = if abs.len() % 2 == 1 {
            abs[abs.len() / 2]
        } else {
            0.5 * (abs[abs.len() / 2 - 1] + abs[abs.len() / 2])
        };
        Self { mean_abs: mean, std_abs: var.sqrt(), median_abs: median }
    }
}

/// Scores of one generated sample set against its reference: error
/// statistics plus the four joint-distribution dissimilarities.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub contact: ErrorStats,
    pub performance: ErrorStats,
    /// Dissimilarities in [`JOINT_NAMES`] order.
    pub wasserstein: [f64; 4],
}

/// Compares generated systems against reference records drawn at the same
/// conditions. Errs if the condition sets do not line up.
pub fn evaluate_samples(
    generated: &[(SystemParams, Condition)],
    reference: &[DatasetRecord],
    opts: &EvalOptions,
) -> Result<EvalReport, MetricsError> {
    if generated.is_empty() {
        return Err(MetricsError::EmptySamples);
    }
    if generated.len() != reference.len() {
        return Err(MetricsError::SampleMismatch(format!(
            "{} generated vs {} reference",
            generated.len(),
            reference.len()
        )));
    }
    for (i, ((_, gc), r)) in generated.iter().zip(reference.iter()).enumerate() {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
        if !(close(gc.x, r.cond.x) && close(gc.y, r.cond.y) && close(gc.m_cube, r.cond.m_cube)) {
            return Err(MetricsError::SampleMismatch(format!("condition {i} differs")));
        }
    }

    let ec: Vec<f64> = generated.iter().map(|(p, _)| contact_error(p)).collect();
    let ep: Vec<f64> = generated.iter().map(|(p, c)| performance_error(p, c)).collect();

    let gen_params: Vec<SystemParams> = generated.iter().map(|(p, _)| *p).collect();
    let ref_params: Vec<SystemParams> = reference.iter().map(|r| r.params).collect();
    let gen_hists = joint_histograms(&gen_params, opts)?;
    let ref_hists = joint_histograms(&ref_params, opts)?;
    let mut wasserstein = [0.0; 4];
    for i in 0..4 {
        wasserstein[i] = hist_distance(&ref_hists[i], &gen_hists[i])?;
    }

    Ok(EvalReport {
        n_samples: generated.len(),
        contact: ErrorStats::from_signed(&ec),
        performance: ErrorStats::from_signed(&ep),
        wasserstein,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{Branch, DatasetConfig, build_dataset, sample_record};
    use crate::domain::equilibrium_mass;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn contact_error_examples() {
        let mut p = SystemParams::new(50.0, 40.0, 40.0, 30.0, 2.0, 3.0);
        assert_eq!(contact_error(&p), 0.0);
        p.r_ext2 = 42.0;
        assert_eq!(contact_error(&p), 2.0);
    }

    #[test]
    fn contact_error_zero_on_dataset_and_invariant_to_other_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..300 {
            let r = sample_record(Branch::ALL[i % 3], &mut rng);
            assert_eq!(contact_error(&r.params), 0.0);
            let perturbed = SystemParams {
                r_ext1: r.params.r_ext1 + 3.0,
                r_int2: r.params.r_int2 - 1.0,
                d1: r.params.d1 * 2.0,
                d2: r.params.d2 * 0.5,
                ..r.params
            };
            assert_eq!(contact_error(&perturbed), contact_error(&r.params));
        }
    }

    #[test]
    fn performance_error_examples() {
        let p = SystemParams::new(50.0, 40.0, 40.0, 30.0, 2.0, 3.0);
        let balanced = Condition::new(50.0, 50.0, 3900.0 * std::f64::consts::PI);
        assert!(performance_error(&p, &balanced).abs() < 1e-9);

        let off = Condition::new(50.0, 50.0, 12_000.0);
        let expected = 50.0 * (3900.0 * std::f64::consts::PI - 12_000.0);
        assert!((performance_error(&p, &off) - expected).abs() < 1e-9);
        assert!((expected - 12_610.57).abs() < 0.005);

        // scaling both arms keeps a balanced system at zero
        let scaled = Condition::new(150.0, 150.0, balanced.m_cube);
        assert!(performance_error(&p, &scaled).abs() < 1e-9);
    }

    #[test]
    fn performance_error_consistent_with_equilibrium_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for i in 0..10_000 {
            let r = sample_record(Branch::ALL[i % 3], &mut rng);
            let m = equilibrium_mass(&r.params, r.cond.x, r.cond.y).unwrap();
            let e = performance_error(&r.params, &Condition::new(r.cond.x, r.cond.y, m));
            let scale = (m * r.cond.x).abs().max(1e-12);
            assert!((e / scale).abs() < 1e-6);
        }
    }

    #[test]
    fn histogram_concentration_and_normalization() {
        let h = histogram2d(&[(5.0, 5.0); 17], 4, 4, (0.0, 10.0), (0.0, 10.0)).unwrap();
        assert!((h.mass(2, 2) - 1.0).abs() < 1e-12);
        assert!((h.total_mass() - 1.0).abs() < 1e-9);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<(f64, f64)> =
            (0..10_000).map(|_| (rng.random_range(-5.0..15.0), rng.random_range(-5.0..15.0))).collect();
        let h = histogram2d(&samples, 7, 3, (0.0, 10.0), (0.0, 10.0)).unwrap();
        assert!((h.total_mass() - 1.0).abs() < 1e-9, "clamped mass still sums to 1");
    }

    #[test]
    fn histogram_uniform_fill() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let samples: Vec<(f64, f64)> =
            (0..1_000_000).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
        let h = histogram2d(&samples, 10, 10, (0.0, 1.0), (0.0, 1.0)).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                assert!((h.mass(i, j) - 0.01).abs() < 0.002, "bin ({i},{j}) = {}", h.mass(i, j));
            }
        }
    }

    #[test]
    fn histogram_edge_rule() {
        // right edge belongs to the last bin; values beyond clamp
        let h = histogram2d(&[(10.0, 0.0), (12.0, -3.0)], 5, 5, (0.0, 10.0), (0.0, 10.0)).unwrap();
        assert!((h.mass(4, 0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn histogram_input_validation() {
        assert_eq!(histogram2d(&[], 2, 2, (0.0, 1.0), (0.0, 1.0)), Err(MetricsError::EmptySamples));
        assert_eq!(
            histogram2d(&[(0.0, 0.0)], 0, 2, (0.0, 1.0), (0.0, 1.0)),
            Err(MetricsError::EmptyBins)
        );
        assert_eq!(
            histogram2d(&[(0.0, 0.0)], 2, 2, (1.0, 1.0), (0.0, 1.0)),
            Err(MetricsError::BadRange)
        );
    }

    #[test]
    fn hist_distance_examples() {
        let r = (0.0, 1.0);
        let a = histogram2d(&[(0.1, 0.5)], 1, 2, r, r).unwrap();
        let b = histogram2d(&[(0.9, 0.5)], 1, 2, r, r).unwrap();
        assert_eq!(hist_distance(&a, &a).unwrap(), 0.0);

        // disjoint single-bin masses
        let lo = histogram2d(&[(0.1, 0.1)], 2, 2, r, r).unwrap();
        let hi = histogram2d(&[(0.9, 0.9)], 2, 2, r, r).unwrap();
        assert_eq!(hist_distance(&lo, &hi).unwrap(), 2.0);

        // (1, 0) vs (0.5, 0.5) on a 1x2 grid
        let h1 = histogram2d(&[(0.5, 0.1), (0.5, 0.2)], 1, 2, r, r).unwrap();
        let h2 = histogram2d(&[(0.5, 0.1), (0.5, 0.9)], 1, 2, r, r).unwrap();
        assert!((hist_distance(&h1, &h2).unwrap() - 1.0).abs() < 1e-12);

        let other = histogram2d(&[(0.5, 0.5)], 3, 3, r, r).unwrap();
        assert!(matches!(hist_distance(&a, &other), Err(MetricsError::ShapeMismatch(_))));
        assert!(matches!(hist_distance(&a, &b), Ok(_)));
    }

    fn random_hist(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Histogram2D {
        let samples: Vec<(f64, f64)> =
            (0..60).map(|_| (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0))).collect();
        histogram2d(&samples, m, n, (0.0, 1.0), (0.0, 1.0)).unwrap()
    }

    #[test]
    fn hist_distance_metric_axioms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let a = random_hist(&mut rng, 6, 5);
            let b = random_hist(&mut rng, 6, 5);
            let c = random_hist(&mut rng, 6, 5);
            let dab = hist_distance(&a, &b).unwrap();
            let dba = hist_distance(&b, &a).unwrap();
            let dac = hist_distance(&a, &c).unwrap();
            let dcb = hist_distance(&c, &b).unwrap();
            assert!(dab >= 0.0 && dab <= 2.0);
            assert_eq!(dab, dba);
            assert_eq!(hist_distance(&a, &a).unwrap(), 0.0);
            assert!(dab <= dac + dcb + 1e-12);
            if a != b {
                assert!(dab > 0.0);
            }
        }
    }

    #[test]
    fn evaluate_samples_self_comparison_is_zero() {
        let ds = build_dataset(&DatasetConfig { n_records: 2_000, seed: 6, ..Default::default() });
        let generated: Vec<(SystemParams, Condition)> =
            ds.records.iter().map(|r| (r.params, r.cond)).collect();
        let rep = evaluate_samples(&generated, &ds.records, &EvalOptions::default()).unwrap();
        assert_eq!(rep.wasserstein, [0.0; 4]);
        assert_eq!(rep.contact.mean_abs, 0.0);
        let ep_scale = ds.records.iter().map(|r| (r.cond.m_cube * r.cond.x).abs()).sum::<f64>()
            / ds.records.len() as f64;
        assert!(rep.performance.mean_abs / ep_scale < 1e-6);
    }

    #[test]
    fn evaluate_samples_two_seed_noise_floor() {
        // Two independent draws of the same law: the dissimilarity is the
        // finite-sample noise floor of the binned L1 distance. At 5e4
        // samples and 50x50 bins that floor sits near 0.13-0.22 for these
        // supports (sum over ~1e3 occupied bins of |binomial noise|), well
        // below any model-vs-reference distance seen in practice.
        let n = 50_000;
        let a = build_dataset(&DatasetConfig { n_records: n, seed: 7, ..Default::default() });
        let b = build_dataset(&DatasetConfig { n_records: n, seed: 8, ..Default::default() });
        let generated: Vec<(SystemParams, Condition)> = a
            .records
            .iter()
            .zip(b.records.iter())
            .map(|(ra, rb)| (rb.params, ra.cond))
            .collect();
        let rep = evaluate_samples(&generated, &a.records, &EvalOptions::default()).unwrap();
        for (name, w) in JOINT_NAMES.iter().zip(rep.wasserstein.iter()) {
            assert!(*w > 0.0 && *w < 0.30, "{name}: {w}");
        }
    }

    #[test]
    fn evaluate_samples_marginal_copier_has_large_performance_error() {
        // A generator that reproduces the joint parameter distribution but
        // ignores conditions: tiny dissimilarities, huge |E_p|.
        let ds = build_dataset(&DatasetConfig { n_records: 20_000, seed: 9, ..Default::default() });
        let mut generated: Vec<(SystemParams, Condition)> =
            ds.records.iter().map(|r| (r.params, r.cond)).collect();
        // pair each condition with a rotated record's params
        let k = generated.len() / 2;
        for (i, g) in generated.iter_mut().enumerate() {
            g.0 = ds.records[(i + k) % ds.records.len()].params;
        }
        let rep = evaluate_samples(&generated, &ds.records, &EvalOptions::default()).unwrap();
        assert_eq!(rep.wasserstein, [0.0; 4], "same multiset of params");
        let ep_scale = ds.records.iter().map(|r| (r.cond.m_cube * r.cond.x).abs()).sum::<f64>()
            / ds.records.len() as f64;
        assert!(rep.performance.mean_abs > 0.1 * ep_scale);
    }

    #[test]
    fn evaluate_samples_rejects_mismatched_conditions() {
        let ds = build_dataset(&DatasetConfig { n_records: 50, seed: 10, ..Default::default() });
        let mut generated: Vec<(SystemParams, Condition)> =
            ds.records.iter().map(|r| (r.params, r.cond)).collect();
        generated[3].1.m_cube *= 2.0;
        assert!(matches!(
            evaluate_samples(&generated, &ds.records, &EvalOptions::default()),
            Err(MetricsError::SampleMismatch(_))
        ));
        assert!(matches!(
            evaluate_samples(&generated[..10], &ds.records, &EvalOptions::default()),
            Err(MetricsError::SampleMismatch(_))
        ));
    }

    #[test]
    fn residuals_of_perfect_generator_lie_on_bisector() {
        let ds = build_dataset(&DatasetConfig { n_records: 3_000, seed: 11, ..Default::default() });
        let samples: Vec<(SystemParams, Condition)> =
            ds.records.iter().map(|r| (r.params, r.cond)).collect();
        let pairs = residual_pairs(&samples);
        let (slope, intercept) = linear_fit(&pairs);
        assert!((slope - 1.0).abs() < 1e-9);
        let mean_ordinate = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
        assert!(intercept.abs() < 1e-6 * mean_ordinate.abs());
    }
}
