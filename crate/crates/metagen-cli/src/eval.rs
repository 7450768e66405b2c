//! `evaluate`: draw held-out conditions, sample every trained model at those
//! conditions, and score it against reference systems drawn with the same
//! conditions. Emits a summary CSV (one row per model x seed x metric) plus
//! plot-ready data: joint histograms, error histograms and box-plot
//! quantiles, and the residual pairs of the balance equation.

use std::path::{Path, PathBuf};

use metagen::datagen::{DatasetConfig, DatasetRecord, build_dataset};
use metagen::domain::{Condition, SystemParams, estimate_params};
use metagen::metrics::{
    EvalOptions, EvalReport, JOINT_NAMES, joint_histograms, linear_fit, residual_pairs,
};
use metagen::models::{Checkpoint, ModelConfig, SystemModel, role_rng, sample_systems};
use metagen::training::Manifest;
use metagen::util::derive_seed;

use crate::{CliError, EvalArgs};

/// Fixed metric list; the summary row count is `models x seeds x METRICS`.
pub const METRICS: [&str; 13] = [
    "n_samples",
    "ec_mean_abs",
    "ec_std_abs",
    "ec_median_abs",
    "ep_mean_abs",
    "ep_std_abs",
    "ep_median_abs",
    "w_rext1_rint2",
    "w_rext1_rext2",
    "w_rext2_rint2",
    "w_d1_d2",
    "residual_slope",
    "residual_intercept_rel",
];

struct EvalOutput {
    rows: Vec<(String, u64, &'static str, f64)>,
    boxplot: Vec<String>,
}

impl EvalOutput {
    #[allow(clippy::too_many_arguments)]
    fn push_run(
        &mut self,
        model: &str,
        seed: u64,
        report: &EvalReport,
        slope: f64,
        intercept_rel: f64,
        ec: &[f64],
        ep: &[f64],
    ) {
        let values = [
            report.n_samples as f64,
            report.contact.mean_abs,
            report.contact.std_abs,
            report.contact.median_abs,
            report.performance.mean_abs,
            report.performance.std_abs,
            report.performance.median_abs,
            report.wasserstein[0],
            report.wasserstein[1],
            report.wasserstein[2],
            report.wasserstein[3],
            slope,
            intercept_rel,
        ];
        for (name, value) in METRICS.iter().zip(values) {
            self.rows.push((model.to_string(), seed, name, value));
        }
        for (metric, errs) in [("ec", ec), ("ep", ep)] {
            self.boxplot.push(boxplot_row(model, seed, metric, errs));
        }
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn boxplot_row(model: &str, seed: u64, metric: &str, errors: &[f64]) -> String {
    let mut abs: Vec<f64> = errors.iter().map(|e| e.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = abs.len() as f64;
    let mean = abs.iter().sum::<f64>() / n;
    let std = (abs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    format!(
        "{model},{seed},{metric},{},{},{},{},{},{},{mean},{std}",
        abs.first().unwrap(),
        quantile(&abs, 0.25),
        quantile(&abs, 0.5),
        quantile(&abs, 0.75),
        quantile(&abs, 0.95),
        abs.last().unwrap(),
    )
}

fn write(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", path.display())))
}

fn write_histograms(
    dir: &Path,
    id: &str,
    reference: &[SystemParams],
    generated: &[SystemParams],
    opts: &EvalOptions,
) -> Result<(), CliError> {
    let ref_h = joint_histograms(reference, opts).map_err(|e| CliError::Run(e.to_string()))?;
    let gen_h = joint_histograms(generated, opts).map_err(|e| CliError::Run(e.to_string()))?;
    for (k, name) in JOINT_NAMES.iter().enumerate() {
        let (m, n) = ref_h[k].shape();
        let mut out = String::from("i,j,reference,generated\n");
        for i in 0..m {
            for j in 0..n {
                out.push_str(&format!("{i},{j},{},{}\n", ref_h[k].mass(i, j), gen_h[k].mass(i, j)));
            }
        }
        write(&dir.join(format!("{id}-{name}.csv")), &out)?;
    }
    Ok(())
}

fn write_error_hists(dir: &Path, id: &str, ec: &[f64], ep: &[f64]) -> Result<(), CliError> {
    // |Ec| on a linear grid, |Ep| on a log10(1+e) grid
    let mut out = String::from("metric,bin_lo,bin_hi,count\n");
    let mut fill = |metric: &str, values: &[f64], lo: f64, hi: f64, transform: fn(f64) -> f64| {
        const BINS: usize = 50;
        let mut counts = [0usize; 50];
        let width = (hi - lo) / BINS as f64;
        for &v in values {
            let t = transform(v.abs());
            let idx = (((t - lo) / width).floor().max(0.0) as usize).min(BINS - 1);
            counts[idx] += 1;
        }
        for (i, c) in counts.iter().enumerate() {
            let (a, b) = (lo + i as f64 * width, lo + (i + 1) as f64 * width);
            out.push_str(&format!("{metric},{a},{b},{c}\n"));
        }
    };
    fill("ec_abs", ec, 0.0, 50.0, |v| v);
    fill("ep_abs_log10", ep, 0.0, 9.0, |v| (1.0 + v).log10());
    write(&dir.join(format!("{id}.csv")), &out)
}

fn write_residuals(dir: &Path, id: &str, pairs: &[(f64, f64)]) -> Result<(), CliError> {
    let mut out = String::from("m_cube_x,m_generated_y\n");
    for (target, generated) in pairs {
        out.push_str(&format!("{target},{generated}\n"));
    }
    write(&dir.join(format!("{id}.csv")), &out)
}

/// Scores one generated sample set and writes its plot data.
#[allow(clippy::too_many_arguments)]
fn score(
    out: &mut EvalOutput,
    dirs: &(PathBuf, PathBuf, PathBuf),
    model: &str,
    seed: u64,
    generated: &[(SystemParams, Condition)],
    reference: &[DatasetRecord],
    opts: &EvalOptions,
) -> Result<(), CliError> {
    use metagen::metrics::{contact_error, performance_error};
    let report = metagen::metrics::evaluate_samples(generated, reference, opts)
        .map_err(|e| CliError::Run(e.to_string()))?;
    let pairs = residual_pairs(generated);
    let (slope, intercept) = linear_fit(&pairs);
    let mean_ordinate = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    let intercept_rel = intercept / mean_ordinate;

    let ec: Vec<f64> = generated.iter().map(|(p, _)| contact_error(p)).collect();
    let ep: Vec<f64> = generated.iter().map(|(p, c)| performance_error(p, c)).collect();
    let id = format!("{model}-s{seed}");
    out.push_run(model, seed, &report, slope, intercept_rel, &ec, &ep);

    let gen_params: Vec<SystemParams> = generated.iter().map(|(p, _)| *p).collect();
    let ref_params: Vec<SystemParams> = reference.iter().map(|r| r.params).collect();
    write_histograms(&dirs.0, &id, &ref_params, &gen_params, opts)?;
    write_error_hists(&dirs.1, &id, &ec, &ep)?;
    write_residuals(&dirs.2, &id, &pairs)?;
    Ok(())
}

pub fn cmd_evaluate(args: EvalArgs) -> Result<(), CliError> {
    if args.samples == 0 {
        return Err(CliError::Validation("--samples must be at least 1".into()));
    }
    if args.bins == 0 {
        return Err(CliError::Validation("--bins must be at least 1".into()));
    }
    let manifest_path = args.runs.join(metagen::training::experiment::MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CliError::Validation(format!(
            "no manifest found at {}",
            manifest_path.display()
        )));
    }
    let manifest = Manifest::load(&manifest_path).map_err(|e| CliError::Validation(e.to_string()))?;

    let joints_dir = args.out.join("joints");
    let errors_dir = args.out.join("errors");
    let residuals_dir = args.out.join("residuals");
    for d in [&args.out, &joints_dir, &errors_dir, &residuals_dir] {
        std::fs::create_dir_all(d)
            .map_err(|e| CliError::Run(format!("cannot create {}: {e}", d.display())))?;
    }
    let dirs = (joints_dir, errors_dir, residuals_dir);

    // held-out conditions and the reference systems drawn with them
    let reference = build_dataset(&DatasetConfig {
        n_records: args.samples,
        seed: args.seed,
        ..Default::default()
    });
    let conds: Vec<Condition> = reference.records.iter().map(|r| r.cond).collect();
    let opts = EvalOptions { bins: args.bins, ..Default::default() };

    let mut out = EvalOutput { rows: Vec::new(), boxplot: Vec::new() };

    for (id, entry) in manifest.completed() {
        if id.starts_with("marginal-") {
            continue;
        }
        let ckpt = Checkpoint::load(&args.runs.join(&entry.checkpoint))
            .map_err(|e| CliError::Run(e.to_string()))?;
        let model = SystemModel::from_checkpoint(&ckpt).map_err(|e| CliError::Run(e.to_string()))?;
        let model_cfg: &ModelConfig = &ckpt.config;
        let mut rng = role_rng(args.seed, &format!("sample:{id}"));
        let systems = sample_systems(&model, model_cfg, &ckpt.normalizer, &conds, &mut rng)
            .map_err(|e| CliError::Run(e.to_string()))?;
        let generated: Vec<(SystemParams, Condition)> =
            systems.iter().zip(conds.iter()).map(|(s, c)| (estimate_params(s), *c)).collect();
        score(&mut out, &dirs, &entry.kind, entry.seed, &generated, &reference.records, &opts)?;
        println!("evaluated {id} on {} samples", args.samples);
    }

    if args.reference_rows {
        let self_pairs: Vec<(SystemParams, Condition)> =
            reference.records.iter().map(|r| (r.params, r.cond)).collect();
        score(&mut out, &dirs, "reference", 0, &self_pairs, &reference.records, &opts)?;

        let resample = build_dataset(&DatasetConfig {
            n_records: args.samples,
            seed: derive_seed(args.seed, "resample"),
            ..Default::default()
        });
        let resample_pairs: Vec<(SystemParams, Condition)> = resample
            .records
            .iter()
            .zip(reference.records.iter())
            .map(|(a, b)| (a.params, b.cond))
            .collect();
        score(&mut out, &dirs, "reference-resample", 0, &resample_pairs, &reference.records, &opts)?;
    }

    let mut summary = String::from("model,seed,metric,value\n");
    for (model, seed, metric, value) in &out.rows {
        summary.push_str(&format!("{model},{seed},{metric},{value}\n"));
    }
    write(&args.out.join("summary.csv"), &summary)?;

    let mut boxplot =
        String::from("model,seed,metric,min,q1,median,q3,p95,max,mean,std\n");
    for row in &out.boxplot {
        boxplot.push_str(row);
        boxplot.push('\n');
    }
    write(&args.out.join("boxplot.csv"), &boxplot)?;

    // failed runs, for explicit exclusion counts in the report
    let mut failures = String::from("model,seed,error\n");
    for (_, entry) in manifest.failed() {
        failures.push_str(&format!(
            "{},{},{}\n",
            entry.kind,
            entry.seed,
            entry.error.as_deref().unwrap_or("unknown").replace(',', ";")
        ));
    }
    write(&args.out.join("failures.csv"), &failures)?;

    println!("wrote {}", args.out.join("summary.csv").display());
    Ok(())
}
