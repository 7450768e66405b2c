//! `report`: cross-seed aggregation of evaluation summaries and the model
//! ordering verdicts.

use std::collections::BTreeMap;
use std::path::Path;

use metagen::models::ModelKind;

use crate::{CliError, ReportArgs};

/// Metrics whose cross-seed means feed the ordering verdicts.
const ORDERED_METRICS: [&str; 5] =
    ["ep_mean_abs", "w_rext1_rint2", "w_rext1_rext2", "w_rext2_rint2", "w_d1_d2"];

/// How much worse (relative) the simplified model may score than the
/// meta-vae while still counting as comparable.
const SMVAE_TOLERANCE: f64 = 0.25;

/// Minimum factor by which the adversarial baseline's contact error must
/// exceed every other model's.
const GAN_CONTACT_FACTOR: f64 = 2.0;

type Key = (String, String); // (model, metric)

#[derive(Default)]
struct Aggregate {
    values: Vec<f64>,
}

impl Aggregate {
    fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }
}

fn parse_summary(path: &Path) -> Result<BTreeMap<Key, Aggregate>, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let mut out: BTreeMap<Key, Aggregate> = BTreeMap::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::Validation(format!(
                "{}:{}: expected 4 fields, got {}",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let value: f64 = fields[3].parse().map_err(|e| {
            CliError::Validation(format!("{}:{}: bad value: {e}", path.display(), i + 1))
        })?;
        out.entry((fields[0].to_string(), fields[2].to_string()))
            .or_default()
            .values
            .push(value);
    }
    Ok(out)
}

fn parse_failures(path: &Path) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    let Ok(text) = std::fs::read_to_string(path) else {
        return out;
    };
    for line in text.lines().skip(1) {
        if let Some(model) = line.split(',').next().filter(|m| !m.is_empty()) {
            *out.entry(model.to_string()).or_insert(0) += 1;
        }
    }
    out
}

struct Verdicts {
    lines: Vec<String>,
    all_pass: bool,
}

fn ordering_verdicts(agg: &BTreeMap<Key, Aggregate>) -> Result<Verdicts, String> {
    let mean = |model: ModelKind, metric: &str| -> Result<f64, String> {
        agg.get(&(model.as_str().to_string(), metric.to_string()))
            .map(|a| a.mean())
            .ok_or_else(|| format!("{} has no `{metric}` rows", model.as_str()))
    };

    let mut lines = Vec::new();
    let mut all_pass = true;
    let mut push = |name: String, pass: bool, detail: String| {
        lines.push(format!("verdict {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" }));
        all_pass &= pass;
    };

    for metric in ORDERED_METRICS {
        let meta = mean(ModelKind::MetaVae, metric)?;
        let vvae = mean(ModelKind::VanillaVae, metric)?;
        let vgan = mean(ModelKind::VanillaGan, metric)?;
        push(
            format!("ordering[{metric}]"),
            meta < vvae && vvae < vgan,
            format!("meta-vae {meta:.6} vs vanilla-vae {vvae:.6} vs vanilla-gan {vgan:.6}"),
        );
    }

    let mut worst_rel: f64 = f64::NEG_INFINITY;
    for metric in ORDERED_METRICS {
        let meta = mean(ModelKind::MetaVae, metric)?;
        let smvae = mean(ModelKind::Smvae, metric)?;
        worst_rel = worst_rel.max((smvae - meta) / meta);
    }
    push(
        "smvae-comparable".to_string(),
        worst_rel <= SMVAE_TOLERANCE,
        format!("worst relative excess over meta-vae {worst_rel:.4}"),
    );

    let gan_ec = mean(ModelKind::VanillaGan, "ec_mean_abs")?;
    let others = [
        mean(ModelKind::MetaVae, "ec_mean_abs")?,
        mean(ModelKind::Smvae, "ec_mean_abs")?,
        mean(ModelKind::VanillaVae, "ec_mean_abs")?,
    ];
    let max_other = others.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    push(
        "gan-contact-worst".to_string(),
        gan_ec >= GAN_CONTACT_FACTOR * max_other,
        format!("vanilla-gan {gan_ec:.4} vs {GAN_CONTACT_FACTOR} x max(others) {max_other:.4}"),
    );

    Ok(Verdicts { lines, all_pass })
}

pub fn cmd_report(args: ReportArgs) -> Result<(), CliError> {
    let summary_path = args.eval.join("summary.csv");
    let agg = parse_summary(&summary_path)?;
    if agg.is_empty() {
        return Err(CliError::Validation(format!("{} holds no rows", summary_path.display())));
    }
    let failures = parse_failures(&args.eval.join("failures.csv"));

    let models: Vec<String> = {
        let mut m: Vec<String> = agg.keys().map(|(model, _)| model.clone()).collect();
        m.sort();
        m.dedup();
        m
    };

    let mut csv = String::from("model,metric,mean,variance,n_seeds\n");
    println!("{:<20} {:<24} {:>14} {:>14} {:>7}", "model", "metric", "mean", "variance", "seeds");
    for ((model, metric), a) in &agg {
        println!("{model:<20} {metric:<24} {:>14.6} {:>14.6} {:>7}", a.mean(), a.variance(), a.values.len());
        csv.push_str(&format!("{model},{metric},{},{},{}\n", a.mean(), a.variance(), a.values.len()));
    }
    for (model, count) in &failures {
        println!("note: {model}: {count} failed seed(s) excluded from aggregation");
    }

    let out_dir = args.out.clone().unwrap_or_else(|| args.eval.clone());
    std::fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::Run(format!("cannot create {}: {e}", out_dir.display())))?;
    let report_path = out_dir.join("report.csv");
    std::fs::write(&report_path, &csv)
        .map_err(|e| CliError::Run(format!("cannot write {}: {e}", report_path.display())))?;

    let required: Vec<&str> = ModelKind::ALL.iter().map(|k| k.as_str()).collect();
    let missing: Vec<&str> =
        required.iter().filter(|k| !models.iter().any(|m| m == *k)).cloned().collect();

    let mut verdict_text = String::new();
    let all_pass = if missing.is_empty() {
        match ordering_verdicts(&agg) {
            Ok(v) => {
                for line in &v.lines {
                    println!("{line}");
                    verdict_text.push_str(line);
                    verdict_text.push('\n');
                }
                v.all_pass
            }
            Err(msg) => {
                println!("verdicts: skipped ({msg})");
                false
            }
        }
    } else {
        println!("verdicts: skipped (missing models: {})", missing.join(", "));
        false
    };
    if !verdict_text.is_empty() {
        std::fs::write(out_dir.join("verdicts.txt"), &verdict_text)
            .map_err(|e| CliError::Run(format!("cannot write verdicts: {e}")))?;
    }

    if args.assert_paper_ordering && !all_pass {
        return Err(CliError::Run("paper ordering assertion failed".into()));
    }
    Ok(())
}
