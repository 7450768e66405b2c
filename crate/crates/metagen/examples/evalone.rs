use metagen::datagen::*;
use metagen::domain::*;
use metagen::metrics::*;
use metagen::models::*;

fn main() {
    let ckpt_path = std::env::args().nth(1).unwrap();
    let n: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20_000);
    let ckpt = Checkpoint::load(std::path::Path::new(&ckpt_path)).unwrap();
    let model = SystemModel::from_checkpoint(&ckpt).unwrap();
    let eval = build_dataset(&DatasetConfig { n_records: n, seed: 999, ..Default::default() });
    let conds: Vec<Condition> = eval.records.iter().map(|r| r.cond).collect();
    let mut rng = role_rng(0, "eval");
    let systems = sample_systems(&model, &ckpt.config, &ckpt.normalizer, &conds, &mut rng).unwrap();
    let generated: Vec<(SystemParams, Condition)> = systems.iter().zip(conds.iter()).map(|(s, c)| (estimate_params(s), *c)).collect();
    let rep = evaluate_samples(&generated, &eval.records, &EvalOptions::default()).unwrap();
    let pairs = residual_pairs(&generated);
    let (slope, intercept) = linear_fit(&pairs);
    let mean_ord = pairs.iter().map(|p| p.1).sum::<f64>() / pairs.len() as f64;
    println!(
        "{}: |Ec| {:.3}  |Ep| {:.3e}  W {:?}  slope {:.3} int/ord {:.3}",
        ckpt_path, rep.contact.mean_abs, rep.performance.mean_abs,
        rep.wasserstein.map(|w| (w * 1000.0).round() / 1000.0),
        slope, intercept / mean_ord
    );
}
