//! Library-level pipeline smoke test at reduced scale: dataset -> marginals
//! -> every system model -> sampling -> evaluation, all in process.

use metagen::datagen::{DatasetConfig, build_dataset};
use metagen::domain::{Condition, SystemParams, estimate_params};
use metagen::metrics::{EvalOptions, evaluate_samples};
use metagen::models::{
    Checkpoint, ModelConfig, ModelKind, SystemModel, role_rng, sample_systems,
};
use metagen::training::{
    TrainConfig, marginal_decoder_set, prepare, train_marginals, train_model,
};

#[test]
fn tiny_pipeline_end_to_end() {
    let ds = build_dataset(&DatasetConfig { n_records: 600, seed: 12, ..Default::default() });
    let data = prepare(ds, &ModelConfig::default(), 0.1).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 64,
        seeds: vec![0],
        marginal_epochs: 2,
        ..Default::default()
    };

    let marginal_ckpts: Vec<Checkpoint> =
        train_marginals(&data, &cfg, "hash").unwrap().into_iter().map(|(c, _)| c).collect();
    let marginals = marginal_decoder_set(&marginal_ckpts).unwrap();

    let eval = build_dataset(&DatasetConfig { n_records: 500, seed: 77, ..Default::default() });
    let conds: Vec<Condition> = eval.records.iter().map(|r| r.cond).collect();

    for kind in ModelKind::ALL {
        let marg = (kind == ModelKind::MetaVae).then_some(&marginals);
        let (ckpt, log) = train_model(kind, &data, marg, &cfg, 0, "hash").unwrap();
        assert_eq!(log.entries.len(), 2);
        assert!(log.entries.iter().all(|e| e.train_loss.is_finite() && e.val_loss.is_finite()));

        let model = SystemModel::from_checkpoint(&ckpt).unwrap();
        let mut rng = role_rng(1, kind.as_str());
        let systems = sample_systems(&model, &ckpt.config, &ckpt.normalizer, &conds, &mut rng)
            .unwrap();
        let generated: Vec<(SystemParams, Condition)> =
            systems.iter().zip(conds.iter()).map(|(s, c)| (estimate_params(s), *c)).collect();
        let report = evaluate_samples(&generated, &eval.records, &EvalOptions::default()).unwrap();
        assert_eq!(report.n_samples, 500);
        assert!(report.wasserstein.iter().all(|w| *w >= 0.0 && *w <= 2.0 + 1e-9));
        assert!(report.contact.mean_abs.is_finite());
        assert!(report.performance.mean_abs.is_finite());
    }
}
