//! End-to-end checks across modules: generate, persist, train, fit and
//! evaluate on a small two-cluster problem.

use cfs_core::baselines::{run_baseline, BaselineSpec, ExtraTreesConfig, MaskFile};
use cfs_core::env::{EnvParams, RewardMode};
use cfs_core::eval::{evaluate_policy, ClusterMasks, GreedyActor, StaticMask};
use cfs_core::oracle::{exhaustive_best_per_cluster, exhaustive_best_pooled};
use cfs_core::policy::{train, Checkpoint, TrainParams, Trainer};
use cfs_core::synth::{self, generate, split, GenConfig};
use cfs_core::{Dataset, FactorMask};

const LAMBDA: f64 = 5e-4;

fn config() -> GenConfig {
    GenConfig { num_page_views: 600, p: 6, l: 6, n_items: 8, num_clusters: 2, seed: 21, ..GenConfig::default() }
}

fn params(t_max: usize) -> TrainParams {
    TrainParams { t_max, hidden: vec![16, 16], log_interval: 100, entropy_coefficient: 0.03, seed: 5, ..TrainParams::default() }
}

fn env() -> EnvParams<f64> {
    EnvParams::new(LAMBDA, 0.05, 1.0).with_reward_mode(RewardMode::Terminal)
}

#[test]
fn dataset_survives_a_round_trip() {
    let data: Dataset = generate(&config()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.bin");
    synth::save(&data, &path).unwrap();
    assert_eq!(synth::load::<f64>(&path).unwrap(), data);
}

#[test]
fn cluster_oracle_bounds_every_policy() {
    let data: Dataset = generate(&config()).unwrap();
    let (train_set, test) = split(&data, 0.5).unwrap();
    let model = data.ranking_model();
    let per = exhaustive_best_per_cluster(&test, &model, LAMBDA).unwrap();
    let masks = per.iter().map(|(id, r)| (*id, r.best_mask.clone())).collect();
    let bound = evaluate_policy("oracle", &test, &model, &ClusterMasks(masks), LAMBDA).unwrap().row.mean_objective;
    let pooled = exhaustive_best_pooled(&test, &model, LAMBDA).unwrap();
    assert!(bound <= pooled.best_loss + 1e-12);

    let (actor, log) = train(&train_set, &model, &env(), &params(400)).unwrap();
    assert_eq!(log.len(), 4);
    let greedy = GreedyActor { actor: &actor, model: &model, costs: test.costs(), params: env() };
    let learned = evaluate_policy("rankcfs", &test, &model, &greedy, LAMBDA).unwrap().row;
    assert!(learned.mean_objective >= bound - 1e-12);

    let tree = ExtraTreesConfig { n_trees: 5, ..ExtraTreesConfig::default() };
    for spec in ["norm:0.1", "lasso:0.05", "tree", "ftest:3"] {
        let spec: BaselineSpec = spec.parse().unwrap();
        let fit_on = if matches!(spec, BaselineSpec::NormElimination { .. }) { &test } else { &train_set };
        let table = run_baseline(&spec, fit_on, &model, &tree).unwrap();
        let row = evaluate_policy(&spec.to_string(), &test, &model, &table, LAMBDA).unwrap().row;
        assert!(row.mean_objective >= bound - 1e-12, "{spec} beats the oracle");
        assert!(row.avg_factor_usage <= 6.0 && row.weighted_factor_usage <= test.costs().total() + 1e-9);

        let file = MaskFile { method: spec.to_string(), p: 6, table };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mask");
        file.save(&path).unwrap();
        assert_eq!(MaskFile::load(&path).unwrap(), file);
    }
}

#[test]
fn checkpoint_restores_the_greedy_policy() {
    let data: Dataset = generate(&config()).unwrap();
    let model = data.ranking_model();
    let mut trainer = Trainer::new(data.l(), data.p(), params(300)).unwrap();
    trainer.run(&data, &model, &env(), |_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.ckpt");
    trainer.checkpoint().save(&path).unwrap();
    let restored = Checkpoint::<f64>::load(&path).unwrap();
    let a = GreedyActor { actor: trainer.actor(), model: &model, costs: data.costs(), params: env() };
    let b = GreedyActor { actor: &restored.actor, model: &model, costs: data.costs(), params: env() };
    let ra = evaluate_policy("a", &data, &model, &a, LAMBDA).unwrap();
    let rb = evaluate_policy("a", &data, &model, &b, LAMBDA).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn single_precision_pipeline_runs() {
    let data: synth::Dataset<f32> = generate(&config()).unwrap();
    let model = data.ranking_model();
    let env = EnvParams::<f32>::new(LAMBDA as f32, 0.05, 1.0).with_reward_mode(RewardMode::Terminal);
    let (actor, _) = train(&data, &model, &env, &params(200)).unwrap();
    let greedy = GreedyActor { actor: &actor, model: &model, costs: data.costs(), params: env };
    let row = evaluate_policy("f32", &data, &model, &greedy, LAMBDA as f32).unwrap().row;
    assert!((0.0..=1.0).contains(&row.avg_pairwise_loss));
    let full = evaluate_policy("full", &data, &model, &StaticMask(FactorMask::all_ones(6)), LAMBDA as f32).unwrap().row;
    assert_eq!(full.avg_pairwise_loss, 0.0);
}
