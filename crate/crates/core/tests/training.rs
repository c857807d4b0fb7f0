#![allow(clippy::field_reassign_with_default)]

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use silo_transfer::data::{generate_universe, CohortSplit, GeneratorConfig};
use silo_transfer::experiment::TransferArtifact;
use silo_transfer::network::{init_params, Architecture};
use silo_transfer::silo::{Cohort, Universe};
use silo_transfer::training::{
    compute_fisher_diagonal, fine_tune, fit, train_local, train_sequential_ewc, TrainConfig,
};

fn small_universe() -> Universe {
    let mut g = GeneratorConfig::default();
    g.universities = 1;
    g.community_colleges = 2;
    g.records_per_institution = 500;
    generate_universe(&g, 2).unwrap()
}

#[test]
fn zero_rate_leaves_learnable_parameters_at_init() {
    let u = small_universe();
    let silo = u.get("C01").unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 0.0,
        seed: 5,
        ..TrainConfig::default()
    };
    let out = train_local(silo, &CohortSplit::default(), &cfg).unwrap();
    let dim = out.params.input_dim;
    let init = init_params(dim, &cfg.arch, cfg.seed).unwrap();
    assert_eq!(out.params.learnable, init.learnable);
    assert_eq!(out.log.len(), 1);
}

#[test]
fn same_seed_same_model() {
    let u = small_universe();
    let silo = u.get("U01").unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 8,
        ..TrainConfig::default()
    };
    let split = CohortSplit::default();
    let a = train_local(silo, &split, &cfg).unwrap();
    let b = train_local(silo, &split, &cfg).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.log, b.log);
}

#[test]
fn separable_toy_data_is_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 200;
    let mut x = Array2::zeros((n, 3));
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 2) as u8;
        let centre = if label == 1 { 1.5 } else { -1.5 };
        for j in 0..3 {
            x[[i, j]] = centre + rng.random_range(-1.0..1.0);
        }
        y.push(label);
    }
    let cfg = TrainConfig::default();
    let mut params = init_params(3, &Architecture::default(), 0).unwrap();
    let log = fit(&mut params, x.view(), &y, &cfg, None).unwrap();
    let last = log.last().unwrap();
    assert!(last.train_accuracy >= 0.95, "{last:?}");
    assert!(last.mean_loss < log[0].mean_loss);
}

#[test]
fn full_sample_fisher_ignores_the_seed() {
    let u = small_universe();
    let silo = u.get("C01").unwrap();
    let split = CohortSplit::default();
    let cfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let params = train_local(silo, &split, &cfg).unwrap().params;
    let a = compute_fisher_diagonal(&params, silo, &split, 100_000, 1).unwrap();
    let b = compute_fisher_diagonal(&params, silo, &split, 100_000, 2).unwrap();
    assert_eq!(a, b);
    assert!(a.to_vec().iter().all(|v| *v >= 0.0));
    let capped = compute_fisher_diagonal(&params, silo, &split, 50, 1).unwrap();
    assert_ne!(a, capped);
}

struct TwoStage {
    universe: Universe,
    split: CohortSplit,
    cfg: TrainConfig,
    artifact: TransferArtifact,
}

fn two_stage() -> TwoStage {
    let universe = small_universe();
    let split = CohortSplit::default();
    let cfg = TrainConfig {
        epochs: 10,
        seed: 3,
        ..TrainConfig::default()
    };
    let a = universe.get("C01").unwrap();
    let start = train_local(a, &split, &cfg).unwrap().params;
    let fisher = compute_fisher_diagonal(&start, a, &split, cfg.fisher_sample_cap, 0).unwrap();
    let artifact =
        TransferArtifact::new(&start, Some(&fisher), vec!["C01".into()], "d".into()).unwrap();
    TwoStage {
        universe,
        split,
        cfg,
        artifact,
    }
}

#[test]
fn huge_penalty_pins_parameters_to_the_anchor() {
    let s = two_stage();
    let cfg = TrainConfig {
        ewc_lambda: 1e8,
        ..s.cfg.clone()
    };
    let out =
        train_sequential_ewc(&s.artifact, s.universe.get("C02").unwrap(), &s.split, &cfg).unwrap();
    let anchor = s.artifact.model().unwrap().learnable.to_vec();
    let moved = out
        .params
        .learnable
        .to_vec()
        .iter()
        .zip(&anchor)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(moved < 1e-3, "max move {moved}");
}

#[test]
fn penalty_reduces_forgetting_of_the_first_silo() {
    let s = two_stage();
    let (a, b) = (
        s.universe.get("C01").unwrap(),
        s.universe.get("C02").unwrap(),
    );
    let start = s.artifact.model().unwrap();
    let plain = fine_tune(&start, b, &s.split, &s.cfg).unwrap().params;
    let ewc = train_sequential_ewc(&s.artifact, b, &s.split, &s.cfg)
        .unwrap()
        .params;
    let loss_plain = a.mean_loss(&s.split, &plain, Cohort::Train).unwrap();
    let loss_ewc = a.mean_loss(&s.split, &ewc, Cohort::Train).unwrap();
    assert!(loss_ewc <= loss_plain, "{loss_ewc} > {loss_plain}");
}

#[test]
fn missing_fisher_is_an_artifact_error() {
    let s = two_stage();
    let bare = TransferArtifact::new(
        &s.artifact.model().unwrap(),
        None,
        vec!["C01".into()],
        "d".into(),
    )
    .unwrap();
    let err = train_sequential_ewc(&bare, s.universe.get("C02").unwrap(), &s.split, &s.cfg);
    assert!(matches!(err, Err(silo_transfer::Error::Artifact(_))));
}
