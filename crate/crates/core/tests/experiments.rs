//! Experiment-family behaviour on generated universes.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use silo_transfer::data::{Category, GeneratorConfig};
use silo_transfer::experiment::TransferArtifact;
use silo_transfer::experiment::{Experiment, ExperimentConfig, Family, ResultRow, UniverseSource};
use silo_transfer::similarity::ols_fit;
use silo_transfer::stats::mean;
use silo_transfer::thresholds::PolicyKind;
use silo_transfer::training::{train_local, train_sequential_ewc, TrainConfig};

fn experiment(generator: GeneratorConfig) -> Experiment {
    Experiment::new(ExperimentConfig {
        universe: UniverseSource::Generated { generator, seed: 0 },
        ..ExperimentConfig::default()
    })
    .unwrap()
}

fn delta_aucs(exp: &Experiment) -> Vec<f64> {
    exp.run(Family::Direct)
        .unwrap()
        .iter()
        .filter(|r| r.scheme == "direct")
        .filter_map(|r| r.value("delta_auc"))
        .collect()
}

#[test]
fn local_rows_have_zero_delta_and_shift_raises_the_drop() {
    let zero = experiment(GeneratorConfig::zero_shift());
    let rows = zero.run(Family::Direct).unwrap();
    assert!(rows
        .iter()
        .filter(|r| r.scheme == "local")
        .all(|r| r.source == r.target));

    let flat = delta_aucs(&zero);
    let mean_abs = mean(&flat.iter().map(|d| d.abs()).collect::<Vec<_>>()).unwrap();
    assert!(mean_abs < 0.05, "zero-shift mean |dAUC| {mean_abs}");

    let shifted = delta_aucs(&experiment(GeneratorConfig::default()));
    let (m0, m1) = (mean(&flat).unwrap(), mean(&shifted).unwrap());
    assert!(m1 > m0, "default drop {m1} vs zero-shift drop {m0}");
}

fn fit_row<'a>(rows: &'a [ResultRow], scheme: &str) -> &'a ResultRow {
    rows.iter()
        .find(|r| r.scheme == scheme && r.source == "*")
        .unwrap()
}

#[test]
fn demographic_shift_loads_on_demographic_similarity() {
    // Every category varies in the public context, but only the demographic
    // latent reaches the outcome model.
    let mut g = GeneratorConfig::default();
    for c in Category::ALL
        .into_iter()
        .filter(|c| *c != Category::Demographic)
    {
        *g.outcome.intercept_loadings.get_mut(c) = 0.0;
        g.outcome
            .weight_loadings
            .get_mut(c)
            .iter_mut()
            .for_each(|v| *v = 0.0);
        g.outcome
            .mean_loadings
            .get_mut(c)
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    for f in g
        .categorical_features
        .iter_mut()
        .filter(|f| f.driver != Category::Demographic)
    {
        f.level_loadings.iter_mut().for_each(|v| *v = 0.0);
    }
    let rows = experiment(g).run(Family::Regression).unwrap();
    let drop = fit_row(&rows, "auc_drop");
    let coef = drop.value("coef.demographic").unwrap();
    let p = drop.value("p.demographic").unwrap();
    assert!(
        coef < 0.0 && p < 0.05,
        "demographic coefficient {coef}, p {p}"
    );

    // Permutation null: shuffled drops carry no similarity signal.
    let pairs: Vec<&ResultRow> = rows.iter().filter(|r| r.scheme == "pair").collect();
    let names: Vec<String> = pairs[0]
        .values
        .keys()
        .filter(|k| k.starts_with("sim."))
        .cloned()
        .collect();
    let mut y: Vec<f64> = pairs
        .iter()
        .map(|r| r.value("delta_auc").unwrap())
        .collect();
    y.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let x = DMatrix::from_fn(pairs.len(), names.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            pairs[i].value(&names[j - 1]).unwrap()
        }
    });
    let mut cols = vec!["intercept".to_string()];
    cols.extend(names);
    let null = ols_fit(&y, &x, &cols).unwrap();
    assert!(null.r_squared < 0.1, "permuted R2 {}", null.r_squared);
}

#[test]
fn msti_baseline_is_the_mean_over_candidates() {
    let exp = experiment(GeneratorConfig::default());
    let direct = exp.run(Family::Direct).unwrap();
    let msti = exp.run(Family::Msti).unwrap();
    let t = "C05";
    let expected = msti
        .iter()
        .find(|r| r.scheme == "expected" && r.target == t)
        .unwrap()
        .value("auc")
        .unwrap();
    let aucs: Vec<f64> = direct
        .iter()
        .filter(|r| r.scheme == "direct" && r.target == t)
        .filter_map(|r| r.value("auc"))
        .collect();
    assert!((expected - mean(&aucs).unwrap()).abs() < 1e-12);
}

#[test]
fn sequential_onto_the_same_silo_with_no_penalty_stays_close() {
    let exp = experiment(GeneratorConfig::default());
    let split = &exp.config().split;
    let cfg = TrainConfig {
        ewc_lambda: 0.0,
        ..TrainConfig::default()
    };
    let (source, target) = (
        exp.universe().get("C03").unwrap(),
        exp.universe().get("C07").unwrap(),
    );
    let first = train_local(source, split, &cfg).unwrap().params;
    let art = TransferArtifact::new(&first, None, vec!["C03".into()], "d".into()).unwrap();
    let again = train_sequential_ewc(&art, source, split, &cfg)
        .unwrap()
        .params;
    let auc = |p| target.evaluate(split, p, &[PolicyKind::Default]).unwrap()[0].auc;
    let (a, b) = (auc(&first), auc(&again));
    assert!((a - b).abs() < 0.02, "{a} vs {b}");
}
