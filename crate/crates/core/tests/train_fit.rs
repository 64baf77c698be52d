use std::collections::HashSet;

use margot::autodiff::{backward, forward, mlp_chain, GeneratorParams, LayerSpec, Mode, Tensor2};
use margot::bench::{
    gauss3_covariance, gen_gauss3, run_experiment, run_experiment_with, Experiment,
    ExperimentConfig, ExperimentReport,
};
use margot::eval::sample_covariance;
use margot::mpw::{mpw_distance, MarginalPenaltySpec};
use margot::rng::{normal_matrix, seeded};
use margot::tabular::{self, Column, ColumnSpec, Table, TableSchema};
use margot::train::{
    block_loss, epoch_blocks, fit, fit_conditional, sample, ArchConfig, ConditioningSpec, LossKind,
    TrainConfig,
};
use margot::transport::{w1_1d, WeightedPointCloud};
use margot::Exec;
use rand::Rng;

fn normal_table(n: usize, seed: u64) -> Table {
    let mut rng = seeded(seed);
    let v: Vec<f64> = normal_matrix(&mut rng, n, 1)
        .into_iter()
        .map(|x| x + 3.0)
        .collect();
    Table::from_matrix(&["x"], &Tensor2::from_vec(n, 1, v).unwrap()).unwrap()
}

#[test]
fn learns_shifted_normal() {
    let train = normal_table(500, 1);
    let held = normal_table(500, 2);
    let tr = tabular::fit(&TableSchema::continuous(&["x"]), &train).unwrap();
    let enc = tabular::encode(&tr, &train).unwrap().matrix;
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 100,
        latent_dim: Some(1),
        seed: 5,
        ..TrainConfig::default()
    };
    let model = fit(&enc, &tr, &cfg, mlp_chain(1, &[16], 1, 0.0, vec![])).unwrap();
    let out = sample(&model, 500, 9, None)
        .unwrap()
        .to_matrix()
        .unwrap()
        .column(0);
    let mean = out.iter().sum::<f64>() / out.len() as f64;
    let w = w1_1d(&out, &held.to_matrix().unwrap().column(0)).unwrap();
    assert!((mean - 3.0).abs() < 0.2, "mean {mean}");
    assert!(w < 0.25, "w1 {w}");
}

#[test]
fn conditional_model_follows_condition() {
    let n = 1000;
    let mut rng = seeded(21);
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let one = rng.random_bool(0.5);
        let z: f64 = margot::rng::standard_normal(&mut rng);
        x.push(if one { 5.0 + z } else { -5.0 + z });
        y.push(if one { "1" } else { "0" }.to_string());
    }
    let table = Table::new(
        vec!["x".into(), "y".into()],
        vec![Column::Numeric(x), Column::Labels(y)],
    )
    .unwrap();
    let schema = TableSchema::new(vec![
        ColumnSpec::continuous("x"),
        ColumnSpec::categorical("y", &["0", "1"]),
    ])
    .unwrap();
    let tr = tabular::fit(&schema, &table).unwrap();
    let enc = tabular::encode(&tr, &table).unwrap().matrix;
    let cond = ConditioningSpec::from_names(&tr, &["y"]).unwrap();
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 200,
        latent_dim: Some(2),
        seed: 3,
        copy_conditions: true,
        ..TrainConfig::default()
    };
    let chain = mlp_chain(4, &[32, 32], tr.width, 0.0, tr.softmax_blocks());
    let model = fit_conditional(&enc, &tr, &cond, &cfg, chain).unwrap();
    for (label, target) in [("1", 5.0), ("0", -5.0)] {
        let c = Table::new(
            vec!["y".into()],
            vec![Column::Labels(vec![label.to_string(); 500])],
        )
        .unwrap();
        let out = sample(&model, 500, 4, Some(&c)).unwrap();
        let Column::Numeric(xs) = &out.columns[0] else {
            panic!()
        };
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - target).abs() < 0.5, "y={label}: mean {mean}");
        assert_eq!(out.columns[1], c.columns[0]);
    }
}

#[test]
fn gauss3_covariance_is_learned() {
    let table = gen_gauss3(2000, 31);
    let tr = tabular::fit(&TableSchema::continuous(&["x1", "x2", "x3"]), &table).unwrap();
    let enc = tabular::encode(&tr, &table).unwrap().matrix;
    let cfg = TrainConfig {
        epochs: 100,
        batch_size: 250,
        seed: 8,
        ..TrainConfig::default()
    };
    let arch = ArchConfig {
        hidden: vec![64, 32],
        dropout: 0.0,
    };
    let model = fit(&enc, &tr, &cfg, arch.chain(3, &tr)).unwrap();
    let out = sample(&model, 10_000, 1, None)
        .unwrap()
        .to_matrix()
        .unwrap();
    let diff = sample_covariance(&out).unwrap() - gauss3_covariance();
    let spectral = diff
        .symmetric_eigenvalues()
        .iter()
        .fold(0f64, |m, v| m.max(v.abs()));
    assert!(spectral < 6.0, "spectral distance {spectral}");
}

#[test]
fn two_parameter_generator_gradient() {
    // G(z) = a z + b against a fixed sample; loss and gradient in (a, b).
    let chain = vec![LayerSpec::dense(1, 1)];
    let mut rng = seeded(40);
    let mut params = GeneratorParams::init(&chain, &mut rng).unwrap();
    let real = Tensor2::from_vec(16, 1, normal_matrix(&mut rng, 16, 1)).unwrap();
    let z = Tensor2::from_vec(16, 1, normal_matrix(&mut rng, 16, 1)).unwrap();
    let spec = MarginalPenaltySpec::uniform(1, 1.0);
    let mu = WeightedPointCloud::uniform(real.clone()).unwrap();
    let loss = |p: &GeneratorParams| {
        let (out, _) = forward(p, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
        mpw_distance(&mu, &WeightedPointCloud::uniform(out).unwrap(), &spec)
            .unwrap()
            .total
    };
    for (a, b) in [(0.3, 0.1), (1.7, -0.4), (-0.8, 0.9)] {
        params.assign_flat(&[a, b]).unwrap();
        let (out, cache) = forward(&params, &chain, &z, Mode::Train, &mut seeded(0)).unwrap();
        let bl = block_loss(LossKind::Mpw, &real, &out, &spec, &[], Exec::Sequential).unwrap();
        let (g, _) = backward(&params, &chain, &cache, &bl.grad).unwrap();
        let h = 1e-6;
        for i in 0..2 {
            let mut v = vec![a, b];
            v[i] += h;
            let mut p = params.clone();
            p.assign_flat(&v).unwrap();
            let up = loss(&p);
            v[i] -= 2.0 * h;
            p.assign_flat(&v).unwrap();
            let fd = (up - loss(&p)) / (2.0 * h);
            assert!(
                (g.0[i] - fd).abs() < 1e-3 * (1.0 + fd.abs()),
                "param {i}: {} vs {fd}",
                g.0[i]
            );
        }
    }
}

#[test]
fn epoch_blocks_partition_rows() {
    let mut rng = seeded(50);
    let mut seen = HashSet::new();
    for (n, m) in [(10, 3), (12, 4), (5, 10), (1, 1)] {
        for _ in 0..5 {
            let blocks = epoch_blocks(&mut rng, n, m);
            assert_eq!(blocks.len(), n.div_ceil(m));
            assert!(blocks[..blocks.len() - 1].iter().all(|b| b.len() == m));
            let mut all: Vec<usize> = blocks.concat();
            seen.insert(all.clone());
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
    assert!(seen.len() > 10, "epochs should reshuffle");
}

fn small_experiment(exp: Experiment) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(exp, 13);
    cfg.n = 120;
    cfg.train.epochs = 3;
    cfg.train.batch_size = 40;
    cfg.arch.hidden = vec![16];
    cfg.coverage.n_sets = 20;
    cfg.losses = vec![LossKind::Mpw, LossKind::Ot, LossKind::Sw];
    cfg
}

#[test]
fn experiment_reports_are_deterministic() {
    for exp in [
        Experiment::GmmModecollapse2comp,
        Experiment::Gauss3Coverage,
        Experiment::Scurve,
    ] {
        let cfg = small_experiment(exp);
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment_with(&cfg, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.variants.len(), 3);
        assert_eq!(a.n_real, 120);
        assert_eq!(
            a.variants[0].coverage.is_some(),
            exp == Experiment::Gauss3Coverage
        );
        assert_eq!(
            a.variants[0].metrics.mode_weights.is_some(),
            exp == Experiment::GmmModecollapse2comp
        );
        let json = serde_json::to_string(&a).unwrap();
        let back: ExperimentReport = serde_json::from_str(&json).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), json);
    }
}
