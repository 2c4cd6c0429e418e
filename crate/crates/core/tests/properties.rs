use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use optma::data::{self, NormStats, OracleKind, Problem};
use optma::eval::{self, mse_normalized, rmse_normalized, DataSource, ExperimentConfig};
use optma::gradcheck::grad_check;
use optma::models::{Family, Model, ModelSpec};
use optma::network::{mse_loss, Adam, Mlp, MlpSpec, Mode};
use optma::physics::{self, PhysicsConfig};
use optma::split::{self, SplitSpec};
use optma::{Tape, Tensor};

fn finite_row(len: usize, lo: f64, hi: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(lo..hi, len)
}

/// A listener position in the scan box away from every rotor.
fn field_point() -> impl Strategy<Value = [f64; 3]> {
    (-1.15..1.15f64, -1.15..1.15f64, -0.6..0.6f64)
        .prop_filter("near a rotor", |&(x, y, z)| PhysicsConfig::quadcopter().min_source_distance([x, y, z]) > 0.1)
        .prop_map(|(x, y, z)| [x, y, z])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoints_are_linear(x in finite_row(4, -2.0, 2.0), a in -3.0..3.0f64, b in -3.0..3.0f64) {
        let point = Tensor::row(x).unwrap();
        let grad_of = |wa: f64, wb: f64| {
            let tape = Tape::new();
            let v = tape.leaf(point.clone());
            let f = v.sin().mul(v).sum();
            let g = v.powf(2.0).unwrap().cos().sum();
            let root = f.scale(wa) + g.scale(wb);
            tape.backward(root).wrt(v)
        };
        let combined = grad_of(a, b);
        let (gf, gg) = (grad_of(1.0, 0.0), grad_of(0.0, 1.0));
        for i in 0..4 {
            let expect = a * gf.data()[i] + b * gg.data()[i];
            prop_assert!((combined.data()[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn spl_is_invariant_to_source_order(p in field_point(), amps in finite_row(4, 0.2, 2.0), perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle()) {
        let cfg = PhysicsConfig::quadcopter();
        let permuted = cfg.subset(&perm).unwrap();
        let point = Tensor::row(p.to_vec()).unwrap();
        let base = physics::monopole_spl_values(&point, &Tensor::row(amps.clone()).unwrap(), &cfg).unwrap()[0];
        let moved = perm.iter().map(|&i| amps[i]).collect();
        let other = physics::monopole_spl_values(&point, &Tensor::row(moved).unwrap(), &permuted).unwrap()[0];
        prop_assert!((base - other).abs() < 1e-9, "{base} vs {other}");
    }

    #[test]
    fn normalized_metrics_ignore_affine_rescaling(
        pairs in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64), 2..40),
        scale in 0.1..20.0f64,
        offset in -100.0..100.0f64,
    ) {
        let (pred, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let Ok(stats) = NormStats::fit(&truth) else { return Ok(()) };
        let affine = |v: &[f64]| v.iter().map(|x| scale * x + offset).collect::<Vec<_>>();
        let (p2, t2) = (affine(&pred), affine(&truth));
        let stats2 = NormStats::fit(&t2).unwrap();
        let a = mse_normalized(&pred, &truth, &stats).unwrap();
        let b = mse_normalized(&p2, &t2, &stats2).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
        let r = rmse_normalized(&pred, &truth, &stats).unwrap();
        prop_assert!((r * r - a).abs() <= 1e-9 * (1.0 + a));
    }

    #[test]
    fn fp1_is_gramacy_of_reflected_input(x in 0.5..2.5f64) {
        prop_assert_eq!(physics::fp1_oracle(x).unwrap(), physics::gramacy_pp_value(3.0 - x).unwrap());
    }

    #[test]
    fn gramacy_tape_matches_scalar(x in 0.5..2.5f64) {
        let tape = Tape::new();
        let y = physics::gramacy_pp(tape.leaf(Tensor::scalar(x))).unwrap().value().item();
        prop_assert!((y - physics::gramacy_pp_value(x).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn micro_network_gradient_matches_finite_differences(
        theta in finite_row(4, -1.5, 1.5),
        xs in finite_row(6, -2.0, 2.0),
        ys in finite_row(6, -2.0, 2.0),
    ) {
        // y_hat = w2 * relu(w1 * x + b1) + b2 with theta = [w1, b1, w2, b2]
        let x = Tensor::column(xs).unwrap();
        let y = Tensor::column(ys).unwrap();
        let r = grad_check(
            |tape, t| {
                let w1 = t.slice_col(0);
                let b1 = t.slice_col(1);
                let w2 = t.slice_col(2);
                let b2 = t.slice_col(3);
                let hidden = tape.leaf(x.clone()).matmul(w1).add_row(b1).relu();
                mse_loss(hidden.matmul(w2).add_row(b2), tape.leaf(y.clone()))
            },
            &Tensor::row(theta).unwrap(),
            1e-6,
            1e-4,
        )
        .unwrap();
        prop_assert!(r.passed, "max rel error {}", r.max_rel_error);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn percentage_split_is_a_partition(n in 10usize..300, fraction in 0.1..0.9f64, seed in any::<u64>()) {
        let d = data::gen_gramacy(Problem::Fp1, n, seed).unwrap();
        let s = split::split_percentage(&d, fraction, seed).unwrap();
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert!(!s.train.is_empty() && !s.test.is_empty());
    }

    #[test]
    fn spatial_splits_follow_rows_not_positions(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let d = data::gen_acoustic(120, seed, &OracleKind::Default.build(), 0.25).unwrap();
        let mut perm: Vec<usize> = (0..d.len()).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let shuffled = d.select(&perm);
        for spec in [SplitSpec::Quadrant, SplitSpec::Radial { center: None }] {
            let a = spec.apply(&d, 0).unwrap();
            let b = spec.apply(&shuffled, 0).unwrap();
            let mut mapped: Vec<usize> = b.train.iter().map(|&i| perm[i]).collect();
            mapped.sort_unstable();
            prop_assert_eq!(&mapped, &a.train);
            prop_assert_eq!(a.train.len() + a.test.len(), d.len());
        }
    }

    #[test]
    fn optma_forward_equals_physics_of_transfer_features(seed in any::<u64>(), points in prop::collection::vec(field_point(), 1..20)) {
        let cfg = PhysicsConfig::quadcopter();
        let spec = ModelSpec::for_problem(Family::OptmaNet, Problem::Acoustic, &MlpSpec::acoustic(), Some(cfg.clone())).unwrap();
        let model = Model::init(spec, seed).unwrap();
        let x = Tensor::from_rows(&points).unwrap();
        let forward = model.predict(&x).unwrap();
        let features = model.extract_transfer_features(&x).unwrap();
        let refed = physics::monopole_spl_values(&x, &features.0, &cfg).unwrap();
        for (a, b) in forward.iter().zip(&refed) {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn one_small_step_lowers_the_batch_loss(seed in any::<u64>()) {
        let spec = MlpSpec {
            n_inputs: 2,
            n_outputs: 1,
            n_hidden_layers: 2,
            nodes_per_layer: 8,
            dropout_p: 0.0,
            learning_rate: 1e-6,
            batch_size: 16,
            max_epochs: 1,
        };
        let mut net = Mlp::init(&spec, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let x = Tensor::new(16, 2, (0..32).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect()).unwrap();
        let y = Tensor::column((0..16).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect()).unwrap();
        let loss_of = |net: &Mlp, rng: &mut ChaCha8Rng| {
            let mut scratch = net.clone();
            let tape = Tape::new();
            let bound = scratch.bind(&tape);
            let pred = scratch.forward(&bound, tape.leaf(x.clone()), Mode::Train(rng)).unwrap();
            let loss = mse_loss(pred, tape.leaf(y.clone())).unwrap();
            let g: Vec<Tensor> = {
                let grads = tape.backward(loss);
                bound.vars().iter().map(|v| grads.wrt(*v)).collect()
            };
            (loss.value().item(), g)
        };
        let (before, grads) = loss_of(&net, &mut rng);
        let mut adam = Adam::new(net.params());
        adam.step(net.params_mut(), &grads, spec.learning_rate).unwrap();
        let (after, _) = loss_of(&net, &mut rng);
        prop_assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn checkpoints_round_trip_bit_exactly(seed in any::<u64>()) {
        let net = Mlp::init(&MlpSpec::acoustic(), seed);
        let back = Mlp::from_checkpoint(&serde_json::from_str(&serde_json::to_string(&net.to_checkpoint()).unwrap()).unwrap()).unwrap();
        for (a, b) in net.params().iter().zip(back.params()) {
            prop_assert!(a.data().iter().zip(b.data()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
    }

    #[test]
    fn csv_round_trip_is_bit_exact(seed in any::<u64>(), n in 1usize..50) {
        let d = data::gen_acoustic(n, seed, &OracleKind::Default.build(), 0.25).unwrap();
        let back = data::parse_csv(std::str::from_utf8(&data::csv_bytes(&d).unwrap()).unwrap()).unwrap();
        prop_assert_eq!(back, d);
    }
}

#[test]
fn optma_with_reflecting_transfer_reproduces_fp1() {
    let spec = ModelSpec::for_problem(
        Family::OptmaNet,
        Problem::Fp1,
        &MlpSpec {
            n_inputs: 0,
            n_outputs: 0,
            n_hidden_layers: 2,
            nodes_per_layer: 1,
            dropout_p: 0.0,
            learning_rate: 1e-3,
            batch_size: 10,
            max_epochs: 1,
        },
        None,
    )
    .unwrap();
    let mut model = Model::init(spec, 0).unwrap();
    // Input normalization at the identity, every ReLU layer passing x > 0,
    // and an output layer computing 3 - x.
    let net = &mut model.net;
    net.norm.gamma = Tensor::scalar((1.0 + net.norm.eps).sqrt());
    net.linear_in.weight = Tensor::scalar(1.0);
    for layer in &mut net.hidden {
        layer.weight = Tensor::scalar(1.0);
    }
    net.linear_out.weight = Tensor::scalar(-1.0);
    net.linear_out.bias = Tensor::scalar(3.0);

    let xs: Vec<f64> = (0..=200).map(|i| 0.5 + 0.01 * i as f64).collect();
    let pred = model.predict(&Tensor::column(xs.clone()).unwrap()).unwrap();
    for (x, p) in xs.iter().zip(pred) {
        let truth = physics::fp1_oracle(*x).unwrap();
        assert!((p - truth).abs() < 1e-9, "x = {x}: {p} vs {truth}");
    }
}

#[test]
fn report_summary_matches_its_runs() {
    let cfg = ExperimentConfig {
        problem: Problem::Fp2,
        families: Family::ALL.to_vec(),
        mlp: MlpSpec {
            n_inputs: 0,
            n_outputs: 0,
            n_hidden_layers: 2,
            nodes_per_layer: 8,
            dropout_p: 0.1,
            learning_rate: 1e-3,
            batch_size: 10,
            max_epochs: 3,
        },
        physics: None,
        data: DataSource::Generated {
            n: 40,
            n_test: Some(30),
            test_seed: Some(9),
            oracle: OracleKind::Default,
        },
        split: None,
        seeds: vec![3, 1, 4],
        n_repeats: None,
        noise: 0.0,
    };
    let report = eval::run_experiment(&cfg).unwrap();
    assert!(report.all_ok());
    assert_eq!(report.seeds.len(), 3);
    for s in &report.summary {
        let values: Vec<f64> = report
            .seeds
            .iter()
            .flat_map(|r| &r.runs)
            .filter(|r| r.family == s.family)
            .map(|r| r.test_mse_norm.unwrap())
            .collect();
        assert_eq!(values.len(), 3);
        assert_eq!(s.mse_norm_mean, eval::mean(&values));
        assert_eq!(s.mse_norm_median, eval::median(&values));
        let mean = values.iter().sum::<f64>() / 3.0;
        assert!((s.mse_norm_mean.unwrap() - mean).abs() < 1e-15);
    }
}

#[test]
fn sequential_and_parallel_reports_agree() {
    let mut cfg = ExperimentConfig::from_json(include_str!("../../../configs/acoustic_quadrant.json")).unwrap();
    cfg.mlp.max_epochs = 2;
    cfg.seeds = vec![1, 2];
    let seq = eval::run_experiment_with(&cfg, optma::parallel::Execution::Sequential).unwrap();
    let par = eval::run_experiment_with(&cfg, optma::parallel::Execution::Parallel).unwrap();
    assert_eq!(seq.to_json().unwrap(), par.to_json().unwrap());
}
