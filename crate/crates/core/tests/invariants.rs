//! Property tests on structural invariants of the library.

use flowlab::flow::{run_flow, tangent_projector, ClassificationDataset, FlowConfig, FlowKind};
use flowlab::harness::{self, DataSource, Experiment, MarginParams, RunConfig, MANIFEST_FILE};
use flowlab::langevin::{boltzmann_reference, Grid2D, PotentialKind};
use flowlab::linalg::{dot, max_abs_diff};
use flowlab::margin::MarginSchedule;
use flowlab::net::{decompose, Activation, ArchitectureSpec, Network};
use flowlab::rng::substream;
use proptest::prelude::*;

fn arch() -> impl Strategy<Value = ArchitectureSpec> {
    prop_oneof![
        (1usize..5, prop::collection::vec(1usize..5, 0..3), any::<bool>())
            .prop_map(|(input_dim, hidden, input_bias)| ArchitectureSpec::Dense { input_dim, hidden, input_bias }),
        (1usize..5, 1usize..6).prop_map(|(input_dim, units)| ArchitectureSpec::Shallow { input_dim, units }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projector_is_idempotent_and_kills_the_normal(
        u in prop::collection::vec(-3.0f64..3.0, 2..8),
        g in prop::collection::vec(-3.0f64..3.0, 8),
        p in 1.0f64..4.0,
    ) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3));
        let s = tangent_projector(&u, p).unwrap();
        let g = &g[..u.len()];
        let once = s.apply(g);
        let twice = s.apply(&once);
        prop_assert!(max_abs_diff(&once, &twice) < 1e-12);
        prop_assert!(dot(&once, s.normal()).abs() < 1e-10);
    }

    #[test]
    fn relu_output_scales_linearly_in_each_layer(
        spec in arch(),
        seed in any::<u64>(),
        c in 0.1f64..10.0,
    ) {
        let mut rng = substream(seed, 0);
        let net = Network::random(spec, Activation::Relu, &mut rng).unwrap();
        let x: Vec<f64> = (0..net.input_dim()).map(|i| (i as f64 + 1.0).sin()).collect();
        let f = net.eval(&x);
        for k in 0..net.layer_count() {
            let mut layers = net.layers().to_vec();
            layers[k] = layers[k].scaled(c);
            let g = net.with_layers(layers).unwrap().eval(&x);
            prop_assert!((g - c * f).abs() <= 1e-10 * (1.0 + (c * f).abs()));
        }
    }

    #[test]
    fn rho_v_decomposition_recomposes(spec in arch(), seed in any::<u64>(), p in 1.0f64..4.0) {
        let net = Network::random(spec, Activation::Relu, &mut substream(seed, 0)).unwrap();
        let d = decompose(&net, p).unwrap();
        prop_assert!(d.max_norm_deviation() < 1e-12);
        let back = d.recompose(&net).unwrap();
        prop_assert!(max_abs_diff(&back.params(), &net.params()) < 1e-12);
    }

    #[test]
    fn run_config_json_round_trips(seed in any::<u64>(), name in prop::sample::select(vec![
        "approx", "flow", "linear", "langevin", "margin", "normloss",
    ])) {
        let config = RunConfig::new(Experiment::default_for(name).unwrap(), seed);
        let text = serde_json::to_string(&config).unwrap();
        let back = RunConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &config);
        prop_assert_eq!(back.config_hash().unwrap(), config.config_hash().unwrap());
    }
}

#[test]
fn boltzmann_mass_concentrates_as_temperature_drops() {
    let pot = PotentialKind::DoubleWell.build();
    let grid = Grid2D::for_potential(&pot, 60);
    let lowest = (0..grid.bins * grid.bins)
        .min_by(|&a, &b| {
            let c = |i: usize| pot.value(grid.center(i / grid.bins, i % grid.bins));
            c(a).total_cmp(&c(b))
        })
        .unwrap();
    let mut previous = 0.0;
    for t in [1.0, 0.5, 0.2, 0.1] {
        let q = boltzmann_reference(&pot, t, &grid).unwrap();
        assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(q[lowest] > previous, "mass at the minimum must grow as T falls");
        previous = q[lowest];
    }
}

#[test]
fn euclidean_drift_is_second_order_in_the_step() {
    let data = ClassificationDataset::random_linear_separable(0, 10, 2, 0.1);
    let spec = ArchitectureSpec::Dense { input_dim: 2, hidden: vec![3], input_bias: false };
    let net = Network::random(spec, Activation::Relu, &mut substream(0, 1)).unwrap();
    let drift = |eta: f64| {
        let cfg = FlowConfig { eta, steps: (2.0 / eta) as usize, tol: 0.0, record_every: usize::MAX, ..FlowConfig::default() };
        run_flow(FlowKind::TangentConstrained { p: 2.0 }, net.clone(), &data, &cfg).unwrap().max_pre_renorm_drift
    };
    let ratio = drift(5e-4) / drift(1e-3);
    assert!((0.2..0.3).contains(&ratio), "halving the step should quarter the drift, got ratio {ratio}");
}

#[test]
fn runs_are_deterministic_and_replayable() {
    let tmp = tempfile::tempdir().unwrap();
    let params = MarginParams {
        data: DataSource::LinearSeparable { count: 8, dim: 2, gap: 0.1 },
        schedule: MarginSchedule::geometric(1.0, 8.0, 2.0, 2.0).unwrap(),
        ..MarginParams::default()
    };
    let mut config = RunConfig::new(Experiment::Margin(params), 5);
    config.out = Some(tmp.path().join("a"));
    let first = harness::run(&config).unwrap();
    config.out = Some(tmp.path().join("b"));
    let second = harness::run(&config).unwrap();
    assert_eq!(first.manifest.artifacts, second.manifest.artifacts);
    assert_eq!(first.manifest.config_hash, second.manifest.config_hash);

    let replayed = harness::replay(&first.dir.join(MANIFEST_FILE), Some(tmp.path().join("c"))).unwrap();
    assert_eq!(replayed.manifest.artifacts, first.manifest.artifacts);

    let tampered = first.dir.join("margin.json");
    std::fs::write(&tampered, "{}").unwrap();
    let manifest_text = std::fs::read_to_string(first.dir.join(MANIFEST_FILE)).unwrap();
    let edited = manifest_text.replacen(&first.manifest.artifacts[0].sha256, &"0".repeat(64), 1);
    std::fs::write(first.dir.join(MANIFEST_FILE), edited).unwrap();
    let err = harness::replay(&first.dir.join(MANIFEST_FILE), Some(tmp.path().join("d"))).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
