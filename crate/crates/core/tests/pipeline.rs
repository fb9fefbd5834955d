use dm2l_core::dataset::{apply_mask, generate_mask, generate_synthetic, generate_xor, FeatureScaler, SyntheticSpec};
use dm2l_core::experiment::{
    fit_method, run_experiment, DataSource, ExperimentConfig, Hyper, Method, SyntheticKind, SyntheticSource,
};
use dm2l_core::metrics::evaluate_all;
use dm2l_core::model::{read_model, write_model};
use dm2l_core::optimizer::CccpConfig;

fn small_solver() -> CccpConfig {
    CccpConfig {
        max_outer: 10,
        max_inner: 60,
        ..CccpConfig::default()
    }
}

#[test]
fn gaussian_kernel_separates_xor_where_linear_cannot() {
    let ds = generate_xor(120, 2, 2, 0.0, 7).unwrap();
    let scaler = FeatureScaler::fit(ds.features()).unwrap();
    let x = scaler.transform(ds.features()).unwrap();
    let observed = apply_mask(ds.labels(), &generate_mask(120, 2, 1.0, 1).unwrap()).unwrap();
    let auc = |method, sigma| {
        let fitted = fit_method(method, &x, &observed, Hyper { lambda: 1e-2, sigma }, &small_solver(), scaler.clone())
            .unwrap();
        let scores = fitted.model.predict_scores(ds.features()).unwrap();
        evaluate_all(&scores, ds.labels()).unwrap().macro_auc
    };
    let kernel = auc(Method::Dm2lKernel, Some(0.5));
    let linear = auc(Method::Dm2lLinear, None);
    assert!(kernel >= 0.95, "kernel auc {kernel}");
    assert!(linear <= 0.7, "linear auc {linear}");
}

#[test]
fn trained_model_round_trips_through_bytes() {
    let spec = SyntheticSpec {
        n: 60,
        d: 5,
        c: 4,
        rank: 2,
        noise: 0.1,
        seed: 9,
    };
    let ds = generate_synthetic(&spec).unwrap();
    let scaler = FeatureScaler::fit(ds.features()).unwrap();
    let x = scaler.transform(ds.features()).unwrap();
    let observed = apply_mask(ds.labels(), &generate_mask(60, 4, 0.5, 2).unwrap()).unwrap();
    let fitted = fit_method(Method::Dm2lLinear, &x, &observed, Hyper { lambda: 0.1, sigma: None }, &small_solver(), scaler)
        .unwrap();
    let mut bytes = Vec::new();
    write_model(&fitted.model, &mut bytes).unwrap();
    let back = read_model(bytes.as_slice()).unwrap();
    assert_eq!(
        back.predict_scores(ds.features()).unwrap(),
        fitted.model.predict_scores(ds.features()).unwrap()
    );
}

#[test]
fn experiments_are_reproducible_across_thread_counts() {
    let cfg = ExperimentConfig {
        data: DataSource::Synthetic(SyntheticSource {
            kind: SyntheticKind::LowRank,
            spec: SyntheticSpec {
                n: 60,
                d: 5,
                c: 4,
                rank: 2,
                noise: 0.1,
                seed: 5,
            },
        }),
        methods: vec![Method::Dm2lLinear, Method::GlobalOnly],
        rhos: vec![0.5],
        repetitions: 3,
        lambda_grid: vec![0.1, 1.0],
        cv_folds: 2,
        solver: CccpConfig {
            max_outer: 4,
            max_inner: 20,
            ..CccpConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let parallel = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let a = serial.install(|| run_experiment(&cfg)).unwrap();
    let b = parallel.install(|| run_experiment(&cfg)).unwrap();
    assert_eq!(a.records(), b.records());
    assert_eq!(a.records().len(), 6);
}
