use nnkit::Parallelism;
use nsv::datasets::{generate_dataset, Dataset, DatasetConfig, Split};
use nsv::evaluate::evaluate_prediction;
use nsv::stage1::{
    collect_latents, desk_v1, pixel_baseline, pixel_baseline_mse, train_stage1, Stage1Config,
    Stage1Error, Stage1Model,
};
use nsv::statevars::{
    encode_nsv, train_latent_dynamics, train_stage2, DenseTrainConfig, LatentDynamicsModel,
    Stage2Model, StateVarError,
};
use nsv::systems::{
    render, BaselineKind, FramePair, StateVector, SystemKind, SystemSpec, Variable,
};
use nsv::table::SampleRows;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODE: Parallelism = Parallelism::Parallel;

fn data(kind: SystemKind, trajectories: usize, steps: usize, size: usize) -> Dataset {
    let cfg = DatasetConfig {
        trajectories,
        steps,
        size,
        seed: 11,
        ..Default::default()
    };
    generate_dataset(&SystemSpec::preset(kind), &cfg, MODE).unwrap()
}

fn pair(spec: &SystemSpec, theta: f64, size: usize) -> FramePair {
    let a = render(spec, &StateVector(vec![theta, 0.0]), size).unwrap();
    let b = render(spec, &StateVector(vec![theta + 0.02, 0.0]), size).unwrap();
    FramePair::new(a, b).unwrap()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[test]
fn desk_v1_rejects_sizes_it_cannot_halve_three_times() {
    assert!(matches!(desk_v1(60, 8, 0), Err(Stage1Error::BadSize(60))));
    assert!(matches!(desk_v1(16, 8, 0), Err(Stage1Error::BadSize(16))));
    assert!(desk_v1(64, 8, 0).is_ok());
}

#[test]
fn embeddings_are_pure_and_sized() {
    let m = Stage1Model::new(32, 12, 0).unwrap();
    let spec = SystemSpec::preset(SystemKind::SinglePendulum);
    let x = pair(&spec, 0.4, 32);
    let e = m.encode(&x).unwrap();
    assert_eq!(e.len(), 12);
    assert!(e.iter().all(|v| v.is_finite()));
    assert_eq!(e, m.encode(&x).unwrap());
    assert_eq!(m.predict_next(&x).unwrap(), m.predict_next(&x).unwrap());
    assert!(matches!(
        m.encode(&pair(&spec, 0.4, 64)),
        Err(Stage1Error::SizeMismatch {
            expected: 32,
            got: 64
        })
    ));
    assert!(matches!(
        m.decode(&[0.0; 3]),
        Err(Stage1Error::WidthMismatch { .. })
    ));
}

#[test]
fn nearby_states_embed_closer_than_distant_ones() {
    let m = Stage1Model::new(32, 16, 3).unwrap();
    let spec = SystemSpec::preset(SystemKind::SinglePendulum);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut near, mut far) = (0.0, 0.0);
    for _ in 0..100 {
        let t: f64 = rng.random_range(-2.0..2.0);
        let e = m.encode(&pair(&spec, t, 32)).unwrap();
        near += dist(&e, &m.encode(&pair(&spec, t + 1e-3, 32)).unwrap());
        far += dist(&e, &m.encode(&pair(&spec, t + 0.5, 32)).unwrap());
    }
    assert!(far > near, "far {far} near {near}");
}

#[test]
fn checkpoints_round_trip_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = Stage1Model::new(32, 8, 5).unwrap();
    let p = dir.path().join("s1.ckpt");
    m.save(&p, &[("note", "x".into())]).unwrap();
    let (back, meta) = Stage1Model::load(&p).unwrap();
    assert_eq!(meta.get("note"), Some("x"));
    let x = pair(&SystemSpec::preset(SystemKind::CircularMotion), 1.0, 32);
    assert_eq!(m.predict_next(&x).unwrap(), back.predict_next(&x).unwrap());

    let s2 = Stage2Model::new(8, 2, 1).unwrap();
    let q = dir.path().join("s2.ckpt");
    s2.save(&q, &[]).unwrap();
    assert_eq!(Stage2Model::load(&q).unwrap().0.encoder(), s2.encoder());
    assert!(Stage1Model::load(&q).is_err());
    assert!(matches!(
        Stage2Model::load(&p),
        Err(StateVarError::WrongCheckpoint { .. })
    ));
}

#[test]
fn copy_baseline_mse_matches_a_direct_sum() {
    let d = data(SystemKind::SinglePendulum, 6, 5, 32);
    let got = pixel_baseline_mse(&d, Split::Train, BaselineKind::Copy).unwrap();
    let (mut sum, mut n) = (0.0, 0usize);
    for r in d.samples(Split::Train) {
        let last = &d.planes(r.traj, r.t)[3 * 32 * 32..];
        let target = d.planes(r.traj, r.t + 1);
        for half in [&target[..3 * 32 * 32], &target[3 * 32 * 32..]] {
            sum += last
                .iter()
                .zip(half)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>();
            n += half.len();
        }
    }
    assert!((got - sum / n as f64).abs() < 1e-12);
    let r = d.samples(Split::Train)[0];
    let p = pixel_baseline(&d, r, BaselineKind::LinearExtrapolation).to_planes();
    assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn latent_collection_samples_without_replacement() {
    let d = data(SystemKind::SinglePendulum, 10, 8, 32);
    let m = Stage1Model::new(32, 8, 0).unwrap();
    let l = collect_latents(&m, &d, Split::Train, 10, 4, MODE).unwrap();
    assert_eq!(l.len(), 10);
    let mut idx = l.index.clone();
    idx.dedup();
    assert_eq!(idx.len(), 10);
    for (r, row) in l.index.iter().zip(&l.rows) {
        let x = FramePair::from_planes(32, &d.planes(r.traj, r.t));
        assert_eq!(&m.encode(&x).unwrap(), row);
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("l.csv");
    l.write_csv(&p, "l").unwrap();
    assert_eq!(SampleRows::read_csv(&p).unwrap(), l);
    let all = collect_latents(&m, &d, Split::Train, usize::MAX, 4, MODE).unwrap();
    assert_eq!(all.len(), d.samples(Split::Train).len());
}

#[test]
fn training_is_reproducible_and_reports_baselines() {
    let d = data(SystemKind::CircularMotion, 8, 6, 32);
    let cfg = Stage1Config {
        ld: 8,
        epochs: 2,
        batch_size: 8,
        ..Default::default()
    };
    let (a, ra) = train_stage1(&d, &cfg, Parallelism::Sequential).unwrap();
    let (b, rb) = train_stage1(&d, &cfg, Parallelism::Parallel).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a.encoder(), b.encoder());
    assert_eq!(ra.train_loss.len(), 2);
    assert_eq!(ra.train_samples, d.samples(Split::Train).len());
    assert!(ra.val_copy_mse > 0.0 && ra.val_linear_mse > 0.0 && ra.val_mse > 0.0);
    let bad = Stage1Config {
        ld: 0,
        epochs: 0,
        ..cfg
    };
    assert!(matches!(
        train_stage1(&d, &bad, MODE),
        Err(Stage1Error::Config(_))
    ));
}

#[test]
fn stage2_and_dynamics_train_on_frozen_latents() {
    let d = data(SystemKind::SinglePendulum, 10, 6, 32);
    let s1 = Stage1Model::new(32, 8, 0).unwrap();
    let cfg = DenseTrainConfig {
        epochs: 3,
        batch_size: 8,
        ..Default::default()
    };
    let (s2, rep) = train_stage2(&s1, &d, 2, &cfg, MODE).unwrap();
    assert_eq!((s2.id(), s2.ld(), rep.id), (2, 8, 2));
    assert_eq!(rep.val_loss.len(), 3);
    assert!(rep.val_pixel_mse.is_finite() && rep.val_relative_error.is_finite());
    assert!(matches!(
        train_stage2(&s1, &d, 0, &cfg, MODE),
        Err(StateVarError::Config(_))
    ));

    let x = FramePair::from_planes(32, &d.planes(0, 0));
    assert_eq!(encode_nsv(&s1, &s2, &x).unwrap().len(), 2);

    let (dy, dr) = train_latent_dynamics(&s1, &s2, &d, &cfg, MODE).unwrap();
    assert_eq!(dy.id(), 2);
    assert_eq!(dr.val_pairs, d.split_trajectories(Split::Val).len() * 3);
    assert!(dr.residual_mean >= 0.0 && dr.residual_std >= 0.0);
    assert!(matches!(
        dy.step(&[vec![0.0; 3]], MODE),
        Err(StateVarError::StateWidth { .. })
    ));

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("dyn.ckpt");
    dy.save(&p, &[]).unwrap();
    assert_eq!(LatentDynamicsModel::load(&p).unwrap(), dy);

    let wide = Stage1Model::new(32, 16, 0).unwrap();
    assert!(matches!(
        s2.check_compatible(&wide),
        Err(StateVarError::LatentWidth { .. })
    ));
}

#[test]
fn evaluation_scores_model_and_baselines_on_one_subset() {
    let d = data(SystemKind::RigidDoublePendulum, 10, 6, 64);
    let m = Stage1Model::new(64, 8, 0).unwrap();
    let r = evaluate_prediction(&m, &d, Split::Train, 12, 0, MODE).unwrap();
    assert_eq!(r.samples, 12);
    assert_eq!(r.split, Split::Train);
    for v in Variable::for_system(SystemKind::RigidDoublePendulum) {
        let e = r.errors(v).unwrap();
        assert!(e.linear.is_finite() && e.copy.is_finite());
    }
    assert!(r.errors(Variable::Z).is_none());
    // an untrained decoder does not produce readable pendulums
    assert!(r.model_rejects > 0);
    assert!(r.copy_pixel_mse > 0.0);
    let again = evaluate_prediction(&m, &d, Split::Train, 12, 0, Parallelism::Sequential).unwrap();
    assert_eq!(format!("{r:?}"), format!("{again:?}"));
}
