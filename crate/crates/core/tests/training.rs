use hetcomp::data::{split, InteractionDataset, SplitRatios};
use hetcomp::distill::{sample_negatives, train_student, TrainConfig, Variant};
use hetcomp::synth::{generate, SynthConfig};
use hetcomp::teacher::{train_teacher, TeacherConfig};
use hetcomp::{EmbeddingModel, ModelKind, TeacherTrajectory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(users: usize, items: usize, seed: u64) -> InteractionDataset {
    let cfg = SynthConfig {
        num_users: users,
        num_items: items,
        seed,
        ..Default::default()
    };
    split(&generate(&cfg), SplitRatios::default(), seed).unwrap().0
}

#[test]
fn bpr_epoch_loss_decreases() {
    let ds = small(80, 200, 1);
    let cfg = TeacherConfig {
        max_epochs: 30,
        patience: 30,
        ..TeacherConfig::new(ModelKind::Mf)
    };
    let run = train_teacher(&ds, &cfg).unwrap();
    let first = run.log[0].loss;
    let last = run.log.last().unwrap().loss;
    assert!(last < 0.8 * first, "epoch loss {first} -> {last}");
}

#[test]
fn negatives_are_uniform_over_the_pool() {
    // 25 items: 3 observed, 2 excluded, 20 left
    let ds = InteractionDataset::from_splits(25, vec![vec![0, 7, 13]], vec![vec![1]], vec![vec![2]]).unwrap();
    let exclude = [4, 20];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws = 100_000;
    let mut counts = [0usize; 25];
    for _ in 0..draws / 2 {
        let s = sample_negatives(&ds, 0, &exclude, 2, &mut rng);
        assert_eq!(s.len(), 2);
        assert_ne!(s[0], s[1]);
        for i in s {
            counts[i] += 1;
        }
    }
    for i in [0, 7, 13, 4, 20] {
        assert_eq!(counts[i], 0, "item {i} must never be drawn");
    }
    let p = 1.0 / 20.0;
    let mean = draws as f64 * p;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        if c > 0 {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "item {i}: {c} vs {mean} ± {sigma}");
        }
    }
    assert_eq!(counts.iter().filter(|&&c| c > 0).count(), 20);
}

fn teachers(ds: &InteractionDataset) -> Vec<TeacherTrajectory> {
    [ModelKind::Mf, ModelKind::Ml, ModelKind::Dnn]
        .into_iter()
        .map(|kind| {
            let cfg = TeacherConfig {
                max_epochs: 40,
                dim: 16,
                ..TeacherConfig::new(kind)
            };
            train_teacher(ds, &cfg).unwrap().trajectory
        })
        .collect()
}

#[test]
fn student_training_invariants_on_thirty_users() {
    let ds = small(30, 120, 4);
    let trajs = teachers(&ds);
    let cfg = TrainConfig {
        max_epochs: 60,
        patience: None,
        ..Default::default()
    };
    let student = EmbeddingModel::new(ModelKind::Mf, ds.num_users, ds.num_items, 6, 1);
    let out = train_student(student, &trajs, &ds, &cfg).unwrap();

    assert!(out.model.all_finite());
    assert_eq!(out.epochs_run, 60);
    assert_eq!(out.log.first().unwrap().epoch, 0);
    assert_eq!(out.log.last().unwrap().epoch, 60);
    assert!(out.log.last().unwrap().d50 < out.log[0].d50);
    for w in out.v_history.windows(2) {
        for (a, b) in w[0].1.iter().zip(&w[1].1) {
            assert!(a.iter().zip(b).all(|(x, y)| x <= y), "v decreased");
        }
    }
    for row in &out.state.v {
        assert!(row.iter().all(|&v| (1..=4).contains(&v)));
    }
    for (u, t) in out.traces.iter().enumerate() {
        assert_eq!(t.converged_epoch.is_some(), out.state.all_converged(u));
        if let Some(c) = t.converged_epoch {
            assert_eq!(t.first_fine_epoch, Some(c.max(1)));
            assert!(t.last_overall_epoch.is_none_or(|o| o < c));
        } else {
            assert!(t.first_fine_epoch.is_none());
        }
    }
    for (p_plus, train) in out.targets.p_plus.iter().zip(&ds.train_items) {
        let mut sorted = p_plus.clone();
        sorted.sort_unstable();
        assert_eq!(&sorted, train, "P+ must be a permutation of the observed items");
    }
}

#[test]
fn every_variant_runs_and_rrd_never_moves_the_curriculum() {
    let ds = small(30, 120, 5);
    let trajs = teachers(&ds);
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            max_epochs: 20,
            variant,
            ..Default::default()
        };
        let student = EmbeddingModel::new(ModelKind::Mf, ds.num_users, ds.num_items, 6, 2);
        let out = train_student(student, &trajs, &ds, &cfg).unwrap();
        assert!(out.model.all_finite(), "{variant}");
        if !variant.uses_curriculum() {
            assert!(out.state.v.iter().flatten().all(|&v| v == 4), "{variant}");
        }
    }
}
