use meta_semi::data::{build_dataset, DatasetSource, DatasetSpec, LabelBudget, SplitDataset};
use meta_semi::diagnostics::assumption_ratio;
use meta_semi::train::{lr_at, train, Method, Schedule, TrainConfig, TrainState};

fn moons(seed: u64) -> SplitDataset {
    build_dataset(
        &DatasetSpec {
            source: DatasetSource::TwoMoons { n: 240, noise: 0.1 },
            labels_per_class: LabelBudget::PerClass(3),
            val_fraction: 0.0,
            n_test: 200,
            test_fraction: 0.0,
            standardize: true,
        },
        seed,
    )
    .unwrap()
}

fn cfg(method: Method) -> TrainConfig {
    TrainConfig {
        hidden: vec![8, 8],
        epochs: 4,
        method,
        ..TrainConfig::default()
    }
}

#[test]
fn supervised_baselines_ignore_unlabeled_inputs() {
    let data = moons(1);
    let mut scrambled = data.clone();
    for u in &mut scrambled.unlabeled {
        u.iter_mut().for_each(|v| *v = -*v * 3.0);
    }
    for m in [Method::Supervised, Method::SupervisedMixup] {
        let (a, ha) = train(&cfg(m), &data).unwrap();
        let (b, hb) = train(&cfg(m), &scrambled).unwrap();
        assert_eq!(a.student, b.student, "{}", m.name());
        assert_eq!(ha, hb);
        assert!(ha.iter().all(|r| r.selected_fraction.is_none()));
    }
}

#[test]
fn meta_semi_uses_unlabeled_inputs() {
    let data = moons(2);
    let mut shifted = data.clone();
    shifted.unlabeled[0][0] += 0.5;
    let (a, _) = train(&cfg(Method::MetaSemi), &data).unwrap();
    let (b, _) = train(&cfg(Method::MetaSemi), &shifted).unwrap();
    assert_ne!(a.student, b.student);
}

#[test]
fn without_ema_the_teacher_decay_is_irrelevant_to_the_student() {
    let data = moons(3);
    let mut c = cfg(Method::MetaSemi);
    c.flags.no_ema = true;
    let (a, _) = train(&c, &data).unwrap();
    c.ema_decay = 0.5;
    let (b, _) = train(&c, &data).unwrap();
    assert_eq!(a.student, b.student);
    assert_ne!(a.teacher.params, b.teacher.params);

    // with the teacher in the loop the decay matters
    let mut c = cfg(Method::MetaSemi);
    let (a, _) = train(&c, &data).unwrap();
    c.ema_decay = 0.5;
    let (b, _) = train(&c, &data).unwrap();
    assert_ne!(a.student, b.student);
}

#[test]
fn metrics_are_well_formed() {
    let data = moons(4);
    for m in Method::ALL {
        let c = TrainConfig {
            assumption_mc: 3,
            ..cfg(m)
        };
        let (state, hist) = train(&c, &data).unwrap();
        assert_eq!(hist.len(), c.epochs);
        let ipe = data.unlabeled.len().div_ceil(c.unlabeled_batch);
        assert_eq!(state.t, ipe * c.epochs);
        for (i, r) in hist.iter().enumerate() {
            assert_eq!(r.epoch, i + 1);
            assert!(r.meta_loss.is_finite());
            assert!((0.0..=1.0).contains(&r.student_test_error));
            assert!((0.0..=1.0).contains(&r.teacher_test_error));
            let last_t = (i + 1) * ipe - 1;
            assert_eq!(
                r.lr,
                lr_at(Schedule::Cosine, c.alpha0, last_t, ipe * c.epochs)
            );
            let ratio = r.assumption_ratio.unwrap();
            assert!(ratio.is_finite() && ratio >= 0.0);
            if let Some(f) = r.selected_fraction {
                assert!((0.0..=1.0).contains(&f));
            }
            if let Some(p) = r.selection_precision {
                assert!((0.0..=1.0).contains(&p));
            }
        }
    }
}

#[test]
fn assumption_ratio_ignores_thread_count() {
    let data = moons(5);
    let c = cfg(Method::MetaSemi);
    let state = TrainState::new(&c, c.arch(2, 2).unwrap()).unwrap();
    let with = |n: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .unwrap()
            .install(|| assumption_ratio(&state, &c, &data, 16, 3).unwrap())
    };
    assert_eq!(with(1), with(4));
}

#[test]
fn fully_labeled_data_trains_without_unlabeled_pool() {
    let data = build_dataset(
        &DatasetSpec {
            source: DatasetSource::Blobs {
                n: 60,
                centers: vec![vec![-2.0, 0.0], vec![2.0, 0.0], vec![0.0, 3.0]],
                std: 0.3,
            },
            labels_per_class: LabelBudget::All,
            val_fraction: 0.0,
            n_test: 60,
            test_fraction: 0.0,
            standardize: true,
        },
        0,
    )
    .unwrap();
    assert!(data.unlabeled.is_empty());
    let c = TrainConfig {
        hidden: vec![],
        epochs: 30,
        ..cfg(Method::MetaSemi)
    };
    let (state, hist) = train(&c, &data).unwrap();
    assert_eq!(state.t, 30 * 60usize.div_ceil(8));
    assert!(hist.last().unwrap().student_test_error < 0.05);
    assert!(hist.iter().all(|r| r.selection_precision.is_none()));
}

#[test]
fn invalid_configs_are_rejected_before_training() {
    let data = moons(6);
    for bad in [
        TrainConfig {
            beta: 0.0,
            ..cfg(Method::MetaSemi)
        },
        TrainConfig {
            labeled_batch: 0,
            ..cfg(Method::MetaSemi)
        },
        TrainConfig {
            ema_decay: 1.5,
            ..cfg(Method::MetaSemi)
        },
        TrainConfig {
            momentum: 1.0,
            ..cfg(Method::MetaSemi)
        },
    ] {
        assert!(matches!(
            train(&bad, &data),
            Err(meta_semi::Error::InvalidHyperparameter(_))
        ));
    }
}
