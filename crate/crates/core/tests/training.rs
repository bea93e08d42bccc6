use gru4rec::corpus::SessionCorpus;
use gru4rec::synthetic::{self, PlantedRule};
use gru4rec::training::{LossKind, TrainConfig, Trainer};
use gru4rec::validation::{self, planted_rule_recall};

#[test]
fn planted_rule_is_learned_in_five_epochs() {
    for seed in [1, 2, 3] {
        let (recall, losses) = planted_rule_recall(seed, 5);
        assert!(recall > 0.9, "seed {seed}: recall@1 {recall}, losses {losses:?}");
    }
}

#[test]
fn loss_decreases_over_first_hundred_steps() {
    let rule = PlantedRule::new(20, 4);
    let corpus = synthetic::corpus(20, &rule.sessions(400, 3, 8, 5));
    for loss in [LossKind::CrossEntropy, LossKind::BprMax] {
        let mut cfg = TrainConfig {
            loss,
            layers: vec![32],
            batch_size: 16,
            n_sample: 8,
            learning_rate: 0.1,
            sample_cache: 10_000,
            ..TrainConfig::default()
        };
        if loss == LossKind::BprMax {
            cfg.final_act = "elu-0.5".parse().unwrap();
            cfg.bpreg = 0.1;
        }
        let mut trainer = Trainer::<f32>::new(&corpus, cfg.clone()).unwrap();
        let mut hidden = trainer.new_hidden();
        let losses: Vec<f32> = corpus
            .batches(cfg.batch_size)
            .take(100)
            .map(|mut b| trainer.train_step(&mut hidden, &mut b).unwrap())
            .collect();
        assert_eq!(losses.len(), 100);
        let head: f32 = losses[..10].iter().sum::<f32>() / 10.0;
        let tail: f32 = losses[90..].iter().sum::<f32>() / 10.0;
        assert!(tail < 0.7 * head, "{loss}: first 10 mean {head}, last 10 mean {tail}");
    }
}

#[test]
fn single_candidate_step_has_zero_loss() {
    let corpus = SessionCorpus::from_sessions(5, &[vec![0, 1, 2]]).unwrap();
    let cfg = TrainConfig {
        layers: vec![4],
        batch_size: 1,
        n_sample: 0,
        sample_cache: 10,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::<f64>::new(&corpus, cfg).unwrap();
    let mut hidden = trainer.new_hidden();
    for mut b in corpus.batches(1) {
        assert_eq!(trainer.train_step(&mut hidden, &mut b).unwrap(), 0.0);
        assert_eq!(trainer.counters().last_candidates, 1);
    }
}

#[test]
fn full_suite_passes_and_every_feature_is_supported() {
    let reports = validation::run_all(11);
    let failed: Vec<_> = reports.iter().filter(|r| !r.pass).collect();
    assert!(failed.is_empty(), "{failed:?}");
    let matrix = validation::emit_feature_matrix(&reports);
    assert_eq!(matrix.rows.len(), 8);
    assert!(matrix.all_supported(), "{}", matrix.render());
    assert!(!matrix.render().contains('✗'));
}

#[test]
fn every_injected_bug_is_caught() {
    for r in validation::run_negative_controls(11) {
        assert!(r.pass, "{} went unnoticed", r.name);
    }
}
