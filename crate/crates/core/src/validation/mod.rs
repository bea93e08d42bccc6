//! Executable correctness suite: finite-difference gradient checks,
//! statistical sampler checks, oracle equivalences, regressions for known
//! reimplementation bugs, and the feature-availability matrix built on them.

mod checks;
mod gradcheck;
pub mod reference;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use checks::{
    planted_rule_recall, run_oracle_equivalences, run_regression_checks, run_reset_check,
    run_sampler_check, sampler_check, sampler_fixture,
};
pub use gradcheck::{gradcheck, run_gradcheck_suite, GradCase, GRADCHECK_FLOOR};

pub const GRADCHECK_EPS: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-6;
pub const SAMPLER_SIGNIFICANCE: f64 = 0.01;
pub const SAMPLER_DRAWS: usize = 1_000_000;
pub const SAMPLER_ALPHAS: [f64; 4] = [0.0, 0.5, 0.75, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
    pub seed: u64,
}

impl CheckReport {
    pub fn new(name: impl Into<String>, pass: bool, measured: f64, threshold: f64, seed: u64) -> Self {
        CheckReport {
            name: name.into(),
            pass,
            measured,
            threshold,
            seed,
        }
    }

    pub fn status(&self) -> &'static str {
        if self.pass {
            "pass"
        } else {
            "fail"
        }
    }
}

pub fn reports_to_tsv(reports: &[CheckReport]) -> String {
    let mut s = String::from("check\tstatus\tmeasured\tthreshold\tseed\n");
    for r in reports {
        writeln!(s, "{}\t{}\t{:e}\t{:e}\t{}", r.name, r.status(), r.measured, r.threshold, r.seed).unwrap();
    }
    s
}

/// Everything except the negative controls, in a fixed order.
pub fn run_all(seed: u64) -> Vec<CheckReport> {
    let ((grad, sampler), (reset, (oracle, regression))) = rayon::join(
        || {
            rayon::join(
                || run_gradcheck_suite(seed),
                || run_sampler_check(&SAMPLER_ALPHAS, SAMPLER_DRAWS, seed),
            )
        },
        || {
            rayon::join(
                || run_reset_check(seed),
                || rayon::join(|| run_oracle_equivalences(seed), || run_regression_checks(seed)),
            )
        },
    );
    [grad, sampler, reset, oracle, regression].concat()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: String,
    pub supported: bool,
    /// Checks that must all be present and passing for the row to hold.
    pub witnesses: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub rows: Vec<FeatureRow>,
}

/// Feature name and the check-name prefixes that witness it.
pub const FEATURE_WITNESSES: [(&str, &[&str]); 8] = [
    ("Session-parallel mini-batches", &["oracle/iterator-pair-multiset", "reset/lineage-50-steps"]),
    ("Mini-batch negative sampling", &["training/minibatch-negatives"]),
    ("Shared extra negative sampling", &["training/candidate-count", "sampler/chi-square/"]),
    ("Cross-entropy loss", &["gradcheck/cross-entropy/", "oracle/sampled-ce-vs-full-softmax"]),
    ("BPR-max loss", &["gradcheck/bpr-max/", "loss/bpr-max-formula"]),
    ("No embedding", &["gradcheck/cross-entropy/none/", "oracle/indexed-vs-dense/none"]),
    ("Separate embedding", &["gradcheck/cross-entropy/separate/", "oracle/indexed-vs-dense/separate"]),
    ("Shared embedding", &["gradcheck/cross-entropy/shared/", "oracle/indexed-vs-dense/shared"]),
];

/// A row is supported when every witness prefix matches at least one report
/// and all matching reports pass.
pub fn emit_feature_matrix(reports: &[CheckReport]) -> FeatureMatrix {
    let rows = FEATURE_WITNESSES
        .iter()
        .map(|(feature, prefixes)| {
            let mut witnesses = Vec::new();
            let mut supported = true;
            for p in prefixes.iter() {
                let matching: Vec<&CheckReport> =
                    reports.iter().filter(|r| r.name.starts_with(p)).collect();
                supported &= !matching.is_empty() && matching.iter().all(|r| r.pass);
                witnesses.extend(matching.iter().map(|r| r.name.clone()));
            }
            FeatureRow {
                feature: feature.to_string(),
                supported,
                witnesses,
            }
        })
        .collect();
    FeatureMatrix { rows }
}

impl FeatureMatrix {
    pub fn all_supported(&self) -> bool {
        self.rows.iter().all(|r| r.supported)
    }

    /// Text table, one feature per line.
    pub fn render(&self) -> String {
        let width = self.rows.iter().map(|r| r.feature.chars().count()).max().unwrap_or(0);
        let mut s = format!("{:<width$} | this crate\n{}-+-----------\n", "Feature", "-".repeat(width));
        for r in &self.rows {
            let mark = if r.supported { "✓" } else { "✗" };
            writeln!(s, "{:<width$} | {mark}", r.feature).unwrap();
        }
        s
    }
}

/// Each injected bug must make its guarding check fail. A report passes
/// when the guard caught the fault.
#[cfg(feature = "fault-injection")]
pub fn run_negative_controls(seed: u64) -> Vec<CheckReport> {
    use crate::faults::{with_fault, Fault};
    use crate::model::EmbeddingMode;
    use crate::training::LossKind;

    let guarded = |fault: Fault, guard: &dyn Fn() -> Vec<CheckReport>| {
        let reports = with_fault(fault, guard);
        let failed: Vec<&CheckReport> = reports.iter().filter(|r| !r.pass).collect();
        let caught = !failed.is_empty();
        let measured = failed.first().map_or(0.0, |r| r.measured);
        CheckReport::new(format!("negative-control/{fault:?}"), caught, measured, 0.0, seed)
    };
    let gc = |loss, mode, n_layers| move || vec![gradcheck(GradCase { loss, mode, n_layers }, seed)];
    vec![
        guarded(Fault::FlipBackwardSign, &gc(LossKind::CrossEntropy, EmbeddingMode::Separate(4), 1)),
        guarded(Fault::FlipBackwardSign, &gc(LossKind::BprMax, EmbeddingMode::Shared, 2)),
        guarded(Fault::SkipHiddenReset, &|| run_reset_check(seed)),
        guarded(Fault::SampleAfterScoring, &|| run_regression_checks(seed)),
        guarded(Fault::DropoutAsKeepProbability, &|| run_regression_checks(seed)),
        guarded(Fault::DoubleSoftmax, &|| run_oracle_equivalences(seed)),
        guarded(Fault::WrongBprMax, &|| run_regression_checks(seed)),
        guarded(Fault::LargeInitialAccumulator, &|| run_regression_checks(seed)),
        guarded(Fault::HardCodedHyperparameters, &|| run_regression_checks(seed)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EmbeddingMode;
    use crate::training::LossKind;

    #[test]
    fn named_gradcheck_examples() {
        let ce = gradcheck(
            GradCase {
                loss: LossKind::CrossEntropy,
                mode: EmbeddingMode::Separate(4),
                n_layers: 1,
            },
            7,
        );
        assert!(ce.pass, "{ce:?}");
        let bpr = gradcheck(
            GradCase {
                loss: LossKind::BprMax,
                mode: EmbeddingMode::Shared,
                n_layers: 2,
            },
            7,
        );
        assert!(bpr.pass, "{bpr:?}");
    }

    #[test]
    fn reset_and_oracles_pass() {
        for r in run_reset_check(3).into_iter().chain(run_oracle_equivalences(3)) {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn regression_checks_pass() {
        for r in run_regression_checks(5) {
            assert!(r.pass, "{r:?}");
        }
    }

    #[test]
    fn matrix_rows_follow_witnesses() {
        let reports: Vec<CheckReport> = FEATURE_WITNESSES
            .iter()
            .flat_map(|(_, w)| w.iter().map(|p| CheckReport::new(format!("{p}x"), true, 0.0, 0.0, 0)))
            .collect();
        let m = emit_feature_matrix(&reports);
        assert_eq!(m.rows.len(), 8);
        assert!(m.all_supported());

        let without_shared: Vec<CheckReport> = reports
            .into_iter()
            .filter(|r| !r.name.starts_with("oracle/indexed-vs-dense/shared"))
            .collect();
        let m = emit_feature_matrix(&without_shared);
        assert!(!m.rows[7].supported);
        assert!(m.rows[..7].iter().all(|r| r.supported));
        assert!(m.render().contains('✗'));
    }
}
