//! Transition counting and benchmark metric computation.
//!
//! All percentages are computed exactly on counts and rounded only at
//! render time, so the two Gain identities (Critic - Initial and
//! Correction - Sycophancy) cannot disagree internally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{Quadrant, Trajectory};

/// 2x2 counts of (S0, S1) correctness pairs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionMatrix {
    /// Both wrong (Boundary).
    pub n00: usize,
    /// Wrong then correct (Correction).
    pub n01: usize,
    /// Correct then wrong (Sycophancy).
    pub n10: usize,
    /// Both correct (Robustness).
    pub n11: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("cannot compute metrics from an empty trajectory list")]
    EmptyInput,
}

impl TransitionMatrix {
    pub fn total(&self) -> usize {
        self.n00 + self.n01 + self.n10 + self.n11
    }

    pub fn count_of(&self, q: Quadrant) -> usize {
        match q {
            Quadrant::Boundary => self.n00,
            Quadrant::Correction => self.n01,
            Quadrant::Sycophancy => self.n10,
            Quadrant::Robustness => self.n11,
        }
    }

    pub fn record(&mut self, q: Quadrant) {
        match q {
            Quadrant::Boundary => self.n00 += 1,
            Quadrant::Correction => self.n01 += 1,
            Quadrant::Sycophancy => self.n10 += 1,
            Quadrant::Robustness => self.n11 += 1,
        }
    }

    pub fn merge(&mut self, other: &TransitionMatrix) {
        self.n00 += other.n00;
        self.n01 += other.n01;
        self.n10 += other.n10;
        self.n11 += other.n11;
    }
}

/// Tallies judged trajectories into a transition matrix. Tail-completed
/// samples are counted like any other.
pub fn transition_matrix(trajectories: &[Trajectory]) -> Result<TransitionMatrix, MetricsError> {
    if trajectories.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut m = TransitionMatrix::default();
    for t in trajectories {
        m.record(t.quadrant);
    }
    Ok(m)
}

/// One benchmark result row, as exact percentages.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub initial_pct: f64,
    pub critic_pct: f64,
    pub gain_pct: f64,
    pub correction_pct: f64,
    pub sycophancy_pct: f64,
    pub n: usize,
}

/// Computes the benchmark metrics from a transition matrix.
pub fn compute_metrics(m: &TransitionMatrix) -> Result<MetricsRow, MetricsError> {
    let n = m.total();
    if n == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let pct = |count: usize| 100.0 * count as f64 / n as f64;
    let initial_pct = pct(m.n10 + m.n11);
    let critic_pct = pct(m.n01 + m.n11);
    Ok(MetricsRow {
        initial_pct,
        critic_pct,
        gain_pct: critic_pct - initial_pct,
        correction_pct: pct(m.n01),
        sycophancy_pct: pct(m.n10),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Markdown,
    Csv,
    PlainTable,
}

/// A labeled report entry: method, benchmark, metrics.
pub type ReportRow = (String, String, MetricsRow);

/// Renders labeled metric rows. Deterministic; percentages to two
/// decimals; Gain with explicit sign; the decomposition as "+X.XX-Y.YY".
pub fn render_report(rows: &[ReportRow], format: ReportFormat) -> String {
    assert!(!rows.is_empty(), "report needs at least one row");
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("method,benchmark,N,initial,gain,correction,sycophancy,critic\n");
            for (method, benchmark, m) in rows {
                out.push_str(&format!(
                    "{},{},{},{:.2},{:+.2},{:.2},{:.2},{:.2}\n",
                    method, benchmark, m.n, m.initial_pct, m.gain_pct, m.correction_pct,
                    m.sycophancy_pct, m.critic_pct
                ));
            }
            out
        }
        ReportFormat::Markdown => {
            let mut out = String::from(
                "| Method | Benchmark | N | Initial | Gain | +Corr.-Syc. | Critic |\n\
                 |---|---|---|---|---|---|---|\n",
            );
            for (method, benchmark, m) in rows {
                out.push_str(&format!(
                    "| {} | {} | {} | {:.2} | {:+.2} | {} | {:.2} |\n",
                    method, benchmark, m.n, m.initial_pct, m.gain_pct,
                    corr_syc_cell(m), m.critic_pct
                ));
            }
            out
        }
        ReportFormat::PlainTable => {
            let mut out = format!(
                "{:<16} {:<12} {:>6} {:>8} {:>8} {:>14} {:>8}\n",
                "Method", "Benchmark", "N", "Initial", "Gain", "+Corr.-Syc.", "Critic"
            );
            for (method, benchmark, m) in rows {
                out.push_str(&format!(
                    "{:<16} {:<12} {:>6} {:>8.2} {:>+8.2} {:>14} {:>8.2}\n",
                    method, benchmark, m.n, m.initial_pct, m.gain_pct,
                    corr_syc_cell(m), m.critic_pct
                ));
            }
            out
        }
    }
}

fn corr_syc_cell(m: &MetricsRow) -> String {
    format!("+{:.2}-{:.2}", m.correction_pct, m.sycophancy_pct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{
        Attitude, CorrectnessPair, FeedbackTemplate, FormatFlags, Solution, Stage, Trajectory,
    };
    use proptest::prelude::*;

    fn trajectory(pair: CorrectnessPair) -> Trajectory {
        Trajectory::new(
            "q",
            0,
            Solution::new("<think>a</think>\nA", Stage::Initial),
            FeedbackTemplate {
                attitude: Attitude::Neutral,
                template_text: "check".into(),
            },
            Solution::new("<think>a</think>\nB", Stage::Critic),
            pair,
            false,
            FormatFlags::new(),
            FormatFlags::new(),
        )
        .unwrap()
    }

    #[test]
    fn tallies_each_pair() {
        let ts: Vec<Trajectory> = [(false, true), (true, false), (true, true), (false, false)]
            .into_iter()
            .map(|(s0, s1)| trajectory(CorrectnessPair::new(s0, s1)))
            .collect();
        let m = transition_matrix(&ts).unwrap();
        assert_eq!(m, TransitionMatrix { n00: 1, n01: 1, n10: 1, n11: 1 });

        let all_rob: Vec<Trajectory> =
            (0..5).map(|_| trajectory(CorrectnessPair::new(true, true))).collect();
        let m = transition_matrix(&all_rob).unwrap();
        assert_eq!(m, TransitionMatrix { n00: 0, n01: 0, n10: 0, n11: 5 });

        assert_eq!(transition_matrix(&[]).unwrap_err(), MetricsError::EmptyInput);
    }

    #[test]
    fn headline_row_back_derivation() {
        // N=200, 101 initially correct, 33 corrections, 12 sycophancy.
        let m = TransitionMatrix { n00: 66, n01: 33, n10: 12, n11: 89 };
        assert_eq!(m.total(), 200);
        let row = compute_metrics(&m).unwrap();
        assert!((row.initial_pct - 50.50).abs() < 1e-9);
        assert!((row.correction_pct - 16.50).abs() < 1e-9);
        assert!((row.sycophancy_pct - 6.00).abs() < 1e-9);
        assert!((row.gain_pct - 10.50).abs() < 1e-9);
        assert!((row.critic_pct - 61.00).abs() < 1e-9);
    }

    #[test]
    fn gain_cancels_when_counts_match() {
        let m = TransitionMatrix { n00: 10, n01: 7, n10: 7, n11: 20 };
        let row = compute_metrics(&m).unwrap();
        assert!(row.gain_pct.abs() < 1e-12);
    }

    #[test]
    fn single_sample_identity() {
        let m = TransitionMatrix { n00: 0, n01: 1, n10: 0, n11: 0 };
        let row = compute_metrics(&m).unwrap();
        assert_eq!(row.initial_pct, 0.0);
        assert_eq!(row.critic_pct, 100.0);
        assert_eq!(row.gain_pct, 100.0);
    }

    #[test]
    fn rendering_formats() {
        let m = TransitionMatrix { n00: 66, n01: 33, n10: 12, n11: 89 };
        let row = compute_metrics(&m).unwrap();
        let rows = vec![("recrit".to_string(), "chembench".to_string(), row)];
        let md = render_report(&rows, ReportFormat::Markdown);
        assert!(md.contains("+16.50-6.00"));
        assert!(md.contains("+10.50"));
        let csv = render_report(&rows, ReportFormat::Csv);
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().starts_with("recrit,chembench,200,50.50,+10.50"));
        // determinism
        assert_eq!(md, render_report(&rows, ReportFormat::Markdown));
        let plain = render_report(&rows, ReportFormat::PlainTable);
        assert!(plain.contains("+16.50-6.00"));
    }

    proptest! {
        // Count identity and both Gain identities, exact at count level.
        #[test]
        fn gain_identities(n00 in 0usize..100, n01 in 0usize..100,
                           n10 in 0usize..100, n11 in 0usize..100) {
            prop_assume!(n00 + n01 + n10 + n11 > 0);
            let m = TransitionMatrix { n00, n01, n10, n11 };
            let row = compute_metrics(&m).unwrap();
            let critic_count = n01 + n11;
            let initial_count = n10 + n11;
            prop_assert_eq!(critic_count, initial_count + n01 - n10);
            let via_counts = 100.0 * (n01 as f64 - n10 as f64) / m.total() as f64;
            prop_assert!((row.gain_pct - via_counts).abs() < 1e-9);
            prop_assert!(
                (row.gain_pct - (row.correction_pct - row.sycophancy_pct)).abs() < 1e-9
            );
        }

        #[test]
        fn permutation_invariant(pairs in prop::collection::vec((any::<bool>(), any::<bool>()), 1..30)) {
            let ts: Vec<Trajectory> = pairs
                .iter()
                .map(|&(s0, s1)| trajectory(CorrectnessPair::new(s0, s1)))
                .collect();
            let mut reversed = ts.clone();
            reversed.reverse();
            prop_assert_eq!(
                transition_matrix(&ts).unwrap(),
                transition_matrix(&reversed).unwrap()
            );
        }
    }
}
