//! Benchmark metrics for point-wise affordance heatmaps: AUC, aIoU, SIM
//! and MAE, plus aggregation into a per-affordance report.
//!
//! Ground truth is binarized at “score > 0” for AUC and aIoU — a zero
//! annotation means the point does not carry the affordance, so zero is
//! the only principled cut. Samples whose ground truth is all-positive or
//! all-negative cannot support a ranking metric and are skipped with
//! explicit accounting rather than silently dropped.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// aIoU threshold sweep: i/20 for i in 1..=19. Declared here and printed
/// in every report header so numbers stay comparable across runs.
pub const AIOU_THRESHOLDS: usize = 19;

pub fn aiou_threshold(i: usize) -> f64 {
    debug_assert!((1..=AIOU_THRESHOLDS).contains(&i));
    i as f64 / 20.0
}

/// Rank-based (Mann-Whitney) AUC with midrank tie handling. Returns `None`
/// when the binarized ground truth has no positives or no negatives.
pub fn auc(pred: &[f64], gt: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), gt.len(), "auc: length mismatch");
    let n = pred.len();
    let n_pos = gt.iter().filter(|&&g| g > 0.0).count();
    if n_pos == 0 || n_pos == n {
        return None;
    }
    let n_neg = n - n_pos;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| pred[a].partial_cmp(&pred[b]).unwrap());
    // midranks over tied prediction values
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && pred[order[j + 1]] == pred[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if gt[idx] > 0.0 {
                rank_sum_pos += midrank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

/// Average IoU over the fixed threshold sweep. Prediction is binarized at
/// “p ≥ τ”, ground truth at “> 0”; an empty union counts as IoU 1.
pub fn aiou(pred: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "aiou: length mismatch");
    let mut acc = 0.0;
    for i in 1..=AIOU_THRESHOLDS {
        let tau = aiou_threshold(i);
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&p, &g) in pred.iter().zip(gt) {
            let bp = p >= tau;
            let bg = g > 0.0;
            if bp && bg {
                inter += 1;
            }
            if bp || bg {
                union += 1;
            }
        }
        acc += if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        };
    }
    acc / AIOU_THRESHOLDS as f64
}

/// Histogram-intersection similarity of the sum-normalized maps. `None`
/// when the ground truth has no mass; 0 when only the prediction is empty.
pub fn sim(pred: &[f64], gt: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), gt.len(), "sim: length mismatch");
    let gt_sum: f64 = gt.iter().sum();
    if gt_sum <= 0.0 {
        return None;
    }
    let pred_sum: f64 = pred.iter().sum();
    if pred_sum <= 0.0 {
        return Some(0.0);
    }
    let mut acc = 0.0;
    for (&p, &g) in pred.iter().zip(gt) {
        acc += (p / pred_sum).min(g / gt_sum);
    }
    Some(acc)
}

/// Mean absolute error over points of a single sample.
pub fn mae(pred: &[f64], gt: &[f64]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "mae: length mismatch");
    let n = pred.len().max(1);
    pred.iter().zip(gt).map(|(p, g)| (p - g).abs()).sum::<f64>() / n as f64
}

/// Aggregated metrics for one group of samples.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct MetricRow {
    pub auc: f64,
    pub aiou: f64,
    pub sim: f64,
    pub mae: f64,
    /// Samples contributing to aIoU/MAE (every sample).
    pub count: usize,
    pub auc_skipped: usize,
    pub sim_skipped: usize,
}

/// Full evaluation output: overall means, a per-affordance breakdown, and
/// the skip accounting.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricReport {
    pub overall: MetricRow,
    pub per_affordance: BTreeMap<String, MetricRow>,
    /// Human-readable description of the aIoU binarization protocol.
    pub threshold_sweep: String,
}

#[derive(Default)]
struct Accum {
    auc_sum: f64,
    auc_n: usize,
    auc_skipped: usize,
    sim_sum: f64,
    sim_n: usize,
    sim_skipped: usize,
    aiou_sum: f64,
    mae_sum: f64,
    count: usize,
}

impl Accum {
    fn add(&mut self, pred: &[f64], gt: &[f64]) {
        match auc(pred, gt) {
            Some(a) => {
                self.auc_sum += a;
                self.auc_n += 1;
            }
            None => self.auc_skipped += 1,
        }
        match sim(pred, gt) {
            Some(s) => {
                self.sim_sum += s;
                self.sim_n += 1;
            }
            None => self.sim_skipped += 1,
        }
        self.aiou_sum += aiou(pred, gt);
        self.mae_sum += mae(pred, gt);
        self.count += 1;
    }

    fn row(&self) -> MetricRow {
        let safe = |sum: f64, n: usize| if n == 0 { 0.0 } else { sum / n as f64 };
        MetricRow {
            auc: safe(self.auc_sum, self.auc_n),
            aiou: safe(self.aiou_sum, self.count),
            sim: safe(self.sim_sum, self.sim_n),
            mae: safe(self.mae_sum, self.count),
            count: self.count,
            auc_skipped: self.auc_skipped,
            sim_skipped: self.sim_skipped,
        }
    }
}

/// Streaming aggregator over (affordance, prediction, ground-truth) triples.
#[derive(Default)]
pub struct MetricAccumulator {
    overall: Accum,
    per_affordance: BTreeMap<String, Accum>,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, affordance: &str, pred: &[f64], gt: &[f64]) {
        self.overall.add(pred, gt);
        self.per_affordance
            .entry(affordance.to_string())
            .or_default()
            .add(pred, gt);
    }

    pub fn count(&self) -> usize {
        self.overall.count
    }

    pub fn report(&self) -> MetricReport {
        MetricReport {
            overall: self.overall.row(),
            per_affordance: self
                .per_affordance
                .iter()
                .map(|(k, v)| (k.clone(), v.row()))
                .collect(),
            threshold_sweep: format!(
                "aIoU sweep: {} thresholds at i/20 for i in 1..={}; pred binarized at p >= tau, gt at > 0",
                AIOU_THRESHOLDS, AIOU_THRESHOLDS
            ),
        }
    }
}

/// Evaluate a model over dataset records: deterministic 1:1 pairing in a
/// seeded order, eval-mode forwards, the four metrics aggregated overall
/// and per affordance.
pub fn evaluate(
    model: &mut crate::netblocks::LMAffordance3D,
    root: &std::path::Path,
    records: &[crate::dataio::SampleRecord],
    batch_size: usize,
    eval_seed: u64,
) -> Result<MetricReport, crate::trainer::TrainError> {
    use crate::dataio::PairingSampler;
    use crate::trainer::{predict_batch, LoadedPart, TrainError};
    if records.is_empty() {
        return Err(TrainError::Invalid("empty evaluation set".into()));
    }
    let part = LoadedPart::load(root, records, &model.cfg)?;
    let sampler = PairingSampler::new(&part.records, false, 1, eval_seed)?;
    let steps = sampler.epoch(&part.records, 0);
    let mut acc = MetricAccumulator::new();
    for chunk in steps.chunks(batch_size.max(1)) {
        let idxs: Vec<usize> = chunk.iter().map(|s| s.image_idx).collect();
        let preds = predict_batch(model, &part, &idxs)?;
        for (&i, pred) in idxs.iter().zip(&preds) {
            acc.add(&part.records[i].affordance, pred, &part.samples[i].target);
        }
    }
    Ok(acc.report())
}

/// Write `report.json` and `report.txt` under `dir`.
pub fn write_report(
    report: &MetricReport,
    dir: &std::path::Path,
    title: &str,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("report.json"), json)?;
    std::fs::write(dir.join("report.txt"), report.to_table(title))?;
    Ok(())
}

impl MetricReport {
    /// Plain-text grid: one row per metric, then the per-affordance table.
    pub fn to_table(&self, title: &str) -> String {
        let mut s = String::new();
        s.push_str(&format!("== {title} ==\n"));
        s.push_str(&format!("{}\n", self.threshold_sweep));
        s.push_str(&format!(
            "samples: {} (auc skipped: {}, sim skipped: {})\n\n",
            self.overall.count, self.overall.auc_skipped, self.overall.sim_skipped
        ));
        s.push_str("metric   overall\n");
        s.push_str(&format!("AUC      {:.4}\n", self.overall.auc));
        s.push_str(&format!("aIoU     {:.4}\n", self.overall.aiou));
        s.push_str(&format!("SIM      {:.4}\n", self.overall.sim));
        s.push_str(&format!("MAE      {:.4}\n", self.overall.mae));
        if !self.per_affordance.is_empty() {
            s.push_str("\naffordance        AUC     aIoU    SIM     MAE     n\n");
            for (name, row) in &self.per_affordance {
                s.push_str(&format!(
                    "{:<16}  {:.4}  {:.4}  {:.4}  {:.4}  {}\n",
                    name, row.auc, row.aiou, row.sim, row.mae, row.count
                ));
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn auc_perfect_ranking_is_one() {
        let gt = vec![1.0, 0.7, 0.0, 0.0];
        let pred = vec![0.9, 0.8, 0.3, 0.1];
        assert_eq!(auc(&pred, &gt), Some(1.0));
    }

    #[test]
    fn auc_constant_prediction_is_half() {
        let gt = vec![1.0, 0.0, 1.0, 0.0, 0.0];
        let pred = vec![0.4; 5];
        assert_eq!(auc(&pred, &gt), Some(0.5));
    }

    #[test]
    fn auc_hand_example_three_quarters() {
        let gt = vec![1.0, 1.0, 0.0, 0.0];
        let pred = vec![0.9, 0.4, 0.6, 0.1];
        // pairs: (0.9 vs 0.6, 0.1) both correct; (0.4 vs 0.6) wrong, (0.4 vs 0.1) correct
        assert_eq!(auc(&pred, &gt), Some(0.75));
    }

    #[test]
    fn auc_degenerate_gt_skips() {
        assert_eq!(auc(&[0.5, 0.6], &[1.0, 1.0]), None);
        assert_eq!(auc(&[0.5, 0.6], &[0.0, 0.0]), None);
    }

    #[test]
    fn auc_invariant_under_monotone_rescale() {
        let mut rng = Rng::new(1);
        for _ in 0..20 {
            let n = 16;
            let pred: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let gt: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.uniform() < 0.4 {
                        rng.uniform()
                    } else {
                        0.0
                    }
                })
                .collect();
            let scaled: Vec<f64> = pred.iter().map(|p| p * 7.3).collect();
            assert_eq!(auc(&pred, &gt), auc(&scaled, &gt));
        }
    }

    #[test]
    fn aiou_exact_indicator_is_one() {
        let gt = vec![1.0, 0.4, 0.0, 0.0];
        let pred = vec![1.0, 1.0, 0.0, 0.0];
        assert_eq!(aiou(&pred, &gt), 1.0);
    }

    #[test]
    fn aiou_zero_prediction_on_positive_gt_is_zero() {
        let gt = vec![1.0, 1.0, 0.0];
        let pred = vec![0.0; 3];
        assert_eq!(aiou(&pred, &gt), 0.0);
    }

    #[test]
    fn aiou_hand_example_by_threshold_enumeration() {
        let gt = vec![1.0, 1.0, 0.0, 0.0];
        let pred = vec![0.6, 0.4, 0.6, 0.0];
        // oracle: enumerate the 19 thresholds directly
        let mut want = 0.0;
        for i in 1..=19 {
            let tau = i as f64 / 20.0;
            let bp: Vec<bool> = pred.iter().map(|&p| p >= tau).collect();
            let bg: Vec<bool> = gt.iter().map(|&g| g > 0.0).collect();
            let inter = bp.iter().zip(&bg).filter(|(p, g)| **p && **g).count();
            let union = bp.iter().zip(&bg).filter(|(p, g)| **p || **g).count();
            want += if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            };
        }
        want /= 19.0;
        let got = aiou(&pred, &gt);
        assert!((got - want).abs() < 1e-15);
        // τ ≤ 0.40 (8 slots): IoU 2/3; 0.45..=0.60 (4 slots): 1/3; rest 0
        let closed_form = (8.0 * (2.0 / 3.0) + 4.0 * (1.0 / 3.0)) / 19.0;
        assert!((got - closed_form).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn aiou_empty_union_counts_as_one() {
        let gt = vec![0.0, 0.0];
        let pred = vec![0.0, 0.0];
        assert_eq!(aiou(&pred, &gt), 1.0);
    }

    #[test]
    fn aiou_monotone_as_mass_leaves_support() {
        let gt = vec![1.0, 1.0, 0.0, 0.0];
        // progressively move prediction mass from on-support to off-support
        let mut prev = f64::INFINITY;
        for shift in 0..=4 {
            let f = shift as f64 / 4.0;
            let pred = vec![1.0 - f, 1.0 - f, f, f];
            let v = aiou(&pred, &gt);
            assert!(v <= prev + 1e-12, "aiou increased: {v} > {prev}");
            prev = v;
        }
    }

    #[test]
    fn sim_proportional_maps_score_one() {
        let gt = vec![0.2, 0.8, 0.0, 0.4];
        let pred: Vec<f64> = gt.iter().map(|g| g * 3.7).collect();
        let s = sim(&pred, &gt).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sim_disjoint_supports_score_zero() {
        let gt = vec![1.0, 1.0, 0.0, 0.0];
        let pred = vec![0.0, 0.0, 0.5, 0.5];
        assert_eq!(sim(&pred, &gt), Some(0.0));
    }

    #[test]
    fn sim_hand_example() {
        let gt = vec![1.0, 0.0];
        let pred = vec![0.5, 0.5];
        let s = sim(&pred, &gt).unwrap();
        assert!((s - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sim_skip_semantics() {
        assert_eq!(sim(&[0.5, 0.5], &[0.0, 0.0]), None);
        assert_eq!(sim(&[0.0, 0.0], &[1.0, 0.0]), Some(0.0));
    }

    #[test]
    fn mae_basics() {
        assert_eq!(mae(&[0.3, 0.7], &[0.3, 0.7]), 0.0);
        let got = mae(&[0.2, 0.8], &[0.0, 1.0]);
        assert!((got - 0.2).abs() < 1e-15);
        // constant offset c comes back as c
        let gt = vec![0.3, 0.5, 0.4];
        let pred: Vec<f64> = gt.iter().map(|g| g + 0.07).collect();
        assert!((mae(&pred, &gt) - 0.07).abs() < 1e-12);
    }

    #[test]
    fn ranges_hold_on_random_inputs() {
        let mut rng = Rng::new(2);
        for _ in 0..200 {
            let n = 2 + rng.index(40);
            let pred: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let gt: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.uniform() < 0.5 {
                        rng.uniform()
                    } else {
                        0.0
                    }
                })
                .collect();
            if let Some(a) = auc(&pred, &gt) {
                assert!((0.0..=1.0).contains(&a));
            }
            let i = aiou(&pred, &gt);
            assert!((0.0..=1.0).contains(&i));
            if let Some(s) = sim(&pred, &gt) {
                assert!((-1e-12..=1.0 + 1e-12).contains(&s));
            }
            assert!(mae(&pred, &gt) >= 0.0);
        }
    }

    #[test]
    fn oracle_and_constant_predictors_score_as_expected() {
        let mut rng = Rng::new(9);
        let mut oracle = MetricAccumulator::new();
        let mut constant = MetricAccumulator::new();
        let mut expect_mae = 0.0;
        let trials = 10;
        for _ in 0..trials {
            let gt: Vec<f64> = (0..32)
                .map(|_| {
                    if rng.uniform() < 0.4 {
                        rng.uniform_in(0.2, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            oracle.add("grasp", &gt, &gt);
            constant.add("grasp", &vec![0.5; 32], &gt);
            expect_mae += gt.iter().map(|g| (0.5 - g).abs()).sum::<f64>() / 32.0;
        }
        let oracle_report = oracle.report();
        assert_eq!(oracle_report.overall.auc, 1.0);
        assert!((oracle_report.overall.sim - 1.0).abs() < 1e-12);
        assert_eq!(oracle_report.overall.mae, 0.0);
        let const_report = constant.report();
        assert_eq!(const_report.overall.auc, 0.5);
        assert!((const_report.overall.mae - expect_mae / trials as f64).abs() < 1e-12);
    }

    #[test]
    fn accumulator_matches_per_sample_means() {
        let mut rng = Rng::new(3);
        let mut acc = MetricAccumulator::new();
        let mut maes = vec![];
        let mut aious = vec![];
        for i in 0..8 {
            let n = 16;
            let pred: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
            let gt: Vec<f64> = (0..n)
                .map(|_| {
                    if rng.uniform() < 0.5 {
                        rng.uniform()
                    } else {
                        0.0
                    }
                })
                .collect();
            let name = if i % 2 == 0 { "grasp" } else { "open" };
            acc.add(name, &pred, &gt);
            maes.push(mae(&pred, &gt));
            aious.push(aiou(&pred, &gt));
        }
        let report = acc.report();
        let mean_mae: f64 = maes.iter().sum::<f64>() / maes.len() as f64;
        let mean_aiou: f64 = aious.iter().sum::<f64>() / aious.len() as f64;
        assert!((report.overall.mae - mean_mae).abs() < 1e-12);
        assert!((report.overall.aiou - mean_aiou).abs() < 1e-12);
        assert_eq!(report.per_affordance.len(), 2);
        assert_eq!(
            report.per_affordance["grasp"].count + report.per_affordance["open"].count,
            8
        );
        let table = report.to_table("test");
        assert!(table.contains("AUC"));
        assert!(table.contains("grasp"));
    }
}
