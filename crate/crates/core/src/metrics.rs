//! Scene-completion evaluation: occupancy IoU, per-class mIoU, inter-frame
//! consistency, and the numeric losses used during training.
//!
//! Every metric is restricted to an evaluation mask and to voxels whose
//! reference label is known; values at UNKNOWN or unmasked voxels never
//! influence a score. Classes absent from both prediction and reference
//! (zero union) are excluded from the mIoU mean rather than counted as 0,
//! matching the behavior of the standard benchmark tooling.

use crate::geometry::RigidPose;
use crate::temporal::{warp_feature_grid, warp_label_grid};
use crate::voxel::{
    overlap_mask, FeatureGrid, LabelGrid, MaskGrid, ProbGrid, CLASS_NAMES, EMPTY_LABEL,
    NUM_CATEGORIES, NUM_CLASSES, UNKNOWN_LABEL,
};
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("grids have different specs")]
    SpecMismatch,
    #[error("no voxel qualifies for evaluation")]
    EmptyEvaluation,
}

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ClassCounts {
    fn union(&self) -> u64 {
        self.tp + self.fp + self.fn_
    }

    fn iou(&self) -> Option<f64> {
        let union = self.union();
        (union > 0).then(|| self.tp as f64 / union as f64)
    }
}

/// Full evaluation result. IoU values are ratios in [0, 1]; a class with
/// empty union is reported absent (`None`), not as zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub sc_iou: f64,
    pub miou: f64,
    pub evaluated_voxel_count: u64,
    pub sc_counts: ClassCounts,
    pub per_class_iou: [Option<f64>; NUM_CLASSES],
    pub per_class_counts: [ClassCounts; NUM_CLASSES],
}

impl EvalReport {
    /// Line-oriented `key=value` rendering with percentages at two decimal
    /// places, classes in training-id order.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("sc_iou={:.2}\n", self.sc_iou * 100.0));
        out.push_str(&format!("miou={:.2}\n", self.miou * 100.0));
        out.push_str(&format!("evaluated_voxels={}\n", self.evaluated_voxel_count));
        out.push_str(&format!(
            "sc.tp={}\nsc.fp={}\nsc.fn={}\n",
            self.sc_counts.tp, self.sc_counts.fp, self.sc_counts.fn_
        ));
        for (c, name) in CLASS_NAMES.iter().enumerate() {
            match self.per_class_iou[c] {
                Some(iou) => out.push_str(&format!("iou.{name}={:.2}\n", iou * 100.0)),
                None => out.push_str(&format!("iou.{name}=absent\n")),
            }
        }
        for (c, name) in CLASS_NAMES.iter().enumerate() {
            let counts = &self.per_class_counts[c];
            out.push_str(&format!(
                "counts.{name}.tp={}\ncounts.{name}.fp={}\ncounts.{name}.fn={}\n",
                counts.tp, counts.fp, counts.fn_
            ));
        }
        out
    }
}

/// Numeric loss summary. The externally defined monocular term is reported
/// as a named placeholder, never computed here.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub ce: f64,
    pub con: Option<f64>,
    /// Always "not_computed": the definition lives outside this toolkit.
    pub mono: &'static str,
}

impl LossReport {
    pub fn new(ce: f64, con: Option<f64>) -> Self {
        Self {
            ce,
            con,
            mono: "not_computed",
        }
    }

    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("loss.ce={:.6}\n", self.ce));
        match self.con {
            Some(con) => out.push_str(&format!("loss.con={con:.6}\n")),
            None => out.push_str("loss.con=not_computed\n"),
        }
        out.push_str("loss.mono=not_computed\n");
        out
    }
}

/// Occupied under the binary completion view: any semantic class. UNKNOWN
/// in a prediction counts as not occupied (it matches no class).
#[inline]
fn is_occupied(label: u8) -> bool {
    label != EMPTY_LABEL && label != UNKNOWN_LABEL
}

struct CountingPass {
    sc: ClassCounts,
    per_class: [ClassCounts; NUM_CLASSES],
    evaluated: u64,
}

/// Single pass over the evaluated voxels: those inside `eval_mask` whose
/// reference label is known.
fn count_matches(
    pred: &LabelGrid,
    reference: &LabelGrid,
    eval_mask: &MaskGrid,
) -> Result<CountingPass, MetricsError> {
    if pred.spec() != reference.spec() || pred.spec() != eval_mask.spec() {
        return Err(MetricsError::SpecMismatch);
    }
    let mut pass = CountingPass {
        sc: ClassCounts::default(),
        per_class: [ClassCounts::default(); NUM_CLASSES],
        evaluated: 0,
    };
    for ((&p, &g), &m) in pred
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .zip(eval_mask.as_slice())
    {
        if !m || g == UNKNOWN_LABEL {
            continue;
        }
        pass.evaluated += 1;
        match (is_occupied(p), is_occupied(g)) {
            (true, true) => pass.sc.tp += 1,
            (true, false) => pass.sc.fp += 1,
            (false, true) => pass.sc.fn_ += 1,
            (false, false) => {}
        }
        if is_occupied(g) {
            let gc = (g - 1) as usize;
            if p == g {
                pass.per_class[gc].tp += 1;
            } else {
                pass.per_class[gc].fn_ += 1;
            }
        }
        if is_occupied(p) && p != g {
            pass.per_class[(p - 1) as usize].fp += 1;
        }
    }
    if pass.evaluated == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(pass)
}

fn report_from_counts(pass: CountingPass) -> EvalReport {
    let sc_iou = pass.sc.iou().unwrap_or(1.0); // both sides fully empty agree
    let per_class_iou: [Option<f64>; NUM_CLASSES] =
        std::array::from_fn(|c| pass.per_class[c].iou());
    let included: Vec<f64> = per_class_iou.iter().flatten().copied().collect();
    let miou = if included.is_empty() {
        0.0
    } else {
        included.iter().sum::<f64>() / included.len() as f64
    };
    EvalReport {
        sc_iou,
        miou,
        evaluated_voxel_count: pass.evaluated,
        sc_counts: pass.sc,
        per_class_iou,
        per_class_counts: pass.per_class,
    }
}

/// Binary occupancy IoU over evaluated voxels: TP / (TP + FP + FN), where
/// occupied means any semantic class and empty is the empty label. Returns
/// 1.0 when both grids are entirely empty on the evaluated set.
pub fn sc_iou(
    pred: &LabelGrid,
    gt: &LabelGrid,
    eval_mask: &MaskGrid,
) -> Result<f64, MetricsError> {
    let pass = count_matches(pred, gt, eval_mask)?;
    Ok(pass.sc.iou().unwrap_or(1.0))
}

/// Per-class IoU and their mean, plus the occupancy IoU, over evaluated
/// voxels.
pub fn miou(
    pred: &LabelGrid,
    gt: &LabelGrid,
    eval_mask: &MaskGrid,
) -> Result<EvalReport, MetricsError> {
    Ok(report_from_counts(count_matches(pred, gt, eval_mask)?))
}

/// Agreement between consecutive frames: warps the previous prediction into
/// the current camera (nearest) and scores the current prediction against
/// it inside the overlap region.
pub fn consistency(
    pred_prev: &LabelGrid,
    pred_curr: &LabelGrid,
    rel: &RigidPose,
) -> Result<EvalReport, MetricsError> {
    let spec_curr = *pred_curr.spec();
    let warped = warp_label_grid(pred_prev, rel, &spec_curr);
    let overlap = overlap_mask(&spec_curr, rel, pred_prev.spec());
    if overlap.count_true() == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    let mut mask = overlap;
    for (bit, &w) in mask.as_mut_slice().iter_mut().zip(warped.as_slice()) {
        *bit = *bit && w != UNKNOWN_LABEL;
    }
    miou(pred_curr, &warped, &mask)
}

/// Mean negative log-likelihood of the reference class over evaluated
/// voxels, in nats.
pub fn cross_entropy_loss(
    pred: &ProbGrid,
    gt: &LabelGrid,
    eval_mask: &MaskGrid,
) -> Result<f64, MetricsError> {
    if pred.spec() != gt.spec() || pred.spec() != eval_mask.spec() {
        return Err(MetricsError::SpecMismatch);
    }
    let mut total = 0.0f64;
    let mut count = 0u64;
    let probs = pred.as_slice();
    for (v, (&g, &m)) in gt.as_slice().iter().zip(eval_mask.as_slice()).enumerate() {
        if !m || g == UNKNOWN_LABEL {
            continue;
        }
        let p = probs[v * NUM_CATEGORIES + g as usize] as f64;
        total -= p.max(PROB_FLOOR).ln();
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsistencyMode {
    /// Cross-entropy against the argmax pseudo-label of the warped previous
    /// distribution (ties resolve to the lower class index).
    Hard,
    /// Full cross-entropy against the warped previous distribution.
    Soft,
}

/// Inter-frame consistency loss: warps the previous frame's probability
/// volume into the current camera (trilinear per channel, renormalized) and
/// penalizes the current distribution's disagreement inside the overlap,
/// restricted to the known region of the current frame.
pub fn consistency_loss(
    prob_prev: &ProbGrid,
    prob_curr: &ProbGrid,
    rel: &RigidPose,
    gt_known_mask_curr: &MaskGrid,
    mode: ConsistencyMode,
) -> Result<f64, MetricsError> {
    if prob_curr.spec() != gt_known_mask_curr.spec() {
        return Err(MetricsError::SpecMismatch);
    }
    let spec_curr = *prob_curr.spec();
    let prev_features = FeatureGrid::from_values(
        *prob_prev.spec(),
        NUM_CATEGORIES,
        prob_prev.as_slice().to_vec(),
    )
    .expect("prob grid is densely sized");
    let (warped, valid) = warp_feature_grid(
        &prev_features,
        rel,
        &spec_curr,
        crate::temporal::WarpMode::Trilinear,
    );

    let mut total = 0.0f64;
    let mut count = 0u64;
    let curr = prob_curr.as_slice();
    for v in 0..spec_curr.num_voxels() {
        if !valid.as_slice()[v] || !gt_known_mask_curr.as_slice()[v] {
            continue;
        }
        let q_raw = &warped.as_slice()[v * NUM_CATEGORIES..(v + 1) * NUM_CATEGORIES];
        let q_sum: f64 = q_raw.iter().map(|&q| q as f64).sum();
        if q_sum <= 0.0 {
            continue;
        }
        let p = &curr[v * NUM_CATEGORIES..(v + 1) * NUM_CATEGORIES];
        match mode {
            ConsistencyMode::Hard => {
                let mut best = 0usize;
                for c in 1..NUM_CATEGORIES {
                    if q_raw[c] > q_raw[best] {
                        best = c;
                    }
                }
                total -= (p[best] as f64).max(PROB_FLOOR).ln();
            }
            ConsistencyMode::Soft => {
                for c in 0..NUM_CATEGORIES {
                    let q = q_raw[c] as f64 / q_sum;
                    if q > 0.0 {
                        total -= q * (p[c] as f64).max(PROB_FLOOR).ln();
                    }
                }
            }
        }
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyEvaluation);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use crate::voxel::GridSpec;
    use nalgebra::Vector3;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn spec(dims: [usize; 3]) -> GridSpec {
        GridSpec::new(dims, 1.0, Point3::origin()).unwrap()
    }

    fn random_labels(sp: GridSpec, classes: &[u8], seed: u64) -> LabelGrid {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut grid = LabelGrid::filled(sp, 0);
        for idx in sp.index_iter() {
            grid.set(idx, classes[rng.random_range(0..classes.len())]);
        }
        grid
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let sp = spec([4, 4, 4]);
        let gt = random_labels(sp, &[0, 1, 9, 15], 1);
        let mask = MaskGrid::filled(sp, true);
        assert_eq!(sc_iou(&gt, &gt, &mask), Ok(1.0));
        let report = miou(&gt, &gt, &mask).unwrap();
        assert_eq!(report.miou, 1.0);
        for c in [0usize, 8, 14] {
            assert_eq!(report.per_class_iou[c], Some(1.0));
        }
        assert_eq!(report.per_class_iou[3], None); // absent class
    }

    #[test]
    fn all_empty_prediction_scores_zero() {
        let sp = spec([3, 3, 3]);
        let mut gt = LabelGrid::filled(sp, 0);
        for z in 0..3 {
            gt.set([1, 1, z], 5);
        }
        let pred = LabelGrid::filled(sp, 0);
        let mask = MaskGrid::filled(sp, true);
        assert_eq!(sc_iou(&pred, &gt, &mask), Ok(0.0));
    }

    #[test]
    fn swapped_disjoint_classes_score_zero() {
        let sp = spec([2, 2, 2]);
        let mut gt = LabelGrid::filled(sp, 0);
        let mut pred = LabelGrid::filled(sp, 0);
        gt.set([0, 0, 0], 3);
        gt.set([1, 1, 1], 7);
        pred.set([0, 0, 0], 7);
        pred.set([1, 1, 1], 3);
        let report = miou(&pred, &gt, &MaskGrid::filled(sp, true)).unwrap();
        assert_eq!(report.per_class_iou[2], Some(0.0));
        assert_eq!(report.per_class_iou[6], Some(0.0));
        assert_eq!(report.miou, 0.0);
        assert_eq!(report.sc_iou, 1.0); // occupancy agrees even though classes swapped
    }

    #[test]
    fn counting_matches_set_based_oracle() {
        let sp = spec([8, 8, 8]);
        let classes = [0u8, 1, 2, 9, 13, UNKNOWN_LABEL];
        let mut rng = StdRng::seed_from_u64(99);
        for trial in 0..20 {
            let gt = random_labels(sp, &classes, trial * 2);
            let pred = random_labels(sp, &classes[..5], trial * 2 + 1);
            let mut mask = MaskGrid::filled(sp, true);
            for idx in sp.index_iter() {
                if rng.random_bool(0.2) {
                    mask.set(idx, false);
                }
            }
            let report = miou(&pred, &gt, &mask).unwrap();

            // Set-based oracle: index sets per class, computed with
            // HashSet operations.
            use std::collections::HashSet;
            let eval: HashSet<usize> = sp
                .index_iter()
                .filter(|&i| mask.get(i) && gt.get(i) != UNKNOWN_LABEL)
                .map(|i| sp.linear_index(i))
                .collect();
            for class in 1..=NUM_CLASSES as u8 {
                let gt_set: HashSet<usize> = eval
                    .iter()
                    .copied()
                    .filter(|&i| gt.as_slice()[i] == class)
                    .collect();
                let pred_set: HashSet<usize> = eval
                    .iter()
                    .copied()
                    .filter(|&i| pred.as_slice()[i] == class)
                    .collect();
                let inter = gt_set.intersection(&pred_set).count();
                let union = gt_set.union(&pred_set).count();
                let expected = (union > 0).then(|| inter as f64 / union as f64);
                assert_eq!(report.per_class_iou[(class - 1) as usize], expected);
            }
            let occ_gt: HashSet<usize> = eval
                .iter()
                .copied()
                .filter(|&i| is_occupied(gt.as_slice()[i]))
                .collect();
            let occ_pred: HashSet<usize> = eval
                .iter()
                .copied()
                .filter(|&i| is_occupied(pred.as_slice()[i]))
                .collect();
            let union = occ_gt.union(&occ_pred).count();
            let expected = if union > 0 {
                occ_gt.intersection(&occ_pred).count() as f64 / union as f64
            } else {
                1.0
            };
            assert_eq!(report.sc_iou, expected);
        }
    }

    #[test]
    fn scores_are_invariant_to_unknown_and_unmasked_voxels() {
        let sp = spec([6, 6, 6]);
        let gt = random_labels(sp, &[0, 1, 9, UNKNOWN_LABEL], 3);
        let pred = random_labels(sp, &[0, 1, 9], 4);
        let mut mask = MaskGrid::filled(sp, true);
        let mut rng = StdRng::seed_from_u64(8);
        for idx in sp.index_iter() {
            if rng.random_bool(0.3) {
                mask.set(idx, false);
            }
        }
        let baseline = miou(&pred, &gt, &mask).unwrap();

        // Fuzz predictions at UNKNOWN or unmasked voxels; scores must not
        // move.
        let mut fuzzed = pred.clone();
        for idx in sp.index_iter() {
            if !mask.get(idx) || gt.get(idx) == UNKNOWN_LABEL {
                fuzzed.set(idx, rng.random_range(0..5) as u8);
            }
        }
        let perturbed = miou(&fuzzed, &gt, &mask).unwrap();
        assert_eq!(baseline.sc_iou, perturbed.sc_iou);
        assert_eq!(baseline.per_class_iou, perturbed.per_class_iou);
        assert_eq!(baseline.miou, perturbed.miou);
    }

    #[test]
    fn symmetry_and_bounds() {
        let sp = spec([5, 5, 5]);
        let a = random_labels(sp, &[0, 2, 11], 10);
        let b = random_labels(sp, &[0, 2, 11], 11);
        let mask = MaskGrid::filled(sp, true);
        let ab = sc_iou(&a, &b, &mask).unwrap();
        let ba = sc_iou(&b, &a, &mask).unwrap();
        assert_eq!(ab, ba);
        assert!((0.0..=1.0).contains(&ab));
        let report = miou(&a, &b, &mask).unwrap();
        let included: Vec<f64> = report.per_class_iou.iter().flatten().copied().collect();
        let max = included.iter().cloned().fold(0.0, f64::max);
        let min = included.iter().cloned().fold(1.0, f64::min);
        assert!(report.miou <= max + 1e-12 && report.miou >= min - 1e-12);
    }

    #[test]
    fn error_cases() {
        let sp = spec([2, 2, 2]);
        let other = spec([2, 2, 3]);
        let a = LabelGrid::filled(sp, 1);
        let b = LabelGrid::filled(other, 1);
        assert_eq!(
            sc_iou(&a, &b, &MaskGrid::filled(sp, true)),
            Err(MetricsError::SpecMismatch)
        );
        assert_eq!(
            sc_iou(&a, &a, &MaskGrid::filled(sp, false)),
            Err(MetricsError::EmptyEvaluation)
        );
        let unknown = LabelGrid::filled(sp, UNKNOWN_LABEL);
        assert_eq!(
            sc_iou(&a, &unknown, &MaskGrid::filled(sp, true)),
            Err(MetricsError::EmptyEvaluation)
        );
    }

    #[test]
    fn self_consistency_is_perfect() {
        let sp = spec([6, 6, 4]);
        let prev = random_labels(sp, &[0, 1, 9, 15], 21);
        let rel = RigidPose::from_translation(Vector3::new(2.0, 1.0, 0.0));
        let curr = warp_label_grid(&prev, &rel, &sp);
        let report = consistency(&prev, &curr, &rel).unwrap();
        assert_eq!(report.sc_iou, 1.0);
        assert_eq!(report.miou, 1.0);
    }

    #[test]
    fn disjoint_volumes_yield_empty_evaluation() {
        let sp = spec([4, 4, 4]);
        let prev = random_labels(sp, &[0, 1], 2);
        let curr = random_labels(sp, &[0, 1], 3);
        let rel = RigidPose::from_translation(Vector3::new(100.0, 0.0, 0.0));
        assert_eq!(
            consistency(&prev, &curr, &rel),
            Err(MetricsError::EmptyEvaluation)
        );
    }

    #[test]
    fn cross_entropy_analytic_cases() {
        let sp = spec([3, 3, 3]);
        let gt = random_labels(sp, &[0, 1, 9], 31);
        let mask = MaskGrid::filled(sp, true);
        let one_hot = ProbGrid::one_hot(&gt);
        assert_eq!(cross_entropy_loss(&one_hot, &gt, &mask), Ok(0.0));

        let uniform = ProbGrid::uniform(sp);
        let loss = cross_entropy_loss(&uniform, &gt, &mask).unwrap();
        assert!((loss - (NUM_CATEGORIES as f64).ln()).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_matches_scalar_oracle() {
        let sp = spec([4, 4, 4]);
        let gt = random_labels(sp, &[0, 1, 5, UNKNOWN_LABEL], 41);
        let mut rng = StdRng::seed_from_u64(42);
        let mut probs = vec![0.0f32; sp.num_voxels() * NUM_CATEGORIES];
        for row in probs.chunks_exact_mut(NUM_CATEGORIES) {
            let mut sum = 0.0f32;
            for p in row.iter_mut() {
                *p = rng.random_range(0.01..1.0);
                sum += *p;
            }
            for p in row.iter_mut() {
                *p /= sum;
            }
        }
        let pred = ProbGrid::from_values(sp, probs).unwrap();
        let mask = MaskGrid::filled(sp, true);
        let loss = cross_entropy_loss(&pred, &gt, &mask).unwrap();

        let mut total = 0.0f64;
        let mut n = 0u64;
        for idx in sp.index_iter() {
            let g = gt.get(idx);
            if g == UNKNOWN_LABEL {
                continue;
            }
            total -= (pred.get(idx)[g as usize] as f64).max(PROB_FLOOR).ln();
            n += 1;
        }
        assert!((loss - total / n as f64).abs() < 1e-9);
    }

    #[test]
    fn consistency_loss_zero_for_matching_one_hot() {
        let sp = spec([4, 4, 4]);
        let labels = random_labels(sp, &[0, 1, 9], 51);
        let probs = ProbGrid::one_hot(&labels);
        let mask = MaskGrid::filled(sp, true);
        for mode in [ConsistencyMode::Hard, ConsistencyMode::Soft] {
            let loss =
                consistency_loss(&probs, &probs, &RigidPose::identity(), &mask, mode).unwrap();
            assert!(loss.abs() < 1e-9, "{mode:?}: {loss}");
        }
    }

    #[test]
    fn consistency_loss_hard_half_probability_is_ln2() {
        let sp = spec([2, 2, 2]);
        let labels = LabelGrid::filled(sp, 4);
        let prev = ProbGrid::one_hot(&labels);
        // Current assigns exactly half the mass to the pseudo-label.
        let mut dist = [0.0f32; NUM_CATEGORIES];
        dist[4] = 0.5;
        dist[0] = 0.5;
        let mut curr = ProbGrid::uniform(sp);
        for idx in sp.index_iter() {
            curr.set_distribution(idx, &dist).unwrap();
        }
        let mask = MaskGrid::filled(sp, true);
        let loss = consistency_loss(
            &prev,
            &curr,
            &RigidPose::identity(),
            &mask,
            ConsistencyMode::Hard,
        )
        .unwrap();
        assert!((loss - 2.0f64.ln()).abs() < 1e-6);
    }

    #[test]
    fn consistency_loss_matches_scalar_oracle_at_identity() {
        let sp = spec([3, 3, 3]);
        let mut rng = StdRng::seed_from_u64(61);
        let make_probs = |rng: &mut StdRng| {
            let mut probs = vec![0.0f32; sp.num_voxels() * NUM_CATEGORIES];
            for row in probs.chunks_exact_mut(NUM_CATEGORIES) {
                let mut sum = 0.0f32;
                for p in row.iter_mut() {
                    *p = rng.random_range(0.01..1.0);
                    sum += *p;
                }
                for p in row.iter_mut() {
                    *p /= sum;
                }
            }
            ProbGrid::from_values(sp, probs).unwrap()
        };
        let prev = make_probs(&mut rng);
        let curr = make_probs(&mut rng);
        let mask = MaskGrid::filled(sp, true);

        let soft = consistency_loss(
            &prev,
            &curr,
            &RigidPose::identity(),
            &mask,
            ConsistencyMode::Soft,
        )
        .unwrap();
        let hard = consistency_loss(
            &prev,
            &curr,
            &RigidPose::identity(),
            &mask,
            ConsistencyMode::Hard,
        )
        .unwrap();

        // Scalar oracles: identity warp leaves the previous distribution
        // unchanged up to renormalization of its own sum.
        let mut soft_total = 0.0f64;
        let mut hard_total = 0.0f64;
        let n = sp.num_voxels() as f64;
        for idx in sp.index_iter() {
            let q = prev.get(idx);
            let p = curr.get(idx);
            let q_sum: f64 = q.iter().map(|&v| v as f64).sum();
            let mut best = 0;
            for c in 0..NUM_CATEGORIES {
                let qn = q[c] as f64 / q_sum;
                soft_total -= qn * (p[c] as f64).max(PROB_FLOOR).ln();
                if q[c] > q[best] {
                    best = c;
                }
            }
            hard_total -= (p[best] as f64).max(PROB_FLOOR).ln();
        }
        assert!((soft - soft_total / n).abs() < 1e-9);
        assert!((hard - hard_total / n).abs() < 1e-9);

        // Gibbs bound: the soft loss can never undercut the entropy of the
        // warped previous distribution.
        let mut entropy = 0.0f64;
        for idx in sp.index_iter() {
            let q = prev.get(idx);
            let q_sum: f64 = q.iter().map(|&v| v as f64).sum();
            for c in 0..NUM_CATEGORIES {
                let qn = q[c] as f64 / q_sum;
                if qn > 0.0 {
                    entropy -= qn * qn.ln();
                }
            }
        }
        assert!(soft + 1e-9 >= entropy / n);
    }

    #[test]
    fn report_formatting_is_fixed_point() {
        let sp = spec([2, 2, 2]);
        let gt = LabelGrid::filled(sp, 1);
        let report = miou(&gt, &gt, &MaskGrid::filled(sp, true)).unwrap();
        let text = report.to_kv_text();
        assert!(text.contains("sc_iou=100.00"));
        assert!(text.contains("miou=100.00"));
        assert!(text.contains("iou.car=100.00"));
        assert!(text.contains("iou.bicycle=absent"));
        let losses = LossReport::new(0.25, None);
        assert!(losses.to_kv_text().contains("loss.mono=not_computed"));
    }
}
