use thiserror::Error;

use crate::pairing::RecordingSession;
use crate::train::{TrainError, TrainedModel};
use eeg2fmri_tensor::nd::NdArray;

/// Clamp inside LCFV: ln(1 − CFV) is singular at perfect reconstruction.
pub const EPS_LOG: f64 = 1e-12;

/// Smoothing added after min-shift when turning volumes into distributions.
pub const EPS_SMOOTH: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("metric shape mismatch: {detail}")]
    ShapeMismatch { detail: String },

    #[error("cosine metric is undefined for an all-zero input")]
    ZeroVector,

    #[error("evaluation needs at least one test window")]
    EmptyTestSet,

    #[error("synthesis failed during evaluation: {0}")]
    Synthesis(#[from] TrainError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

fn check_shapes(op: &str, a: &NdArray, b: &NdArray) -> Result<()> {
    if a.shape != b.shape || a.numel() == 0 {
        return Err(MetricError::ShapeMismatch {
            detail: format!("{op}: {:?} vs {:?}", a.shape, b.shape),
        });
    }
    Ok(())
}

/// Cosine similarity of the flattened series.
pub fn cfv(bold: &NdArray, pred: &NdArray) -> Result<f64> {
    check_shapes("cfv", bold, pred)?;
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&a, &b) in bold.data.iter().zip(&pred.data) {
        dot += a * b;
        na += a * a;
        nb += b * b;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MetricError::ZeroVector);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// ln(max(EPS_LOG, 1 − CFV)).
pub fn lcfv(bold: &NdArray, pred: &NdArray) -> Result<f64> {
    Ok((1.0 - cfv(bold, pred)?).max(EPS_LOG).ln())
}

/// Mean over voxels of the Euclidean distance between per-voxel time series.
/// Axis 0 indexes voxels; the remaining axes flatten to the series.
pub fn emv(bold: &NdArray, pred: &NdArray) -> Result<f64> {
    check_shapes("emv", bold, pred)?;
    let voxels = bold.shape[0];
    let series = bold.numel() / voxels;
    let mut acc = 0.0;
    for v in 0..voxels {
        let mut sq = 0.0;
        for i in v * series..(v + 1) * series {
            let d = bold.data[i] - pred.data[i];
            sq += d * d;
        }
        acc += sq.sqrt();
    }
    Ok(acc / voxels as f64)
}

/// Mean over volumes of ‖diff_volume‖₂ / N_voxels. Axis 0 indexes volumes.
pub fn epv_metric(fmri: &NdArray, pred: &NdArray) -> Result<f64> {
    check_shapes("epv", fmri, pred)?;
    let volumes = fmri.shape[0];
    let voxels = fmri.numel() / volumes;
    let mut acc = 0.0;
    for t in 0..volumes {
        let mut sq = 0.0;
        for i in t * voxels..(t + 1) * voxels {
            let d = fmri.data[i] - pred.data[i];
            sq += d * d;
        }
        acc += sq.sqrt() / voxels as f64;
    }
    Ok(acc / volumes as f64)
}

/// Mean over volumes of the mean absolute voxel difference.
pub fn mae(fmri: &NdArray, pred: &NdArray) -> Result<f64> {
    check_shapes("mae", fmri, pred)?;
    let volumes = fmri.shape[0];
    let voxels = fmri.numel() / volumes;
    let mut acc = 0.0;
    for t in 0..volumes {
        let mut vol = 0.0;
        for i in t * voxels..(t + 1) * voxels {
            vol += (fmri.data[i] - pred.data[i]).abs();
        }
        acc += vol / voxels as f64;
    }
    Ok(acc / volumes as f64)
}

/// Per volume both voxel sets become probability vectors (min-shift,
/// EPS_SMOOTH, normalize); KL(real ‖ predicted) is averaged over volumes.
pub fn kl(fmri: &NdArray, pred: &NdArray) -> Result<f64> {
    check_shapes("kl", fmri, pred)?;
    let volumes = fmri.shape[0];
    let voxels = fmri.numel() / volumes;
    let mut acc = 0.0;
    for t in 0..volumes {
        let p = to_distribution(&fmri.data[t * voxels..(t + 1) * voxels]);
        let q = to_distribution(&pred.data[t * voxels..(t + 1) * voxels]);
        let mut div = 0.0;
        for (&pi, &qi) in p.iter().zip(&q) {
            div += pi * (pi / qi).ln();
        }
        // Gibbs guarantees div ≥ 0; rounding can leave a tiny negative.
        acc += div.max(0.0);
    }
    Ok(acc / volumes as f64)
}

fn to_distribution(volume: &[f64]) -> Vec<f64> {
    let min = volume.iter().cloned().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = volume.iter().map(|&v| v - min + EPS_SMOOTH).collect();
    let total: f64 = shifted.iter().sum();
    shifted.into_iter().map(|v| v / total).collect()
}

/// The six per-window values in table order.
#[derive(Debug, Clone, Copy)]
pub struct MetricValues {
    pub lcfv: f64,
    pub cfv: f64,
    pub emv: f64,
    pub epv: f64,
    pub mae: f64,
    pub kl: f64,
}

/// Computes all six metrics for one [time, x, y, z] window pair.
pub fn instance_metrics(target: &NdArray, pred: &NdArray) -> Result<MetricValues> {
    check_shapes("instance", target, pred)?;
    let volumes = target.shape[0];
    let voxels = target.numel() / volumes;
    let flat_t = NdArray {
        shape: vec![volumes, voxels],
        data: target.data.clone(),
    };
    let flat_p = NdArray {
        shape: vec![volumes, voxels],
        data: pred.data.clone(),
    };
    // EMV reads voxel-major series: transpose [volumes, voxels].
    let mut vox_t = vec![0.0; target.numel()];
    let mut vox_p = vec![0.0; target.numel()];
    for t in 0..volumes {
        for v in 0..voxels {
            vox_t[v * volumes + t] = target.data[t * voxels + v];
            vox_p[v * volumes + t] = pred.data[t * voxels + v];
        }
    }
    let vox_t = NdArray {
        shape: vec![voxels, volumes],
        data: vox_t,
    };
    let vox_p = NdArray {
        shape: vec![voxels, volumes],
        data: vox_p,
    };
    Ok(MetricValues {
        lcfv: lcfv(&flat_t, &flat_p)?,
        cfv: cfv(&flat_t, &flat_p)?,
        emv: emv(&vox_t, &vox_p)?,
        epv: epv_metric(&flat_t, &flat_p)?,
        mae: mae(&flat_t, &flat_p)?,
        kl: kl(&flat_t, &flat_p)?,
    })
}

/// Table row order for reports and CSV output.
pub const METRIC_NAMES: [&str; 6] = ["LCFV", "CFV", "EMV", "EPV", "MAE", "KL"];

/// Per-instance metric values plus mean ± std aggregates over a test set.
#[derive(Debug, Clone)]
pub struct MetricsReport {
    pub instances: Vec<MetricValues>,
}

impl MetricsReport {
    pub fn new(instances: Vec<MetricValues>) -> Result<Self> {
        if instances.is_empty() {
            return Err(MetricError::EmptyTestSet);
        }
        Ok(MetricsReport { instances })
    }

    /// (name, mean, population std) per metric, in table order.
    pub fn aggregate(&self) -> [(&'static str, f64, f64); 6] {
        let n = self.instances.len() as f64;
        let column = |f: fn(&MetricValues) -> f64| -> (f64, f64) {
            let mean = self.instances.iter().map(&f).sum::<f64>() / n;
            let var = self
                .instances
                .iter()
                .map(|m| (f(m) - mean).powi(2))
                .sum::<f64>()
                / n;
            (mean, var.sqrt())
        };
        let (lm, ls) = column(|m| m.lcfv);
        let (cm, cs) = column(|m| m.cfv);
        let (em, es) = column(|m| m.emv);
        let (pm, ps) = column(|m| m.epv);
        let (am, asd) = column(|m| m.mae);
        let (km, ks) = column(|m| m.kl);
        [
            ("LCFV", lm, ls),
            ("CFV", cm, cs),
            ("EMV", em, es),
            ("EPV", pm, ps),
            ("MAE", am, asd),
            ("KL", km, ks),
        ]
    }
}

/// One row per metric, one column per variant, cells "mean±std".
pub fn metrics_csv(columns: &[(String, MetricsReport)]) -> String {
    let mut out = String::from("metric");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let aggregates: Vec<_> = columns.iter().map(|(_, r)| r.aggregate()).collect();
    for (row, name) in METRIC_NAMES.iter().enumerate() {
        out.push_str(name);
        for agg in &aggregates {
            let (_, mean, std) = agg[row];
            out.push_str(&format!(",{mean:.6}\u{b1}{std:.6}"));
        }
        out.push('\n');
    }
    out
}

/// Synthesizes every test window and aggregates all six metrics.
pub fn evaluate_all(model: &TrainedModel, sessions: &[RecordingSession]) -> Result<MetricsReport> {
    let mut instances = Vec::new();
    for session in sessions {
        for w in &session.windows {
            let pred = model.synthesize(&w.eeg)?;
            instances.push(instance_metrics(&w.fmri, &pred)?);
        }
    }
    MetricsReport::new(instances)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn arr(data: Vec<f64>, shape: Vec<usize>) -> NdArray {
        NdArray::new(shape, data).unwrap()
    }

    #[test]
    fn cfv_hand_cases() {
        let a = arr(vec![1.0, 2.0], vec![2]);
        assert_relative_eq!(cfv(&a, &a).unwrap(), 1.0);
        let e1 = arr(vec![1.0, 0.0], vec![2]);
        let e2 = arr(vec![0.0, 1.0], vec![2]);
        assert_relative_eq!(cfv(&e1, &e2).unwrap(), 0.0);
        let neg = arr(vec![-1.0, -2.0], vec![2]);
        assert_relative_eq!(cfv(&a, &neg).unwrap(), -1.0);
        let zero = arr(vec![0.0, 0.0], vec![2]);
        assert!(matches!(cfv(&a, &zero), Err(MetricError::ZeroVector)));
    }

    #[test]
    fn lcfv_hand_cases() {
        // cos = 0.5 between [1,0] and [0.5, sqrt(3)/2].
        let a = arr(vec![1.0, 0.0], vec![2]);
        let b = arr(vec![0.5, 3.0f64.sqrt() / 2.0], vec![2]);
        assert_relative_eq!(lcfv(&a, &b).unwrap(), 0.5f64.ln(), max_relative = 1e-12);
        let e2 = arr(vec![0.0, 1.0], vec![2]);
        assert_relative_eq!(lcfv(&a, &e2).unwrap(), 0.0);
        assert_relative_eq!(lcfv(&a, &a).unwrap(), EPS_LOG.ln());
    }

    #[test]
    fn emv_hand_cases() {
        let a = arr(vec![1.0, 2.0, 3.0, 4.0], vec![1, 4]);
        assert_eq!(emv(&a, &a).unwrap(), 0.0);
        // One voxel, constant diff 3 over 4 steps: sqrt(4·9) = 6.
        let b = arr(vec![4.0, 5.0, 6.0, 7.0], vec![1, 4]);
        assert_relative_eq!(emv(&a, &b).unwrap(), 6.0);
        // Two voxels with distances 2 and 4: mean 3.
        let t = arr(vec![0.0, 0.0], vec![2, 1]);
        let p = arr(vec![2.0, 4.0], vec![2, 1]);
        assert_relative_eq!(emv(&t, &p).unwrap(), 3.0);
    }

    #[test]
    fn epv_and_mae_hand_cases() {
        let t = arr(vec![0.0, 0.0], vec![1, 2]);
        let p = arr(vec![3.0, 4.0], vec![1, 2]);
        assert_relative_eq!(epv_metric(&t, &p).unwrap(), 2.5);
        let p2 = arr(vec![1.0, -3.0], vec![1, 2]);
        assert_relative_eq!(mae(&t, &p2).unwrap(), 2.0);
        assert_eq!(mae(&t, &t).unwrap(), 0.0);
    }

    #[test]
    fn mae_equals_epv_times_sqrt_voxels_on_constant_residuals() {
        for (voxels, c) in [(4usize, 2.0), (9, 0.3), (16, 1.7)] {
            let t = NdArray::zeros(vec![3, voxels]);
            let p = NdArray::filled(vec![3, voxels], c);
            let m = mae(&t, &p).unwrap();
            let e = epv_metric(&t, &p).unwrap();
            assert_relative_eq!(m, e * (voxels as f64).sqrt(), max_relative = 1e-12);
            assert_relative_eq!(m, c, max_relative = 1e-12);
        }
    }

    #[test]
    fn kl_matches_direct_evaluation() {
        let t = arr(vec![5.0, 5.0], vec![1, 2]);
        assert_eq!(kl(&t, &t).unwrap(), 0.0);
        // Real constant → p = [0.5, 0.5]; pred [0, 2e-9] → q = [0.25, 0.75].
        let p = arr(vec![0.0, 2e-9], vec![1, 2]);
        let expect = 0.5 * (0.5f64 / 0.25).ln() + 0.5 * (0.5f64 / 0.75).ln();
        assert_relative_eq!(kl(&t, &p).unwrap(), expect, max_relative = 1e-9);
        assert_relative_eq!(kl(&t, &p).unwrap(), 0.143841, max_relative = 1e-4);
    }

    #[test]
    fn kl_is_nonnegative_on_random_volumes() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..200 {
            let t = NdArray {
                shape: vec![2, 6],
                data: (0..12).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect(),
            };
            let p = NdArray {
                shape: vec![2, 6],
                data: (0..12).map(|_| rng.gen::<f64>() * 4.0 - 2.0).collect(),
            };
            assert!(kl(&t, &p).unwrap() >= 0.0);
        }
    }

    #[test]
    fn lcfv_equals_log_one_minus_cfv_pre_clamp() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let t = NdArray {
                shape: vec![8],
                data: (0..8).map(|_| rng.gen::<f64>() - 0.5).collect(),
            };
            let p = NdArray {
                shape: vec![8],
                data: (0..8).map(|_| rng.gen::<f64>() - 0.5).collect(),
            };
            let c = cfv(&t, &p).unwrap();
            if 1.0 - c > EPS_LOG {
                assert_relative_eq!(
                    lcfv(&t, &p).unwrap(),
                    (1.0 - c).ln(),
                    max_relative = 1e-9
                );
            }
        }
    }

    #[test]
    fn metrics_are_equivariant_under_shared_voxel_permutation() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let volumes = 3;
        let voxels = 5;
        let t: Vec<f64> = (0..volumes * voxels).map(|_| rng.gen::<f64>()).collect();
        let p: Vec<f64> = (0..volumes * voxels).map(|_| rng.gen::<f64>()).collect();
        let perm = [3usize, 0, 4, 1, 2];
        let apply = |src: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; src.len()];
            for t_i in 0..volumes {
                for (v, &pv) in perm.iter().enumerate() {
                    out[t_i * voxels + v] = src[t_i * voxels + pv];
                }
            }
            out
        };
        let base_t = arr(t.clone(), vec![volumes, voxels, 1, 1]);
        let base_p = arr(p.clone(), vec![volumes, voxels, 1, 1]);
        let perm_t = arr(apply(&t), vec![volumes, voxels, 1, 1]);
        let perm_p = arr(apply(&p), vec![volumes, voxels, 1, 1]);
        let a = instance_metrics(&base_t, &base_p).unwrap();
        let b = instance_metrics(&perm_t, &perm_p).unwrap();
        for (x, y) in [
            (a.lcfv, b.lcfv),
            (a.cfv, b.cfv),
            (a.emv, b.emv),
            (a.epv, b.epv),
            (a.mae, b.mae),
            (a.kl, b.kl),
        ] {
            assert_relative_eq!(x, y, max_relative = 1e-12);
        }
    }

    #[test]
    fn report_aggregates_and_csv_layout() {
        let one = MetricValues {
            lcfv: -0.25,
            cfv: 0.2,
            emv: 1.0,
            epv: 0.5,
            mae: 0.75,
            kl: 0.1,
        };
        let single = MetricsReport::new(vec![one]).unwrap();
        for (_, _, std) in single.aggregate() {
            assert_eq!(std, 0.0);
        }
        let two = MetricsReport::new(vec![
            one,
            MetricValues {
                lcfv: -0.75,
                cfv: 0.4,
                emv: 3.0,
                epv: 1.5,
                mae: 0.25,
                kl: 0.3,
            },
        ])
        .unwrap();
        let agg = two.aggregate();
        assert_eq!(agg[0].0, "LCFV");
        assert_relative_eq!(agg[0].1, -0.5);
        assert_relative_eq!(agg[0].2, 0.25);
        assert_relative_eq!(agg[2].1, 2.0);

        let csv = metrics_csv(&[("AE".into(), single)]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 7);
        assert_eq!(lines[0], "metric,AE");
        assert!(lines[1].starts_with("LCFV,-0.250000\u{b1}0.000000"));
        assert!(lines[6].starts_with("KL,"));
        assert!(MetricsReport::new(vec![]).is_err());
    }
}
