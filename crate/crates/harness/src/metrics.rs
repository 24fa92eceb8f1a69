//! Error metrics between truth, estimate and baseline trajectories.

use legged_mekf::lie::yaw;
use legged_mekf::Rotation;
use nalgebra::Vector3;

use crate::records::{BaselineRecord, EstimateRecord, MetricsRow, StateRecord};
use crate::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingStats {
    pub mean_us: f64,
    pub p99_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
    pub final_position_error: f64,
    pub final_position_error_baseline: Option<f64>,
    pub final_yaw_error: f64,
    pub final_yaw_error_baseline: Option<f64>,
    pub timing: Option<TimingStats>,
}

fn rotation(q: &[f64; 4]) -> Rotation {
    Rotation::from_wxyz(q[0], q[1], q[2], q[3])
}

/// `|Log(R_z(ψ_a)ᵀ R_z(ψ_b))_z|`
pub fn yaw_error(a: &[f64; 4], b: &[f64; 4]) -> f64 {
    let ra = Rotation::about_z(yaw(&rotation(a)));
    let rb = Rotation::about_z(yaw(&rotation(b)));
    (ra.transpose() * rb).log().z.abs()
}

pub fn position_error(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (Vector3::from(*a) - Vector3::from(*b)).norm()
}

fn misaligned(what: &str, i: usize, a: f64, b: f64) -> HarnessError {
    HarnessError::Misaligned(format!("{what} row {i}: t = {a} vs {b}"))
}

/// Per-step errors. `step_times_us` is aligned with the rows when present.
pub fn compute_metrics(
    truth: &[StateRecord],
    estimate: &[EstimateRecord],
    baseline: Option<&[BaselineRecord]>,
    step_times_us: Option<&[Option<f64>]>,
) -> Result<RunMetrics, HarnessError> {
    let n = truth.len();
    if estimate.len() != n {
        return Err(HarnessError::Misaligned(format!(
            "{} truth rows, {} estimate rows",
            n,
            estimate.len()
        )));
    }
    if let Some(b) = baseline {
        if b.len() != n {
            return Err(HarnessError::Misaligned(format!(
                "{} truth rows, {} baseline rows",
                n,
                b.len()
            )));
        }
    }
    if let Some(s) = step_times_us {
        if s.len() != n {
            return Err(HarnessError::Misaligned(format!(
                "{} truth rows, {} timings",
                n,
                s.len()
            )));
        }
    }
    let mut rows = Vec::with_capacity(n);
    for (i, (tr, es)) in truth.iter().zip(estimate).enumerate() {
        let e = &es.state;
        if tr.t != e.t {
            return Err(misaligned("estimate", i, tr.t, e.t));
        }
        let base = baseline.map(|b| &b[i]);
        if let Some(b) = base {
            if b.t != tr.t {
                return Err(misaligned("baseline", i, tr.t, b.t));
            }
        }
        rows.push(MetricsRow {
            t: tr.t,
            pos_err_est: position_error(&e.position, &tr.position),
            pos_err_base: base.map(|b| position_error(&b.position, &tr.position)),
            yaw_err_est: yaw_error(&tr.orientation, &e.orientation),
            yaw_err_base: base.map(|b| yaw_error(&tr.orientation, &b.orientation)),
            bias_err: position_error(&e.gyro_bias, &tr.gyro_bias),
            ext_force_err: position_error(&e.external_force, &tr.external_force),
            step_time_us: step_times_us.and_then(|s| s[i]),
        });
    }
    Ok(summarize(rows))
}

/// Final errors and timing statistics of metric rows.
pub fn summarize(rows: Vec<MetricsRow>) -> RunMetrics {
    let last = rows.last();
    let mut times: Vec<f64> = rows.iter().filter_map(|r| r.step_time_us).collect();
    let timing = (!times.is_empty()).then(|| {
        times.sort_by(f64::total_cmp);
        let idx = ((times.len() as f64 * 0.99).ceil() as usize).clamp(1, times.len()) - 1;
        TimingStats {
            mean_us: times.iter().sum::<f64>() / times.len() as f64,
            p99_us: times[idx],
        }
    });
    RunMetrics {
        final_position_error: last.map_or(0.0, |r| r.pos_err_est),
        final_position_error_baseline: last.and_then(|r| r.pos_err_base),
        final_yaw_error: last.map_or(0.0, |r| r.yaw_err_est),
        final_yaw_error_baseline: last.and_then(|r| r.yaw_err_base),
        timing,
        rows,
    }
}

impl RunMetrics {
    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut s = format!(
            "steps: {}\nfinal position error (estimator): {:.6} m\nfinal yaw error (estimator): {:.6} rad\n",
            self.rows.len(),
            self.final_position_error,
            self.final_yaw_error
        );
        if let (Some(p), Some(y)) = (self.final_position_error_baseline, self.final_yaw_error_baseline) {
            s += &format!("final position error (baseline): {p:.6} m\nfinal yaw error (baseline): {y:.6} rad\n");
        }
        if let Some(t) = &self.timing {
            s += &format!("step time: mean {:.1} us, p99 {:.1} us\n", t.mean_us, t.p99_us);
        }
        s
    }
}
