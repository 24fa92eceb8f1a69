//! Log records and their CSV encoding. Every file starts with a schema line
//! followed by a header row; absent values are empty fields. Floats are
//! written in shortest round-trip form so that reading a log back yields the
//! exact in-memory values.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::HarnessError;

pub const TRUTH_SCHEMA: &str = "# schema: legged-est/truth v1";
pub const ESTIMATE_SCHEMA: &str = "# schema: legged-est/estimate v1";
pub const BASELINE_SCHEMA: &str = "# schema: legged-est/baseline v1";
pub const METRICS_SCHEMA: &str = "# schema: legged-est/metrics v1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactRecord {
    pub rest_position: [f64; 3],
    /// `w, x, y, z`
    pub rest_orientation: [f64; 4],
    /// Contact frame.
    pub force: [f64; 3],
    pub torque: [f64; 3],
}

/// World-frame snapshot of the quantities shared by truth and estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub t: f64,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
    pub linear_velocity: [f64; 3],
    pub angular_velocity: [f64; 3],
    /// One slot per limb.
    pub contacts: Vec<Option<ContactRecord>>,
    pub gyro_bias: [f64; 3],
    /// Centroid frame.
    pub external_force: [f64; 3],
    pub external_torque: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub state: StateRecord,
    /// Covariance diagonal in a fixed layout: kinematics, bias, external
    /// wrench, then 12 entries per limb (empty when the contact is absent).
    pub covariance: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineRecord {
    pub t: f64,
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub t: f64,
    pub pos_err_est: f64,
    pub pos_err_base: Option<f64>,
    pub yaw_err_est: f64,
    pub yaw_err_base: Option<f64>,
    pub bias_err: f64,
    pub ext_force_err: f64,
    pub step_time_us: Option<f64>,
}

const XYZ: [&str; 3] = ["x", "y", "z"];
const WXYZ: [&str; 4] = ["w", "x", "y", "z"];

fn names(prefix: &str, axes: &[&str]) -> Vec<String> {
    axes.iter().map(|a| format!("{prefix}{a}")).collect()
}

pub fn state_header(n_limbs: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(names("p", &XYZ));
    h.extend(names("q", &WXYZ));
    h.extend(names("v", &XYZ));
    h.extend(names("w", &XYZ));
    for i in 0..n_limbs {
        h.extend(names(&format!("c{i}_p"), &XYZ));
        h.extend(names(&format!("c{i}_q"), &WXYZ));
        h.extend(names(&format!("c{i}_f"), &XYZ));
        h.extend(names(&format!("c{i}_t"), &XYZ));
    }
    h.extend(names("b", &XYZ));
    h.extend(names("ef", &XYZ));
    h.extend(names("et", &XYZ));
    h
}

pub fn covariance_header(n_limbs: usize) -> Vec<String> {
    let mut h = Vec::new();
    for s in ["p", "r", "v", "w", "b", "ef", "et"] {
        h.extend(names(&format!("var_{s}"), &XYZ));
    }
    for i in 0..n_limbs {
        for s in ["p", "r", "f", "t"] {
            h.extend(names(&format!("c{i}_var_{s}"), &XYZ));
        }
    }
    h
}

pub fn estimate_header(n_limbs: usize) -> Vec<String> {
    let mut h = state_header(n_limbs);
    h.extend(covariance_header(n_limbs));
    h
}

pub fn baseline_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(names("p", &XYZ));
    h.extend(names("q", &WXYZ));
    h
}

pub fn metrics_header() -> Vec<String> {
    [
        "t",
        "pos_err_est",
        "pos_err_base",
        "yaw_err_est",
        "yaw_err_base",
        "bias_err",
        "extF_err",
        "step_time_us",
    ]
    .map(String::from)
    .to_vec()
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

fn push_all(out: &mut Vec<String>, xs: &[f64]) {
    out.extend(xs.iter().copied().map(num));
}

fn state_fields(r: &StateRecord) -> Vec<String> {
    let mut f = vec![num(r.t)];
    push_all(&mut f, &r.position);
    push_all(&mut f, &r.orientation);
    push_all(&mut f, &r.linear_velocity);
    push_all(&mut f, &r.angular_velocity);
    for c in &r.contacts {
        match c {
            Some(c) => {
                push_all(&mut f, &c.rest_position);
                push_all(&mut f, &c.rest_orientation);
                push_all(&mut f, &c.force);
                push_all(&mut f, &c.torque);
            }
            None => f.extend(std::iter::repeat_n(String::new(), 13)),
        }
    }
    push_all(&mut f, &r.gyro_bias);
    push_all(&mut f, &r.external_force);
    push_all(&mut f, &r.external_torque);
    f
}

fn write_csv(
    path: &Path,
    schema: &str,
    header: Vec<String>,
    rows: impl Iterator<Item = Vec<String>>,
) -> Result<(), HarnessError> {
    let err = |e: &dyn std::fmt::Display| HarnessError::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut buf = Vec::new();
    writeln!(buf, "{schema}").map_err(|e| err(&e))?;
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&header).map_err(|e| err(&e))?;
        for r in rows {
            w.write_record(&r).map_err(|e| err(&e))?;
        }
        w.flush().map_err(|e| err(&e))?;
    }
    fs::write(path, buf).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_truth(path: &Path, n_limbs: usize, rows: &[StateRecord]) -> Result<(), HarnessError> {
    write_csv(path, TRUTH_SCHEMA, state_header(n_limbs), rows.iter().map(state_fields))
}

pub fn write_estimate(path: &Path, n_limbs: usize, rows: &[EstimateRecord]) -> Result<(), HarnessError> {
    write_csv(
        path,
        ESTIMATE_SCHEMA,
        estimate_header(n_limbs),
        rows.iter().map(|r| {
            let mut f = state_fields(&r.state);
            f.extend(r.covariance.iter().copied().map(opt));
            f
        }),
    )
}

pub fn write_baseline(path: &Path, rows: &[BaselineRecord]) -> Result<(), HarnessError> {
    write_csv(
        path,
        BASELINE_SCHEMA,
        baseline_header(),
        rows.iter().map(|r| {
            let mut f = vec![num(r.t)];
            push_all(&mut f, &r.position);
            push_all(&mut f, &r.orientation);
            f
        }),
    )
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<(), HarnessError> {
    write_csv(
        path,
        METRICS_SCHEMA,
        metrics_header(),
        rows.iter().map(|r| {
            vec![
                num(r.t),
                num(r.pos_err_est),
                opt(r.pos_err_base),
                num(r.yaw_err_est),
                opt(r.yaw_err_base),
                num(r.bias_err),
                num(r.ext_force_err),
                opt(r.step_time_us),
            ]
        }),
    )
}

/// Parsed CSV body: header and rows of optional numbers.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<Option<f64>>>,
}

fn read_csv(path: &Path, schema: &str) -> Result<Table, HarnessError> {
    let err = |m: String| HarnessError::Csv {
        path: path.to_path_buf(),
        message: m,
    };
    let text = fs::read_to_string(path).map_err(|e| HarnessError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let (first, body) = text.split_once('\n').unwrap_or((&text, ""));
    if first.trim_end() != schema {
        return Err(err(format!("expected schema line `{schema}`, found `{first}`")));
    }
    let mut r = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| err(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let row = rec
            .iter()
            .map(|s| {
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse::<f64>()
                        .map(Some)
                        .map_err(|e| err(format!("row {}: `{s}`: {e}", i + 1)))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        if row.len() != header.len() {
            return Err(err(format!(
                "row {} has {} fields, expected {}",
                i + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok(Table { header, rows })
}

fn limbs_in(header: &[String]) -> usize {
    (0..)
        .take_while(|i| header.iter().any(|h| *h == format!("c{i}_px")))
        .count()
}

struct Cursor<'a> {
    row: &'a [Option<f64>],
    at: usize,
}

impl Cursor<'_> {
    fn opt(&mut self) -> Option<f64> {
        let v = self.row[self.at];
        self.at += 1;
        v
    }

    fn req(&mut self) -> Result<f64, String> {
        let col = self.at;
        self.opt().ok_or_else(|| format!("missing value in column {}", col + 1))
    }

    fn arr<const N: usize>(&mut self) -> Result<[f64; N], String> {
        let mut a = [0.0; N];
        for v in a.iter_mut() {
            *v = self.req()?;
        }
        Ok(a)
    }

    fn opt_arr<const N: usize>(&mut self) -> Option<[f64; N]> {
        let mut a = [0.0; N];
        let mut all = true;
        for v in a.iter_mut() {
            match self.opt() {
                Some(x) => *v = x,
                None => all = false,
            }
        }
        all.then_some(a)
    }
}

fn parse_state(c: &mut Cursor, n_limbs: usize) -> Result<StateRecord, String> {
    let t = c.req()?;
    let position = c.arr()?;
    let orientation = c.arr()?;
    let linear_velocity = c.arr()?;
    let angular_velocity = c.arr()?;
    let mut contacts = Vec::with_capacity(n_limbs);
    for _ in 0..n_limbs {
        let p = c.opt_arr::<3>();
        let q = c.opt_arr::<4>();
        let f = c.opt_arr::<3>();
        let tq = c.opt_arr::<3>();
        contacts.push(match (p, q, f, tq) {
            (Some(p), Some(q), Some(f), Some(tq)) => Some(ContactRecord {
                rest_position: p,
                rest_orientation: q,
                force: f,
                torque: tq,
            }),
            _ => None,
        });
    }
    Ok(StateRecord {
        t,
        position,
        orientation,
        linear_velocity,
        angular_velocity,
        contacts,
        gyro_bias: c.arr()?,
        external_force: c.arr()?,
        external_torque: c.arr()?,
    })
}

fn check_header(path: &Path, got: &[String], expected: &[String]) -> Result<(), HarnessError> {
    if got == expected {
        Ok(())
    } else {
        Err(HarnessError::Csv {
            path: path.to_path_buf(),
            message: "unexpected column layout".into(),
        })
    }
}

fn row_err(path: &Path, i: usize) -> impl Fn(String) -> HarnessError + '_ {
    move |m| HarnessError::Csv {
        path: path.to_path_buf(),
        message: format!("row {}: {m}", i + 1),
    }
}

pub fn read_truth(path: &Path) -> Result<Vec<StateRecord>, HarnessError> {
    let t = read_csv(path, TRUTH_SCHEMA)?;
    let n = limbs_in(&t.header);
    check_header(path, &t.header, &state_header(n))?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| parse_state(&mut Cursor { row, at: 0 }, n).map_err(row_err(path, i)))
        .collect()
}

pub fn read_estimate(path: &Path) -> Result<Vec<EstimateRecord>, HarnessError> {
    let t = read_csv(path, ESTIMATE_SCHEMA)?;
    let n = limbs_in(&t.header);
    check_header(path, &t.header, &estimate_header(n))?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut c = Cursor { row, at: 0 };
            let state = parse_state(&mut c, n).map_err(row_err(path, i))?;
            Ok(EstimateRecord {
                state,
                covariance: row[c.at..].to_vec(),
            })
        })
        .collect()
}

pub fn read_baseline(path: &Path) -> Result<Vec<BaselineRecord>, HarnessError> {
    let t = read_csv(path, BASELINE_SCHEMA)?;
    check_header(path, &t.header, &baseline_header())?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut c = Cursor { row, at: 0 };
            let parse = |c: &mut Cursor| -> Result<BaselineRecord, String> {
                Ok(BaselineRecord {
                    t: c.req()?,
                    position: c.arr()?,
                    orientation: c.arr()?,
                })
            };
            parse(&mut c).map_err(row_err(path, i))
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>, HarnessError> {
    let t = read_csv(path, METRICS_SCHEMA)?;
    check_header(path, &t.header, &metrics_header())?;
    t.rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut c = Cursor { row, at: 0 };
            let parse = |c: &mut Cursor| -> Result<MetricsRow, String> {
                Ok(MetricsRow {
                    t: c.req()?,
                    pos_err_est: c.req()?,
                    pos_err_base: c.opt(),
                    yaw_err_est: c.req()?,
                    yaw_err_base: c.opt(),
                    bias_err: c.req()?,
                    ext_force_err: c.req()?,
                    step_time_us: c.opt(),
                })
            };
            parse(&mut c).map_err(row_err(path, i))
        })
        .collect()
}
