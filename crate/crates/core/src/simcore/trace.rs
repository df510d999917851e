//! Recorded command/measurement traces and offline detector replay.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Vector;
use crate::simcore::timeseries::fmt9;
use crate::sysid::DiscreteModel;
use crate::watermark::{dw_step, Calibration, DetectorState};

/// Per control instant: command `u` and watermark `e` applied from that
/// instant on, and the power measurement `y` received at it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DetectionTrace {
    pub channels: usize,
    pub time: Vec<f64>,
    pub u: Vec<Vector>,
    pub e: Vec<Vector>,
    pub y: Vec<Vector>,
}

impl DetectionTrace {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            ..Default::default()
        }
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn push(&mut self, t: f64, u: &Vector, e: &Vector, y: &Vector) {
        self.time.push(t);
        self.u.push(u.clone());
        self.e.push(e.clone());
        self.y.push(y.clone());
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let n = self.channels;
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["time".to_string()];
        for p in ["u", "e", "y"] {
            header.extend((1..=n).map(|i| format!("{p}{i}")));
        }
        w.write_record(&header)?;
        for k in 0..self.len() {
            let mut rec = vec![fmt9(self.time[k])];
            for v in [&self.u[k], &self.e[k], &self.y[k]] {
                rec.extend(v.iter().map(|x| format!("{x:.16e}")));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        let cols = header.len();
        if cols < 4 || (cols - 1) % 3 != 0 || &header[0] != "time" {
            return Err(Error::Parse {
                line: 1,
                message: "expected columns time,u1..un,e1..en,y1..yn".into(),
            });
        }
        let n = (cols - 1) / 3;
        let mut trace = Self::new(n);
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let vals = rec
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| Error::Parse {
                        line,
                        message: format!("'{s}': {e}"),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let part = |k: usize| Vector::from_column_slice(&vals[1 + k * n..1 + (k + 1) * n]);
            trace.time.push(vals[0]);
            trace.u.push(part(0));
            trace.e.push(part(1));
            trace.y.push(part(2));
        }
        Ok(trace)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// One detector evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorRow {
    pub time: f64,
    pub microgrid: String,
    pub xi1: f64,
    pub xi2: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub flag: bool,
}

impl DetectorRow {
    pub fn write_csv<W: Write>(rows: &[DetectorRow], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["time", "microgrid", "xi1", "xi2", "eps1", "eps2", "flag"])?;
        for r in rows {
            w.write_record([
                fmt9(r.time),
                r.microgrid.clone(),
                fmt9(r.xi1),
                fmt9(r.xi2),
                fmt9(r.eps1),
                fmt9(r.eps2),
                u8::from(r.flag).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(rows: &[DetectorRow], path: &Path) -> Result<()> {
        Self::write_csv(rows, std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// Runs the detector over a recorded trace exactly as the online loop does.
pub fn replay_detection(
    trace: &DetectionTrace,
    model: &DiscreteModel,
    calibration: &Calibration,
    label: &str,
) -> Result<Vec<DetectorRow>> {
    if model.n_inputs() != trace.channels || model.n_outputs() != trace.channels {
        return Err(Error::dim("replay model channels", trace.channels, model.n_inputs()));
    }
    if calibration.baseline.mu_star.len() != trace.channels {
        return Err(Error::dim(
            "replay calibration channels",
            trace.channels,
            calibration.baseline.mu_star.len(),
        ));
    }
    let mut st = DetectorState::new(
        model.order,
        calibration.baseline.w,
        calibration.eps1,
        calibration.eps2,
    );
    let mut rows = Vec::new();
    for k in 1..trace.len() {
        let flag = dw_step(
            &mut st,
            &calibration.baseline,
            model,
            &trace.y[k],
            &trace.u[k - 1],
            &trace.e[k - 1],
        )?;
        rows.push(DetectorRow {
            time: trace.time[k],
            microgrid: label.to_string(),
            xi1: st.xi1,
            xi2: st.xi2,
            eps1: st.eps1,
            eps2: st.eps2,
            flag,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let mut t = DetectionTrace::new(2);
        let v = |a: f64, b: f64| Vector::from_vec(vec![a, b]);
        t.push(0.0, &v(0.5, -1.0), &v(0.01, 0.02), &v(3.0, 4.0));
        t.push(0.005, &v(0.25, -2.0), &v(-0.01, 0.0), &v(3.5, 4.5));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let back = DetectionTrace::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn bad_cell_reports_line() {
        let s = "time,u1,e1,y1\n0,1,2,3\n0.1,x,2,3\n";
        match DetectionTrace::read_csv(s.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }
}
