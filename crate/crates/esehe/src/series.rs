//! Named time series with CSV round trip.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::units::Unit;

/// A named signal sampled at strictly increasing times.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    name: String,
    unit: Unit,
    times: Vec<f64>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(name: impl Into<String>, unit: Unit, times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::Precondition(format!(
                "time series length mismatch: {} times, {} values",
                times.len(),
                values.len()
            )));
        }
        if let Some(w) = times.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(Error::Precondition(format!(
                "times not strictly increasing at index {}",
                w + 1
            )));
        }
        Ok(Self {
            name: name.into(),
            unit,
            times,
            values,
        })
    }

    /// Uniformly sampled series starting at t = 0.
    pub fn uniform(name: impl Into<String>, unit: Unit, step: f64, values: Vec<f64>) -> Result<Self> {
        let times = (0..values.len()).map(|k| k as f64 * step).collect();
        Self::new(name, unit, times, values)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn last(&self) -> Option<f64> {
        self.values.last().copied()
    }

    /// Linear interpolation, holding the end values outside the range.
    pub fn sample(&self, t: f64) -> f64 {
        let n = self.times.len();
        if n == 0 {
            return 0.0;
        }
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let k = self.times.partition_point(|&x| x <= t) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let w = (t - t0) / (t1 - t0);
        self.values[k] * (1.0 - w) + self.values[k + 1] * w
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(w);
        wtr.write_record(["time_s", self.name.as_str()])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            wtr.write_record([t.to_string(), v.to_string()])?;
        }
        wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R, unit: Unit) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[0] != "time_s" {
            return Err(Error::Parse("time series CSV must start with a time_s column".into()));
        }
        let name = headers[1].to_string();
        let mut times = Vec::new();
        let mut values = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .unwrap_or("")
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("bad number in row {:?}: {e}", rec.position())))
            };
            times.push(parse(0)?);
            values.push(parse(1)?);
        }
        Self::new(name, unit, times, values)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>, unit: Unit) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f, unit)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_monotone_times() {
        assert!(TimeSeries::new("p", Unit::Watt, vec![0.0, 1.0, 1.0], vec![1.0; 3]).is_err());
        assert!(TimeSeries::new("p", Unit::Watt, vec![0.0, 1.0], vec![1.0]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let s = TimeSeries::uniform("p_s", Unit::Watt, 0.5, vec![1.0, 2.5, -3.0]).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("time_s,p_s\n"));
        assert!(!text.contains('\r'));
        let back = TimeSeries::read_csv(buf.as_slice(), Unit::Watt).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn interpolation() {
        let s = TimeSeries::new("x", Unit::Watt, vec![0.0, 2.0], vec![0.0, 4.0]).unwrap();
        assert_eq!(s.sample(1.0), 2.0);
        assert_eq!(s.sample(-1.0), 0.0);
        assert_eq!(s.sample(5.0), 4.0);
    }
}
