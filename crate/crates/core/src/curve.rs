use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// Loss values `Λ` at `0, Δ, 2Δ, …, nΔ`, extended between grid times as a
/// right-continuous step function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub dt: f64,
    pub alpha: f64,
    pub values: Vec<f64>,
}

impl LossCurve {
    /// Checks monotonicity and `0 ≤ Λ ≤ α`.
    pub fn new(dt: f64, alpha: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidMesh(format!("dt must be positive, got {dt}")));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::param("alpha", format!("must be positive, got {alpha}")));
        }
        if values.is_empty() {
            return Err(Error::InvalidMesh("a loss curve needs at least one value".into()));
        }
        if let Some(k) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::param(
                "values",
                format!("decrease between steps {k} and {}", k + 1),
            ));
        }
        if values[0] < 0.0 || *values.last().unwrap() > alpha * (1.0 + 1e-12) {
            return Err(Error::param("values", "must lie in [0, alpha]"));
        }
        Ok(LossCurve { dt, alpha, values })
    }

    /// Number of time steps `n`; the curve holds `n + 1` values.
    pub fn steps(&self) -> usize {
        self.values.len() - 1
    }

    pub fn horizon(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// `Λ_t = Λ_{⌊t/Δ⌋Δ}`, clamped to the last value beyond the horizon.
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.values[0];
        }
        // guard against t = kΔ landing just below the grid point
        let k = (t / self.dt * (1.0 + 4.0 * f64::EPSILON)).floor() as usize;
        self.values[k.min(self.steps())]
    }

    pub fn final_value(&self) -> f64 {
        *self.values.last().unwrap()
    }

    /// The normalized curve `L = Λ/α`.
    pub fn loss_fractions(&self) -> Vec<f64> {
        self.values.iter().map(|v| v / self.alpha).collect()
    }

    /// Columns `t, lambda, loss_fraction`, one row per grid time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(["t", "lambda", "loss_fraction"])?;
        for (k, v) in self.values.iter().enumerate() {
            writer.write_record(&[
                self.time(k).to_string(),
                v.to_string(),
                (v / self.alpha).to_string(),
            ])?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    /// Reads back the output of [`LossCurve::write_csv`].
    pub fn read_csv<R: std::io::Read>(input: R, alpha: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .ok_or_else(|| Error::Parse("missing column".into()))?
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(e.to_string()))
            };
            times.push(parse(0)?);
            values.push(parse(1)?);
        }
        if times.len() < 2 {
            return Err(Error::Parse("need at least two rows to recover dt".into()));
        }
        LossCurve::new(times[1] - times[0], alpha, values)
    }
}
