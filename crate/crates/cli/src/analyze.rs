//! Post-processing of a diagnostics CSV.

use std::path::Path;

use serde::Serialize;

use crate::CliError;

/// Relative entropy increase between consecutive records that counts as a
/// violation; smaller changes are summation round-off.
pub const ENTROPY_TOLERANCE: f64 = 1e-12;

/// Columns of the diagnostics CSV that the analysis reads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Row {
    pub t: f64,
    pub rho: f64,
    pub velocity: [f64; 3],
    pub temperature_raw: f64,
    pub entropy: f64,
    pub dist_to_eq: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Drift {
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
}

impl Drift {
    pub fn max(&self) -> f64 {
        self.mass.max(self.momentum).max(self.energy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub records: usize,
    pub t_first: f64,
    pub t_last: f64,
    /// Time for `||g - M||_2` to halve, from a least-squares fit of its
    /// logarithm. `None` when the distance does not decay.
    pub half_life: Option<f64>,
    pub entropy_violations: usize,
    pub drift: Drift,
}

pub fn read_rows(path: &Path) -> Result<Vec<Row>, CliError> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{}: missing column {name}", path.display())))
    };
    let idx = [
        col("t")?,
        col("rho")?,
        col("V1")?,
        col("V2")?,
        col("V3")?,
        col("T_raw")?,
        col("entropy")?,
        col("dist_to_eq")?,
    ];
    let mut rows = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let mut x = [0.0; 8];
        for (slot, &i) in x.iter_mut().zip(&idx) {
            let cell = rec.get(i).unwrap_or("");
            *slot = cell.trim().parse().map_err(|_| {
                CliError::Usage(format!("{}: record {}: bad number {cell:?}", path.display(), line + 1))
            })?;
        }
        rows.push(Row {
            t: x[0],
            rho: x[1],
            velocity: [x[2], x[3], x[4]],
            temperature_raw: x[5],
            entropy: x[6],
            dist_to_eq: x[7],
        });
    }
    Ok(rows)
}

/// Largest relative change of mass, momentum and energy against the first
/// row. Momentum is measured against `rho_0` times the initial rms speed.
pub fn drift(rows: &[Row]) -> Drift {
    let Some(first) = rows.first() else {
        return Drift::default();
    };
    let energy = |r: &Row| r.rho * r.temperature_raw;
    let speed = (3.0 * first.temperature_raw).sqrt();
    let mut d = Drift::default();
    for r in rows {
        d.mass = d.mass.max((r.rho - first.rho).abs() / first.rho.abs());
        for k in 0..3 {
            let p = (r.rho * r.velocity[k] - first.rho * first.velocity[k]).abs();
            d.momentum = d.momentum.max(p / (first.rho.abs() * speed));
        }
        d.energy = d.energy.max((energy(r) - energy(first)).abs() / energy(first).abs());
    }
    d
}

pub fn entropy_violations(rows: &[Row]) -> usize {
    rows.windows(2)
        .filter(|w| w[1].entropy - w[0].entropy > ENTROPY_TOLERANCE * w[0].entropy.abs().max(1.0))
        .count()
}

/// `ln 2 / k` for the least-squares fit `ln d(t) = c - k t`.
pub fn half_life(rows: &[Row]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.dist_to_eq > 0.0 && r.dist_to_eq.is_finite())
        .map(|r| (r.t, r.dist_to_eq.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    if stt == 0.0 {
        return None;
    }
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let rate = -sty / stt;
    (rate > 0.0).then(|| std::f64::consts::LN_2 / rate)
}

pub fn summarize(rows: &[Row]) -> Result<Summary, CliError> {
    let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
        return Err(CliError::Usage("no records".into()));
    };
    Ok(Summary {
        records: rows.len(),
        t_first: first.t,
        t_last: last.t,
        half_life: half_life(rows),
        entropy_violations: entropy_violations(rows),
        drift: drift(rows),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, dist: f64, entropy: f64) -> Row {
        Row {
            t,
            rho: 1.0,
            velocity: [0.0; 3],
            temperature_raw: 1.0,
            entropy,
            dist_to_eq: dist,
        }
    }

    #[test]
    fn exact_exponential_gives_exact_half_life() {
        let rows: Vec<Row> = (0..20).map(|i| row(0.1 * i as f64, 0.3 * (-1.7 * 0.1 * i as f64).exp(), -1.0)).collect();
        let h = half_life(&rows).unwrap();
        assert!((h - std::f64::consts::LN_2 / 1.7).abs() < 1e-12);
    }

    #[test]
    fn growth_has_no_half_life() {
        let rows = vec![row(0.0, 1.0, 0.0), row(1.0, 2.0, 0.0)];
        assert_eq!(half_life(&rows), None);
    }

    #[test]
    fn entropy_increase_is_counted() {
        let rows = vec![row(0.0, 1.0, -1.0), row(1.0, 1.0, -1.1), row(2.0, 1.0, -1.05), row(3.0, 1.0, -1.2)];
        assert_eq!(entropy_violations(&rows), 1);
    }

    #[test]
    fn drift_is_relative_to_first_row() {
        let mut a = row(0.0, 1.0, 0.0);
        a.temperature_raw = 2.0;
        let mut b = a;
        b.rho = 1.001;
        let d = drift(&[a, b]);
        assert!((d.mass - 1e-3).abs() < 1e-15);
        assert!((d.energy - 1e-3).abs() < 1e-12);
        assert_eq!(d.momentum, 0.0);
    }

    #[test]
    fn empty_input_has_no_records() {
        assert_eq!(summarize(&[]).unwrap_err().to_string(), "no records");
    }
}
