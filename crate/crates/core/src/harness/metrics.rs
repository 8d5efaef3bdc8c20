//! Error metrics of a run and the metrics CSV.

use std::io::{Read, Write};

use crate::domain::{GridSpec, ScalarField, VectorField};
use crate::error::{Error, Result};

/// Area (m²) of the cells where exactly one of the maps reaches `threshold`.
pub fn oil_presence_error(grid: &GridSpec, truth: &ScalarField, estimate: &ScalarField, threshold: f64) -> Result<f64> {
    truth.check_grid(grid)?;
    estimate.check_grid(grid)?;
    let count = truth
        .values()
        .iter()
        .zip(estimate.values())
        .filter(|(a, b)| (**a >= threshold) != (**b >= threshold))
        .count();
    Ok(count as f64 * grid.cell_area())
}

/// RMS of the vector difference over the masked cells; `None` when the
/// mask is empty.
pub fn rms_current_error_where_oil(truth: &VectorField, estimate: &VectorField, mask: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (c, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let (a, b) = (truth.at(c), estimate.at(c));
        sum += (a.0 - b.0).powi(2) + (a.1 - b.1).powi(2);
        n += 1;
    }
    (n > 0).then(|| (sum / n as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub t: f64,
    pub oil_error_m2: f64,
    /// NaN when no oil is present.
    pub rms_current_mps: f64,
    /// Planner cost of the current cycle, NaN when not planning.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub strategy: String,
    pub rows: Vec<MetricRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.filter(|v| v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

impl MetricsSeries {
    /// Mean oil error over rows with `t0 <= t < t1`.
    pub fn mean_oil_error(&self, t0: f64, t1: f64) -> f64 {
        mean(self.rows.iter().filter(|r| r.t >= t0 && r.t < t1).map(|r| r.oil_error_m2))
    }

    /// Mean current error over rows with `t0 <= t < t1`, ignoring rows without oil.
    pub fn mean_current_error(&self, t0: f64, t1: f64) -> f64 {
        mean(self.rows.iter().filter(|r| r.t >= t0 && r.t < t1).map(|r| r.rms_current_mps))
    }

    pub fn final_oil_error(&self) -> f64 {
        self.rows.last().map_or(f64::NAN, |r| r.oil_error_m2)
    }
}

pub const METRICS_CSV_HEADER: [&str; 6] = ["strategy", "step", "t", "oil_error_m2", "rms_current_mps", "J"];

pub fn write_metrics_csv<W: Write>(w: W, series: &[MetricsSeries]) -> Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(METRICS_CSV_HEADER)?;
    for s in series {
        for r in &s.rows {
            w.write_record([
                s.strategy.clone(),
                r.step.to_string(),
                r.t.to_string(),
                r.oil_error_m2.to_string(),
                r.rms_current_mps.to_string(),
                r.cost.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a metrics CSV back, one series per strategy in order of appearance.
pub fn read_metrics_csv<R: Read>(r: R) -> Result<Vec<MetricsSeries>> {
    let mut rd = csv::Reader::from_reader(r);
    let header: Vec<String> = rd.headers()?.iter().map(str::to_owned).collect();
    if header != METRICS_CSV_HEADER {
        return Err(Error::Format(format!("unexpected metrics header {header:?}")));
    }
    let mut out: Vec<MetricsSeries> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .map_err(|e| Error::Format(format!("bad number `{}`: {e}", &rec[i])))
        };
        let row = MetricRow {
            step: rec[1].parse().map_err(|e| Error::Format(format!("bad step `{}`: {e}", &rec[1])))?,
            t: num(2)?,
            oil_error_m2: num(3)?,
            rms_current_mps: num(4)?,
            cost: num(5)?,
        };
        match out.iter_mut().find(|s| s.strategy == rec[0]) {
            Some(s) => s.rows.push(row),
            None => out.push(MetricsSeries {
                strategy: rec[0].to_owned(),
                rows: vec![row],
            }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> GridSpec {
        GridSpec::new(10, 10, 1000.0, 1000.0, Point::new(500.0, 500.0)).unwrap()
    }

    #[test]
    fn presence_error_examples() {
        let g = grid();
        let a = ScalarField::from_fn(&g, |p| if p.y < 1000.0 && p.x < 5000.0 { 1.0 } else { 0.0 });
        assert_eq!(oil_presence_error(&g, &a, &a, 0.05).unwrap(), 0.0);
        let b = ScalarField::from_fn(&g, |p| if p.y > 9000.0 && p.x < 3000.0 { 0.5 } else { 0.0 });
        assert_eq!(oil_presence_error(&g, &a, &b, 0.05).unwrap(), 8.0e6);
    }

    #[test]
    fn presence_error_matches_cell_count_oracle() {
        let g = grid();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = ScalarField::from_fn(&g, |_| rng.random::<f64>());
            let b = ScalarField::from_fn(&g, |_| rng.random::<f64>());
            let th = rng.random::<f64>();
            let mut xor = 0;
            for j in 0..10 {
                for i in 0..10 {
                    if (a.get(i, j) >= th) ^ (b.get(i, j) >= th) {
                        xor += 1;
                    }
                }
            }
            assert_eq!(oil_presence_error(&g, &a, &b, th).unwrap(), xor as f64 * 1.0e6);
        }
    }

    #[test]
    fn rms_examples_and_oracle() {
        let g = grid();
        let t = VectorField::uniform(&g, 0.1, -0.2);
        let mask = vec![true; 100];
        assert_eq!(rms_current_error_where_oil(&t, &t, &mask), Some(0.0));
        let e = VectorField::uniform(&g, 0.4, 0.2);
        assert!((rms_current_error_where_oil(&t, &e, &mask).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(rms_current_error_where_oil(&t, &e, &[false; 100]), None);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = VectorField::from_fn(&g, |_| (rng.random(), rng.random()));
        let b = VectorField::from_fn(&g, |_| (rng.random(), rng.random()));
        let m: Vec<bool> = (0..100).map(|_| rng.random_bool(0.3)).collect();
        let mut s = 0.0;
        let mut n = 0.0;
        for c in 0..100 {
            if m[c] {
                s += (a.u.values()[c] - b.u.values()[c]).powi(2) + (a.v.values()[c] - b.v.values()[c]).powi(2);
                n += 1.0;
            }
        }
        assert!((rms_current_error_where_oil(&a, &b, &m).unwrap() - (s / n).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_and_windows() {
        let rows = |k: f64| {
            (0..5)
                .map(|i| MetricRow {
                    step: i,
                    t: 60.0 * i as f64,
                    oil_error_m2: k * i as f64,
                    rms_current_mps: if i == 0 { f64::NAN } else { 0.1 * k },
                    cost: f64::NAN,
                })
                .collect()
        };
        let series = vec![
            MetricsSeries { strategy: "none".into(), rows: rows(1.0) },
            MetricsSeries { strategy: "model-based".into(), rows: rows(2.0) },
        ];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &series).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 1 + 10);
        assert!(text.starts_with("strategy,step,t,oil_error_m2,rms_current_mps,J\n"));
        let back = read_metrics_csv(&buf[..]).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[1].rows[3].oil_error_m2, 6.0);
        assert!(back[0].rows[0].rms_current_mps.is_nan());
        assert_eq!(series[0].mean_oil_error(60.0, 240.0), 2.0);
        assert!((series[1].mean_current_error(0.0, 1e9) - 0.2).abs() < 1e-15);
        assert_eq!(series[1].final_oil_error(), 8.0);
    }
}
