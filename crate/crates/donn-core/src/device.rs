//! Calibrated device response tables: the discrete control levels a physical
//! modulator exposes and the (amplitude, phase) response measured for each.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{DonnError, Result};
use crate::real::Real;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Per-layer list of feasible control levels with calibrated responses.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceResponseTable {
    control: Vec<f64>,
    amplitude: Vec<f64>,
    phase: Vec<f64>,
}

impl DeviceResponseTable {
    /// Validates and stores a table. Phases are wrapped into `[0, 2 pi)`.
    pub fn new(control: Vec<f64>, amplitude: Vec<f64>, phase: Vec<f64>) -> Result<Self> {
        let k = control.len();
        if k < 2 {
            return Err(DonnError::DeviceTable(format!(
                "need at least 2 levels, got {k}"
            )));
        }
        if amplitude.len() != k || phase.len() != k {
            return Err(DonnError::DeviceTable(format!(
                "column lengths differ: control {k}, amplitude {}, phase {}",
                amplitude.len(),
                phase.len()
            )));
        }
        for w in control.windows(2) {
            if !(w[1] > w[0]) {
                return Err(DonnError::DeviceTable(format!(
                    "control values must be strictly increasing, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, &a) in amplitude.iter().enumerate() {
            if !(a >= 0.0) || !a.is_finite() {
                return Err(DonnError::DeviceTable(format!(
                    "amplitude at level {i} must be non-negative and finite, got {a}"
                )));
            }
        }
        for &p in &phase {
            if !p.is_finite() {
                return Err(DonnError::DeviceTable(format!("non-finite phase {p}")));
            }
        }
        let phase = phase.into_iter().map(|p| p.rem_euclid(TWO_PI)).collect();
        Ok(Self {
            control,
            amplitude,
            phase,
        })
    }

    #[inline]
    pub fn levels(&self) -> usize {
        self.control.len()
    }

    #[inline]
    pub fn control(&self) -> &[f64] {
        &self.control
    }

    #[inline]
    pub fn amplitude(&self) -> &[f64] {
        &self.amplitude
    }

    /// Phases in `[0, 2 pi)`.
    #[inline]
    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn amplitude_as<T: Real>(&self) -> Vec<T> {
        self.amplitude.iter().map(|&a| T::of(a)).collect()
    }

    pub fn phase_as<T: Real>(&self) -> Vec<T> {
        self.phase.iter().map(|&p| T::of(p)).collect()
    }

    /// Index of the level whose control value is nearest to `v` (clamped to
    /// the table range); ties pick the lower level.
    pub fn nearest_level(&self, v: f64) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &c) in self.control.iter().enumerate() {
            let d = (v - c).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// Index of the level whose phase is nearest to `target`; ties pick the
    /// lower level. Comparison is on the stored representatives in
    /// `[0, 2 pi)`, without wrap-around distance.
    pub fn nearest_phase_level(&self, target: f64) -> usize {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (i, &p) in self.phase.iter().enumerate() {
            let d = (target - p).abs();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }

    /// The synthetic 8-level table shipped with the repo for tests and the
    /// default experiment config: amplitudes dip non-monotonically inside
    /// [0.6, 1.0] and phases cover roughly 1.8 pi with one local reversal,
    /// mimicking a measured twisted-nematic modulator curve.
    pub fn fixture_8level() -> Self {
        Self::new(
            (0..8).map(|v| v as f64).collect(),
            vec![0.975, 0.920, 0.845, 0.760, 0.680, 0.625, 0.608, 0.636],
            vec![0.000, 0.350, 1.050, 1.950, 1.700, 2.900, 4.300, 5.600],
        )
        .expect("fixture table is valid")
    }

    /// Parses the device CSV: header `level,control,amplitude,phase_rad`,
    /// one row per level, levels `0..k-1` in order.
    pub fn from_csv_reader<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines().enumerate();
        let header = loop {
            match lines.next() {
                Some((_, line)) => {
                    let line = line.map_err(|e| DonnError::DeviceTable(e.to_string()))?;
                    let t = line.trim();
                    if t.is_empty() || t.starts_with('#') {
                        continue;
                    }
                    break t.to_string();
                }
                None => return Err(DonnError::DeviceTable("empty file".into())),
            }
        };
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["level", "control", "amplitude", "phase_rad"] {
            return Err(DonnError::DeviceTable(format!(
                "missing or misnamed columns; expected header `level,control,amplitude,phase_rad`, got `{header}`"
            )));
        }
        let mut control = Vec::new();
        let mut amplitude = Vec::new();
        let mut phase = Vec::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| DonnError::DeviceTable(e.to_string()))?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = t.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(DonnError::DeviceTable(format!(
                    "line {}: expected 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let parse = |s: &str, what: &str| -> Result<f64> {
                s.parse::<f64>().map_err(|_| {
                    DonnError::DeviceTable(format!("line {}: bad {what} `{s}`", lineno + 1))
                })
            };
            let level = parse(fields[0], "level")?;
            if level != control.len() as f64 {
                return Err(DonnError::DeviceTable(format!(
                    "line {}: expected level {}, got {level}",
                    lineno + 1,
                    control.len()
                )));
            }
            control.push(parse(fields[1], "control")?);
            amplitude.push(parse(fields[2], "amplitude")?);
            phase.push(parse(fields[3], "phase_rad")?);
        }
        Self::new(control, amplitude, phase)
    }

    pub fn load_csv<P: AsRef<Path>>(path: P) -> Result<Self> {
        let f = std::fs::File::open(&path).map_err(|e| DonnError::io(&path, e))?;
        Self::from_csv_reader(BufReader::new(f))
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "level,control,amplitude,phase_rad")?;
        for i in 0..self.levels() {
            writeln!(
                w,
                "{},{},{},{}",
                i, self.control[i], self.amplitude[i], self.phase[i]
            )?;
        }
        Ok(())
    }

    pub fn save_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let mut f = std::fs::File::create(&path).map_err(|e| DonnError::io(&path, e))?;
        self.write_csv(&mut f).map_err(|e| DonnError::io(&path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let t = DeviceResponseTable::fixture_8level();
        assert_eq!(t.levels(), 8);
        let span = t.phase().iter().cloned().fold(f64::MIN, f64::max)
            - t.phase().iter().cloned().fold(f64::MAX, f64::min);
        assert!(span > 1.7 * std::f64::consts::PI && span < 1.9 * std::f64::consts::PI);
        assert!(t.amplitude().iter().all(|&a| (0.6..=1.0).contains(&a)));
        // non-monotonic amplitude and phase
        assert!(t.amplitude().windows(2).any(|w| w[1] > w[0]));
        assert!(t.phase().windows(2).any(|w| w[1] < w[0]));
    }

    #[test]
    fn csv_roundtrip() {
        let t = DeviceResponseTable::fixture_8level();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let u = DeviceResponseTable::from_csv_reader(buf.as_slice()).unwrap();
        assert_eq!(t, u);
    }

    #[test]
    fn csv_validation_errors() {
        let bad_header = "level,voltage,amplitude,phase_rad\n0,0,1,0\n1,1,1,0\n";
        assert!(DeviceResponseTable::from_csv_reader(bad_header.as_bytes()).is_err());

        let negative_amp = "level,control,amplitude,phase_rad\n0,0,1.0,0\n1,1,-0.1,0\n";
        assert!(DeviceResponseTable::from_csv_reader(negative_amp.as_bytes()).is_err());

        let non_increasing = "level,control,amplitude,phase_rad\n0,1,1.0,0\n1,1,0.9,0\n";
        assert!(DeviceResponseTable::from_csv_reader(non_increasing.as_bytes()).is_err());

        let single_row = "level,control,amplitude,phase_rad\n0,0,1.0,0\n";
        assert!(DeviceResponseTable::from_csv_reader(single_row.as_bytes()).is_err());
    }

    #[test]
    fn phase_wraps_into_period() {
        let csv = "level,control,amplitude,phase_rad\n0,0,1.0,7.0\n1,1,1.0,-0.5\n";
        let t = DeviceResponseTable::from_csv_reader(csv.as_bytes()).unwrap();
        assert!((t.phase()[0] - (7.0 - TWO_PI)).abs() < 1e-15);
        assert!((t.phase()[1] - (TWO_PI - 0.5)).abs() < 1e-15);
    }

    #[test]
    fn shipped_csv_matches_builtin_fixture() {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../devices/slm_8level.csv");
        let t = DeviceResponseTable::load_csv(path).unwrap();
        assert_eq!(t, DeviceResponseTable::fixture_8level());
    }

    #[test]
    fn nearest_level_ties_pick_lower() {
        let t = DeviceResponseTable::fixture_8level();
        assert_eq!(t.nearest_level(2.5), 2); // equidistant between 2 and 3
        assert_eq!(t.nearest_level(-10.0), 0);
        assert_eq!(t.nearest_level(99.0), 7);
        assert_eq!(t.nearest_level(5.0), 5);
    }
}
