//! Supervision targets: cycle life (RUL), per-cycle SOH and per-step SOC.

use serde::{Deserialize, Serialize};

use crate::battery_data::{CellRecord, CycleRecord};
use crate::error::{Error, Result};
use crate::features::RowKey;
use crate::registry::{parse_params, Registry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Task {
    Rul,
    Soh,
    Soc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSpec {
    pub task: Task,
    #[serde(default = "default_eol")]
    pub eol_soh_percent: f64,
    #[serde(default = "default_window")]
    pub smoothing_window: usize,
}

fn default_eol() -> f64 {
    80.0
}

fn default_window() -> usize {
    1
}

impl LabelSpec {
    pub fn rul() -> Self {
        Self { task: Task::Rul, eol_soh_percent: default_eol(), smoothing_window: 1 }
    }

    pub fn check(&self) -> Result<()> {
        if !(self.eol_soh_percent > 0.0 && self.eol_soh_percent < 100.0) {
            return Err(Error::Label(format!(
                "eol_soh_percent must lie in (0, 100), got {}",
                self.eol_soh_percent
            )));
        }
        if self.smoothing_window == 0 || self.smoothing_window % 2 == 0 {
            return Err(Error::Label(format!(
                "smoothing_window must be odd and >= 1, got {}",
                self.smoothing_window
            )));
        }
        Ok(())
    }
}

/// Labels keyed like feature rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub values: Vec<f64>,
    pub row_keys: Vec<RowKey>,
}

/// SOH in percent for every cycle: max discharge capacity over nominal capacity.
pub fn soh_per_cycle(cell: &CellRecord) -> Result<Vec<f64>> {
    let nominal = cell.nominal_capacity_in_Ah;
    if !(nominal.is_finite() && nominal > 0.0) {
        return Err(Error::Label(format!(
            "cell {}: nominal capacity must be positive, got {nominal}",
            cell.cell_id
        )));
    }
    Ok(cell
        .cycle_data
        .iter()
        .map(|c| 100.0 * c.max_discharge_capacity() / nominal)
        .collect())
}

/// Centered moving median; the window shrinks near the ends.
pub fn moving_median(values: &[f64], window: usize) -> Vec<f64> {
    if window <= 1 {
        return values.to_vec();
    }
    let half = window / 2;
    let mut buf = Vec::with_capacity(window);
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            buf.clear();
            buf.extend_from_slice(&values[lo..hi]);
            buf.sort_by(f64::total_cmp);
            let m = buf.len();
            if m % 2 == 1 {
                buf[m / 2]
            } else {
                0.5 * (buf[m / 2 - 1] + buf[m / 2])
            }
        })
        .collect()
}

/// 1-based index of the first entry strictly below `threshold`.
pub fn first_crossing(soh: &[f64], threshold: f64) -> Result<usize> {
    soh.iter()
        .position(|&s| s < threshold)
        .map(|i| i + 1)
        .ok_or(Error::NotReached { threshold })
}

/// Total cycle life: first cycle whose (smoothed) SOH drops below the
/// end-of-life threshold.
pub fn rul_label(cell: &CellRecord, spec: &LabelSpec) -> Result<usize> {
    spec.check()?;
    let soh = soh_per_cycle(cell)?;
    let smoothed = moving_median(&soh, spec.smoothing_window);
    first_crossing(&smoothed, spec.eol_soh_percent)
}

/// SOC in percent at every sample of one cycle.
///
/// Coulomb counting anchored at the start of the first discharge sample,
/// where the cell is taken to hold its full capacity `C_full` (the maximum
/// discharge capacity of the cycle). Charge received before that point
/// brings the cell up to full; charge received after it is added back.
pub fn soc_per_step(cell: &CellRecord, cycle_index: usize) -> Result<Vec<f64>> {
    let cycle = cell.cycle_data.get(cycle_index).ok_or_else(|| {
        Error::Label(format!(
            "cell {}: cycle index {cycle_index} out of range ({} cycles)",
            cell.cell_id,
            cell.cycle_data.len()
        ))
    })?;
    soc_for_cycle(cycle)
}

pub fn soc_for_cycle(cycle: &CycleRecord) -> Result<Vec<f64>> {
    let full = cycle.max_discharge_capacity();
    if !(full > 0.0) {
        return Err(Error::Label(format!(
            "cycle {}: full capacity is zero, SOC undefined",
            cycle.cycle_number
        )));
    }
    let anchor = cycle
        .current_in_A
        .iter()
        .position(|&i| i < 0.0)
        .unwrap_or(cycle.current_in_A.len() - 1);
    let qc0 = cycle.charge_capacity_in_Ah[anchor];
    Ok(cycle
        .discharge_capacity_in_Ah
        .iter()
        .zip(&cycle.charge_capacity_in_Ah)
        .map(|(&qd, &qc)| {
            let remaining = full - qd + (qc - qc0);
            (100.0 * remaining / full).clamp(0.0, 100.0)
        })
        .collect())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotatorParams {
    #[serde(default = "default_eol")]
    eol_soh_percent: f64,
    #[serde(default = "default_window")]
    smoothing_window: usize,
}

/// `RULLabelAnnotator`, `SOHLabelAnnotator` and `SOCLabelAnnotator`.
pub fn default_registry() -> Registry<LabelSpec> {
    let mut reg = Registry::new("label annotator");
    for (name, task) in [("RULLabelAnnotator", Task::Rul), ("SOHLabelAnnotator", Task::Soh), ("SOCLabelAnnotator", Task::Soc)] {
        reg.register(name, move |p, _| {
            let a: AnnotatorParams = parse_params("label annotator", name, p)?;
            let spec = LabelSpec { task, eol_soh_percent: a.eol_soh_percent, smoothing_window: a.smoothing_window };
            spec.check()?;
            Ok(spec)
        })
        .expect("unique built-in names");
    }
    reg
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery_data::tests::{tiny_cell, tiny_cycle};

    fn soh_cell(soh: &[f64], nominal: f64) -> CellRecord {
        let cycles = soh
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut c = tiny_cycle(i as u32 + 1);
                let q = s / 100.0 * nominal;
                c.discharge_capacity_in_Ah = vec![0.0, 0.0, q / 2.0, q];
                c
            })
            .collect();
        CellRecord::new("S", nominal, cycles)
    }

    #[test]
    fn soh_matches_worked_example() {
        let cell = soh_cell(&[90.0], 2.0);
        let mut cell = cell;
        cell.cycle_data[0].discharge_capacity_in_Ah = vec![0.0, 0.0, 0.9, 1.8];
        assert_eq!(soh_per_cycle(&cell).unwrap(), vec![90.0]);
    }

    #[test]
    fn soh_at_nominal_is_100() {
        let mut cell = tiny_cell();
        cell.nominal_capacity_in_Ah = 0.45;
        assert_eq!(soh_per_cycle(&cell).unwrap()[0], 100.0);
    }

    #[test]
    fn soh_requires_positive_nominal() {
        let mut cell = tiny_cell();
        cell.nominal_capacity_in_Ah = 0.0;
        assert!(soh_per_cycle(&cell).is_err());
    }

    #[test]
    fn rul_first_crossing() {
        assert_eq!(first_crossing(&[100.0, 90.0, 79.0, 70.0], 80.0).unwrap(), 3);
        assert!(matches!(first_crossing(&[100.0, 80.0], 80.0), Err(Error::NotReached { .. })));
    }

    #[test]
    fn rul_from_cell() {
        let cell = soh_cell(&[100.0, 90.0, 79.0, 70.0], 1.1);
        assert_eq!(rul_label(&cell, &LabelSpec::rul()).unwrap(), 3);
        let never = soh_cell(&[100.0, 95.0, 85.0], 1.1);
        assert!(matches!(rul_label(&never, &LabelSpec::rul()), Err(Error::NotReached { .. })));
    }

    #[test]
    fn smoothing_removes_single_cycle_dip() {
        let cell = soh_cell(&[100.0, 95.0, 70.0, 94.0, 90.0, 78.0, 75.0, 70.0], 1.1);
        assert_eq!(rul_label(&cell, &LabelSpec::rul()).unwrap(), 3);
        let spec = LabelSpec { smoothing_window: 3, ..LabelSpec::rul() };
        assert_eq!(rul_label(&cell, &spec).unwrap(), 6);
    }

    #[test]
    fn label_spec_checks() {
        assert!(LabelSpec { eol_soh_percent: 100.0, ..LabelSpec::rul() }.check().is_err());
        assert!(LabelSpec { smoothing_window: 2, ..LabelSpec::rul() }.check().is_err());
    }

    #[test]
    fn moving_median_edges() {
        assert_eq!(moving_median(&[1.0, 5.0, 2.0, 8.0], 3), vec![3.0, 2.0, 5.0, 5.0]);
    }

    #[test]
    fn soc_pure_discharge() {
        let mut c = tiny_cycle(1);
        c.current_in_A = vec![-1.0; 4];
        c.charge_capacity_in_Ah = vec![0.0; 4];
        c.discharge_capacity_in_Ah = vec![0.0, 0.1, 0.3, 0.4];
        let soc = soc_for_cycle(&c).unwrap();
        assert_eq!(soc[0], 100.0);
        assert!(soc[3].abs() < 1e-9);
        // Discharge-only steps follow C_curr / C_full exactly.
        assert_eq!(soc[1], 100.0 * (0.4 - 0.1) / 0.4);
    }

    #[test]
    fn soc_charge_then_discharge_stays_in_range() {
        let c = tiny_cycle(1);
        let soc = soc_for_cycle(&c).unwrap();
        assert!(soc.iter().all(|s| (0.0..=100.0).contains(s)));
        assert_eq!(soc[2], 100.0 * (0.45 - 0.2) / 0.45);
    }

    #[test]
    fn soc_zero_capacity_errors() {
        let mut c = tiny_cycle(1);
        c.discharge_capacity_in_Ah = vec![0.0; 4];
        assert!(soc_for_cycle(&c).is_err());
    }
}
