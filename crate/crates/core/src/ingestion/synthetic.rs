//! Synthetic degradation corpora.
//!
//! Each cell fades as `C(n) = C0 (1 - a n^1.7)` up to a knee cycle, then
//! follows a quadratic that continues the curve with matching value and
//! slope and is tuned so the SOH first drops below 80% exactly at the
//! drawn cycle life. Cycles are emitted until SOH falls below 70%.

use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::battery_data::{CellRecord, CycleRecord, ProtocolStep};
use crate::error::{Error, Result};

const FADE_EXPONENT: f64 = 1.7;
const EOL_FRACTION: f64 = 0.8;
const STOP_FRACTION: f64 = 0.7;
/// Share of the charge that is delivered before the CV hold starts.
const CC_SHARE: f64 = 0.8;
const COULOMBIC_LOSS: f64 = 5e-4;
const DISCHARGE_SAG: f64 = 0.03;
const REST_S: f64 = 600.0;
const BASE_RESISTANCE_OHM: f64 = 0.015;
const JOULE_HEATING_C: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_cells: usize,
    pub nominal_capacity_in_Ah: f64,
    pub voltage_min_V: f64,
    pub voltage_max_V: f64,
    pub cycle_life_mean: f64,
    pub cycle_life_std: f64,
    pub points_per_cycle: usize,
    pub knee_fraction: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Share of the 20% end-of-life fade that happens before the knee.
    #[serde(default = "default_share")]
    pub pre_knee_fade_share: f64,
    /// Per-cell standard deviation of `pre_knee_fade_share`.
    #[serde(default)]
    pub pre_knee_fade_share_std: f64,
    #[serde(default = "default_rate")]
    pub charge_rate_C: f64,
    #[serde(default = "default_rate")]
    pub discharge_rate_C: f64,
    #[serde(default = "default_ambient")]
    pub ambient_temperature_C: f64,
    #[serde(default = "default_min_life")]
    pub min_cycle_life: usize,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
}

fn default_share() -> f64 {
    0.5
}
fn default_rate() -> f64 {
    1.0
}
fn default_ambient() -> f64 {
    30.0
}
fn default_min_life() -> usize {
    10
}
fn default_prefix() -> String {
    "SYN".to_string()
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_cells: 10,
            nominal_capacity_in_Ah: 1.1,
            voltage_min_V: 2.0,
            voltage_max_V: 3.6,
            cycle_life_mean: 500.0,
            cycle_life_std: 100.0,
            points_per_cycle: 32,
            knee_fraction: 0.8,
            noise_sigma: 0.0,
            seed: 0,
            pre_knee_fade_share: default_share(),
            pre_knee_fade_share_std: 0.0,
            charge_rate_C: default_rate(),
            discharge_rate_C: default_rate(),
            ambient_temperature_C: default_ambient(),
            min_cycle_life: default_min_life(),
            id_prefix: default_prefix(),
        }
    }
}

impl SynthSpec {
    /// Reads a spec from YAML (or JSON, which YAML accepts).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: Self = serde_yaml::from_str(&text).map_err(|e| Error::Spec(format!("{}: {e}", path.display())))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Spec(m.to_string()));
        if self.n_cells < 1 {
            return fail("n_cells must be >= 1");
        }
        if !(self.cycle_life_mean > 0.0) {
            return fail("cycle_life_mean must be > 0");
        }
        if !(self.cycle_life_std >= 0.0) {
            return fail("cycle_life_std must be >= 0");
        }
        if self.points_per_cycle < 16 {
            return fail("points_per_cycle must be >= 16");
        }
        if !(self.knee_fraction > 0.0 && self.knee_fraction < 1.0) {
            return fail("knee_fraction must lie in (0, 1)");
        }
        if !(self.nominal_capacity_in_Ah > 0.0) {
            return fail("nominal_capacity_in_Ah must be > 0");
        }
        if !(self.voltage_min_V < self.voltage_max_V) {
            return fail("voltage_min_V must be below voltage_max_V");
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be >= 0");
        }
        if !(self.pre_knee_fade_share > 0.0 && self.pre_knee_fade_share < 1.0) {
            return fail("pre_knee_fade_share must lie in (0, 1)");
        }
        if !(self.charge_rate_C > 0.0 && self.discharge_rate_C > 0.0) {
            return fail("charge and discharge rates must be > 0");
        }
        if self.min_cycle_life < 3 {
            return fail("min_cycle_life must be >= 3");
        }
        Ok(())
    }
}

/// Capacity fade of one synthetic cell, as a fraction of initial capacity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadeLaw {
    pub cycle_life: usize,
    pub fade_coefficient: f64,
    pub knee_cycle: f64,
    pub knee_curvature: f64,
}

impl FadeLaw {
    /// Builds the law whose 80% crossing falls on `cycle_life`.
    pub fn new(cycle_life: usize, knee_fraction: f64, pre_knee_share: f64) -> Self {
        let life = cycle_life as f64;
        let knee = (knee_fraction * life).min(life - 1.5).max(1.0);
        let gap = life - 0.5 - knee;
        // Keep the post-knee quadratic convex-down; otherwise the linear
        // continuation alone would cross 80% before `cycle_life`.
        let max_share = 0.95 / (1.0 + FADE_EXPONENT * gap / knee);
        let share = pre_knee_share.min(max_share);
        let drop = 1.0 - EOL_FRACTION;
        let a = share * drop / knee.powf(FADE_EXPONENT);
        let at_knee = 1.0 - a * knee.powf(FADE_EXPONENT);
        let slope = FADE_EXPONENT * a * knee.powf(FADE_EXPONENT - 1.0);
        let b = (at_knee - slope * gap - EOL_FRACTION) / (gap * gap);
        Self { cycle_life, fade_coefficient: a, knee_cycle: knee, knee_curvature: b }
    }

    /// Remaining capacity fraction at (1-based) cycle `n`.
    pub fn fraction(&self, n: f64) -> f64 {
        let a = self.fade_coefficient;
        if n <= self.knee_cycle {
            1.0 - a * n.powf(FADE_EXPONENT)
        } else {
            let k = self.knee_cycle;
            let at_knee = 1.0 - a * k.powf(FADE_EXPONENT);
            let slope = FADE_EXPONENT * a * k.powf(FADE_EXPONENT - 1.0);
            let d = n - k;
            at_knee - slope * d - self.knee_curvature * d * d
        }
    }
}

/// Normalized open-circuit shape: monotone from 0 to 1 with a flat middle.
fn ocv_shape(x: f64) -> f64 {
    let u = 2.0 * x - 1.0;
    0.5 + 0.5 * (0.6 * u * u * u + 0.4 * u)
}

/// Generates `spec.n_cells` cells. Pure in `spec`; cells are built in
/// parallel from per-cell seeds `seed ^ index`.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<Vec<CellRecord>> {
    spec.check()?;
    let cells = (0..spec.n_cells)
        .into_par_iter()
        .map(|idx| generate_cell(spec, idx))
        .collect();
    Ok(cells)
}

/// Draws the cycle life and fade share of cell `idx`.
pub fn draw_cell_parameters(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (usize, f64) {
    let life = if spec.cycle_life_std > 0.0 {
        Normal::new(spec.cycle_life_mean, spec.cycle_life_std)
            .expect("std checked")
            .sample(rng)
    } else {
        spec.cycle_life_mean
    };
    let life = (life.round().max(spec.min_cycle_life as f64)) as usize;
    let share = if spec.pre_knee_fade_share_std > 0.0 {
        let s = Normal::new(spec.pre_knee_fade_share, spec.pre_knee_fade_share_std)
            .expect("std checked")
            .sample(rng);
        s.clamp(0.05, 0.9)
    } else {
        spec.pre_knee_fade_share
    };
    (life, share)
}

fn generate_cell(spec: &SynthSpec, idx: usize) -> CellRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ idx as u64);
    let (life, share) = draw_cell_parameters(spec, &mut rng);
    build_cell(spec, idx, life, share, &mut rng)
}

/// Cell `idx` of `spec` with a prescribed cycle life and pre-knee fade
/// share instead of drawn ones. Voltage noise still follows `spec`.
pub fn synthesize_cell(spec: &SynthSpec, idx: usize, cycle_life: usize, pre_knee_share: f64) -> Result<CellRecord> {
    spec.check()?;
    if cycle_life < 3 || !(pre_knee_share > 0.0 && pre_knee_share < 1.0) {
        return Err(Error::Spec(format!("invalid cell parameters: life {cycle_life}, share {pre_knee_share}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ idx as u64);
    Ok(build_cell(spec, idx, cycle_life, pre_knee_share, &mut rng))
}

fn build_cell(spec: &SynthSpec, idx: usize, life: usize, share: f64, rng: &mut ChaCha8Rng) -> CellRecord {
    let law = FadeLaw::new(life, spec.knee_fraction, share);
    let noise = (spec.noise_sigma > 0.0).then(|| Normal::new(0.0, spec.noise_sigma).expect("sigma checked"));

    let mut cycles = Vec::new();
    let mut n = 1u32;
    loop {
        let fraction = law.fraction(n as f64);
        let mut cycle = simulate_cycle(spec, n, spec.nominal_capacity_in_Ah * fraction);
        if let Some(noise) = &noise {
            for v in cycle.voltage_in_V.iter_mut() {
                *v += noise.sample(rng);
            }
        }
        cycles.push(cycle);
        if fraction < STOP_FRACTION {
            break;
        }
        n += 1;
    }

    let mut cell = CellRecord::new(format!("{}_{idx:04}", spec.id_prefix), spec.nominal_capacity_in_Ah, cycles);
    cell.form_factor = Some("cylindrical_18650".into());
    cell.anode_material = Some("graphite".into());
    cell.cathode_material = Some("synthetic".into());
    cell.max_voltage_limit_in_V = Some(spec.voltage_max_V);
    cell.min_voltage_limit_in_V = Some(spec.voltage_min_V);
    cell.max_current_limit_in_A = Some(spec.nominal_capacity_in_Ah * spec.charge_rate_C.max(spec.discharge_rate_C));
    cell.min_current_limit_in_A = Some(0.0);
    cell.description = Some(format!("synthetic degradation cell, seed {}", spec.seed));
    cell.charge_protocol = vec![
        ProtocolStep { rate_in_C: Some(spec.charge_rate_C), start_soc: Some(0.0), end_soc: Some(CC_SHARE), ..Default::default() },
        ProtocolStep { voltage_in_V: Some(spec.voltage_max_V), start_soc: Some(CC_SHARE), end_soc: Some(1.0), ..Default::default() },
    ];
    cell.discharge_protocol = vec![ProtocolStep {
        rate_in_C: Some(spec.discharge_rate_C),
        start_soc: Some(1.0),
        end_soc: Some(0.0),
        ..Default::default()
    }];
    let mut meta = BTreeMap::new();
    meta.insert("synthetic".to_string(), json!(law));
    cell.extra = meta;
    cell
}

/// One CC-CV charge followed by a rest and a CC discharge of `capacity` Ah.
fn simulate_cycle(spec: &SynthSpec, number: u32, capacity: f64) -> CycleRecord {
    let (vmin, vmax) = (spec.voltage_min_V, spec.voltage_max_V);
    let span = vmax - vmin;
    let ocv = |x: f64| vmin + span * ocv_shape(x);
    let i_charge = spec.charge_rate_C * spec.nominal_capacity_in_Ah;
    let i_discharge = spec.discharge_rate_C * spec.nominal_capacity_in_Ah;
    let heat = |i: f64| spec.ambient_temperature_C + JOULE_HEATING_C * (i / spec.nominal_capacity_in_Ah).powi(2);

    let p = spec.points_per_cycle;
    let n_charge = p / 2;
    let n_cc = n_charge / 2;
    let n_cv = n_charge - n_cc;
    let n_dis = p - n_charge;

    let overpotential = vmax - ocv(CC_SHARE);
    let t_cc = 3600.0 * CC_SHARE * capacity / i_charge;
    let q_cv = capacity * (1.0 + COULOMBIC_LOSS) - CC_SHARE * capacity;
    let tau = 3600.0 * q_cv / (i_charge * (1.0 - (-3.0f64).exp()));
    let t_cv = 3.0 * tau;

    let mut cycle = CycleRecord {
        cycle_number: number,
        voltage_in_V: Vec::with_capacity(p),
        current_in_A: Vec::with_capacity(p),
        charge_capacity_in_Ah: Vec::with_capacity(p),
        discharge_capacity_in_Ah: Vec::with_capacity(p),
        time_in_s: Vec::with_capacity(p),
        temperature_in_C: Some(Vec::with_capacity(p)),
        internal_resistance_in_ohm: None,
        extra: BTreeMap::new(),
    };
    let push = |c: &mut CycleRecord, t: f64, v: f64, i: f64, qc: f64, qd: f64| {
        c.time_in_s.push(t);
        c.voltage_in_V.push(v);
        c.current_in_A.push(i);
        c.charge_capacity_in_Ah.push(qc);
        c.discharge_capacity_in_Ah.push(qd);
        c.temperature_in_C.as_mut().expect("set above").push(heat(i));
    };

    for k in 0..n_cc {
        let t = t_cc * k as f64 / n_cc as f64;
        let q = i_charge * t / 3600.0;
        push(&mut cycle, t, ocv(q / capacity) + overpotential, i_charge, q, 0.0);
    }
    for k in 0..n_cv {
        let dt = t_cv * k as f64 / (n_cv - 1) as f64;
        let decay = (-dt / tau).exp();
        let q = CC_SHARE * capacity + i_charge * tau * (1.0 - decay) / 3600.0;
        push(&mut cycle, t_cc + dt, vmax, i_charge * decay, q, 0.0);
    }
    let q_charged = *cycle.charge_capacity_in_Ah.last().expect("non-empty");
    let t_start = t_cc + t_cv + REST_S;
    let t_dis = 3600.0 * capacity / i_discharge;
    for k in 0..n_dis {
        let share = k as f64 / (n_dis - 1) as f64;
        let qd = capacity * share;
        let v = vmin + span * ocv_shape(1.0 - share) * (1.0 - DISCHARGE_SAG);
        push(&mut cycle, t_start + t_dis * share, v, -i_discharge, q_charged, qd);
    }
    // Pin the final discharge sample to the exact capacity.
    *cycle.discharge_capacity_in_Ah.last_mut().expect("non-empty") = capacity;
    cycle.internal_resistance_in_ohm =
        Some(BASE_RESISTANCE_OHM * (1.0 + 2.5 * (1.0 - capacity / spec.nominal_capacity_in_Ah)));
    cycle
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::battery_data::{cell_to_string, validate};
    use crate::labels::{soh_per_cycle, rul_label, LabelSpec};

    fn single(life: f64) -> SynthSpec {
        SynthSpec {
            n_cells: 1,
            cycle_life_mean: life,
            cycle_life_std: 0.0,
            knee_fraction: 0.8,
            noise_sigma: 0.0,
            points_per_cycle: 16,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_noise_soh_starts_at_100_and_decreases() {
        let cells = generate_synthetic(&single(500.0)).unwrap();
        let soh = soh_per_cycle(&cells[0]).unwrap();
        assert!((soh[0] - 100.0).abs() < 0.1, "{}", soh[0]);
        assert!(soh.windows(2).all(|w| w[1] < w[0]));
        assert!(*soh.last().unwrap() < 70.0);
        assert!(validate(&cells[0]).is_empty());
    }

    #[test]
    fn annotated_life_equals_drawn_life() {
        for life in [10.0, 37.0, 150.0, 500.0, 1800.0] {
            let cells = generate_synthetic(&single(life)).unwrap();
            assert_eq!(rul_label(&cells[0], &LabelSpec::rul()).unwrap(), life as usize);
        }
    }

    #[test]
    fn soh_tracks_fade_law() {
        let cells = generate_synthetic(&single(300.0)).unwrap();
        let law: FadeLaw = serde_json::from_value(cells[0].extra["synthetic"].clone()).unwrap();
        for (i, s) in soh_per_cycle(&cells[0]).unwrap().iter().enumerate() {
            assert!((s - 100.0 * law.fraction(i as f64 + 1.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let spec = SynthSpec { n_cells: 3, noise_sigma: 0.002, seed: 42, ..SynthSpec::default() };
        let a: Vec<String> = generate_synthetic(&spec).unwrap().iter().map(cell_to_string).collect();
        let b: Vec<String> = generate_synthetic(&spec).unwrap().iter().map(cell_to_string).collect();
        assert_eq!(a, b);
        let other = SynthSpec { seed: 43, ..spec };
        let c: Vec<String> = generate_synthetic(&other).unwrap().iter().map(cell_to_string).collect();
        assert_ne!(a, c);
    }

    #[test]
    fn noisy_cells_still_validate() {
        let spec = SynthSpec { n_cells: 4, noise_sigma: 0.01, pre_knee_fade_share_std: 0.1, seed: 9, ..SynthSpec::default() };
        for cell in generate_synthetic(&spec).unwrap() {
            assert!(validate(&cell).is_empty());
        }
    }

    #[test]
    fn spec_checks() {
        assert!(SynthSpec { points_per_cycle: 15, ..SynthSpec::default() }.check().is_err());
        assert!(SynthSpec { n_cells: 0, ..SynthSpec::default() }.check().is_err());
        assert!(SynthSpec { knee_fraction: 1.0, ..SynthSpec::default() }.check().is_err());
        assert!(SynthSpec { cycle_life_mean: 0.0, ..SynthSpec::default() }.check().is_err());
    }
}
