#![allow(dead_code)]

use std::path::Path;

use cellforge::ingestion::{generate_synthetic, write_corpus, SynthSpec};
use cellforge::pipeline::{PipelineConfig, SplitConfig};
use cellforge::registry::ComponentConfig;
use cellforge::CellRecord;
use serde_json::json;

/// Noise-free corpus whose log cycle life is affine in the variance feature.
pub fn affine_spec(n_cells: usize, seed: u64) -> SynthSpec {
    SynthSpec {
        n_cells,
        cycle_life_mean: 300.0,
        cycle_life_std: 40.0,
        points_per_cycle: 16,
        noise_sigma: 0.0,
        seed,
        min_cycle_life: 130,
        id_prefix: "MATR".into(),
        ..SynthSpec::default()
    }
}

pub fn write_synthetic(spec: &SynthSpec, dir: &Path) -> Vec<CellRecord> {
    let cells = generate_synthetic(spec).unwrap();
    write_corpus(&cells, dir).unwrap();
    cells
}

/// The reference variance-model config pointed at `cell_dir`.
pub fn variance_config(cell_dir: &Path, model: &str) -> PipelineConfig {
    PipelineConfig {
        train_test_split: SplitConfig::new("MATRPrimaryTestTrainTestSplitter", cell_dir),
        feature: ComponentConfig::named("VarianceModelFeatureExtractor")
            .with("interp_dims", json!(1000))
            .with("critical_cycles", json!([2, 9, 99]))
            .with("use_precalculated_qdlin", json!(true)),
        feature_transformation: Some(ComponentConfig::named("ZScoreDataTransformation")),
        label: ComponentConfig::named("RULLabelAnnotator"),
        label_transformation: Some(ComponentConfig::named("SequentialDataTransformation").with(
            "transformations",
            json!([{"name": "LogScaleDataTransformation"}, {"name": "ZScoreDataTransformation"}]),
        )),
        model: ComponentConfig::named(model),
        seeds: (0..10).collect(),
        workspace: None,
        device: None,
    }
}

use std::collections::BTreeMap;

use cellforge::{CycleRecord, ProtocolStep};
use rand::Rng;
use rand_chacha::ChaCha8Rng as Rand;

fn maybe<T>(rng: &mut Rand, f: impl FnOnce(&mut Rand) -> T) -> Option<T> {
    if rng.random_bool(0.5) {
        Some(f(rng))
    } else {
        None
    }
}

fn text(rng: &mut Rand) -> String {
    const POOL: [&str; 8] = ["graphite", "LFP", "NMC 811", "é-ünicode", "with \"quotes\"", "tab\there", "", "x"];
    POOL[rng.random_range(0..POOL.len())].to_string()
}

/// Any finite f64, including extreme magnitudes and negative zero.
fn wild(rng: &mut Rand) -> f64 {
    match rng.random_range(0..6) {
        0 => -0.0,
        1 => f64::MIN_POSITIVE * rng.random::<f64>(),
        2 => f64::MAX * (rng.random::<f64>() - 0.5),
        3 => rng.random_range(-1e-300..1e-300),
        _ => rng.random_range(-1e3..1e3),
    }
}

fn extra(rng: &mut Rand, prefix: &str) -> BTreeMap<String, serde_json::Value> {
    (0..rng.random_range(0..3))
        .map(|k| {
            let v = match rng.random_range(0..4) {
                0 => json!(rng.random::<u32>()),
                1 => json!(wild(rng)),
                2 => json!({"nested": [1, "two", null]}),
                _ => json!(text(rng)),
            };
            (format!("{prefix}_vendor_{k}"), v)
        })
        .collect()
}

pub fn random_cycle(rng: &mut Rand, number: u32) -> CycleRecord {
    let n = rng.random_range(2..40);
    let mut t = 0.0;
    let mut qc = 0.0;
    let mut qd = 0.0;
    let mut c = CycleRecord {
        cycle_number: number,
        voltage_in_V: Vec::new(),
        current_in_A: Vec::new(),
        charge_capacity_in_Ah: Vec::new(),
        discharge_capacity_in_Ah: Vec::new(),
        time_in_s: Vec::new(),
        temperature_in_C: None,
        internal_resistance_in_ohm: maybe(rng, |r| r.random_range(0.0..0.1)),
        extra: extra(rng, "cycle"),
    };
    for _ in 0..n {
        t += rng.random_range(1e-3..100.0);
        let i: f64 = rng.random_range(-5.0..5.0);
        if i > 0.0 {
            qc += rng.random_range(0.0..0.01);
        } else {
            qd += rng.random_range(0.0..0.01);
        }
        c.time_in_s.push(t);
        c.current_in_A.push(i);
        c.voltage_in_V.push(rng.random_range(2.0..4.2));
        c.charge_capacity_in_Ah.push(qc);
        c.discharge_capacity_in_Ah.push(qd);
    }
    if rng.random_bool(0.5) {
        c.temperature_in_C = Some((0..n).map(|_| wild(rng)).collect());
    }
    c
}

fn random_step(rng: &mut Rand) -> ProtocolStep {
    ProtocolStep {
        rate_in_C: Some(rng.random_range(0.1..5.0)),
        current_in_A: maybe(rng, |r| r.random_range(-5.0..5.0)),
        voltage_in_V: maybe(rng, |r| r.random_range(2.0..4.2)),
        power_in_W: maybe(rng, |r| r.random_range(0.0..10.0)),
        start_voltage_in_V: maybe(rng, |r| r.random_range(2.0..4.2)),
        start_soc: maybe(rng, |r| r.random_range(0.0..=1.0)),
        end_voltage_in_V: maybe(rng, |r| r.random_range(2.0..4.2)),
        end_soc: maybe(rng, |r| r.random_range(0.0..=1.0)),
    }
}

/// A schema-valid cell with every optional field randomly present.
pub fn random_cell(rng: &mut Rand, idx: usize) -> CellRecord {
    let mut number = 0;
    let cycles = (0..rng.random_range(1..6))
        .map(|_| {
            number += rng.random_range(1..4);
            random_cycle(rng, number)
        })
        .collect();
    let mut cell = CellRecord::new(format!("R{idx}_{}", text(rng).replace(['"', '\t', ' '], "")), rng.random_range(0.1..100.0), cycles);
    cell.form_factor = maybe(rng, text);
    cell.anode_material = maybe(rng, text);
    cell.cathode_material = maybe(rng, text);
    cell.electrolyte_material = maybe(rng, text);
    cell.depth_of_charge = rng.random_range(0.01..=1.0);
    cell.depth_of_discharge = rng.random_range(0.01..=1.0);
    cell.already_spent_cycles = rng.random_range(0..1000);
    cell.max_voltage_limit_in_V = maybe(rng, |r| r.random_range(3.6..4.4));
    cell.min_voltage_limit_in_V = maybe(rng, |r| r.random_range(1.5..3.0));
    cell.max_current_limit_in_A = maybe(rng, |r| r.random_range(0.0..20.0));
    cell.min_current_limit_in_A = maybe(rng, |r| r.random_range(-20.0..0.0));
    cell.description = maybe(rng, text);
    cell.charge_protocol = (0..rng.random_range(0..3)).map(|_| random_step(rng)).collect();
    cell.discharge_protocol = (0..rng.random_range(0..3)).map(|_| random_step(rng)).collect();
    cell.extra = extra(rng, "cell");
    cell
}
