use nalgebra::DVector;
use num_complex::Complex;
use proptest::prelude::*;

use dmimo_isac::estimator::EchoSet;
use dmimo_isac::harness::io::{load_echoes, read_cost_map, save_echoes, write_cost_map, write_sweep_csv, SWEEP_HEADER};
use dmimo_isac::harness::{summarize, Axis, Metric, ScenarioConfig};
use dmimo_isac::Error;

fn echo_set(m_r: usize, l: usize, n: usize, values: &[f64]) -> EchoSet<f64> {
    let mut k = 0;
    let mut next = || {
        let v = values[k % values.len()];
        k += 1;
        v
    };
    EchoSet {
        samples: (0..m_r)
            .map(|_| (0..l).map(|_| DVector::from_fn(n, |_, _| Complex::new(next(), next()))).collect())
            .collect(),
        noise_power: 3.2e-16,
        carrier_hz: 3.5e9,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn echo_files_round_trip_bit_exactly(
        m_r in 1usize..4, l in 1usize..9, n in 1usize..5,
        values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, 1..64),
    ) {
        let e = echo_set(m_r, l, n, &values);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.dmec");
        save_echoes(&path, &e).unwrap();
        prop_assert_eq!(std::fs::metadata(&path).unwrap().len() as usize, 36 + 16 * m_r * l * n);
        prop_assert_eq!(load_echoes(&path).unwrap(), e);
    }
}

#[test]
fn missing_and_foreign_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_echoes(&dir.path().join("none")), Err(Error::Io(_))));
    let path = dir.path().join("text");
    std::fs::write(&path, "not binary").unwrap();
    assert!(matches!(load_echoes(&path), Err(Error::Format(_))));
    assert!(matches!(read_cost_map(&mut "DMCOSTMAP 1\n0 0 1 2\n".as_bytes()), Err(Error::Format(_))));
}

#[test]
fn config_toml_round_trip_and_hash() {
    let cfg = ScenarioConfig::reference_scenario();
    let text = cfg.to_toml().unwrap();
    let back = ScenarioConfig::from_toml(&text).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(back.hash(), cfg.hash());
    let mut other = cfg.clone();
    other.seed = 1;
    assert_ne!(other.hash(), cfg.hash());
    assert!(ScenarioConfig::from_toml(&text.replace("num_receivers = 6", "num_receivers = 12")).is_err());
    assert!(ScenarioConfig::from_toml(&format!("{text}\nunknown_knob = 1\n")).is_err());
}

#[test]
fn shipped_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["reference.toml", "quick.toml", "noiseless.toml"] {
        ScenarioConfig::load(&dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn sweep_table_layout() {
    let rows = vec![summarize("rho", 0.5, "sensing_centric", "sum_se", &[1.0, 2.0, 3.0, 4.0])];
    let mut buf = Vec::new();
    write_sweep_csv(&mut buf, &rows, true).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], SWEEP_HEADER);
    let fields: Vec<&str> = lines[1].split(',').collect();
    assert_eq!(fields.len(), SWEEP_HEADER.split(',').count());
    assert_eq!(&fields[..6], ["rho", "0.5", "sensing_centric", "sum_se", "4", "2.5"]);
}

#[test]
fn axis_and_metric_names_parse_back() {
    for axis in [Axis::Receivers, Axis::CommFraction, Axis::TxPower, Axis::Elements] {
        assert_eq!(Axis::parse(axis.name()).unwrap(), axis);
    }
    for m in [
        Metric::SumSe,
        Metric::PebCoherent,
        Metric::PebNoncoherent,
        Metric::Coverage,
        Metric::PositionError,
        Metric::Detections,
    ] {
        assert_eq!(Metric::parse(m.name()).unwrap(), m);
    }
    let cfg = ScenarioConfig::reference_scenario();
    assert!(Axis::Receivers.apply(&cfg, 2.5).is_err());
    assert_eq!(Axis::Receivers.apply(&cfg, 3.0).unwrap().num_receivers, 3);
}

#[test]
fn raster_written_by_scan_reads_back() {
    let map = dmimo_isac::estimator::CostMap {
        origin: dmimo_isac::Position2D::new(0.0, 0.0),
        spacing: 20.0,
        nx: 4,
        ny: 3,
        values: (0..12).map(|v| v as f64 * 0.125).collect(),
        energy: 2.0,
        detections: Vec::new(),
        exceedances: 0,
    };
    let mut buf = Vec::new();
    write_cost_map(&mut buf, &map).unwrap();
    assert_eq!(read_cost_map(&mut buf.as_slice()).unwrap(), map);
}
