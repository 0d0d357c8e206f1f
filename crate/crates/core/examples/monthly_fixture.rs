//! Writes the synthetic skewed monthly fixture used by the CLI tests.
//!
//! The anomalies come from the two-dimensional quadratic benchmark with white
//! noise, sampled every 0.1 time units (one "month"), then dressed with a
//! trend, a seasonal cycle and a seasonally varying amplitude.
//!
//!     cargo run --release -p nlim-core --example monthly_fixture -- out.csv

use std::f64::consts::PI;
use std::fmt::Write as _;

use nlim::{simulate, NoiseSpec, QuadModel, SimPlan, WallSpec};

const MONTHS: usize = 6000;
const MONTH: f64 = 0.1;
const DT: f64 = 0.001;
const SEED: u64 = 1958;

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "monthly_fixture.csv".into());
    let model = QuadModel::two_dimensional_benchmark(NoiseSpec::White);
    let sub = (MONTH / DT).round() as usize;
    let plan = SimPlan::new(2, DT, MONTHS as f64 * MONTH, sub, SEED);
    let out = simulate(&model, &WallSpec::disabled(2), &plan).expect("simulation");
    let traj = out.trajectory;

    let mut csv = String::from("date,sst,d20\n");
    for k in 0..MONTHS {
        let (year, month) = (1900 + k / 12, k % 12);
        let phase = 2.0 * PI * month as f64 / 12.0;
        let x = traj.row(k);
        let sst = 26.5 + 0.0008 * k as f64 + 1.1 * phase.cos() + (1.0 + 0.3 * phase.sin()) * 0.8 * x[0];
        let d20 = 140.0 - 0.002 * k as f64 + 6.0 * (phase + 1.0).sin() + (1.0 + 0.2 * phase.cos()) * 9.0 * x[1];
        writeln!(csv, "{year:04}-{:02},{sst:.4},{d20:.3}", month + 1).unwrap();
    }
    std::fs::write(&path, csv).expect("write fixture");
}
