use nlim::preprocess::{preprocess_enso, read_monthly, MonthlySeries};
use nlim::Error;

fn series(columns: Vec<Vec<f64>>, start_month: u32) -> MonthlySeries {
    MonthlySeries {
        start_year: 1980,
        start_month,
        names: (0..columns.len()).map(|i| format!("c{i}")).collect(),
        columns,
    }
}

/// AR(1) anomalies with a trend, a seasonal cycle and seasonal amplitude.
fn synthetic(len: usize, seed: u64) -> Vec<f64> {
    let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    let mut uniform = || {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut x = 0.0;
    (0..len)
        .map(|k| {
            x = 0.8 * x + uniform();
            let phase = 2.0 * std::f64::consts::PI * (k % 12) as f64 / 12.0;
            20.0 + 0.01 * k as f64 + 3.0 * phase.cos() + (1.0 + 0.5 * phase.sin()) * x
        })
        .collect()
}

fn per_month(y: &[f64], start_month: u32) -> Vec<Vec<f64>> {
    let mut groups = vec![Vec::new(); 12];
    for (k, v) in y.iter().enumerate() {
        groups[(start_month as usize - 1 + k) % 12].push(*v);
    }
    groups
}

#[test]
fn unsmoothed_output_is_a_monthly_z_score() {
    let s = series(vec![synthetic(600, 1), synthetic(600, 2)], 4);
    let out = preprocess_enso(&s, 1).unwrap();
    for c in 0..2 {
        for g in per_month(&out.trajectory.column(c), 4) {
            let mean = g.iter().sum::<f64>() / g.len() as f64;
            let var = g.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / g.len() as f64;
            assert!(mean.abs() <= 1e-12, "mean {mean}");
            assert!((var - 1.0).abs() <= 1e-12, "variance {var}");
        }
    }
}

#[test]
fn smoothing_attenuates_the_variance() {
    let s = series(vec![synthetic(600, 3)], 1);
    let raw = preprocess_enso(&s, 1).unwrap().trajectory.values;
    let smooth = preprocess_enso(&s, 3).unwrap().trajectory.values;
    let mean = smooth.iter().sum::<f64>() / smooth.len() as f64;
    let var = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    assert!(mean.abs() < 1e-3, "overall mean {mean}");
    assert!(var(&smooth) < var(&raw));
    assert!(var(&smooth) > 0.5 * var(&raw));
}

#[test]
fn columns_are_processed_independently() {
    let (a, b) = (synthetic(240, 5), synthetic(240, 6));
    let ab = preprocess_enso(&series(vec![a.clone(), b.clone()], 1), 3).unwrap();
    let ba = preprocess_enso(&series(vec![b, a], 1), 3).unwrap();
    assert_eq!(ab.trajectory.column(0), ba.trajectory.column(1));
    assert_eq!(ab.trajectory.column(1), ba.trajectory.column(0));
}

#[test]
fn linear_ramp_has_no_variance_left() {
    let ramp: Vec<f64> = (0..48).map(|k| 2.0 + 0.3 * k as f64).collect();
    match preprocess_enso(&series(vec![ramp], 1), 3) {
        Err(Error::ZeroMonthlyVariance { column, .. }) => assert_eq!(column, "c0"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn csv_with_comments_and_whitespace() {
    let text = "# source: test\ndate, a\n2001-12, 1.5\n2002-01, 2.5\n";
    let s = read_monthly(text.as_bytes()).unwrap();
    assert_eq!(s.names, vec!["a"]);
    assert_eq!(s.columns[0], vec![1.5, 2.5]);
    assert_eq!((s.start_year, s.start_month), (2001, 12));
}
