use chrono::NaiveDate;
use proptest::prelude::*;

use master_core::data::{
    build_market_status, business_days, compute_return_ratio, eligible_positions, generate_synthetic, load_csv,
    market_status_len, normalize_labels, windows_in_range, write_index_csv, write_stocks_csv, DataError, DateRange,
    IndexSeries, MissingPolicy, Panel, SplitKind, SyntheticConfig, WindowConfig,
};

fn calendar(n: usize) -> Vec<NaiveDate> {
    business_days(NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), n)
}

fn single_stock(closes: &[f64]) -> Panel {
    let n = closes.len();
    Panel::new(calendar(n), vec!["A".into()], 1, vec![0.0; n], closes.to_vec()).unwrap()
}

fn flat_index(n: usize) -> IndexSeries {
    IndexSeries::new(calendar(n), vec!["I".into()], vec![1.0; n], vec![1.0; n]).unwrap()
}

fn full_range(dates: &[NaiveDate]) -> DateRange {
    DateRange { start: dates[0], end: *dates.last().unwrap() }
}

#[test]
fn return_ratio_examples() {
    let up = single_stock(&[1.0, 100.0, 104.0, 110.0]);
    assert_eq!(compute_return_ratio(&up, 0, 3).unwrap(), vec![0.10]);
    let down = single_stock(&[1.0, 50.0, 47.0, 45.0]);
    assert_eq!(compute_return_ratio(&down, 0, 3).unwrap(), vec![-0.10]);
    let flat = single_stock(&[7.0; 6]);
    assert_eq!(compute_return_ratio(&flat, 1, 4).unwrap(), vec![0.0]);
    assert!(matches!(compute_return_ratio(&flat, 3, 3), Err(DataError::LabelUnavailable(_))));
}

#[test]
fn label_normalization_examples() {
    let r = normalize_labels(&[1.0, 2.0, 3.0]).unwrap();
    let oracle = 1.0 / (2.0f64 / 3.0).sqrt();
    for (got, want) in r.iter().zip([-oracle, 0.0, oracle]) {
        assert!((got - want).abs() < 1e-12);
    }
    assert!((r[2] - 1.2247).abs() < 1e-4);
    assert_eq!(normalize_labels(&[5.0, 5.0, 5.0]).unwrap(), vec![0.0; 3]);
    assert_eq!(normalize_labels(&[3.5]).unwrap(), vec![0.0]);
    assert!(normalize_labels(&[]).is_err());
    assert!(normalize_labels(&[1.0, f64::NAN]).is_err());
}

#[test]
fn market_status_examples() {
    assert_eq!(market_status_len(3, 5), 63);

    let n = 70;
    let series = IndexSeries::new(calendar(n), vec!["I".into()], vec![4.5; n], vec![2.0; n]).unwrap();
    let ms = build_market_status(&series, n - 1, &[5, 10, 20, 30, 60]).unwrap();
    let mut want = vec![4.5];
    want.extend([4.5, 0.0].repeat(5));
    want.extend([2.0, 0.0].repeat(5));
    assert_eq!(ms.values, want);

    let series = IndexSeries::new(calendar(4), vec!["I".into()], vec![9.0, 9.0, 1.0, 3.0], vec![5.0, 5.0, 2.0, 2.0]).unwrap();
    let ms = build_market_status(&series, 3, &[2]).unwrap();
    assert_eq!(ms.values, vec![3.0, 2.0, 1.0, 2.0, 0.0]);
    assert_eq!(ms.as_of, series.dates()[3]);

    let err = build_market_status(&series, 2, &[5]).unwrap_err();
    assert!(matches!(err, DataError::HistoryTooShort(ref m) if m.contains("2 short")), "{err}");
}

#[test]
fn window_eligibility_examples() {
    let n = 100;
    let panel = single_stock(&(0..n).map(|t| 10.0 + t as f64).collect::<Vec<_>>());
    let index = flat_index(n);
    let cfg = WindowConfig::default();
    let ws = windows_in_range(&panel, &index, full_range(panel.dates()), SplitKind::Test, &cfg).unwrap();
    assert_eq!(ws.first().unwrap().date_index, 59);
    assert_eq!(ws.last().unwrap().date_index, 94);
    assert_eq!(ws.len(), 36);

    let w = &ws[0];
    assert_eq!(w.x.shape(), &[1, 8, 1]);
    let entry = panel.close(60, 0);
    assert_eq!(w.raw_r[0], (panel.close(64, 0) - entry) / entry);

    let short = single_stock(&[1.0; 10]);
    let err = windows_in_range(&short, &flat_index(10), full_range(short.dates()), SplitKind::Train, &cfg).unwrap_err();
    assert!(matches!(err, DataError::NoEligibleWindows { split: "train" }));
}

#[test]
fn label_overlap_only_relaxes_train_and_valid() {
    let dates = calendar(100);
    let range = DateRange { start: dates[0], end: dates[79] };
    let cfg = WindowConfig { allow_label_overlap: true, ..Default::default() };
    let strict = WindowConfig::default();
    assert_eq!(*eligible_positions(&dates, range, SplitKind::Train, &strict).last().unwrap(), 74);
    assert_eq!(*eligible_positions(&dates, range, SplitKind::Train, &cfg).last().unwrap(), 79);
    assert_eq!(*eligible_positions(&dates, range, SplitKind::Test, &cfg).last().unwrap(), 74);
}

fn synth(seed: u64, signal: f64, days: usize) -> master_core::data::SyntheticMarket {
    generate_synthetic(&SyntheticConfig { seed, signal_strength: signal, n_days: days, ..Default::default() }).unwrap()
}

/// Pearson correlation of every follower's day-t return with its leader's
/// day-(t − lag) innovation, pooled over followers and days.
fn pooled_lead_lag_corr(m: &master_core::data::SyntheticMarket) -> f64 {
    let p = &m.panel;
    let pos = |id: &str| p.stocks().iter().position(|s| s == id).unwrap();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for link in &m.truth {
        let (f, l) = (pos(&link.follower), pos(&link.leader));
        for t in link.lag.max(1)..p.n_dates() {
            ys.push(p.close(t, f) / p.close(t - 1, f) - 1.0);
            xs.push(m.shock(t - link.lag, l));
        }
    }
    master_core::evaluation::pearson(&xs, &ys).unwrap()
}

#[test]
fn planted_lead_lag_is_measurable() {
    let m = synth(7, 0.8, 600);
    assert_eq!(m.panel.n_stocks(), 30);
    assert!(m.truth.iter().all(|t| t.lag == 2 && t.weight == 0.8));
    let corr = pooled_lead_lag_corr(&m);
    assert!(corr > 0.5, "lead-lag correlation {corr}");

    let off = pooled_lead_lag_corr(&synth(7, 0.0, 2000));
    assert!(off.abs() < 0.05, "disabled signal still correlates: {off}");
}

#[test]
fn synthetic_generation_is_deterministic() {
    let (a, b) = (synth(11, 0.8, 200), synth(11, 0.8, 200));
    assert_eq!(a, b);
    assert_ne!(a.panel, synth(12, 0.8, 200).panel);
    assert!(generate_synthetic(&SyntheticConfig { n_stocks: 1, ..Default::default() }).is_err());
    assert!(generate_synthetic(&SyntheticConfig { signal_strength: 1.5, ..Default::default() }).is_err());
}

#[test]
fn csv_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let m = synth(3, 0.8, 150);
    let (s, i) = (dir.path().join("stocks.csv"), dir.path().join("index.csv"));
    write_stocks_csv(&s, &m.panel).unwrap();
    write_index_csv(&i, &m.index).unwrap();
    let (panel, index) = load_csv(&s, &i, MissingPolicy::Reject).unwrap();
    assert_eq!(panel, m.panel);
    assert_eq!(index, m.index);
    let again = dir.path().join("again.csv");
    write_stocks_csv(&again, &panel).unwrap();
    assert_eq!(std::fs::read(&s).unwrap(), std::fs::read(&again).unwrap());
}

const INDEX_CSV: &str = "date,index_id,price,volume\n2020-01-06,I,1.0,5\n2020-01-07,I,1.1,5\n2020-01-08,I,1.2,5\n";

fn load_strings(stocks: &str, policy: MissingPolicy) -> Result<(Panel, IndexSeries), DataError> {
    let dir = tempfile::tempdir().unwrap();
    let (s, i) = (dir.path().join("stocks.csv"), dir.path().join("index.csv"));
    std::fs::write(&s, stocks).unwrap();
    std::fs::write(&i, INDEX_CSV).unwrap();
    load_csv(&s, &i, policy)
}

#[test]
fn csv_minimal_file_and_validation_errors() {
    let good = "date,stock_id,close,f_0\n\
        2020-01-06,A,10.0,0.1\n2020-01-06,B,20.0,0.2\n\
        2020-01-07,A,10.5,0.3\n2020-01-07,B,19.0,0.4\n\
        2020-01-08,A,11.0,0.5\n2020-01-08,B,18.0,0.6\n";
    let (panel, index) = load_strings(good, MissingPolicy::Reject).unwrap();
    assert_eq!((panel.n_stocks(), panel.n_dates(), panel.n_features()), (2, 3, 1));
    assert_eq!(panel.features(2, 1), &[0.6]);
    assert_eq!(index.n_indices(), 1);

    let negative = good.replace("2020-01-07,B,19.0", "2020-01-07,B,-19.0");
    let err = load_strings(&negative, MissingPolicy::Reject).unwrap_err().to_string();
    assert!(err.contains("close") && err.contains(":5:"), "{err}");

    let hole = good.replace("2020-01-07,A,10.5,0.3", "2020-01-07,A,10.5,");
    let err = load_strings(&hole, MissingPolicy::Reject).unwrap_err().to_string();
    assert!(err.contains("f_0"), "{err}");
    let (filled, _) = load_strings(&hole, MissingPolicy::ForwardFill).unwrap();
    assert_eq!(filled.features(1, 0), &[0.1]);

    let bad_header = good.replace("close", "price");
    assert!(matches!(load_strings(&bad_header, MissingPolicy::Reject), Err(DataError::Schema { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalized_labels_are_standardized(raw in prop::collection::vec(-0.5f64..0.5, 2..40)) {
        let r = normalize_labels(&raw).unwrap();
        let mean = r.iter().sum::<f64>() / r.len() as f64;
        let spread = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - raw.iter().cloned().fold(f64::INFINITY, f64::min);
        if spread > 1e-6 {
            let sd = (r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64).sqrt();
            prop_assert!(mean.abs() < 1e-9);
            prop_assert!((sd - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eligibility_matches_enumeration(
        n in 5usize..60,
        lookback in 1usize..6,
        horizon in 1usize..5,
        longest in 1usize..12,
        a in 0usize..60,
        b in 0usize..60,
        overlap: bool,
        test_split: bool,
    ) {
        let dates = calendar(n);
        let (lo, hi) = ((a % n).min(b % n), (a % n).max(b % n));
        let range = DateRange { start: dates[lo], end: dates[hi] };
        let kind = if test_split { SplitKind::Test } else { SplitKind::Valid };
        let cfg = WindowConfig { lookback, horizon, market_intervals: vec![longest], allow_label_overlap: overlap };
        let got = eligible_positions(&dates, range, kind, &cfg);
        let limit = if overlap && !test_split { n - 1 } else { hi };
        let want: Vec<usize> = (lo..=hi)
            .filter(|&p| p + 1 >= lookback && p + 1 >= longest && p + horizon <= limit)
            .collect();
        prop_assert_eq!(got, want);
    }
}
