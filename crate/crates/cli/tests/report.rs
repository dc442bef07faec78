use bitserial_cli::report::{BenchReport, BenchRow};

fn golden_row() -> BenchRow {
    BenchRow {
        layer: "9".into(),
        precision: "w1a2".into(),
        baseline: "int16".into(),
        baseline_ns: 2_500_000,
        bitserial_ns: 1_000_000,
        popcount_word_ops: 225_792,
        checksum_ok: true,
    }
}

#[test]
fn one_row_table_matches_golden() {
    let report = BenchReport::new(vec![golden_row()]);
    assert_eq!(
        report.render_table(),
        include_str!("golden/table_one_row.txt")
    );
}

#[test]
fn empty_report_is_header_only() {
    let csv = BenchReport::default().to_csv();
    assert_eq!(csv.lines().count(), 1);
    assert_eq!(
        csv.trim_end(),
        "layer,precision,baseline,baseline_ns,bitserial_ns,speedup,popcount_word_ops,checksum_ok"
    );
}

#[test]
fn csv_round_trip_keeps_rows() {
    let mut failed = golden_row();
    failed.layer = "12".into();
    failed.checksum_ok = false;
    let report = BenchReport::new(vec![failed, golden_row()]);
    let csv = report.to_csv();
    let back = BenchReport::parse_csv(csv.as_bytes()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.rows()[0].layer, "9");
    // a failed row carries no speedup
    assert!(csv.lines().nth(2).unwrap().contains(",,"));
    assert_eq!(back.rows()[0].speedup(), Some(2.5));
}
