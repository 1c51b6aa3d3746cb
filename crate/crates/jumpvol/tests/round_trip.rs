use jumpvol::formats::{read_fit_report, read_measures, write_fit_report, write_measures, FitReport, FitSummary};
use jumpvol::ingest::{read_price_panel, write_price_csv, IngestConfig};
use jumpvol_core::ajm::{simulate, AjmParams, SimulationConfig};
use jumpvol_core::fit::{fit_nested, FitOptions};
use jumpvol_core::grid::SessionGrid;
use jumpvol_core::measures::{build_bin_measures, jump_threshold};
use jumpvol_core::panel::compute_returns;
use jumpvol_core::synth::{gen_paths, SynthSpec};

#[test]
fn synthetic_prices_survive_the_csv_loop() {
    let grid = SessionGrid::default();
    let out = gen_paths(
        &SynthSpec {
            days: 15,
            jump_times: vec![(3, 4)],
            overnight_sigma: 0.01,
            seed: 2,
            ..Default::default()
        },
        &grid,
    )
    .unwrap();
    let mut buf = Vec::new();
    write_price_csv(&out.panel, &grid, &mut buf).unwrap();
    let (back, report) = read_price_panel(buf.as_slice(), "SYN", &IngestConfig::default()).unwrap();
    assert_eq!(report.filled, 0);
    assert!(report.rejected.is_empty());
    assert_eq!(back.days(), out.panel.days());
    for (a, b) in back.log_prices().iter().flatten().zip(out.panel.log_prices().iter().flatten()) {
        assert!((a - b).abs() < 1e-12);
    }

    let t = jump_threshold(0.55).unwrap();
    let m = build_bin_measures(&compute_returns(&back), grid.per_bin(), t).unwrap();
    let mut csv = Vec::new();
    write_measures(&m, &mut csv).unwrap();
    assert_eq!(read_measures(csv.as_slice()).unwrap(), m);
    assert!(m.at(3, 4).is_jump());
}

#[test]
fn fit_report_json_round_trip() {
    let p = AjmParams {
        omega: 0.1173,
        alpha1: 0.2589,
        alpha2: -0.2045,
        beta: 0.8926,
        gamma: 0.0105,
        delta1: 0.0081,
        delta2: -0.0304,
        phi: 0.3509,
        psi: 0.2622,
        theta: 5.6748,
        restricted: false,
    };
    let sim = simulate(&p, &SimulationConfig { days: 150, seed: 4, ..Default::default() }).unwrap();
    let opts = FitOptions { starts: 2, ..Default::default() };
    let (r, u) = fit_nested(&sim.data, &opts).unwrap();
    let report = FitReport {
        ticker: "SIM".into(),
        options: opts,
        fits: vec![FitSummary::from_fit(&r), FitSummary::from_fit(&u)],
    };
    let mut buf = Vec::new();
    write_fit_report(&report, &mut buf).unwrap();
    let back = read_fit_report(buf.as_slice()).unwrap();
    assert_eq!(back, report);
    assert_eq!(back.fits[0].coefficients.len(), 9);
    assert_eq!(back.fits[1].coefficients.len(), 10);
}
