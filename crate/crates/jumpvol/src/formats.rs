//! CSV and JSON files exchanged between pipeline stages.
//!
//! Floats are written in Rust's shortest round-trip form, so a file read
//! back reproduces the in-memory values bit for bit. Bins are one-based
//! in every file.

use std::io::{Read, Write};

use chrono::NaiveDate;
use jumpvol_core::ajm::{AjmState, PARAM_NAMES};
use jumpvol_core::classify::{AgreementMatrix, ClassLabel, ClassificationTable, Series, TickerAgreement};
use jumpvol_core::diurnal::{BinDiagnostics, SeasonalProfile};
use jumpvol_core::fit::{AjmFit, FitOptions, LjungBoxRecord};
use jumpvol_core::measures::{BinMeasures, MeasurePanel};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("row {row}: {message}")]
    Layout { row: usize, message: String },
}

fn date_str(d: &NaiveDate) -> String {
    d.format("%Y-%m-%d").to_string()
}

#[derive(Debug, Serialize, Deserialize)]
struct MeasureRow {
    date: NaiveDate,
    bin: usize,
    rv: f64,
    bv: f64,
    tq: f64,
    j: f64,
    c: f64,
    sj: f64,
    neg: u8,
}

/// `date,bin,rv,bv,tq,j,c,sj,neg`.
pub fn write_measures<W: Write>(panel: &MeasurePanel, writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for (k, b) in panel.bins.iter().enumerate() {
        w.serialize(MeasureRow {
            date: panel.days[k / panel.bins_per_day],
            bin: k % panel.bins_per_day + 1,
            rv: b.rv,
            bv: b.bv,
            tq: b.tq,
            j: b.j_stat,
            c: b.c,
            sj: b.sj,
            neg: u8::from(b.neg),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a measures file; rows must be day-major with bins 1..N per day.
pub fn read_measures<R: Read>(reader: R) -> Result<MeasurePanel, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut days: Vec<NaiveDate> = Vec::new();
    let mut bins = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for (row, rec) in rdr.deserialize::<MeasureRow>().enumerate() {
        let r = rec?;
        let layout = |message: String| FormatError::Layout { row: row + 1, message };
        if r.bin == 1 {
            if days.last().is_some_and(|prev| r.date <= *prev) {
                return Err(layout(format!("{} does not follow the previous day", r.date)));
            }
            days.push(r.date);
            counts.push(0);
        } else if days.last() != Some(&r.date) || counts.last() != Some(&(r.bin - 1)) {
            return Err(layout(format!("unexpected bin {} on {}", r.bin, r.date)));
        }
        *counts.last_mut().expect("a day was started") += 1;
        bins.push(BinMeasures {
            rv: r.rv,
            bv: r.bv,
            tq: r.tq,
            j_stat: r.j,
            c: r.c,
            sj: r.sj,
            neg: r.neg != 0,
        });
    }
    let bins_per_day = counts.first().copied().unwrap_or(0);
    if bins_per_day == 0 || counts.iter().any(|c| *c != bins_per_day) {
        return Err(FormatError::Layout {
            row: bins.len(),
            message: "days have unequal bin counts".into(),
        });
    }
    Ok(MeasurePanel {
        days,
        bins_per_day,
        bins,
    })
}

/// `bin,factor`.
pub fn write_profile<W: Write>(profile: &SeasonalProfile, writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin", "factor"])?;
    for (i, f) in profile.factors.iter().enumerate() {
        w.write_record([(i + 1).to_string(), f.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `bin,mean_raw,mean_adjusted,rho_raw,rho_adjusted`; ρ of bin h pairs it
/// with bin h−1 and is empty for the first bin.
pub fn write_diagnostics<W: Write>(
    raw: &BinDiagnostics,
    adjusted: &BinDiagnostics,
    writer: W,
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin", "mean_raw", "mean_adjusted", "rho_raw", "rho_adjusted"])?;
    for i in 0..raw.means.len() {
        let rho = |d: &BinDiagnostics| opt(i.checked_sub(1).map(|h| d.adjacent_corr[h]));
        w.write_record([
            (i + 1).to_string(),
            raw.means[i].to_string(),
            adjusted.means[i].to_string(),
            rho(raw),
            rho(adjusted),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct OvernightRow {
    date: NaiveDate,
    overnight: f64,
}

/// `date,overnight`.
pub fn write_overnight<W: Write>(days: &[NaiveDate], overnight: &[f64], writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for (date, r) in days.iter().zip(overnight) {
        w.serialize(OvernightRow {
            date: *date,
            overnight: *r,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_overnight<R: Read>(reader: R) -> Result<(Vec<NaiveDate>, Vec<f64>), FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut days = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.deserialize::<OvernightRow>() {
        let r = rec?;
        days.push(r.date);
        values.push(r.overnight);
    }
    Ok((days, values))
}

#[derive(Debug, Serialize, Deserialize)]
struct StateRow {
    date: NaiveDate,
    bin: usize,
    mu: f64,
    varsigma: f64,
    kappa: f64,
    resid: f64,
}

/// `date,bin,mu,varsigma,kappa,resid`.
pub fn write_state<W: Write>(
    days: &[NaiveDate],
    bins_per_day: usize,
    state: &AjmState,
    writer: W,
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    for k in 0..state.mu.len() {
        w.serialize(StateRow {
            date: days[k / bins_per_day],
            bin: k % bins_per_day + 1,
            mu: state.mu[k],
            varsigma: state.varsigma[k],
            kappa: state.kappa[k],
            resid: state.residuals[k],
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Filtered state with its day labels.
#[derive(Debug, Clone, PartialEq)]
pub struct StateFile {
    pub days: Vec<NaiveDate>,
    pub state: AjmState,
}

pub fn read_state<R: Read>(reader: R) -> Result<StateFile, FormatError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut days: Vec<NaiveDate> = Vec::new();
    let mut state = AjmState {
        mu: Vec::new(),
        varsigma: Vec::new(),
        kappa: Vec::new(),
        residuals: Vec::new(),
        negative_kappa: 0,
    };
    for rec in rdr.deserialize::<StateRow>() {
        let r = rec?;
        if days.last() != Some(&r.date) {
            days.push(r.date);
        }
        if r.kappa < 0.0 {
            state.negative_kappa += 1;
        }
        state.mu.push(r.mu);
        state.varsigma.push(r.varsigma);
        state.kappa.push(r.kappa);
        state.residuals.push(r.resid);
    }
    Ok(StateFile { days, state })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se_robust: Option<f64>,
    pub se_naive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub spec: String,
    pub converged: bool,
    pub iterations: usize,
    pub starts_converged: usize,
    pub grad_max_abs: f64,
    pub loglik: f64,
    pub n_obs: usize,
    pub excluded_bins: usize,
    pub persistence: f64,
    pub negative_kappa: usize,
    pub hessian_singular: bool,
    pub coefficients: Vec<Coefficient>,
    pub ljung_box: Vec<LjungBoxRecord>,
}

impl FitSummary {
    pub fn from_fit(fit: &AjmFit) -> Self {
        let values = fit.params.to_array();
        let coefficients = PARAM_NAMES
            .iter()
            .enumerate()
            .filter(|(j, _)| fit.se.robust[*j].is_some())
            .map(|(j, name)| Coefficient {
                name: (*name).into(),
                estimate: values[j],
                se_robust: fit.se.robust[j],
                se_naive: fit.se.naive[j],
            })
            .collect();
        Self {
            spec: fit.spec.as_str().into(),
            converged: fit.converged,
            iterations: fit.iterations,
            starts_converged: fit.starts_converged,
            grad_max_abs: fit.grad_max_abs,
            loglik: fit.loglik,
            n_obs: fit.n_obs,
            excluded_bins: fit.excluded,
            persistence: fit.persistence,
            negative_kappa: fit.state.negative_kappa,
            hessian_singular: fit.se.singular,
            coefficients,
            ljung_box: fit.diagnostics.clone(),
        }
    }

    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn ljung_box_p(&self, lag: usize) -> Option<f64> {
        self.ljung_box.iter().find(|r| r.lag == lag).map(|r| r.p_value)
    }
}

/// Per-ticker fit report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub ticker: String,
    pub options: FitOptions,
    pub fits: Vec<FitSummary>,
}

pub fn write_fit_report<W: Write>(report: &FitReport, mut writer: W) -> Result<(), FormatError> {
    serde_json::to_writer_pretty(&mut writer, report)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_fit_report<R: Read>(reader: R) -> Result<FitReport, FormatError> {
    Ok(serde_json::from_reader(reader)?)
}

/// Coefficients and robust SEs in rows, one column per (ticker, spec).
pub fn write_coefficient_table<W: Write>(reports: &[FitReport], writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    let columns: Vec<(&str, &FitSummary)> = reports
        .iter()
        .flat_map(|r| r.fits.iter().map(move |f| (r.ticker.as_str(), f)))
        .collect();
    let mut header = vec!["row".to_string()];
    header.extend(columns.iter().map(|(t, f)| format!("{t}_{}", f.spec)));
    w.write_record(&header)?;
    let mut row = |label: String, cell: &dyn Fn(&FitSummary) -> String| -> Result<(), FormatError> {
        let mut rec = vec![label];
        rec.extend(columns.iter().map(|(_, f)| cell(f)));
        w.write_record(&rec)?;
        Ok(())
    };
    for name in PARAM_NAMES {
        row(name.into(), &|f| opt(f.coefficient(name).map(|c| c.estimate)))?;
        row(format!("{name}_se"), &|f| opt(f.coefficient(name).and_then(|c| c.se_robust)))?;
    }
    row("loglik".into(), &|f| f.loglik.to_string())?;
    row("persistence".into(), &|f| f.persistence.to_string())?;
    let lags: Vec<usize> = columns
        .first()
        .map(|(_, f)| f.ljung_box.iter().map(|r| r.lag).collect())
        .unwrap_or_default();
    for lag in lags {
        row(format!("LB{lag}"), &|f| opt(f.ljung_box_p(lag)))?;
    }
    row("converged".into(), &|f| f.converged.to_string())?;
    w.flush()?;
    Ok(())
}

/// `announcement_id,date,ticker,series,label,flags`, κ and surprise rows.
pub fn write_classification<W: Write>(tables: &[ClassificationTable], writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["announcement_id", "date", "ticker", "series", "label", "flags"])?;
    for t in tables {
        for e in &t.events {
            for series in [Series::Kappa, Series::Surprise] {
                w.write_record([
                    (e.id + 1).to_string(),
                    date_str(&e.date),
                    t.ticker.clone(),
                    series.as_str().into(),
                    e.label(series).as_str().into(),
                    e.flags.as_str().into(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `ticker,series,label,all,forward_guidance`.
pub fn write_label_counts<W: Write>(tables: &[ClassificationTable], writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticker", "series", "label", "all", "forward_guidance"])?;
    for t in tables {
        for (series, counts) in [(Series::Kappa, &t.kappa_counts), (Series::Surprise, &t.surprise_counts)] {
            for (k, label) in ClassLabel::ALL.iter().enumerate() {
                w.write_record([
                    t.ticker.clone(),
                    series.as_str().into(),
                    label.as_str().into(),
                    counts.all[k].to_string(),
                    counts.forward_guidance[k].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `announcement_id,date,ticker,reason` for events left out.
pub fn write_skipped<W: Write>(
    tables: &[ClassificationTable],
    dates: &[NaiveDate],
    writer: W,
) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["announcement_id", "date", "ticker", "reason"])?;
    for t in tables {
        for (id, reason) in &t.skipped {
            w.write_record([
                (id + 1).to_string(),
                date_str(&dates[*id]),
                t.ticker.clone(),
                reason.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Square matrix with ticker headers.
pub fn write_agreement<W: Write>(m: &AgreementMatrix, writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["ticker".to_string()];
    header.extend(m.tickers.iter().cloned());
    w.write_record(&header)?;
    for (t, row) in m.tickers.iter().zip(&m.values) {
        let mut rec = vec![t.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `ticker,ari_kappa_surprise,ari_kappa_sj`.
pub fn write_ticker_agreement<W: Write>(rows: &[TickerAgreement], writer: W) -> Result<(), FormatError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ticker", "ari_kappa_surprise", "ari_kappa_sj"])?;
    for r in rows {
        w.write_record([r.ticker.clone(), r.kappa_surprise.to_string(), r.kappa_sj.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> MeasurePanel {
        let d = |k| NaiveDate::from_ymd_opt(2020, 1, k).unwrap();
        let bins = (0..6)
            .map(|k| BinMeasures {
                rv: 1.0 + k as f64 / 3.0,
                bv: 0.9,
                tq: 0.1,
                j_stat: if k == 2 { f64::INFINITY } else { 0.1 * k as f64 },
                c: 0.9,
                sj: 0.1 + k as f64 / 3.0,
                neg: k % 2 == 0,
            })
            .collect();
        MeasurePanel {
            days: vec![d(2), d(3)],
            bins_per_day: 3,
            bins,
        }
    }

    #[test]
    fn measures_round_trip() {
        let p = panel();
        let mut buf = Vec::new();
        write_measures(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("date,bin,rv,bv,tq,j,c,sj,neg\n2020-01-02,1,"));
        assert_eq!(read_measures(buf.as_slice()).unwrap(), p);
    }

    #[test]
    fn measures_layout_errors() {
        let bad = "date,bin,rv,bv,tq,j,c,sj,neg\n2020-01-02,2,1,1,1,0,1,0,0\n";
        assert!(read_measures(bad.as_bytes()).is_err());
        let ragged = "date,bin,rv,bv,tq,j,c,sj,neg\n2020-01-02,1,1,1,1,0,1,0,0\n2020-01-02,2,1,1,1,0,1,0,0\n2020-01-03,1,1,1,1,0,1,0,0\n";
        assert!(read_measures(ragged.as_bytes()).is_err());
    }

    #[test]
    fn state_round_trip() {
        let days = vec![NaiveDate::from_ymd_opt(2020, 1, 2).unwrap()];
        let state = AjmState {
            mu: vec![1.5, 2.0],
            varsigma: vec![1.0, 1.25],
            kappa: vec![0.5, 0.75],
            residuals: vec![0.3, 1.7],
            negative_kappa: 0,
        };
        let mut buf = Vec::new();
        write_state(&days, 2, &state, &mut buf).unwrap();
        let back = read_state(buf.as_slice()).unwrap();
        assert_eq!(back.state, state);
        assert_eq!(back.days, days);
    }
}
