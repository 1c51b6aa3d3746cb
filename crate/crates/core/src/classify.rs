//! Announcement classification by the local shape of the expected-jump
//! path κ (and of the jump surprise κ − SJ) around the post-announcement
//! bin, and cross-ticker agreement by the adjusted Rand index.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::SessionGrid;
use crate::panel::{map_announcement_to_bin, AnnouncementEvent, Unmatched};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ClassifyError {
    #[error("label vectors have lengths {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least two labels")]
    TooFewLabels,
    #[error("series length {got} does not cover {days} days of {bins} bins")]
    SeriesLength { got: usize, days: usize, bins: usize },
    #[error("need at least two tickers")]
    TooFewTickers,
    #[error("tickers share only {0} classified announcements")]
    Alignment(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    UpwardSpike,
    DownwardSpike,
    Boost,
    Drop,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 4] = [
        ClassLabel::UpwardSpike,
        ClassLabel::DownwardSpike,
        ClassLabel::Boost,
        ClassLabel::Drop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassLabel::UpwardSpike => "UpwardSpike",
            ClassLabel::DownwardSpike => "DownwardSpike",
            ClassLabel::Boost => "Boost",
            ClassLabel::Drop => "Drop",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Which path a label was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Series {
    Kappa,
    Surprise,
    /// Raw significant-jump series.
    Sj,
}

impl Series {
    pub fn as_str(self) -> &'static str {
        match self {
            Series::Kappa => "kappa",
            Series::Surprise => "surprise",
            Series::Sj => "sj",
        }
    }
}

/// κ − SJ: expected minus observed jump.
pub fn jump_surprise(kappa: f64, sj: f64) -> f64 {
    kappa - sj
}

/// Shape of (prev, at, next). Strict inequalities define the spikes;
/// otherwise Boost if prev < at, else Drop.
pub fn classify_triple(prev: f64, at: f64, next: f64) -> ClassLabel {
    if prev < at && at > next {
        ClassLabel::UpwardSpike
    } else if prev > at && at < next {
        ClassLabel::DownwardSpike
    } else if prev < at {
        ClassLabel::Boost
    } else {
        ClassLabel::Drop
    }
}

/// Per-bin series of one ticker, flattened day-major.
#[derive(Debug, Clone, Copy)]
pub struct TickerSeries<'a> {
    pub days: &'a [NaiveDate],
    pub bins_per_day: usize,
    pub kappa: &'a [f64],
    pub sj: &'a [f64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TripleFlags {
    /// ι is the first bin; the previous value is from the prior day.
    pub prev_day: bool,
    /// ι is the last bin; the next value is from the following day.
    pub next_day: bool,
}

impl TripleFlags {
    pub fn as_str(self) -> &'static str {
        match (self.prev_day, self.next_day) {
            (false, false) => "",
            (true, false) => "prev_day",
            (false, true) => "next_day",
            (true, true) => "prev_day;next_day",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EventClassification {
    /// Position of the event in the calendar.
    pub id: usize,
    pub date: NaiveDate,
    pub forward_guidance: bool,
    pub day: usize,
    /// Zero-based ι.
    pub bin: usize,
    pub flags: TripleFlags,
    pub kappa: ClassLabel,
    pub surprise: ClassLabel,
    pub sj_shape: ClassLabel,
}

impl EventClassification {
    pub fn label(&self, series: Series) -> ClassLabel {
        match series {
            Series::Kappa => self.kappa,
            Series::Surprise => self.surprise,
            Series::Sj => self.sj_shape,
        }
    }
}

/// Why an event was left out of the table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Error)]
pub enum Skipped {
    #[error(transparent)]
    Unmatched(#[from] Unmatched),
    #[error("neighbouring bin lies outside the sample")]
    SampleEdge,
}

/// Label counts over all announcements and over the forward-guidance
/// subset, indexed in [`ClassLabel::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LabelCounts {
    pub all: [usize; 4],
    pub forward_guidance: [usize; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationTable {
    pub ticker: String,
    pub events: Vec<EventClassification>,
    pub skipped: Vec<(usize, Skipped)>,
    pub kappa_counts: LabelCounts,
    pub surprise_counts: LabelCounts,
}

impl ClassificationTable {
    pub fn labels(&self, series: Series) -> Vec<ClassLabel> {
        self.events.iter().map(|e| e.label(series)).collect()
    }
}

fn count(events: &[EventClassification], series: Series) -> LabelCounts {
    let mut c = LabelCounts::default();
    for e in events {
        let k = e.label(series).index();
        c.all[k] += 1;
        if e.forward_guidance {
            c.forward_guidance[k] += 1;
        }
    }
    c
}

/// Labels each announcement from the triple (ι−1, ι, ι+1) of κ, of the
/// surprise and of raw SJ. Neighbours of a first or last bin are taken
/// from the adjacent day and flagged.
pub fn classify_announcements(
    ticker: &str,
    series: &TickerSeries<'_>,
    events: &[AnnouncementEvent],
    grid: &SessionGrid,
) -> Result<ClassificationTable, ClassifyError> {
    let n = series.bins_per_day;
    let total = series.days.len() * n;
    if series.kappa.len() != total || series.sj.len() != total {
        return Err(ClassifyError::SeriesLength {
            got: series.kappa.len().min(series.sj.len()),
            days: series.days.len(),
            bins: n,
        });
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (id, event) in events.iter().enumerate() {
        let coord = match map_announcement_to_bin(event, series.days, grid) {
            Ok(c) => c,
            Err(e) => {
                skipped.push((id, Skipped::Unmatched(e)));
                continue;
            }
        };
        let k = coord.day * n + coord.bin;
        if k == 0 || k + 1 >= total {
            skipped.push((id, Skipped::SampleEdge));
            continue;
        }
        let surprise = |j: usize| jump_surprise(series.kappa[j], series.sj[j]);
        rows.push(EventClassification {
            id,
            date: event.date,
            forward_guidance: event.forward_guidance,
            day: coord.day,
            bin: coord.bin,
            flags: TripleFlags {
                prev_day: coord.bin == 0,
                next_day: coord.bin + 1 == n,
            },
            kappa: classify_triple(series.kappa[k - 1], series.kappa[k], series.kappa[k + 1]),
            surprise: classify_triple(surprise(k - 1), surprise(k), surprise(k + 1)),
            sj_shape: classify_triple(series.sj[k - 1], series.sj[k], series.sj[k + 1]),
        });
    }
    Ok(ClassificationTable {
        ticker: ticker.into(),
        kappa_counts: count(&rows, Series::Kappa),
        surprise_counts: count(&rows, Series::Surprise),
        events: rows,
        skipped,
    })
}

fn choose2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items. Defined
/// as 1 when the chance-adjusted denominator vanishes (both partitions
/// trivial in the same way).
pub fn adjusted_rand_index<T: PartialEq>(a: &[T], b: &[T]) -> Result<f64, ClassifyError> {
    if a.len() != b.len() {
        return Err(ClassifyError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(ClassifyError::TooFewLabels);
    }
    let codes = |x: &[T]| -> (Vec<usize>, usize) {
        let mut seen: Vec<&T> = Vec::new();
        let codes = x
            .iter()
            .map(|v| match seen.iter().position(|s| *s == v) {
                Some(i) => i,
                None => {
                    seen.push(v);
                    seen.len() - 1
                }
            })
            .collect();
        (codes, seen.len())
    };
    let (ca, ka) = codes(a);
    let (cb, kb) = codes(b);
    let mut table = vec![0usize; ka * kb];
    for (i, j) in ca.iter().zip(&cb) {
        table[i * kb + j] += 1;
    }
    let mut rows = vec![0usize; ka];
    let mut cols = vec![0usize; kb];
    for i in 0..ka {
        for j in 0..kb {
            rows[i] += table[i * kb + j];
            cols[j] += table[i * kb + j];
        }
    }
    let index: f64 = table.iter().map(|&c| choose2(c)).sum();
    let sum_a: f64 = rows.iter().map(|&c| choose2(c)).sum();
    let sum_b: f64 = cols.iter().map(|&c| choose2(c)).sum();
    let expected = sum_a * sum_b / choose2(a.len());
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TickerAgreement {
    pub ticker: String,
    /// ARI between the κ and surprise labels.
    pub kappa_surprise: f64,
    /// ARI between the κ and raw-SJ-shape labels.
    pub kappa_sj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgreementMatrix {
    pub series: Series,
    pub tickers: Vec<String>,
    /// Symmetric, unit diagonal.
    pub values: Vec<Vec<f64>>,
    /// Announcements classified for every ticker.
    pub n_events: usize,
    pub per_ticker: Vec<TickerAgreement>,
}

impl AgreementMatrix {
    /// Mean of the strictly upper triangle.
    pub fn mean_off_diagonal(&self) -> f64 {
        let k = self.tickers.len();
        let mut sum = 0.0;
        for i in 0..k {
            for j in i + 1..k {
                sum += self.values[i][j];
            }
        }
        sum / choose2(k)
    }
}

/// Pairwise ARI across tickers on the announcements every ticker
/// classified, plus the per-ticker κ-vs-surprise and κ-vs-SJ agreement.
pub fn agreement_matrix(
    tables: &[ClassificationTable],
    series: Series,
) -> Result<AgreementMatrix, ClassifyError> {
    if tables.len() < 2 {
        return Err(ClassifyError::TooFewTickers);
    }
    let mut common: Vec<usize> = tables[0].events.iter().map(|e| e.id).collect();
    for t in &tables[1..] {
        common.retain(|id| t.events.iter().any(|e| e.id == *id));
    }
    if common.len() < 2 {
        return Err(ClassifyError::Alignment(common.len()));
    }
    let aligned: Vec<Vec<&EventClassification>> = tables
        .iter()
        .map(|t| {
            common
                .iter()
                .map(|id| t.events.iter().find(|e| e.id == *id).expect("id is common"))
                .collect()
        })
        .collect();
    let labels = |k: usize, s: Series| -> Vec<ClassLabel> { aligned[k].iter().map(|e| e.label(s)).collect() };

    let k = tables.len();
    let mut values = vec![vec![1.0; k]; k];
    #[allow(clippy::needless_range_loop)]
    for i in 0..k {
        for j in i + 1..k {
            let v = adjusted_rand_index(&labels(i, series), &labels(j, series))?;
            values[i][j] = v;
            values[j][i] = v;
        }
    }
    let per_ticker = (0..k)
        .map(|i| {
            let kappa = labels(i, Series::Kappa);
            Ok(TickerAgreement {
                ticker: tables[i].ticker.clone(),
                kappa_surprise: adjusted_rand_index(&kappa, &labels(i, Series::Surprise))?,
                kappa_sj: adjusted_rand_index(&kappa, &labels(i, Series::Sj))?,
            })
        })
        .collect::<Result<Vec<_>, ClassifyError>>()?;
    Ok(AgreementMatrix {
        series,
        tickers: tables.iter().map(|t| t.ticker.clone()).collect(),
        values,
        n_events: common.len(),
        per_ticker,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveTime;

    #[test]
    fn triple_cases() {
        assert_eq!(classify_triple(1.0, 3.0, 2.0), ClassLabel::UpwardSpike);
        assert_eq!(classify_triple(3.0, 1.0, 2.0), ClassLabel::DownwardSpike);
        assert_eq!(classify_triple(1.0, 2.0, 3.0), ClassLabel::Boost);
        assert_eq!(classify_triple(3.0, 2.0, 1.0), ClassLabel::Drop);
        assert_eq!(classify_triple(2.0, 2.0, 1.0), ClassLabel::Drop);
        assert_eq!(classify_triple(2.0, 2.0, 3.0), ClassLabel::Drop);
        assert_eq!(classify_triple(1.0, 2.0, 2.0), ClassLabel::Boost);
        assert_eq!(classify_triple(0.0, 0.0, 0.0), ClassLabel::Drop);
    }

    #[test]
    fn surprise_arithmetic() {
        assert_eq!(jump_surprise(2.0, 0.5), 1.5);
        assert_eq!(jump_surprise(0.7, 0.7), 0.0);
    }

    #[test]
    fn ari_identical_and_degenerate() {
        let a = [1, 1, 2, 2, 3];
        assert_eq!(adjusted_rand_index(&a, &a).unwrap(), 1.0);
        // Relabelled partition is the same partition.
        assert_eq!(adjusted_rand_index(&a, &[7, 7, 5, 5, 0]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[1, 1, 1]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[0], &[0]).is_err());
        assert!(adjusted_rand_index(&[0, 1], &[0]).is_err());
    }

    #[test]
    fn ari_known_value() {
        // sklearn.metrics.adjusted_rand_score([0,0,1,1],[0,0,1,2]) = 0.5714285714285715
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 2]).unwrap();
        assert!((v - 0.571_428_571_428_571_5).abs() < 1e-15);
    }

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2021, 6, day).unwrap()
    }

    fn event(day: u32, h: u32, m: u32, fg: bool) -> AnnouncementEvent {
        AnnouncementEvent {
            date: d(day),
            time: NaiveTime::from_hms_opt(h, m, 0).unwrap(),
            forward_guidance: fg,
            note: String::new(),
        }
    }

    #[test]
    fn announcements_and_boundaries() {
        let days = [d(14), d(15), d(16)];
        let n = 13;
        let kappa: Vec<f64> = (0..3 * n).map(|k| (k % 5) as f64).collect();
        let sj = vec![0.0; 3 * n];
        let s = TickerSeries {
            days: &days,
            bins_per_day: n,
            kappa: &kappa,
            sj: &sj,
        };
        let events = [
            event(15, 14, 0, true),
            event(15, 9, 30, false),
            event(15, 15, 30, false),
            event(19, 14, 0, false),
            event(14, 9, 30, false),
        ];
        let t = classify_announcements("X", &s, &events, &SessionGrid::default()).unwrap();
        assert_eq!(t.events.len(), 3);
        assert_eq!(t.skipped, vec![(3, Skipped::Unmatched(Unmatched::Weekend)), (4, Skipped::SampleEdge)]);
        let e = &t.events[0];
        assert_eq!((e.day, e.bin), (1, 9));
        // k = 22 → κ = (1, 2, 3).
        assert_eq!(e.kappa, ClassLabel::Boost);
        assert_eq!(e.surprise, ClassLabel::Boost);
        assert_eq!(e.sj_shape, ClassLabel::Drop);
        assert!(t.events[1].flags.prev_day);
        assert!(t.events[2].flags.next_day);
        assert_eq!(t.kappa_counts.all.iter().sum::<usize>(), 3);
        assert_eq!(t.kappa_counts.forward_guidance.iter().sum::<usize>(), 1);
    }

    #[test]
    fn empty_calendar() {
        let days = [d(14), d(15)];
        let kappa = vec![1.0; 26];
        let s = TickerSeries {
            days: &days,
            bins_per_day: 13,
            kappa: &kappa,
            sj: &kappa,
        };
        let t = classify_announcements("X", &s, &[], &SessionGrid::default()).unwrap();
        assert!(t.events.is_empty());
        assert_eq!(t.kappa_counts, LabelCounts::default());
    }

    #[test]
    fn identical_tickers_agree() {
        let days = [d(14), d(15), d(16)];
        let kappa: Vec<f64> = (0..39).map(|k| ((k * 7) % 11) as f64).collect();
        let sj: Vec<f64> = (0..39).map(|k| ((k * 3) % 4) as f64).collect();
        let s = TickerSeries {
            days: &days,
            bins_per_day: 13,
            kappa: &kappa,
            sj: &sj,
        };
        let events: Vec<_> = (0..10).map(|i| event(14 + (i % 3), 10 + i, 0, false)).collect();
        let grid = SessionGrid::default();
        let a = classify_announcements("A", &s, &events, &grid).unwrap();
        let b = classify_announcements("B", &s, &events, &grid).unwrap();
        let m = agreement_matrix(&[a, b], Series::Kappa).unwrap();
        assert_eq!(m.values, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
    }
}
