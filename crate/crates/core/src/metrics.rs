//! Service-quality metrics for finished episodes and the CSV report format.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::trainer::EpisodeLog;

/// Squared coefficient of variation of headways: population variance over
/// the square of the expected headway. Zero when fewer than two headways.
pub fn cv2(headways: &[f64], expected_headway: f64) -> f64 {
    if headways.len() < 2 {
        return 0.0;
    }
    let n = headways.len() as f64;
    let mean = headways.iter().sum::<f64>() / n;
    let var = headways.iter().map(|h| (h - mean).powi(2)).sum::<f64>() / n;
    var / (expected_headway * expected_headway)
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for x in xs {
        s += x;
        n += 1;
    }
    (n > 0).then(|| s / n as f64)
}

/// Variance-to-mean ratio with population moments. `None` for no samples;
/// zero when every sample is zero.
pub fn dispersion(samples: &[f64]) -> Option<f64> {
    let m = mean(samples.iter().copied())?;
    if m == 0.0 {
        return Some(0.0);
    }
    let var = samples.iter().map(|x| (x - m).powi(2)).sum::<f64>() / samples.len() as f64;
    Some(var / m)
}

/// Metrics of a single episode. Waiting/journey metrics are absent when no
/// passenger boarded (or alighted); travel time when no bus finished.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    /// Mean holding per decision (seconds).
    pub aht_s: f64,
    pub awt_s: Option<f64>,
    pub ajt_s: Option<f64>,
    pub att_s: Option<f64>,
    pub aod: Option<f64>,
    /// Mean fleet CV² over ticks with at least two headways.
    pub mean_cv2: f64,
}

pub fn compute_metrics(log: &EpisodeLog) -> EpisodeMetrics {
    let aht_s = mean(log.decisions.iter().map(|d| d.hold_s)).unwrap_or(0.0);
    let awt_s = mean(log.passengers.iter().filter_map(|p| p.board_time.map(|b| b - p.arrival_time)));
    let ajt_s = mean(
        log.passengers
            .iter()
            .filter_map(|p| Some(p.alight_time? - p.board_time?)),
    );
    let att_s = mean(
        log.trips
            .iter()
            .filter_map(|t| t.terminal_arrival.map(|e| e - t.dispatch_time)),
    );
    let occ: Vec<f64> = log.departures.iter().map(|d| d.occupancy as f64).collect();
    let mean_cv2 = mean(log.cv2.iter().filter(|c| c.n_headways >= 2).map(|c| c.cv2)).unwrap_or(0.0);
    EpisodeMetrics {
        aht_s,
        awt_s,
        ajt_s,
        att_s,
        aod: dispersion(&occ),
        mean_cv2,
    }
}

/// Mean of each metric over episodes, skipping absent values.
pub fn average_metrics(ms: &[EpisodeMetrics]) -> EpisodeMetrics {
    EpisodeMetrics {
        aht_s: mean(ms.iter().map(|m| m.aht_s)).unwrap_or(0.0),
        awt_s: mean(ms.iter().filter_map(|m| m.awt_s)),
        ajt_s: mean(ms.iter().filter_map(|m| m.ajt_s)),
        att_s: mean(ms.iter().filter_map(|m| m.att_s)),
        aod: mean(ms.iter().filter_map(|m| m.aod)),
        mean_cv2: mean(ms.iter().map(|m| m.mean_cv2)).unwrap_or(0.0),
    }
}

/// Paired difference `treated - baseline`, averaged over seeds where both
/// sides are defined.
pub fn paired_delta(treated: &[Option<f64>], baseline: &[Option<f64>]) -> Option<f64> {
    mean(treated.iter().zip(baseline).filter_map(|(t, b)| Some((*t)? - (*b)?)))
}

/// One row of the evaluation report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub agent: String,
    pub route: String,
    pub sigma_d: f64,
    pub sigma_s: f64,
    pub anomaly: String,
    pub seed_count: usize,
    pub aht_s: f64,
    pub awt_s: Option<f64>,
    pub ajt_s: Option<f64>,
    pub att_s: Option<f64>,
    pub aod: Option<f64>,
    pub d_awt_s: Option<f64>,
    pub d_att_s: Option<f64>,
    pub d_aod: Option<f64>,
}

impl ReportRow {
    /// Builds a row from per-seed metrics of the treated agent and of the
    /// no-control baseline on identical draws.
    pub fn from_paired(
        agent: &str,
        route: &str,
        sigma: (f64, f64),
        anomaly: &str,
        treated: &[EpisodeMetrics],
        baseline: &[EpisodeMetrics],
    ) -> Result<Self> {
        if treated.len() != baseline.len() {
            return Err(invalid(format!(
                "paired report needs equal seed counts, got {} and {}",
                treated.len(),
                baseline.len()
            )));
        }
        let avg = average_metrics(treated);
        let col = |ms: &[EpisodeMetrics], f: fn(&EpisodeMetrics) -> Option<f64>| ms.iter().map(f).collect::<Vec<_>>();
        Ok(Self {
            agent: agent.to_string(),
            route: route.to_string(),
            sigma_d: sigma.0,
            sigma_s: sigma.1,
            anomaly: anomaly.to_string(),
            seed_count: treated.len(),
            aht_s: avg.aht_s,
            awt_s: avg.awt_s,
            ajt_s: avg.ajt_s,
            att_s: avg.att_s,
            aod: avg.aod,
            d_awt_s: paired_delta(&col(treated, |m| m.awt_s), &col(baseline, |m| m.awt_s)),
            d_att_s: paired_delta(&col(treated, |m| m.att_s), &col(baseline, |m| m.att_s)),
            d_aod: paired_delta(&col(treated, |m| m.aod), &col(baseline, |m| m.aod)),
        })
    }
}

/// A table of report rows with a fixed column order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "agent,route,sigma_d,sigma_s,anomaly,seed_count,aht_s,awt_s,ajt_s,att_s,aod,d_awt_s,d_att_s,d_aod";

impl MetricsReport {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(REPORT_HEADER.split(',')).map_err(csv_err)?;
        for r in &self.rows {
            w.serialize(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| invalid(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| invalid(e.to_string()))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
        if header.join(",") != REPORT_HEADER {
            return Err(invalid(format!("unexpected report header '{}'", header.join(","))));
        }
        let rows = r.deserialize().collect::<std::result::Result<Vec<ReportRow>, _>>().map_err(csv_err)?;
        Ok(Self { rows })
    }
}

fn csv_err(e: csv::Error) -> crate::error::Error {
    invalid(format!("csv: {e}"))
}

/// Time after `window_end` at which the fleet CV² first drops below
/// `factor` times its mean over `[window_start - lookback, window_start)`.
/// Only ticks with at least two headways count. `None` if the mean is
/// undefined or the CV² never recovers before the log ends.
pub fn recovery_time(
    samples: &[crate::trainer::Cv2Sample],
    window: (f64, f64),
    lookback: f64,
    factor: f64,
) -> Option<f64> {
    let pre = mean(
        samples
            .iter()
            .filter(|s| s.n_headways >= 2 && s.time >= window.0 - lookback && s.time < window.0)
            .map(|s| s.cv2),
    )?;
    let threshold = factor * pre;
    samples
        .iter()
        .find(|s| s.time >= window.1 && s.n_headways >= 2 && s.cv2 < threshold)
        .map(|s| s.time - window.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::Cv2Sample;
    use proptest::prelude::*;

    #[test]
    fn cv2_examples() {
        assert_eq!(cv2(&[600.0, 600.0, 600.0], 600.0), 0.0);
        assert!((cv2(&[300.0, 900.0], 600.0) - 0.25).abs() < 1e-15);
        assert_eq!(cv2(&[300.0], 600.0), 0.0);
        assert_eq!(cv2(&[], 600.0), 0.0);
        assert!((cv2(&[600.0, 1800.0], 600.0) - 4.0 * cv2(&[300.0, 900.0], 600.0)).abs() < 1e-12);
    }

    #[test]
    fn dispersion_examples() {
        assert_eq!(dispersion(&[]), None);
        assert_eq!(dispersion(&[7.0, 7.0, 7.0]), Some(0.0));
        assert_eq!(dispersion(&[0.0, 0.0]), Some(0.0));
        assert!((dispersion(&[0.0, 120.0]).unwrap() - 60.0).abs() < 1e-12);
    }

    #[test]
    fn paired_delta_of_identical_runs_is_zero() {
        let a = [Some(10.0), None, Some(4.5)];
        assert_eq!(paired_delta(&a, &a), Some(0.0));
        assert_eq!(paired_delta(&[None], &[Some(1.0)]), None);
        assert_eq!(paired_delta(&[Some(3.0), Some(5.0)], &[Some(1.0), Some(1.0)]), Some(3.0));
    }

    fn sample(time: f64, cv2: f64) -> Cv2Sample {
        Cv2Sample { time, cv2, n_headways: 3 }
    }

    #[test]
    fn recovery_time_finds_first_crossing() {
        let mut s: Vec<Cv2Sample> = (0..100).map(|t| sample(t as f64, 0.1)).collect();
        for x in s.iter_mut().filter(|x| x.time >= 50.0 && x.time < 70.0) {
            x.cv2 = 1.0;
        }
        // window (40, 60): pre-mean 0.1, threshold 0.2; recovered at t = 70.
        assert_eq!(recovery_time(&s, (40.0, 60.0), 40.0, 2.0), Some(10.0));
        // never recovers when the whole tail is high
        for x in s.iter_mut().filter(|x| x.time >= 50.0) {
            x.cv2 = 1.0;
        }
        assert_eq!(recovery_time(&s, (40.0, 60.0), 40.0, 2.0), None);
        // undefined pre-window mean
        assert_eq!(recovery_time(&s, (0.0, 10.0), 40.0, 2.0), None);
    }

    fn row(awt: Option<f64>, anomaly: &str) -> ReportRow {
        ReportRow {
            agent: "iqnc-m".into(),
            route: "desk".into(),
            sigma_d: 1.0,
            sigma_s: 0.1,
            anomaly: anomaly.into(),
            seed_count: 20,
            aht_s: 12.345678901234567,
            awt_s: awt,
            ajt_s: Some(600.0),
            att_s: Some(2400.5),
            aod: Some(3.3),
            d_awt_s: awt.map(|a| a - 300.0),
            d_att_s: Some(-1e-9),
            d_aod: None,
        }
    }

    #[test]
    fn report_header_and_empty_fields() {
        let rep = MetricsReport {
            rows: vec![row(None, "none")],
        };
        let csv = rep.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(REPORT_HEADER));
        assert_eq!(lines.next().unwrap(), "iqnc-m,desk,1.0,0.1,none,20,12.345678901234567,,600.0,2400.5,3.3,,-1e-9,");
    }

    #[test]
    fn report_rejects_foreign_header() {
        assert!(MetricsReport::from_csv("a,b\n1,2\n").is_err());
    }

    proptest! {
        #[test]
        fn report_round_trips(
            awt in proptest::option::of(-1e6f64..1e6),
            sd in 0.0f64..3.0,
            n in 0usize..4,
            quoted in any::<bool>(),
        ) {
            let anomaly = if quoted { "interruption:factor=0.1,buses=0+2,window=1800-2400" } else { "none" };
            let rows: Vec<ReportRow> = (0..n).map(|i| ReportRow { sigma_d: sd + i as f64, ..row(awt, anomaly) }).collect();
            let rep = MetricsReport { rows };
            let back = MetricsReport::from_csv(&rep.to_csv().unwrap()).unwrap();
            prop_assert_eq!(back, rep);
        }

        #[test]
        fn dispersion_nonnegative(xs in proptest::collection::vec(0.0f64..200.0, 1..50)) {
            prop_assert!(dispersion(&xs).unwrap() >= 0.0);
        }
    }
}
