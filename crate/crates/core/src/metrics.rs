//! Post-run statistics and report serialization.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{FlowId, PriorityClass, SimTime};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no flows")]
    NoFlows,
    #[error("no throughput")]
    NoThroughput,
    #[error("weight of flow {0} must be positive")]
    Weight(usize),
    #[error("goodput and weight vectors differ in length")]
    Length,
}

/// Weighted fairness index
/// `F = (sum G_i/W_i)^2 / (N * sum (G_i/W_i)^2)`.
pub fn fairness_index(goodput: &[f64], weights: &[f64]) -> Result<f64, MetricsError> {
    if goodput.len() != weights.len() {
        return Err(MetricsError::Length);
    }
    if goodput.is_empty() {
        return Err(MetricsError::NoFlows);
    }
    if let Some(i) = weights.iter().position(|&w| !(w > 0.0)) {
        return Err(MetricsError::Weight(i));
    }
    if goodput.iter().all(|&g| g == 0.0) {
        return Err(MetricsError::NoThroughput);
    }
    let (sum, sum_sq) = goodput
        .iter()
        .zip(weights)
        .map(|(g, w)| g / w)
        .fold((0.0, 0.0), |(s, s2), r| (s + r, s2 + r * r));
    Ok(sum * sum / (goodput.len() as f64 * sum_sq))
}

/// Delivered bytes as a fraction of what the link could carry in `window`.
pub fn throughput_effectiveness(delivered_bytes: u64, link_rate: f64, window: SimTime) -> f64 {
    debug_assert!(window.0 > 0);
    let capacity = link_rate * window.as_secs_f64();
    if capacity <= 0.0 {
        return 0.0;
    }
    (delivered_bytes as f64 / capacity).clamp(0.0, 1.0)
}

/// Running mean of queueing delays.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DelayStats {
    sum_us: u128,
    count: u64,
}

impl DelayStats {
    pub fn record(&mut self, arrival: SimTime, departure: SimTime) {
        debug_assert!(departure >= arrival);
        self.sum_us += u128::from(departure.0 - arrival.0);
        self.count += 1;
    }

    pub fn merge(&mut self, other: &DelayStats) {
        self.sum_us += other.sum_us;
        self.count += other.count;
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Mean delay in microseconds, absent when nothing was recorded.
    pub fn mean_us(&self) -> Option<f64> {
        (self.count > 0).then(|| self.sum_us as f64 / self.count as f64)
    }
}

/// Mean of `departure - arrival` in microseconds; `None` for no records.
pub fn avg_queuing_delay(records: &[(SimTime, SimTime)]) -> Option<f64> {
    let mut stats = DelayStats::default();
    for &(a, d) in records {
        stats.record(a, d);
    }
    stats.mean_us()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub flow: FlowId,
    pub priority: PriorityClass,
    pub weight: f64,
    /// Delivered bytes per second over the measurement window.
    pub goodput: f64,
    pub arrivals: u64,
    pub admitted: u64,
    pub dropped: u64,
    pub evicted: u64,
    pub delivered: u64,
    pub mean_delay_us: Option<f64>,
}

/// Byte accounting over the whole run, warmup included.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub offered_bytes: u64,
    pub admitted_bytes: u64,
    pub dropped_bytes: u64,
    pub delivered_bytes: u64,
    pub evicted_bytes: u64,
    /// Still queued or on the wire when the run ended.
    pub residual_bytes: u64,
    pub oversize_drops: u64,
}

impl Totals {
    pub fn conserved(&self) -> bool {
        self.admitted_bytes == self.delivered_bytes + self.evicted_bytes + self.residual_bytes
            && self.offered_bytes == self.admitted_bytes + self.dropped_bytes
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub combo: String,
    pub policy: String,
    pub scheduler: String,
    /// Configured offered load relative to the link rate.
    pub load: f64,
    pub seed: u64,
    pub window_us: u64,
    pub link_rate: f64,
    pub goodput_total: f64,
    pub throughput_effectiveness: f64,
    pub avg_delay_us: Option<f64>,
    /// Absent when no flow delivered anything.
    pub fairness: Option<f64>,
    pub flows: Vec<FlowReport>,
    pub totals: Totals,
}

impl RunReport {
    pub fn goodputs(&self) -> Vec<f64> {
        self.flows.iter().map(|f| f.goodput).collect()
    }

    /// Aggregate goodput of flows in `class`.
    pub fn class_goodput(&self, class: PriorityClass) -> f64 {
        self.flows
            .iter()
            .filter(|f| f.priority == class)
            .map(|f| f.goodput)
            .sum()
    }
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros removed.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.5e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{:.*}", decimals, x))
    } else {
        let mantissa = trim_zeros(mantissa.to_string());
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const CSV_COLUMNS: [&str; 6] = [
    "combo",
    "load",
    "goodput_total",
    "effectiveness",
    "avg_delay_us",
    "fairness",
];

/// Writes one row per report. Per-flow goodput columns `G_1..G_N` follow the
/// fixed columns; `N` is the largest flow count among the reports.
pub fn write_csv<W: Write>(reports: &[RunReport], out: W) -> csv::Result<()> {
    let n = reports.iter().map(|r| r.flows.len()).max().unwrap_or(0);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header: Vec<String> = CSV_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend((1..=n).map(|i| format!("G_{i}")));
    w.write_record(&header)?;
    for r in reports {
        let mut row = vec![
            r.combo.clone(),
            format_sig6(r.load),
            format_sig6(r.goodput_total),
            format_sig6(r.throughput_effectiveness),
            r.avg_delay_us.map(format_sig6).unwrap_or_default(),
            r.fairness.map(format_sig6).unwrap_or_default(),
        ];
        row.extend((0..n).map(|i| r.flows.get(i).map(|f| format_sig6(f.goodput)).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn csv_string(reports: &[RunReport]) -> String {
    let mut buf = Vec::new();
    write_csv(reports, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;
    use num_rational::BigRational;
    use num_traits::{FromPrimitive, Zero};
    use proptest::prelude::*;

    #[test]
    fn fairness_examples() {
        assert_eq!(fairness_index(&[2.0, 4.0, 6.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);

        let w: Vec<f64> = (1..=16).map(|i| if i <= 8 { 2.0 } else { 1.0 }).collect();
        let g = vec![5.0; 16];
        assert!((fairness_index(&g, &w).unwrap() - 0.9).abs() < 1e-12);

        assert_eq!(fairness_index(&[1.0, 0.0], &[1.0, 1.0]).unwrap(), 0.5);
    }

    #[test]
    fn fairness_errors() {
        assert_eq!(fairness_index(&[0.0, 0.0], &[1.0, 1.0]), Err(MetricsError::NoThroughput));
        assert_eq!(fairness_index(&[1.0, 1.0], &[1.0, 0.0]), Err(MetricsError::Weight(1)));
        assert_eq!(fairness_index(&[], &[]), Err(MetricsError::NoFlows));
        assert_eq!(fairness_index(&[1.0], &[1.0, 1.0]), Err(MetricsError::Length));
    }

    #[test]
    fn effectiveness_examples() {
        // 5 Mbit over 1 s on a 10 Mbit/s link.
        assert_eq!(throughput_effectiveness(625_000, 1_250_000.0, SimTime::from_secs(1)), 0.5);
        assert_eq!(throughput_effectiveness(0, 1_250_000.0, SimTime::from_secs(1)), 0.0);
        assert_eq!(throughput_effectiveness(10_000_000, 1_250_000.0, SimTime::from_secs(1)), 1.0);
    }

    #[test]
    fn delay_examples() {
        let ms = SimTime::from_millis;
        assert_eq!(avg_queuing_delay(&[(ms(0), ms(2)), (ms(1), ms(5))]), Some(3_000.0));
        assert_eq!(avg_queuing_delay(&[]), None);
        assert_eq!(avg_queuing_delay(&[(ms(7), ms(10))]), Some(3_000.0));
    }

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(0.9), "0.9");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(123456.7), "123457");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(0.000123456789), "0.000123457");
        assert_eq!(format_sig6(0.0000012345), "1.2345e-06");
        assert_eq!(format_sig6(-2.5), "-2.5");
        assert_eq!(format_sig6(2.0 / 3.0), "0.666667");
    }

    fn report(combo: &str, goodputs: &[f64], delay: Option<f64>) -> RunReport {
        RunReport {
            combo: combo.into(),
            policy: "td".into(),
            scheduler: "lqf".into(),
            load: 0.2,
            seed: 1,
            window_us: 1,
            link_rate: 1.0,
            goodput_total: goodputs.iter().sum(),
            throughput_effectiveness: 0.5,
            avg_delay_us: delay,
            fairness: Some(1.0),
            flows: goodputs
                .iter()
                .enumerate()
                .map(|(i, &g)| FlowReport {
                    flow: FlowId::from_index(i),
                    priority: PriorityClass::High,
                    weight: 1.0,
                    goodput: g,
                    arrivals: 0,
                    admitted: 0,
                    dropped: 0,
                    evicted: 0,
                    delivered: 0,
                    mean_delay_us: None,
                })
                .collect(),
            totals: Totals::default(),
        }
    }

    #[test]
    fn csv_layout() {
        let s = csv_string(&[report("TD-LQF", &[1.5, 2.0], Some(12.25)), report("TD-BCF", &[3.0, 0.0], None)]);
        assert_eq!(
            s,
            "combo,load,goodput_total,effectiveness,avg_delay_us,fairness,G_1,G_2\n\
             TD-LQF,0.2,3.5,0.5,12.25,1,1.5,2\n\
             TD-BCF,0.2,3,0.5,,1,3,0\n"
        );
    }

    fn exact(x: f64) -> BigRational {
        BigRational::from_f64(x).unwrap()
    }

    /// Exact rational evaluation of the fairness index.
    fn fairness_oracle(g: &[f64], w: &[f64]) -> BigRational {
        let ratios: Vec<BigRational> = g.iter().zip(w).map(|(g, w)| exact(*g) / exact(*w)).collect();
        let sum = ratios.iter().fold(BigRational::zero(), |a, r| a + r);
        let sum_sq = ratios.iter().fold(BigRational::zero(), |a, r| a + r * r);
        let n = BigRational::from_integer(BigInt::from(g.len()));
        (&sum * &sum) / (n * sum_sq)
    }

    fn to_f64(r: &BigRational) -> f64 {
        // Scale to keep precision when converting via integer division.
        let scale = BigInt::from(10u64).pow(30);
        let scaled = (r.numer() * &scale) / r.denom();
        scaled.to_string().parse::<f64>().unwrap() / 1e30
    }

    proptest! {
        #[test]
        fn matches_rational_oracle(
            g in prop::collection::vec(0.0f64..1e6, 1..20),
            w in prop::collection::vec(0.1f64..10.0, 20),
        ) {
            prop_assume!(g.iter().any(|&x| x > 0.0));
            let w = &w[..g.len()];
            let got = fairness_index(&g, w).unwrap();
            let want = to_f64(&fairness_oracle(&g, w));
            prop_assert!((got - want).abs() < 1e-12, "{} vs {}", got, want);
        }

        #[test]
        fn bounded_and_scale_invariant(
            g in prop::collection::vec(0.0f64..1e6, 1..20),
            w in prop::collection::vec(0.1f64..10.0, 20),
            k in 1u32..1000,
        ) {
            prop_assume!(g.iter().any(|&x| x > 0.0));
            let n = g.len();
            let w = &w[..n];
            let f = fairness_index(&g, w).unwrap();
            prop_assert!(f >= 1.0 / n as f64 - 1e-12 && f <= 1.0 + 1e-12);
            // Power-of-two scaling is exact in binary floating point.
            let c = (k % 20) as i32 - 10;
            let scale = 2f64.powi(c);
            let gs: Vec<f64> = g.iter().map(|x| x * scale).collect();
            let ws: Vec<f64> = w.iter().map(|x| x * scale).collect();
            prop_assert_eq!(fairness_index(&gs, w).unwrap(), f);
            prop_assert_eq!(fairness_index(&g, &ws).unwrap(), f);
        }
    }
}
