//! Track matching and performance metrics.
//!
//! Each reconstructed track is associated with the truth track contributing
//! most of its hits. It is a match candidate when its hit purity exceeds
//! 0.5, its hit efficiency exceeds 0.2 and it shares at least six hits with
//! that truth track. Per truth track the candidate with the highest hit
//! efficiency is the match and any others are clones; tracks failing the
//! criteria are fakes. All rates are normalised to the number of detectable
//! truth tracks.

use crate::geometry::WireId;
use crate::reco::RecoTrack;
use crate::sim::Event;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF, Gamma};
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use thiserror::Error;

/// Central coverage of the reported intervals.
pub const INTERVAL_CL: f64 = 0.6827;

/// Quantile of the absolute deviation from the median used as resolution.
pub const RESOLUTION_QUANTILE: f64 = 0.68;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("event {event_id}: wire {wire} is assigned to reco tracks {first} and {second}")]
    DuplicateHit {
        event_id: u64,
        wire: WireId,
        first: u32,
        second: u32,
    },
    #[error("bin edges must be finite and strictly increasing, at least two: {0:?}")]
    BadEdges(Vec<f64>),
    #[error("invalid matching rule: {0}")]
    BadRule(String),
}

/// Matching thresholds. Ratios use strict comparisons, the hit count `>=`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchRule {
    /// Truth tracks with fewer detectable hits are ignored.
    pub min_detectable_hits: usize,
    pub min_purity: f64,
    pub min_efficiency: f64,
    pub min_matched_hits: usize,
}

impl Default for MatchRule {
    fn default() -> Self {
        MatchRule {
            min_detectable_hits: 6,
            min_purity: 0.5,
            min_efficiency: 0.2,
            min_matched_hits: 6,
        }
    }
}

impl MatchRule {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.min_detectable_hits < 1 {
            return Err(MetricsError::BadRule("min_detectable_hits must be at least 1".into()));
        }
        for (name, v) in [("min_purity", self.min_purity), ("min_efficiency", self.min_efficiency)] {
            if !(0.0..1.0).contains(&v) {
                return Err(MetricsError::BadRule(format!("{name} must lie in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// Truth side of one event: the detectable hits of one particle.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthInput {
    pub truth_id: u32,
    pub charge: i32,
    pub pt: f64,
    pub cos_theta: f64,
    pub hits: Vec<WireId>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoInput {
    pub reco_id: u32,
    pub charge: i32,
    pub pt: f64,
    pub cos_theta: f64,
    pub hits: Vec<WireId>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Class {
    Matched,
    Clone,
    Fake,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MatchRecord {
    pub reco_id: u32,
    /// Dominant truth contributor, if any signal hit was assigned.
    pub truth_id: Option<u32>,
    pub n_matched: usize,
    pub n_assigned: usize,
    pub n_detectable: usize,
    pub hit_eff: f64,
    pub hit_purity: f64,
    pub class: Class,
    pub charge_correct: bool,
    /// Kinematics used for binning: the dominant truth's when known,
    /// otherwise the reconstructed values.
    pub pt: f64,
    pub cos_theta: f64,
}

/// Outcome for one truth track.
#[derive(Clone, Debug, PartialEq)]
pub struct TruthOutcome {
    pub truth_id: u32,
    pub pt: f64,
    pub cos_theta: f64,
    pub n_detectable: usize,
    pub detectable: bool,
    /// `(reco_id, charge_correct, reco_pt)` of the matched track.
    pub matched: Option<(u32, bool, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventMatch {
    pub event_id: u64,
    pub records: Vec<MatchRecord>,
    pub truths: Vec<TruthOutcome>,
}

/// Classifies every reconstructed track of one event.
pub fn match_event(
    event_id: u64,
    truth: &[TruthInput],
    reco: &[RecoInput],
    rule: &MatchRule,
) -> Result<EventMatch, MetricsError> {
    let mut owner: HashMap<WireId, u32> = HashMap::new();
    for r in reco {
        for w in dedup(&r.hits) {
            if let Some(&first) = owner.get(&w) {
                if first != r.reco_id {
                    return Err(MetricsError::DuplicateHit {
                        event_id,
                        wire: w,
                        first,
                        second: r.reco_id,
                    });
                }
            }
            owner.insert(w, r.reco_id);
        }
    }

    let mut truth_of: HashMap<WireId, usize> = HashMap::new();
    let truth_hits: Vec<Vec<WireId>> = truth.iter().map(|t| dedup(&t.hits)).collect();
    for (ti, hits) in truth_hits.iter().enumerate() {
        for &w in hits {
            truth_of.entry(w).or_insert(ti);
        }
    }

    let mut records = Vec::with_capacity(reco.len());
    for r in reco {
        let hits = dedup(&r.hits);
        let mut counts = vec![0usize; truth.len()];
        for w in &hits {
            if let Some(&ti) = truth_of.get(w) {
                counts[ti] += 1;
            }
        }
        let dominant = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .max_by(|a, b| a.1.cmp(b.1).then(truth[b.0].truth_id.cmp(&truth[a.0].truth_id)))
            .map(|(ti, _)| ti);
        let n_assigned = hits.len();
        let (n_matched, n_detectable) = match dominant {
            Some(ti) => (counts[ti], truth_hits[ti].len()),
            None => (0, 0),
        };
        let hit_eff = ratio(n_matched, n_detectable);
        let hit_purity = ratio(n_matched, n_assigned);
        let passing = dominant.is_some()
            && hit_purity > rule.min_purity
            && hit_eff > rule.min_efficiency
            && n_matched >= rule.min_matched_hits;
        let (pt, cos_theta, charge_correct) = match dominant {
            Some(ti) => (truth[ti].pt, truth[ti].cos_theta, truth[ti].charge == r.charge),
            None => (r.pt, r.cos_theta, false),
        };
        records.push(MatchRecord {
            reco_id: r.reco_id,
            truth_id: dominant.map(|ti| truth[ti].truth_id),
            n_matched,
            n_assigned,
            n_detectable,
            hit_eff,
            hit_purity,
            class: if passing { Class::Clone } else { Class::Fake },
            charge_correct,
            pt,
            cos_theta,
        });
    }

    let mut truths = Vec::with_capacity(truth.len());
    for (ti, t) in truth.iter().enumerate() {
        let best = records
            .iter()
            .enumerate()
            .filter(|(_, m)| m.class == Class::Clone && m.truth_id == Some(t.truth_id))
            .min_by(|(_, a), (_, b)| {
                b.hit_eff
                    .total_cmp(&a.hit_eff)
                    .then(b.hit_purity.total_cmp(&a.hit_purity))
                    .then(a.reco_id.cmp(&b.reco_id))
            })
            .map(|(i, _)| i);
        let matched = best.map(|i| {
            records[i].class = Class::Matched;
            let r = reco.iter().find(|r| r.reco_id == records[i].reco_id).expect("record of reco");
            (r.reco_id, records[i].charge_correct, r.pt)
        });
        let n_detectable = truth_hits[ti].len();
        truths.push(TruthOutcome {
            truth_id: t.truth_id,
            pt: t.pt,
            cos_theta: t.cos_theta,
            n_detectable,
            detectable: n_detectable >= rule.min_detectable_hits,
            matched,
        });
    }
    Ok(EventMatch {
        event_id,
        records,
        truths,
    })
}

fn dedup(hits: &[WireId]) -> Vec<WireId> {
    let mut seen = HashSet::with_capacity(hits.len());
    hits.iter().copied().filter(|w| seen.insert(*w)).collect()
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Truth inputs of a simulated or loaded event: signal hits grouped by
/// particle.
pub fn truth_inputs(event: &Event) -> Vec<TruthInput> {
    event
        .truth
        .iter()
        .map(|t| TruthInput {
            truth_id: t.track_index,
            charge: t.state.charge,
            pt: t.state.pt(),
            cos_theta: t.state.cos_theta(),
            hits: event.hits_of(t.track_index).map(|h| h.wire).collect(),
        })
        .collect()
}

pub fn reco_inputs<'a>(tracks: impl IntoIterator<Item = &'a RecoTrack>) -> Vec<RecoInput> {
    tracks
        .into_iter()
        .map(|t| RecoInput {
            reco_id: t.reco_id,
            charge: t.params.charge(),
            pt: t.params.pt(),
            cos_theta: t.params.cos_theta(),
            hits: t.hits.clone(),
        })
        .collect()
}

/// A count ratio with its central interval. Ratios above one (possible for
/// clone and fake rates) use a Poisson interval on the numerator instead of
/// a binomial one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rate {
    pub numerator: u64,
    pub denominator: u64,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Rate {
    pub fn new(numerator: u64, denominator: u64) -> Option<Rate> {
        if denominator == 0 {
            return None;
        }
        let n = denominator as f64;
        let (lo, hi) = if numerator <= denominator {
            clopper_pearson(numerator, denominator, INTERVAL_CL)
        } else {
            let (lo, hi) = poisson_interval(numerator, INTERVAL_CL);
            (lo / n, hi / n)
        };
        Some(Rate {
            numerator,
            denominator,
            value: numerator as f64 / n,
            lo,
            hi,
        })
    }
}

/// Clopper-Pearson interval for `k` successes in `n` trials.
pub fn clopper_pearson(k: u64, n: u64, cl: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n, "need 0 <= k <= n, n > 0");
    let alpha = 1.0 - cl;
    let (kf, nf) = (k as f64, n as f64);
    let lo = if k == 0 {
        0.0
    } else {
        Beta::new(kf, nf - kf + 1.0)
            .expect("positive shape")
            .inverse_cdf(alpha / 2.0)
    };
    let hi = if k == n {
        1.0
    } else {
        Beta::new(kf + 1.0, nf - kf)
            .expect("positive shape")
            .inverse_cdf(1.0 - alpha / 2.0)
    };
    (lo, hi)
}

/// Garwood interval for a Poisson count.
pub fn poisson_interval(k: u64, cl: f64) -> (f64, f64) {
    let alpha = 1.0 - cl;
    let kf = k as f64;
    let lo = if k == 0 {
        0.0
    } else {
        Gamma::new(kf, 1.0).expect("positive shape").inverse_cdf(alpha / 2.0)
    };
    let hi = Gamma::new(kf + 1.0, 1.0)
        .expect("positive shape")
        .inverse_cdf(1.0 - alpha / 2.0);
    (lo, hi)
}

/// Quantile with linear interpolation between order statistics of the
/// sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let i = h.floor() as usize;
    let j = (i + 1).min(sorted.len() - 1);
    Some(sorted[i] + (h - i as f64) * (sorted[j] - sorted[i]))
}

/// 68% quantile of `|eta - median(eta)|`; absent for fewer than two
/// samples.
pub fn resolution(etas: &[f64]) -> Option<f64> {
    if etas.len() < 2 {
        return None;
    }
    let mut v = etas.to_vec();
    v.sort_by(f64::total_cmp);
    let median = quantile_sorted(&v, 0.5)?;
    let mut dev: Vec<f64> = v.iter().map(|e| (e - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    quantile_sorted(&dev, RESOLUTION_QUANTILE)
}

/// Relative transverse-momentum residuals of matched tracks with the
/// correct charge.
pub fn pt_residuals<'a>(truths: impl IntoIterator<Item = &'a TruthOutcome>) -> Vec<f64> {
    truths
        .into_iter()
        .filter(|t| t.detectable)
        .filter_map(|t| match t.matched {
            Some((_, true, reco_pt)) => Some((reco_pt - t.pt) / t.pt),
            _ => None,
        })
        .collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub n_detectable: u64,
    pub n_matched: u64,
    pub n_matched_q: u64,
    pub n_wrong_q: u64,
    pub n_clone: u64,
    pub n_fake: u64,
    pub n_reco: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub counts: Counts,
    pub eps_track: Option<Rate>,
    pub eps_track_q: Option<Rate>,
    pub r_wrong_q: Option<Rate>,
    pub r_clone: Option<Rate>,
    pub r_fake: Option<Rate>,
    pub pt_resolution: Option<f64>,
    pub n_resolution: usize,
}

fn report_from<'a>(
    records: impl IntoIterator<Item = &'a MatchRecord>,
    truths: impl IntoIterator<Item = &'a TruthOutcome> + Clone,
) -> MetricsReport {
    let mut c = Counts::default();
    for t in truths.clone().into_iter().filter(|t| t.detectable) {
        c.n_detectable += 1;
        if let Some((_, q, _)) = t.matched {
            c.n_matched += 1;
            if q {
                c.n_matched_q += 1;
            } else {
                c.n_wrong_q += 1;
            }
        }
    }
    for r in records {
        c.n_reco += 1;
        match r.class {
            Class::Clone => c.n_clone += 1,
            Class::Fake => c.n_fake += 1,
            Class::Matched => {}
        }
    }
    let etas = pt_residuals(truths);
    let d = c.n_detectable;
    MetricsReport {
        counts: c,
        eps_track: Rate::new(c.n_matched, d),
        eps_track_q: Rate::new(c.n_matched_q, d),
        r_wrong_q: Rate::new(c.n_wrong_q, d),
        r_clone: Rate::new(c.n_clone, d),
        r_fake: Rate::new(c.n_fake, d),
        pt_resolution: resolution(&etas),
        n_resolution: etas.len(),
    }
}

/// Unbinned report over all events.
pub fn aggregate(events: &[EventMatch]) -> MetricsReport {
    report_from(
        events.iter().flat_map(|e| &e.records),
        events.iter().flat_map(|e| &e.truths),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Pt,
    CosTheta,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Pt => "pt",
            Axis::CosTheta => "cos_theta",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinReport {
    pub lo: f64,
    pub hi: f64,
    pub report: MetricsReport,
}

pub fn validate_edges(edges: &[f64]) -> Result<(), MetricsError> {
    let ok = edges.len() >= 2
        && edges.iter().all(|e| e.is_finite())
        && edges.windows(2).all(|w| w[1] > w[0]);
    if ok {
        Ok(())
    } else {
        Err(MetricsError::BadEdges(edges.to_vec()))
    }
}

/// `n` equal bins over `[lo, hi]`.
pub fn uniform_edges(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

pub fn default_pt_edges() -> Vec<f64> {
    uniform_edges(0.15, 1.5, 9)
}

pub fn default_cos_edges() -> Vec<f64> {
    uniform_edges(-0.93, 0.93, 10)
}

/// Bin index of `x`; bins are half-open except the last, which includes
/// its upper edge.
fn bin_of(edges: &[f64], x: f64) -> Option<usize> {
    let n = edges.len() - 1;
    if !(x >= edges[0] && x <= edges[n]) {
        return None;
    }
    Some(edges.partition_point(|&e| e <= x).saturating_sub(1).min(n - 1))
}

/// Per-bin reports along one truth axis. Records and truths outside the
/// edges fall in no bin.
pub fn binned(events: &[EventMatch], axis: Axis, edges: &[f64]) -> Result<Vec<BinReport>, MetricsError> {
    validate_edges(edges)?;
    let value = |pt: f64, cos: f64| match axis {
        Axis::Pt => pt,
        Axis::CosTheta => cos,
    };
    let n = edges.len() - 1;
    let mut recs: Vec<Vec<&MatchRecord>> = vec![Vec::new(); n];
    let mut truths: Vec<Vec<&TruthOutcome>> = vec![Vec::new(); n];
    for e in events {
        for r in &e.records {
            if let Some(b) = bin_of(edges, value(r.pt, r.cos_theta)) {
                recs[b].push(r);
            }
        }
        for t in &e.truths {
            if let Some(b) = bin_of(edges, value(t.pt, t.cos_theta)) {
                truths[b].push(t);
            }
        }
    }
    Ok((0..n)
        .map(|b| BinReport {
            lo: edges[b],
            hi: edges[b + 1],
            report: report_from(recs[b].iter().copied(), truths[b].iter().copied()),
        })
        .collect())
}

/// Overall and binned metrics for one reconstruction stage.
#[derive(Clone, Debug, PartialEq)]
pub struct StageReport {
    pub label: String,
    pub overall: MetricsReport,
    pub pt_bins: Vec<BinReport>,
    pub cos_bins: Vec<BinReport>,
}

impl StageReport {
    pub fn build(
        label: &str,
        events: &[EventMatch],
        pt_edges: &[f64],
        cos_edges: &[f64],
    ) -> Result<StageReport, MetricsError> {
        Ok(StageReport {
            label: label.to_string(),
            overall: aggregate(events),
            pt_bins: binned(events, Axis::Pt, pt_edges)?,
            cos_bins: binned(events, Axis::CosTheta, cos_edges)?,
        })
    }

    /// Machine-readable `key=value` lines.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        let p = &self.label;
        write_report_kv(&mut out, p, &self.overall);
        for (axis, bins) in [(Axis::Pt, &self.pt_bins), (Axis::CosTheta, &self.cos_bins)] {
            for (i, b) in bins.iter().enumerate() {
                let prefix = format!("{p}.{}[{i}]", axis.name());
                let _ = writeln!(out, "{prefix}.lo={}", b.lo);
                let _ = writeln!(out, "{prefix}.hi={}", b.hi);
                write_report_kv(&mut out, &prefix, &b.report);
            }
        }
        out
    }

    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let o = &self.overall;
        let c = &o.counts;
        let _ = writeln!(out, "== {} ==", self.label);
        let _ = writeln!(
            out,
            "detectable {}  matched {}  clones {}  fakes {}  reco {}",
            c.n_detectable, c.n_matched, c.n_clone, c.n_fake, c.n_reco
        );
        let _ = writeln!(out, "{:<14}{:>10}{:>22}", "metric", "value", "68.27% interval");
        for (name, rate) in rate_fields(o) {
            let _ = writeln!(out, "{:<14}{}", name, fmt_rate(rate));
        }
        let _ = writeln!(
            out,
            "{:<14}{:>10}   (n = {})",
            "r(pT)",
            fmt_opt(o.pt_resolution),
            o.n_resolution
        );
        for (axis, bins) in [("pT [GeV/c]", &self.pt_bins), ("cos theta", &self.cos_bins)] {
            let _ = writeln!(out);
            let _ = writeln!(
                out,
                "{:<18}{:>6}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
                axis, "N_det", "eff", "eff_q", "wrong_q", "clone", "fake", "r(pT)"
            );
            for b in bins.iter() {
                let r = &b.report;
                let v = |x: &Option<Rate>| fmt_opt(x.map(|r| r.value));
                let _ = writeln!(
                    out,
                    "[{:>6.3},{:>6.3}]   {:>6}{:>10}{:>10}{:>10}{:>10}{:>10}{:>10}",
                    b.lo,
                    b.hi,
                    r.counts.n_detectable,
                    v(&r.eps_track),
                    v(&r.eps_track_q),
                    v(&r.r_wrong_q),
                    v(&r.r_clone),
                    v(&r.r_fake),
                    fmt_opt(r.pt_resolution)
                );
            }
        }
        out
    }
}

fn rate_fields(r: &MetricsReport) -> [(&'static str, &Option<Rate>); 5] {
    [
        ("eps_track", &r.eps_track),
        ("eps_track_q", &r.eps_track_q),
        ("r_wrong_q", &r.r_wrong_q),
        ("r_clone", &r.r_clone),
        ("r_fake", &r.r_fake),
    ]
}

fn write_report_kv(out: &mut String, prefix: &str, r: &MetricsReport) {
    let c = &r.counts;
    for (k, v) in [
        ("n_detectable", c.n_detectable),
        ("n_matched", c.n_matched),
        ("n_matched_q", c.n_matched_q),
        ("n_wrong_q", c.n_wrong_q),
        ("n_clone", c.n_clone),
        ("n_fake", c.n_fake),
        ("n_reco", c.n_reco),
    ] {
        let _ = writeln!(out, "{prefix}.{k}={v}");
    }
    for (name, rate) in rate_fields(r) {
        match rate {
            Some(x) => {
                let _ = writeln!(out, "{prefix}.{name}={}", x.value);
                let _ = writeln!(out, "{prefix}.{name}.lo={}", x.lo);
                let _ = writeln!(out, "{prefix}.{name}.hi={}", x.hi);
            }
            None => {
                let _ = writeln!(out, "{prefix}.{name}=");
            }
        }
    }
    let _ = writeln!(out, "{prefix}.pt_resolution={}", r.pt_resolution.map_or(String::new(), |v| v.to_string()));
    let _ = writeln!(out, "{prefix}.n_resolution={}", r.n_resolution);
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.4}"))
}

fn fmt_rate(r: &Option<Rate>) -> String {
    match r {
        Some(r) => format!(
            "{:>10.4}   [{:.4}, {:.4}]  ({}/{})",
            r.value, r.lo, r.hi, r.numerator, r.denominator
        ),
        None => format!("{:>10}", "-"),
    }
}
