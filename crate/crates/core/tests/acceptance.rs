//! Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use common::matching::{random_problem, reference};
use common::rng;
use mdc_track::dataset::{read_events, write_events, EVENT_COLUMN, HIT_COLUMNS};
use mdc_track::finder::FinderConfig;
use mdc_track::fitter::FitterConfig;
use mdc_track::geometry::{Geometry, WireId};
use mdc_track::helix::{angle_diff, Helix, KinematicState};
use mdc_track::metrics::{
    aggregate, clopper_pearson, match_event, resolution, Class, MatchRule, MetricsReport, Rate,
    RecoInput, TruthInput, INTERVAL_CL,
};
use mdc_track::pipeline::match_stage;
use mdc_track::reco::{reconstruct_events, Stage};
use mdc_track::sim::{generate_events, Category, SimConfig};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::f64::consts::{PI, TAU};
use std::time::Instant;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn metrics_oracle() -> Outcome {
    let t = Instant::now();
    let rule = MatchRule::default();
    let mut r = rng(1001);
    let mut mismatches = 0;
    let mut events = Vec::new();
    let (mut det, mut matched, mut q, mut clone, mut fake) = (0u64, 0u64, 0u64, 0u64, 0u64);
    let mut max_hits = 0;
    for i in 0..1000 {
        let p = random_problem(&mut r);
        max_hits = max_hits.max(
            p.truth.iter().map(|t| t.hits.len()).sum::<usize>()
                + p.reco.iter().map(|x| x.hits.len()).sum::<usize>(),
        );
        let want = reference(&p);
        let got = match_event(i, &p.truth, &p.reco, &rule).expect("disjoint recos");
        let classes: Vec<Class> = got.records.iter().map(|x| x.class).collect();
        let pairs: Vec<Option<u32>> = got.truths.iter().map(|x| x.matched.map(|m| m.0)).collect();
        if classes != want.classes || pairs != want.matched {
            mismatches += 1;
        }
        for (tr, m) in p.truth.iter().zip(&want.matched) {
            if tr.hits.len() >= rule.min_detectable_hits {
                det += 1;
                if let Some(id) = m {
                    matched += 1;
                    let reco = p.reco.iter().find(|x| x.reco_id == *id).unwrap();
                    q += (reco.charge == tr.charge) as u64;
                }
            }
        }
        clone += want.classes.iter().filter(|c| **c == Class::Clone).count() as u64;
        fake += want.classes.iter().filter(|c| **c == Class::Fake).count() as u64;
        events.push(got);
    }
    let c = aggregate(&events).counts;
    let agg_ok = (c.n_detectable, c.n_matched, c.n_matched_q, c.n_clone, c.n_fake)
        == (det, matched, q, clone, fake);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && agg_ok && secs < 30.0,
        format!(
            "{mismatches} event mismatches in 1000, aggregate {}, matched {matched} clones {clone} fakes {fake}, {secs:.2} s",
            if agg_ok { "equal" } else { "differs" }
        ),
    )
}

fn boundaries() -> Outcome {
    let rule = MatchRule::default();
    let w = |r: std::ops::Range<usize>| -> Vec<WireId> { r.map(|c| WireId::new(7, c)).collect() };
    let truth = |n| TruthInput {
        truth_id: 1,
        charge: 1,
        pt: 1.0,
        cos_theta: 0.0,
        hits: w(0..n),
    };
    let reco = |hits: Vec<WireId>| RecoInput {
        reco_id: 0,
        charge: 1,
        pt: 1.0,
        cos_theta: 0.0,
        hits,
    };
    let class = |t: TruthInput, r: RecoInput| match_event(0, &[t], &[r], &rule).unwrap().records[0].class;
    // purity 8/16 with efficiency 8/10
    let half_purity = class(truth(10), reco([w(0..8), w(100..108)].concat()));
    // efficiency 6/30 with full purity
    let fifth_eff = class(truth(30), reco(w(0..6)));
    // six matched, purity 6/11, efficiency 6/29
    let six = class(truth(29), reco([w(0..6), w(100..105)].concat()));
    let pass = half_purity == Class::Fake && fifth_eff == Class::Fake && six == Class::Matched;
    outcome(
        pass,
        format!("p_hit=0.50 -> {half_purity:?}, eps_hit=0.20 -> {fifth_eff:?}, n=6 passing -> {six:?}"),
    )
}

fn resolution_estimator() -> Outcome {
    let mut r = rng(1003);
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for sigma in [0.002, 0.005, 0.02] {
        let n = Normal::new(0.0, sigma).unwrap();
        let xs: Vec<f64> = (0..100_000).map(|_| n.sample(&mut r)).collect();
        let est = resolution(&xs).unwrap();
        let dev = (est / sigma - 1.0).abs();
        worst = worst.max(dev);
        parts.push(format!("sigma {sigma}: r {est:.6} ({:+.2}%)", 100.0 * (est / sigma - 1.0)));
    }
    outcome(worst <= 0.02, parts.join(", "))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn helix_round_trip() -> Outcome {
    let t = Instant::now();
    let n = 100_000u64;
    let results: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng(1_000_000 + i);
            let pt = r.random_range(0.15..1.5);
            let phi = r.random_range(0.0..TAU);
            let q = if r.random_bool(0.5) { 1 } else { -1 };
            let state = KinematicState {
                position: mdc_track::geometry::Vec3::new(
                    r.random_range(-3.0..3.0),
                    r.random_range(-3.0..3.0),
                    r.random_range(-10.0..10.0),
                ),
                momentum: mdc_track::geometry::Vec3::new(
                    pt * phi.cos(),
                    pt * phi.sin(),
                    pt * r.random_range(-2.5..2.5),
                ),
                charge: q,
            };
            let h = Helix::from_state(&state, 1.0).unwrap();
            let poca_state = h.to_state();
            let back = Helix::from_state(&poca_state, 1.0).unwrap();
            let (a, b) = (h.params, back.params);
            let mut err = [
                rel_err(b.d_r, a.d_r),
                angle_diff(b.phi0, a.phi0).abs(),
                rel_err(b.kappa, a.kappa),
                rel_err(b.d_z, a.d_z),
                rel_err(b.tan_lambda, a.tan_lambda),
                rel_err(poca_state.pt(), pt),
                rel_err(poca_state.momentum.z, state.momentum.z),
            ]
            .into_iter()
            .fold(0.0, f64::max);
            if poca_state.charge != q {
                err = f64::INFINITY;
            }
            // The POCA is the transverse minimum over the surrounding turn.
            let d0 = h.point_at_arclength(0.0).xy().norm();
            let half = PI * h.radius();
            let mut excess = f64::INFINITY;
            for k in 0..1000 {
                let s = -half + 2.0 * half * (k as f64 + 0.5) / 1000.0;
                excess = excess.min(h.point_at_arclength(s).xy().norm() - d0);
            }
            let poca_gap = (d0 - a.d_r.abs()).abs();
            (err, if poca_gap > 1e-9 { -1.0 } else { excess })
        })
        .collect();
    let worst = results.iter().map(|r| r.0).fold(0.0, f64::max);
    let min_excess = results.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    outcome(
        worst <= 1e-9 && min_excess >= -1e-12,
        format!(
            "{n} states, max relative error {worst:.2e}, min distance above |d_r| over 10^3 arc lengths {min_excess:.2e} cm, {:.1} s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn rate_text(r: &Option<Rate>) -> String {
    match r {
        Some(r) => format!(
            "{}/{} = {:.4} [{:.4}, {:.4}]",
            r.numerator, r.denominator, r.value, r.lo, r.hi
        ),
        None => "n/a".into(),
    }
}

fn fitting_report(g: &Geometry, cfg: &SimConfig, cat: Category, seed: u64, n: u64) -> MetricsReport {
    let events = generate_events(g, cfg, cat, seed, n);
    let reco = reconstruct_events(&events, g, &FinderConfig::default(), &FitterConfig::default(), true);
    let matched = match_stage(&events, &reco, Stage::Fitter, &MatchRule::default()).expect("aligned");
    aggregate(&matched)
}

fn closed_loop() -> Outcome {
    let g = Geometry::besiii();
    let cfg = SimConfig {
        noise_rate: 0.0,
        det_efficiency: 1.0,
        sigma_drift: 0.0,
        b_field: 1.0,
    };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    let rep = pool.install(|| fitting_report(&g, &cfg, Category::Single, 2024, 10_000));
    let secs = t.elapsed().as_secs_f64();
    let eps = rep.eps_track.map_or(0.0, |r| r.value);
    let wrong = rep.r_wrong_q.map_or(1.0, |r| r.value);
    outcome(
        eps >= 0.995 && wrong <= 0.001 && secs < 300.0,
        format!(
            "eps_track {}, R_wrong_q {}, {secs:.1} s on one thread",
            rate_text(&rep.eps_track),
            rate_text(&rep.r_wrong_q)
        ),
    )
}

fn degradation() -> Outcome {
    let g = Geometry::besiii();
    let cfg = SimConfig {
        noise_rate: 30.0,
        sigma_drift: 0.013,
        ..SimConfig::default()
    };
    let conv = fitting_report(&g, &cfg, Category::ConventionalTwo, 31, 5000);
    let close = fitting_report(&g, &cfg, Category::CloseByTwo, 32, 5000);
    let (a, b) = (close.eps_track.unwrap(), conv.eps_track.unwrap());
    outcome(
        a.value <= b.value,
        format!(
            "close-by {} <= conventional {}",
            rate_text(&close.eps_track),
            rate_text(&conv.eps_track)
        ),
    )
}

fn csv_round_trip() -> Outcome {
    let g = Geometry::besiii();
    let mut events = generate_events(&g, &SimConfig::default(), Category::ConventionalTwo, 41, 200);
    // Trim to exactly 10^4 hits.
    let mut budget = 10_000usize;
    for e in &mut events {
        let keep = e.hits.len().min(budget);
        e.hits.truncate(keep);
        budget -= keep;
    }
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let rows = write_events(&events, &a).unwrap();
    let back = read_events(&a, &g, false).unwrap();
    write_events(&back.events, &b).unwrap();
    let same = std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap();
    let text = std::fs::read_to_string(&a).unwrap();
    let header: Vec<&str> = text.lines().next().unwrap().split(',').collect();
    let expected: Vec<&str> = std::iter::once(EVENT_COLUMN).chain(HIT_COLUMNS).collect();
    outcome(
        rows == 10_000 && same && header == expected,
        format!(
            "{rows} hits, files {}, header {}",
            if same { "byte-identical" } else { "differ" },
            if header == expected { "exact" } else { "differs" }
        ),
    )
}

fn interval_calibration() -> Outcome {
    let n = 2000u64;
    let mut parts = Vec::new();
    let mut pass = true;
    for (i, p) in [0.01, 0.5, 0.99].into_iter().enumerate() {
        let covered: usize = (0..10_000u64)
            .into_par_iter()
            .map(|trial| {
                let mut r = rng(5_000_000 * (i as u64 + 1) + trial);
                let k = (0..n).filter(|_| r.random_bool(p)).count() as u64;
                let (lo, hi) = clopper_pearson(k, n, INTERVAL_CL);
                (lo <= p && p <= hi) as usize
            })
            .sum();
        let cov = covered as f64 / 10_000.0;
        pass &= (0.65..=0.71).contains(&cov);
        parts.push(format!("p={p}: {:.2}%", 100.0 * cov));
    }
    outcome(pass, format!("coverage over 10^4 trials of n={n}: {}", parts.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("metrics oracle equivalence", metrics_oracle),
        ("matching boundaries", boundaries),
        ("resolution estimator", resolution_estimator),
        ("helix round trip", helix_round_trip),
        ("closed-loop reconstruction", closed_loop),
        ("degradation ordering", degradation),
        ("CSV round trip", csv_round_trip),
        ("interval calibration", interval_calibration),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let o = check();
        failed += (!o.pass) as usize;
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
