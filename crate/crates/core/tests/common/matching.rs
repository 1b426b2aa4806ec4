//! Random small matching problems and an exhaustive reference matcher that
//! works in integer arithmetic.

use mdc_track::geometry::WireId;
use mdc_track::metrics::{Class, MatchRule, RecoInput, TruthInput};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

pub struct Problem {
    pub truth: Vec<TruthInput>,
    pub reco: Vec<RecoInput>,
}

/// Up to 3 truth tracks and 60 hits in total, with recos drawn as disjoint
/// random subsets that mix truth and noise hits.
pub fn random_problem<R: Rng>(rng: &mut R) -> Problem {
    let n_truth = rng.random_range(0..=3);
    let mut pool: Vec<WireId> = (0..60).map(|c| WireId::new(c % 43, c)).collect();
    pool.shuffle(rng);
    let mut next = 0;
    let mut truth = Vec::new();
    for t in 0..n_truth {
        let n = rng.random_range(3..=18);
        truth.push(TruthInput {
            truth_id: t as u32 + 1,
            charge: if rng.random_bool(0.5) { 1 } else { -1 },
            pt: rng.random_range(0.15..1.5),
            cos_theta: rng.random_range(-0.93..0.93),
            hits: pool[next..next + n].to_vec(),
        });
        next += n;
    }
    // Hits past `next` are noise. Each reco takes a random share of one
    // truth's unclaimed hits plus a few other unclaimed hits.
    let n_noise = rng.random_range(0..=60 - next);
    let mut free: Vec<WireId> = pool[..next + n_noise].to_vec();
    let n_reco = rng.random_range(0..=4);
    let mut reco = Vec::new();
    for r in 0..n_reco {
        let mut hits = Vec::new();
        if !truth.is_empty() && rng.random_bool(0.8) {
            let t = &truth[rng.random_range(0..truth.len())];
            let mine: Vec<WireId> = free.iter().copied().filter(|w| t.hits.contains(w)).collect();
            let k = rng.random_range(0..=mine.len());
            hits.extend(mine.choose_multiple(rng, k).copied());
        }
        let extra = rng.random_range(0..=6);
        let others: Vec<WireId> = free.iter().copied().filter(|w| !hits.contains(w)).collect();
        hits.extend(others.choose_multiple(rng, extra.min(others.len())).copied());
        hits.shuffle(rng);
        free.retain(|w| !hits.contains(w));
        reco.push(RecoInput {
            reco_id: r as u32,
            charge: if rng.random_bool(0.5) { 1 } else { -1 },
            pt: rng.random_range(0.15..1.5),
            cos_theta: 0.0,
            hits,
        });
    }
    Problem { truth, reco }
}

#[derive(Debug, PartialEq)]
pub struct Reference {
    pub classes: Vec<Class>,
    /// Matched reco per truth, in truth order.
    pub matched: Vec<Option<u32>>,
}

/// Enumerates every assignment of recos to truths and keeps the best one.
/// Thresholds are those of the default rule, as exact fractions.
pub fn reference(p: &Problem) -> Reference {
    let rule = MatchRule::default();
    assert_eq!((rule.min_purity, rule.min_efficiency), (0.5, 0.2));
    // Pair statistics (matched, assigned, detectable) for every reco/truth.
    let overlap = |r: &RecoInput, t: &TruthInput| r.hits.iter().filter(|w| t.hits.contains(w)).count();
    let dominant: Vec<Option<usize>> = p
        .reco
        .iter()
        .map(|r| {
            let mut best: Option<(usize, usize)> = None;
            for (ti, t) in p.truth.iter().enumerate() {
                let m = overlap(r, t);
                if m > 0 && best.is_none_or(|(_, bm)| m > bm) {
                    best = Some((ti, m));
                }
            }
            best.map(|b| b.0)
        })
        .collect();
    // num/den > a/b  <=>  b * num > a * den.
    let pass_frac = |num: usize, den: usize, (a, b): (usize, usize)| den > 0 && b * num > a * den;
    let passing: Vec<bool> = p
        .reco
        .iter()
        .zip(&dominant)
        .map(|(r, d)| match d {
            Some(ti) => {
                let m = overlap(r, &p.truth[*ti]);
                pass_frac(m, r.hits.len(), (1, 2))
                    && pass_frac(m, p.truth[*ti].hits.len(), (1, 5))
                    && m >= rule.min_matched_hits
            }
            None => false,
        })
        .collect();

    // Ordering of two candidates for the same truth, without division.
    let better = |a: usize, b: usize, ti: usize| {
        let t = &p.truth[ti];
        let (ma, mb) = (overlap(&p.reco[a], t), overlap(&p.reco[b], t));
        let (na, nb) = (p.reco[a].hits.len(), p.reco[b].hits.len());
        // Same truth, so efficiency compares on the matched count alone.
        if ma != mb {
            return ma > mb;
        }
        if ma * nb != mb * na {
            return ma * nb > mb * na;
        }
        p.reco[a].reco_id < p.reco[b].reco_id
    };

    let mut best: Option<Vec<Option<usize>>> = None;
    let mut current = vec![None; p.truth.len()];
    fn walk(
        ti: usize,
        current: &mut Vec<Option<usize>>,
        options: &dyn Fn(usize) -> Vec<usize>,
        keep: &mut dyn FnMut(&[Option<usize>]),
    ) {
        if ti == current.len() {
            keep(current);
            return;
        }
        for choice in std::iter::once(None).chain(options(ti).into_iter().map(Some)) {
            if choice.is_some() && current[..ti].contains(&choice) {
                continue;
            }
            current[ti] = choice;
            walk(ti + 1, current, options, keep);
        }
        current[ti] = None;
    }
    let options = |ti: usize| -> Vec<usize> {
        (0..p.reco.len())
            .filter(|&ri| passing[ri] && dominant[ri] == Some(ti))
            .collect()
    };
    let mut keep = |a: &[Option<usize>]| {
        // An assignment wins if no truth could take a better reco.
        let improvable = a.iter().enumerate().any(|(ti, c)| {
            options(ti)
                .into_iter()
                .any(|o| c.is_none_or(|c| better(o, c, ti)))
        });
        if !improvable {
            assert!(best.is_none(), "optimum must be unique");
            best = Some(a.to_vec());
        }
    };
    walk(0, &mut current, &options, &mut keep);
    let best = best.expect("some assignment is optimal");

    let classes = (0..p.reco.len())
        .map(|ri| {
            if best.contains(&Some(ri)) {
                Class::Matched
            } else if passing[ri] {
                Class::Clone
            } else {
                Class::Fake
            }
        })
        .collect();
    let matched = best.iter().map(|c| c.map(|ri| p.reco[ri].reco_id)).collect();
    Reference { classes, matched }
}
