use std::collections::BTreeMap;

use chrono::DateTime;
use phd_eval::consistency::{
    consistency_with, read_vote_log, sweep_tolerance, tally_group, Choice, GroupProfiles, GroupVerdict, ScorePair,
    VoteLedger, VoteRecord,
};
use phd_eval::{thin, BinaryMask, MetricDescriptor, PhdProfile, Tolerance};
use proptest::prelude::*;

fn vote(group: usize, subject: usize, choice: Choice) -> VoteRecord {
    VoteRecord {
        group_id: format!("g{group}"),
        subject_id: format!("s{subject}"),
        choice,
        ts: DateTime::from_timestamp(1_700_000_000 + (group * 100 + subject) as i64, 0).unwrap(),
    }
}

fn choice() -> impl Strategy<Value = Choice> {
    prop_oneof![Just(Choice::PredA), Just(Choice::PredB), Just(Choice::DifficultToChoose)]
}

/// Per group, each of 20 subjects either abstains or votes.
fn votes() -> impl Strategy<Value = Vec<VoteRecord>> {
    proptest::collection::vec(proptest::collection::vec(proptest::option::of(choice()), 20), 1..8).prop_map(|groups| {
        groups
            .into_iter()
            .enumerate()
            .flat_map(|(g, subjects)| {
                subjects
                    .into_iter()
                    .enumerate()
                    .filter_map(move |(s, c)| c.map(|c| vote(g, s, c)))
            })
            .collect()
    })
}

fn verdicts_by_group(votes: &[VoteRecord], threshold: u32) -> Vec<GroupVerdict> {
    let mut by_group: BTreeMap<&str, Vec<VoteRecord>> = BTreeMap::new();
    for v in votes {
        by_group.entry(&v.group_id).or_default().push(v.clone());
    }
    by_group
        .into_iter()
        .map(|(id, vs)| tally_group(id, &vs, threshold).unwrap())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn replayed_log_matches_incremental_tallies(votes in votes(), threshold in 1u32..21) {
        let mut log = Vec::new();
        for v in &votes {
            serde_json::to_writer(&mut log, v).unwrap();
            log.push(b'\n');
        }
        let replayed = read_vote_log(log.as_slice()).unwrap();
        prop_assert_eq!(&replayed, &votes);
        let ledger = VoteLedger::replay(&replayed).unwrap();
        let expected = verdicts_by_group(&votes, threshold);
        for v in &expected {
            prop_assert_eq!(&ledger.tally(&v.group_id).verdict(&v.group_id, threshold), v);
        }
    }

    #[test]
    fn invalid_groups_do_not_affect_matches(votes in votes(), scores in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 8)) {
        let verdicts = verdicts_by_group(&votes, 11);
        let lookup = |id: &str| {
            let i: usize = id[1..].parse().unwrap();
            Some(ScorePair { a: scores[i].0, b: scores[i].1 })
        };
        let desc = MetricDescriptor::f1();
        let all = consistency_with(&verdicts, &desc, 0.0, lookup).unwrap();
        let only_valid: Vec<_> = verdicts.iter().filter(|v| v.valid).cloned().collect();
        let pruned = consistency_with(&only_valid, &desc, 0.0, lookup).unwrap();
        prop_assert_eq!(&all, &pruned);
        prop_assert!(all.matched <= all.valid);
        if let Some(c) = all.consistency {
            prop_assert!((0.0..=1.0).contains(&c));
        }
    }
}

fn row(width: u32, height: u32, y: u32) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, yy| yy == y && (5..35).contains(&x))
}

#[test]
fn sweep_switches_where_the_shifted_candidate_reaches_zero() {
    // Candidate A is the ground truth moved down two rows, B is an exact
    // copy, and the panel found the two indistinguishable. Below t = 2 the
    // metric prefers B; from t = 2 on both score 0 and the tie matches.
    let gt = thin(&row(40, 12, 4));
    let a = thin(&row(40, 12, 6));
    let b = thin(&row(40, 12, 4));
    let profiles = BTreeMap::from([(
        "g0".to_string(),
        GroupProfiles {
            a: PhdProfile::new(&a, &gt).unwrap(),
            b: PhdProfile::new(&b, &gt).unwrap(),
        },
    )]);
    let votes: Vec<_> = (0..20)
        .map(|s| vote(0, s, if s < 14 { Choice::DifficultToChoose } else { Choice::PredB }))
        .collect();
    let verdicts = verdicts_by_group(&votes, 11);
    let tolerances: Vec<_> = [0.0, 1.0, 1.5, 1.99, 2.0, 2.5, 3.0]
        .into_iter()
        .map(|t| Tolerance::new(t).unwrap())
        .collect();
    let curve = sweep_tolerance(&profiles, &verdicts, &tolerances, 0.0).unwrap();
    let ratios: Vec<_> = curve.iter().map(|p| p.entry.ratio.as_str()).collect();
    assert_eq!(ratios, ["0/1", "0/1", "0/1", "0/1", "1/1", "1/1", "1/1"]);
    assert_eq!(profiles["g0"].at(Tolerance::ZERO), ScorePair { a: 4.0, b: 0.0 });
}

#[test]
fn single_tolerance_sweep_equals_plain_consistency() {
    let gt = thin(&row(40, 12, 4));
    let a = thin(&row(40, 12, 7));
    let b = thin(&row(40, 12, 5));
    let profiles = BTreeMap::from([(
        "g0".to_string(),
        GroupProfiles {
            a: PhdProfile::new(&a, &gt).unwrap(),
            b: PhdProfile::new(&b, &gt).unwrap(),
        },
    )]);
    let votes: Vec<_> = (0..20).map(|s| vote(0, s, Choice::PredB)).collect();
    let verdicts = verdicts_by_group(&votes, 11);
    let t0 = [Tolerance::ZERO];
    let curve = sweep_tolerance(&profiles, &verdicts, &t0, 0.0).unwrap();
    let plain = consistency_with(&verdicts, &MetricDescriptor::phd(Tolerance::ZERO), 0.0, |id| {
        profiles.get(id).map(|p| p.at(Tolerance::ZERO))
    })
    .unwrap();
    assert_eq!(curve.len(), 1);
    assert_eq!(curve[0].entry, plain);
    assert_eq!(plain.ratio, "1/1");
}
